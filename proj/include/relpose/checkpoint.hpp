#pragma once

#include <string>
#include <vector>

#include "relpose/tensor.hpp"

namespace relpose {

struct NamedTensor {
  std::string name;
  ad::Tensor<float> data;
};

// RPCK parameter checkpoint: magic "RPCK", little-endian; u32 entry count;
// per entry u16 name length, UTF-8 name, u8 ndim, u32 dims, f32 row-major
// data. Byte-exact round trip.
void save_rpck(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_rpck(const std::string& path);

// RPTN raw tensor: magic "RPTN", u32 ndim, u32 dims little-endian, f32 data.
void save_rptn(const std::string& path, const ad::Tensor<float>& tensor);
ad::Tensor<float> load_rptn(const std::string& path);

}  // namespace relpose
