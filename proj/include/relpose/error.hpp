#pragma once

#include <stdexcept>
#include <string>

namespace relpose {

// All failures surface as Error subclasses carrying a stable category tag.
// The CLI prints "<category>: <message>" on stderr, so categories are part
// of the machine-readable interface and must not be renamed casually.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message),
        category_(std::move(category)) {}

  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

#define RELPOSE_DEFINE_ERROR(Name)                         \
  class Name : public Error {                              \
   public:                                                 \
    explicit Name(const std::string& message)              \
        : Error(#Name, message) {}                         \
  }

RELPOSE_DEFINE_ERROR(ShapeMismatch);
RELPOSE_DEFINE_ERROR(NonFiniteValue);
RELPOSE_DEFINE_ERROR(NonScalarRoot);
RELPOSE_DEFINE_ERROR(NearZeroQuaternion);
RELPOSE_DEFINE_ERROR(DegenerateScale);
RELPOSE_DEFINE_ERROR(DegenerateDirection);
RELPOSE_DEFINE_ERROR(BadChannelCount);
RELPOSE_DEFINE_ERROR(TooSmall);
RELPOSE_DEFINE_ERROR(IndexOutOfRange);
RELPOSE_DEFINE_ERROR(ParseError);
RELPOSE_DEFINE_ERROR(BadQuaternion);
RELPOSE_DEFINE_ERROR(EmptyDataset);
RELPOSE_DEFINE_ERROR(EmptyInput);
RELPOSE_DEFINE_ERROR(BadRatios);
RELPOSE_DEFINE_ERROR(DegenerateGeometry);
RELPOSE_DEFINE_ERROR(ConfigError);
RELPOSE_DEFINE_ERROR(CheckpointMismatch);
RELPOSE_DEFINE_ERROR(IoError);

#undef RELPOSE_DEFINE_ERROR

}  // namespace relpose
