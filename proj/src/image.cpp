#include "relpose/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "relpose/checkpoint.hpp"
#include "relpose/error.hpp"

namespace relpose {

namespace {

const std::uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t read_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  append_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t type_pos = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + type_pos, static_cast<uInt>(4 + payload.size())));
  append_be32(out, crc);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

std::vector<std::uint8_t> zlib_inflate(const std::uint8_t* src,
                                       std::size_t len,
                                       std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &out_len, src, static_cast<uLong>(len));
  if (rc != Z_OK || out_len != expected)
    throw IoError("PNG inflate failed (rc=" + std::to_string(rc) + ")");
  return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& src) {
  uLongf bound = compressBound(static_cast<uLong>(src.size()));
  std::vector<std::uint8_t> out(bound);
  const int rc = compress2(out.data(), &bound, src.data(),
                           static_cast<uLong>(src.size()), 6);
  if (rc != Z_OK) throw IoError("PNG deflate failed");
  out.resize(bound);
  return out;
}

}  // namespace

Image Image::from_tensor(const ad::Tensor<float>& t) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw ShapeMismatch("image tensor must be (1|3, H, W), got " +
                        ad::shape_str(t.shape));
  Image img(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.data.begin(), t.data.end(), img.data.begin());
  return img;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0)
    throw IoError("not a PNG file");
  std::size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = -1;
  std::vector<std::uint8_t> idat;
  bool saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = read_be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* payload = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("bad IHDR length");
      width = static_cast<int>(read_be32(payload));
      height = static_cast<int>(read_be32(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[10] != 0 || payload[11] != 0)
        throw IoError("unsupported PNG compression/filter method");
      if (payload[12] != 0) throw IoError("interlaced PNG not supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw IoError("missing PNG IHDR");
  if (bit_depth != 8) throw IoError("only 8-bit PNG supported");
  int channels;
  if (color_type == 0) channels = 1;
  else if (color_type == 2) channels = 3;
  else throw IoError("only grayscale/RGB PNG supported (color type " +
                     std::to_string(color_type) + ")");

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  const std::size_t raw_len = (stride + 1) * height;
  std::vector<std::uint8_t> raw = zlib_inflate(idat.data(), idat.size(), raw_len);

  // Undo per-row filters in place into `pix`.
  std::vector<std::uint8_t> pix(stride * height);
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* src = &raw[(stride + 1) * y + 1];
    std::uint8_t* dst = &pix[stride * y];
    const std::uint8_t* up = y > 0 ? &pix[stride * (y - 1)] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("bad PNG filter type");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  Image img(channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            static_cast<float>(pix[stride * y + static_cast<std::size_t>(x) * channels + c]) / 255.f;
  return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeMismatch("PNG encode supports 1 or 3 channels");
  const int color_type = img.channels == 1 ? 0 : 2;
  const std::size_t stride =
      static_cast<std::size_t>(img.width) * img.channels;

  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw[(stride + 1) * y] = 0;  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        raw[(stride + 1) * y + 1 + static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  }

  std::vector<std::uint8_t> out(kPngSignature, kPngSignature + 8);
  std::vector<std::uint8_t> ihdr;
  append_be32(ihdr, static_cast<std::uint32_t>(img.width));
  append_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);
  ihdr.push_back(static_cast<std::uint8_t>(color_type));
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib_deflate(raw));
  append_chunk(out, "IEND", {});
  return out;
}

Image load_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

void save_png(const std::string& path, const Image& img) {
  const std::vector<std::uint8_t> bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path);
}

Image load_image(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".rptn")
    return Image::from_tensor(load_rptn(path));
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png")
    return load_png(path);
  throw IoError("unknown image extension: " + path);
}

void save_image(const std::string& path, const Image& img) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".rptn") {
    save_rptn(path, img.to_tensor());
    return;
  }
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
    save_png(path, img);
    return;
  }
  throw IoError("unknown image extension: " + path);
}

}  // namespace relpose
