#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dfrec/error.hpp"
#include "dfrec/tensor.hpp"

namespace dfrec {

// H x W x C image, row-major, channel-last, values in [0,1]. The universal
// pixel carrier: forgeries, sources, targets and their recoveries all use it.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, std::int64_t c)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h * w * c), 0.0) {}

  double& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  double at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::size_t size() const { return data.size(); }
  bool same_geometry(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

inline double quantize8(double v) {
  const double clamped = std::min(1.0, std::max(0.0, v));
  return std::round(clamped * 255.0) / 255.0;
}

// Snaps every value to the 8-bit grid used on disk, so in-memory samples and
// their decoded PNG round trips are bit-identical.
inline Image quantized(const Image& img) {
  Image out = img;
  for (auto& v : out.data) v = quantize8(v);
  return out;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_geometry(b)) throw InputError("max_abs_diff: geometry mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Image <-> CHW tensor conversions for the network side.
template <typename T>
Tensor<T> image_to_chw(const Image& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        t.data[static_cast<std::size_t>((c * img.height + y) * img.width + x)] = static_cast<T>(img.at(y, x, c));
  return t;
}

template <typename T>
Image chw_to_image(const Tensor<T>& t) {
  if (t.shape.size() != 3) throw InputError("chw_to_image expects [C,H,W]");
  Image img(t.shape[1], t.shape[2], t.shape[0]);
  for (std::int64_t c = 0; c < img.channels; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        img.at(y, x, c) = static_cast<double>(t.data[static_cast<std::size_t>((c * img.height + y) * img.width + x)]);
  return img;
}

// Lossless PNG I/O (8-bit gray or RGB). Values are quantized on write.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// In-memory JPEG round trip, used by the robustness perturbations.
std::vector<unsigned char> encode_jpeg(const Image& img, int quality);
Image decode_jpeg(const std::vector<unsigned char>& bytes);

}  // namespace dfrec
