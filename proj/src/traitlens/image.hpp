#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace traitlens {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit RGB, row-major, channel-last.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * kChannels, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * kChannels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * kChannels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Per-pixel per-channel real image, same layout as Image.
struct MeanImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * Image::kChannels + c];
  }
  friend bool operator==(const MeanImage&, const MeanImage&) = default;
};

// Binary PPM (P6), maxval 255.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace traitlens
