#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace epigraf {

/// Row-major raster of `channels` doubles per pixel, origin at the top-left.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Mirror about the vertical axis.
Image flip_horizontal(const Image& image);

/// Mean squared error over all pixels and channels; shapes must match.
double mean_squared_error(const Image& a, const Image& b);

/// 10·log10(1/mse) for unit-range images.
double psnr_from_mse(double mse);

/// Binary PPM (P6, maxval 255). Values are clamped to [0,1] and quantized
/// as round(255·v). Requires 3 channels.
std::string encode_ppm(const Image& image);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

}  // namespace epigraf
