#include "epigraf/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "epigraf/geometry.hpp"

namespace epigraf {

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) out.at(image.width - 1 - x, y, c) = image.at(x, y, c);
    }
  }
  return out;
}

double mean_squared_error(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw InputError("image shapes differ");
  }
  if (a.data.empty()) throw InputError("empty image");
  double sum = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    const double d = a.data[k] - b.data[k];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

double psnr_from_mse(double mse) { return 10.0 * std::log10(1.0 / mse); }

std::string encode_ppm(const Image& image) {
  if (image.channels != 3) throw InputError("PPM output needs 3 channels");
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.data.size());
  for (double v : image.data) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)))));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw InputError("unsupported PPM: " + path.string());
  in.get();
  std::string bytes(static_cast<std::size_t>(w) * h * 3, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw InputError("truncated PPM: " + path.string());
  Image image(w, h, 3);
  for (std::size_t k = 0; k < bytes.size(); ++k) image.data[k] = static_cast<unsigned char>(bytes[k]) / 255.0;
  return image;
}

}  // namespace epigraf
