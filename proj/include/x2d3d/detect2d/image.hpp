#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "x2d3d/core/error.hpp"

namespace x2d3d {

/// Row-major single-channel image. Intensities are nominally in [0,1];
/// intermediate scale-space buffers reuse the type without that bound.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }

  /// Bilinear sample with pixel centers at integer coordinates; clamps at the border.
  double bilinear(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double ax = x - fx, ay = y - fy;
    const double top = (1.0 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0);
    const double bot = (1.0 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1);
    return (1.0 - ay) * top + ay * bot;
  }

  bool empty() const { return data.empty(); }
};

/// Separable Gaussian blur with clamped borders.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  GrayImage tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img.clamped(x + i, y);
      tmp.at(x, y) = acc;
    }
  }
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.clamped(x, y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

/// Every second pixel in each direction.
inline GrayImage downsample2(const GrayImage& img) {
  GrayImage out(std::max(1, img.width / 2), std::max(1, img.height / 2));
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = img.at(2 * x, 2 * y);
  return out;
}

/// Bilinear resize mapping pixel centers (align-corners convention), so a
/// same-size resize is the identity.
inline GrayImage resize_bilinear(const GrayImage& img, int w, int h) {
  GrayImage out(w, h);
  const double sx = w > 1 ? static_cast<double>(img.width - 1) / (w - 1) : 0.0;
  const double sy = h > 1 ? static_cast<double>(img.height - 1) / (h - 1) : 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(x, y) = img.bilinear(x * sx, y * sy);
  return out;
}

namespace io {

/// Binary PGM (P5, maxval 255); intensities in [0,1] are quantized by round(255 v).
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::string bytes(img.data.size(), '\0');
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0)));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto skip_comments = [&] {
    f >> std::ws;
    while (f.peek() == '#') {
      std::string line;
      std::getline(f, line);
      f >> std::ws;
    }
  };
  f >> magic;
  if (magic != "P5") throw Error(ErrorCode::kFormat, "not a binary PGM: " + path.string());
  skip_comments();
  f >> w;
  skip_comments();
  f >> h;
  skip_comments();
  f >> maxval;
  f.get();
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorCode::kFormat, "unsupported PGM header: " + path.string());
  std::string bytes(static_cast<std::size_t>(w) * h, '\0');
  if (!f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw Error(ErrorCode::kFormat, "truncated PGM: " + path.string());
  }
  GrayImage img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

}  // namespace io
}  // namespace x2d3d
