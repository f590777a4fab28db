#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gazekit {

// 8-bit grayscale, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  bool empty() const { return pixels.empty(); }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PGM (P5, maxval 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Bilinear sample with pixel centres at integer coordinates. Callers must
// keep (x, y) inside [0, w-1] x [0, h-1].
double sample_bilinear(const GrayImage& image, double x, double y);

// Area-averaging resize to (w, h) returning intensities in [0, 255].
std::vector<double> resize_area(const GrayImage& image, int w, int h);

std::uint8_t clamp_to_byte(double v);

}  // namespace gazekit
