#include "gazekit/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "gazekit/error.hpp"

namespace gazekit {

namespace {

// Reads the next PGM header token, skipping whitespace and comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  if (next_token(in) != "P5") fail(ErrorKind::BadMagic, path.string() + " is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    fail(ErrorKind::MalformedRecord, path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) {
    fail(ErrorKind::MalformedRecord, path.string() + ": unsupported PGM geometry or maxval");
  }
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    fail(ErrorKind::TruncatedRecord, path.string() + ": truncated pixel data");
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

double sample_bilinear(const GrayImage& image, double x, double y) {
  const int x0 = std::min(static_cast<int>(std::floor(x)), image.width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), image.height - 1);
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * image.at(x0, y0) + ax * image.at(x1, y0);
  const double bottom = (1.0 - ax) * image.at(x0, y1) + ax * image.at(x1, y1);
  return (1.0 - ay) * top + ay * bottom;
}

std::vector<double> resize_area(const GrayImage& image, int w, int h) {
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  const double sx = static_cast<double>(image.width) / w;
  const double sy = static_cast<double>(image.height) / h;
  for (int oy = 0; oy < h; ++oy) {
    const double y_lo = oy * sy, y_hi = (oy + 1) * sy;
    for (int ox = 0; ox < w; ++ox) {
      const double x_lo = ox * sx, x_hi = (ox + 1) * sx;
      double acc = 0.0;
      for (int y = static_cast<int>(y_lo); y < std::min(static_cast<int>(std::ceil(y_hi)), image.height); ++y) {
        const double wy = std::min<double>(y + 1, y_hi) - std::max<double>(y, y_lo);
        for (int x = static_cast<int>(x_lo); x < std::min(static_cast<int>(std::ceil(x_hi)), image.width); ++x) {
          const double wx = std::min<double>(x + 1, x_hi) - std::max<double>(x, x_lo);
          acc += wx * wy * image.at(x, y);
        }
      }
      out[static_cast<std::size_t>(oy) * w + ox] = acc / (sx * sy);
    }
  }
  return out;
}

std::uint8_t clamp_to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace gazekit
