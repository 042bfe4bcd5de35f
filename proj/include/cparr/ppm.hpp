#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cparr/geometry.hpp"
#include "cparr/scene.hpp"

namespace cparr {

// 8-bit RGB image used for all raster I/O (binary P6 portable pixmap).
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major H x W x 3

  static Image8 filled(int w, int h, std::array<std::uint8_t, 3> color) {
    Image8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
      img.rgb[i] = color[0];
      img.rgb[i + 1] = color[1];
      img.rgb[i + 2] = color[2];
    }
    return img;
  }

  void set(int x, int y, std::array<std::uint8_t, 3> color) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = color[0];
    rgb[i + 1] = color[1];
    rgb[i + 2] = color[2];
  }
};

inline Image8 quantize_raster(const Raster& raster) {
  Image8 img;
  img.width = raster.width;
  img.height = raster.height;
  img.rgb.resize(raster.rgb.size());
  for (std::size_t i = 0; i < raster.rgb.size(); ++i) {
    img.rgb[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(raster.rgb[i], 0.0, 1.0) * 255.0));
  }
  return img;
}

inline Raster raster_from_image(const Image8& img) {
  Raster r;
  r.width = img.width;
  r.height = img.height;
  r.rgb.resize(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) r.rgb[i] = img.rgb[i] / 255.0;
  return r;
}

inline void write_ppm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write ppm: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw std::runtime_error("ppm write failed: " + path.string());
}

inline Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read ppm: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path.string());
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (maxval != 255 || w <= 0 || h <= 0) throw std::runtime_error("unsupported ppm: " + path.string());
  in.get();  // single whitespace after header
  Image8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw std::runtime_error("truncated ppm: " + path.string());
  return img;
}

inline void draw_box_outline(Image8& img, const Box& box, std::array<std::uint8_t, 3> color,
                             int thickness = 1) {
  const int x0 = static_cast<int>(std::lround(box.x_min));
  const int y0 = static_cast<int>(std::lround(box.y_min));
  const int x1 = static_cast<int>(std::lround(box.x_max)) - 1;
  const int y1 = static_cast<int>(std::lround(box.y_max)) - 1;
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      img.set(x, y0 + t, color);
      img.set(x, y1 - t, color);
    }
    for (int y = y0; y <= y1; ++y) {
      img.set(x0 + t, y, color);
      img.set(x1 - t, y, color);
    }
  }
}

// ---------------------------------------------------------------------------
// Tiny 5x7 bitmap font for caption strips
// ---------------------------------------------------------------------------

namespace fontdetail {
// Each glyph is 7 rows of 5 bits, MSB on the left.
inline const std::uint8_t* glyph(char c) {
  static const struct { char ch; std::uint8_t rows[7]; } kGlyphs[] = {
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
      {'b', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x1E}},
      {'c', {0x00, 0x00, 0x0E, 0x11, 0x10, 0x11, 0x0E}},
      {'d', {0x01, 0x01, 0x0F, 0x11, 0x11, 0x11, 0x0F}},
      {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
      {'f', {0x06, 0x08, 0x1C, 0x08, 0x08, 0x08, 0x08}},
      {'g', {0x00, 0x0F, 0x11, 0x0F, 0x01, 0x11, 0x0E}},
      {'h', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x11}},
      {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
      {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},
      {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
      {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
      {'n', {0x00, 0x00, 0x1E, 0x11, 0x11, 0x11, 0x11}},
      {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
      {'p', {0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'q', {0x00, 0x0F, 0x11, 0x0F, 0x01, 0x01, 0x01}},
      {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
      {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
      {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
      {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
      {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'w', {0x00, 0x00, 0x15, 0x15, 0x15, 0x15, 0x0A}},
      {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
      {'y', {0x00, 0x11, 0x11, 0x0F, 0x01, 0x11, 0x0E}},
      {'z', {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
      {'|', {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
  };
  for (const auto& g : kGlyphs) {
    if (g.ch == c) return g.rows;
  }
  return kGlyphs[0].rows;  // unknown chars render as space
}
}  // namespace fontdetail

inline void render_text(Image8& img, int x, int y, const std::string& text,
                        std::array<std::uint8_t, 3> color) {
  int cx = x;
  for (char c : text) {
    const std::uint8_t* rows = fontdetail::glyph(c);
    for (int ry = 0; ry < 7; ++ry) {
      for (int rx = 0; rx < 5; ++rx) {
        if (rows[ry] & (1 << (4 - rx))) img.set(cx + rx, y + ry, color);
      }
    }
    cx += 6;
  }
}

}  // namespace cparr
