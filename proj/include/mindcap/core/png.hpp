#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <vector>

namespace mindcap {

// Writes an 8-bit RGB PNG. pixels holds height*width*3 values in [0, 1],
// row-major, channel-last; values are clamped.
template <typename Container>
void write_png_rgb(const std::filesystem::path& path, const Container& pixels, int width, int height) {
  if (static_cast<long>(pixels.size()) != static_cast<long>(width) * height * 3)
    throw std::invalid_argument("write_png_rgb: pixel count mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, decltype(&std::fclose)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    for (int i = 0; i < width * 3; ++i) {
      const double v = std::clamp(static_cast<double>(pixels[static_cast<size_t>(y) * width * 3 + i]), 0.0, 1.0);
      row[static_cast<size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit RGB PNG written by write_png_rgb.
inline std::vector<double> read_png_rgb(const std::filesystem::path& path, int& width, int& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw std::runtime_error("cannot read " + path.string());
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode " + path.string());
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  std::vector<double> out(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) out[i] = buf[i] / 255.0;
  return out;
}

}  // namespace mindcap
