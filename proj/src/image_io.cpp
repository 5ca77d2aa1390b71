#include "lsp/image_io.hpp"

#include <png.h>
#include <stdio.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "lsp/error.hpp"

namespace lsp {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open image file " + path.string());
  return f;
}

bool is_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

// Decoded interleaved 8-bit pixels.
struct Raw {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;
};

Raw decode_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng initialization failed");
  Raw raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.pixels.resize(std::size_t(raw.width) * raw.height * raw.channels);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.pixels.data() + std::size_t(y) * raw.width * raw.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Raw decode_jpeg(const std::filesystem::path& path, bool header_only) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_on_error;
  Raw raw;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("unreadable image " + path.string() + " (expected PNG or JPEG)");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  raw.width = static_cast<int>(cinfo.image_width);
  raw.height = static_cast<int>(cinfo.image_height);
  if (header_only) {
    jpeg_destroy_decompress(&cinfo);
    return raw;
  }
  jpeg_start_decompress(&cinfo);
  raw.channels = cinfo.output_components;
  raw.pixels.resize(std::size_t(raw.width) * raw.height * raw.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raw.pixels.data() + std::size_t(cinfo.output_scanline) * raw.width * raw.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return raw;
}

Raw decode(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing image file " + path.string());
  return is_png(path) ? decode_png(path) : decode_jpeg(path, false);
}

}  // namespace

Tensor<float> read_image(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_image: channels must be 1 or 3");
  const Raw raw = decode(path);
  Tensor<float> img(1, channels, raw.height, raw.width);
  const std::size_t n = std::size_t(raw.width) * raw.height;
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned char* p = raw.pixels.data() + k * raw.channels;
    float rgb[3];
    if (raw.channels >= 3) {
      rgb[0] = p[0] / 255.0f;
      rgb[1] = p[1] / 255.0f;
      rgb[2] = p[2] / 255.0f;
    } else {
      rgb[0] = rgb[1] = rgb[2] = p[0] / 255.0f;
    }
    if (channels == 1) {
      img.data()[k] = raw.channels >= 3 ? 0.299f * rgb[0] + 0.587f * rgb[1] + 0.114f * rgb[2] : rgb[0];
    } else {
      for (int c = 0; c < 3; ++c) img.data()[c * n + k] = rgb[c];
    }
  }
  return img;
}

ImageSize read_image_size(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing image file " + path.string());
  if (is_png(path)) {
    std::ifstream in(path, std::ios::binary);
    unsigned char hdr[24];
    in.read(reinterpret_cast<char*>(hdr), 24);
    if (in.gcount() != 24) throw DataError("truncated PNG " + path.string());
    auto be32 = [&](int o) {
      return int(hdr[o]) << 24 | int(hdr[o + 1]) << 16 | int(hdr[o + 2]) << 8 | int(hdr[o + 3]);
    };
    return {be32(16), be32(20)};
  }
  const Raw raw = decode_jpeg(path, true);
  return {raw.width, raw.height};
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3)) {
    throw ContractError("write_png: expected a 1- or 3-channel single image");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw DataError("libpng initialization failed");
  const int w = image.w(), h = image.h(), c = image.c();
  std::vector<unsigned char> buf(std::size_t(w) * h * c);
  const Eigen::Index plane = image.plane_size();
  for (Eigen::Index k = 0; k < plane; ++k) {
    for (int ch = 0; ch < c; ++ch) {
      const float v = std::clamp(image.data()[ch * plane + k], 0.0f, 1.0f);
      buf[std::size_t(k) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, buf.data() + std::size_t(y) * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> resize_bilinear(const Tensor<float>& image, int height, int width) {
  if (image.h() == height && image.w() == width) return image;
  Tensor<float> out(image.n(), image.c(), height, width);
  const double sy = double(image.h()) / height, sx = double(image.w()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.h() - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, image.h() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.w() - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, image.w() - 1);
      const double wx = fx - x0;
      for (int i = 0; i < image.n(); ++i) {
        for (int c = 0; c < image.c(); ++c) {
          const double v = (1 - wy) * ((1 - wx) * image(i, c, y0, x0) + wx * image(i, c, y0, x1)) +
                           wy * ((1 - wx) * image(i, c, y1, x0) + wx * image(i, c, y1, x1));
          out(i, c, y, x) = static_cast<float>(v);
        }
      }
    }
  }
  return out;
}

}  // namespace lsp
