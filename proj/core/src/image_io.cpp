#include "seqdet/image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace seqdet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(float v) {
  const float clamped = std::min(1.f, std::max(0.f, v));
  return static_cast<unsigned char>(std::lround(clamped * 255.f));
}

Image read_png_file(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: failed to decode " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  Image im = Image::filled(h, w, 0.f);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return im;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf env;
};

void jpeg_error_trampoline(j_common_ptr info) {
  std::longjmp(reinterpret_cast<JpegErr*>(info->err)->env, 1);
}

Image read_jpeg_file(std::FILE* fp, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_trampoline;
  if (setjmp(err.env)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("jpeg: failed to decode " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, fp);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  Image im = Image::filled(h, w, 0.f);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  unsigned char* rowp = row.data();
  for (int y = 0; y < h; ++y) {
    jpeg_read_scanlines(&cinfo, &rowp, 1);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return im;
}

}  // namespace

void write_png(const std::string& path, const Image& im) {
  if (im.channels != 3) throw std::invalid_argument("write_png: expects 3-channel images");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.width),
               static_cast<png_uint_32>(im.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<size_t>(im.width) * 3);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(im.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

Image read_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path);
  unsigned char sig[8] = {0};
  const size_t got = std::fread(sig, 1, 8, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png_file(fp.get(), path);
  if (got >= 2 && sig[0] == 0xFF && sig[1] == 0xD8) return read_jpeg_file(fp.get(), path);
  throw std::runtime_error("unsupported image format: " + path);
}

void draw_box(Image& im, float cx, float cy, float w, float h, float r, float g, float b) {
  const int x0 = std::max(0, static_cast<int>(std::lround(cx - w / 2)));
  const int x1 = std::min(im.width - 1, static_cast<int>(std::lround(cx + w / 2)));
  const int y0 = std::max(0, static_cast<int>(std::lround(cy - h / 2)));
  const int y1 = std::min(im.height - 1, static_cast<int>(std::lround(cy + h / 2)));
  if (x0 > x1 || y0 > y1) return;
  auto paint = [&](int y, int x) {
    im.at(y, x, 0) = r;
    im.at(y, x, 1) = g;
    im.at(y, x, 2) = b;
  };
  for (int x = x0; x <= x1; ++x) {
    paint(y0, x);
    paint(y1, x);
  }
  for (int y = y0; y <= y1; ++y) {
    paint(y, x0);
    paint(y, x1);
  }
}

}  // namespace seqdet
