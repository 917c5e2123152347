#include "g2s/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "g2s/error.hpp"

namespace g2s {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(
      std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError(path, "file", mode[0] == 'r' ? "cannot open" : "cannot open for writing");
  return f;
}

// Writes 8-bit RGB (channels=3) or 16-bit gray (channels=1) rows.
void png_write(const std::string& path, std::size_t w, std::size_t h,
               int channels, int bit_depth,
               const std::vector<unsigned char>& bytes) {
  auto f = open_file(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(path, "png", "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(path, "png", "write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), bit_depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = w * static_cast<std::size_t>(channels) *
                             static_cast<std::size_t>(bit_depth / 8);
  for (std::size_t y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngPixels {
  std::size_t width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<unsigned char> bytes;
};

PngPixels png_read(const std::string& path) {
  auto f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
    throw FormatError(path, "signature", "not a PNG file");
  }
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path, "png", "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path, "png", "corrupt data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  PngPixels out;
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && out.bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (out.bit_depth == 16 && color != PNG_COLOR_TYPE_GRAY) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (out.bit_depth == 16) png_set_swap(png);  // little-endian samples
  png_read_update_info(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * out.height);
  for (std::size_t y = 0; y < out.height; ++y)
    png_read_row(png, out.bytes.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

Tensor Image::to_tensor(bool requires_grad) const {
  return Tensor::from({height, width, 3}, data, requires_grad);
}

Image Image::from_tensor(const Tensor& t) {
  if (t.dim() != 3 || t.size(2) != 3) {
    throw ShapeError("Image::from_tensor", {t.shape()}, "expects H x W x 3");
  }
  Image img(t.size(1), t.size(0));
  std::copy(t.data().begin(), t.data().end(), img.data.begin());
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path, "file", "cannot open for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path, "file", "write failed");
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "file", "cannot open");
  auto token = [&](const char* field) {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw FormatError(path, field, "missing");
  };
  if (token("magic") != "P6") throw FormatError(path, "magic", "expected P6");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token("width"));
    h = std::stoul(token("height"));
    maxval = std::stoul(token("maxval"));
  } catch (const std::logic_error&) {
    throw FormatError(path, "header", "not a number");
  }
  if (w == 0 || h == 0) throw FormatError(path, "width/height", "zero extent");
  if (maxval == 0 || maxval > 255) {
    throw FormatError(path, "maxval", "only 8-bit PPM is supported");
  }
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> bytes(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path, "raster", "truncated pixel data");
  }
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.data[i] = bytes[i] / static_cast<double>(maxval);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  std::vector<unsigned char> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  png_write(path, img.width, img.height, 3, 8, bytes);
}

Image read_png(const std::string& path) {
  auto px = png_read(path);
  if (px.bit_depth != 8 || (px.channels != 3 && px.channels != 1)) {
    throw FormatError(path, "color type", "expected 8-bit RGB or gray");
  }
  Image img(px.width, px.height);
  for (std::size_t i = 0; i < px.width * px.height; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.data[i * 3 + c] =
          px.bytes[i * static_cast<std::size_t>(px.channels) +
                   (px.channels == 3 ? c : 0)] /
          255.0;
  return img;
}

Image read_image(const std::string& path) {
  auto ends_with = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() &&
           path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends_with(".ppm")) return read_ppm(path);
  if (ends_with(".png")) return read_png(path);
  throw FormatError(path, "extension", "expected .ppm or .png");
}

void write_depth_png(const std::string& path, const DepthMap& depth) {
  std::vector<unsigned char> bytes(depth.width * depth.height * 2);
  for (std::size_t i = 0; i < depth.meters.size(); ++i) {
    const double mm = std::clamp(std::round(depth.meters[i] * 1000.0), 0.0, 65535.0);
    const auto v = static_cast<std::uint16_t>(mm);
    bytes[i * 2] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
    bytes[i * 2 + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  png_write(path, depth.width, depth.height, 1, 16, bytes);
}

DepthMap read_depth_png(const std::string& path) {
  auto px = png_read(path);
  if (px.channels != 1 || px.bit_depth != 16) {
    throw FormatError(path, "depth", "expected 16-bit grayscale PNG");
  }
  DepthMap d{px.width, px.height, std::vector<double>(px.width * px.height)};
  for (std::size_t i = 0; i < d.meters.size(); ++i) {
    const std::uint16_t v = static_cast<std::uint16_t>(
        px.bytes[i * 2] | (px.bytes[i * 2 + 1] << 8));
    d.meters[i] = v / 1000.0;
  }
  return d;
}

DepthMap read_depth_raw(const std::string& path, std::size_t width,
                        std::size_t height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "file", "cannot open");
  std::vector<unsigned char> bytes(width * height * 2);
  if (!in.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path, "depth", "file shorter than width*height samples");
  }
  DepthMap d{width, height, std::vector<double>(width * height)};
  for (std::size_t i = 0; i < d.meters.size(); ++i)
    d.meters[i] = (bytes[i * 2] | (bytes[i * 2 + 1] << 8)) / 1000.0;
  return d;
}

}  // namespace g2s
