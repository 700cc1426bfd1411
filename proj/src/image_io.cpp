// PNG and PPM codecs for GeoRaster/GrayImage.

#include <cctype>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <png.h>

#include "wastescan/error.hpp"
#include "wastescan/georaster.hpp"

namespace wastescan {

namespace {

struct DecodedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct MemReader {
  const std::vector<std::uint8_t>* data;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->data->size()) png_error(png, "truncated PNG");
  std::memcpy(out, r->data->data() + r->pos, n);
  r->pos += n;
}

void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_mem_flush(png_structp) {}

DecodedImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorCode::IoError, "png_create_info_struct failed");
  }
  DecodedImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buf;
  bool bad_depth = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::UnsupportedImage, fmt::format("cannot decode PNG {}", name));
  }
  MemReader reader{&bytes, 0};
  png_set_read_fn(png, &reader, png_mem_read);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && depth != 8) {
    bad_depth = true;
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    const auto rowbytes = png_get_rowbytes(png, info);
    bad_depth = rowbytes != static_cast<png_size_t>(img.width) * 3;
    if (!bad_depth) {
      buf.resize(rowbytes * img.height);
      rows.resize(static_cast<std::size_t>(img.height));
      for (int y = 0; y < img.height; ++y) rows[y] = buf.data() + rowbytes * y;
      png_read_image(png, rows.data());
      img.rgb = std::move(buf);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (bad_depth) {
    throw Error(ErrorCode::UnsupportedImage,
                fmt::format("{}: only 8-bit images are supported (bit depth {})", name, depth));
  }
  return img;
}

DecodedImage decode_ppm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000'000) break;
      ++pos;
      any = true;
    }
    if (!any) throw Error(ErrorCode::UnsupportedImage, fmt::format("{}: malformed PPM header", name));
    return v;
  };
  const long w = next_token();
  const long h = next_token();
  const long maxval = next_token();
  if (maxval != 255) {
    throw Error(ErrorCode::UnsupportedImage,
                fmt::format("{}: only 8-bit PPM (maxval 255) is supported, got {}", name, maxval));
  }
  if (w < 1 || h < 1 || pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw Error(ErrorCode::UnsupportedImage, fmt::format("{}: malformed PPM header", name));
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < n) {
    throw Error(ErrorCode::UnsupportedImage, fmt::format("{}: truncated PPM data", name));
  }
  DecodedImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::vector<std::uint8_t> encode_png_raw(int width, int height, int color_type, int channels,
                                         std::span<const std::uint8_t> pixels) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorCode::IoError, "png_create_info_struct failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_mem_write, png_mem_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(pixels.data() + stride * y);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

}  // namespace

namespace {

DecodedImage decode_file(const std::filesystem::path& image) {
  const auto bytes = read_file_bytes(image);
  DecodedImage img;
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) {
    img = decode_png(bytes, image.string());
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    img = decode_ppm(bytes, image.string());
  } else {
    throw Error(ErrorCode::UnsupportedImage,
                fmt::format("{}: not a PNG or binary PPM file", image.string()));
  }
  return img;
}

}  // namespace

GeoRaster read_raster(const std::filesystem::path& image, const std::filesystem::path& world,
                      std::string crs_id) {
  const auto transform = read_world_file(world);
  auto img = decode_file(image);
  return GeoRaster(img.width, img.height, std::move(img.rgb), transform, std::move(crs_id));
}

GeoRaster read_image(const std::filesystem::path& image) {
  auto img = decode_file(image);
  return GeoRaster(img.width, img.height, std::move(img.rgb), AffineTransform{}, "");
}

GeoRaster read_raster(const std::filesystem::path& image, std::string crs_id) {
  return read_raster(image, sidecar_world_path(image), std::move(crs_id));
}

std::vector<std::uint8_t> encode_png(const GeoRaster& r) {
  return encode_png_raw(r.width(), r.height(), PNG_COLOR_TYPE_RGB, 3, r.pixels());
}

void write_png(const GeoRaster& r, const std::filesystem::path& path) {
  write_bytes(encode_png(r), path);
}

void write_png(const GrayImage& img, const std::filesystem::path& path) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error(ErrorCode::InvalidArgument, "gray image buffer size mismatch");
  }
  write_bytes(encode_png_raw(img.width, img.height, PNG_COLOR_TYPE_GRAY, 1, img.pixels), path);
}

void write_ppm(const GeoRaster& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << "P6\n" << r.width() << " " << r.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels().data()),
            static_cast<std::streamsize>(r.pixels().size()));
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

}  // namespace wastescan
