#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wastescan {

/// North-up affine geo-transform. Origin is the world position of the CENTER
/// of the top-left pixel (world-file convention).
struct AffineTransform {
  double gsd_x = 1.0;
  double gsd_y = 1.0;
  double origin_x = 0.0;
  double origin_y = 0.0;

  bool operator==(const AffineTransform&) const = default;
};

struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
};

struct PixelPoint {
  double col = 0.0;
  double row = 0.0;
};

struct PixelWindow {
  int col0 = 0;
  int row0 = 0;
  int w = 0;
  int h = 0;

  bool operator==(const PixelWindow&) const = default;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB raster with a geo-transform and an opaque CRS tag. Immutable once built.
class GeoRaster {
public:
  static constexpr int kBands = 3;

  GeoRaster(int width, int height, std::vector<std::uint8_t> pixels, AffineTransform transform,
            std::string crs_id);

  static GeoRaster filled(int width, int height, Rgb color, AffineTransform transform,
                          std::string crs_id);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const AffineTransform& transform() const noexcept { return transform_; }
  const std::string& crs_id() const noexcept { return crs_id_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  std::uint8_t at(int col, int row, int band) const {
    return pixels_[(static_cast<std::size_t>(row) * width_ + col) * kBands + band];
  }
  Rgb rgb(int col, int row) const { return {at(col, row, 0), at(col, row, 1), at(col, row, 2)}; }

  /// Full extent in world units, measured edge to edge.
  double extent_x() const noexcept { return width_ * transform_.gsd_x; }
  double extent_y() const noexcept { return height_ * transform_.gsd_y; }

  bool operator==(const GeoRaster&) const = default;

private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;
  AffineTransform transform_;
  std::string crs_id_;
};

/// Single-band 8-bit raster, used for saliency output.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  AffineTransform transform;
};

WorldPoint pixel_to_world(const AffineTransform& t, double col, double row);
PixelPoint world_to_pixel(const AffineTransform& t, double x, double y);
inline WorldPoint pixel_to_world(const GeoRaster& r, double col, double row) {
  return pixel_to_world(r.transform(), col, row);
}
inline PixelPoint world_to_pixel(const GeoRaster& r, double x, double y) {
  return world_to_pixel(r.transform(), x, y);
}

// World files -----------------------------------------------------------------

AffineTransform parse_world_file(const std::string& text);
AffineTransform read_world_file(const std::filesystem::path& path);
std::string format_world_file(const AffineTransform& t);
void write_world_file(const AffineTransform& t, const std::filesystem::path& path);

/// `<stem>.wld`, falling back to `<stem>.pgw` if only that exists.
std::filesystem::path sidecar_world_path(const std::filesystem::path& image);

// Raster I/O ------------------------------------------------------------------

/// Reads a PNG or binary PPM (P6) and its world file. Gray/palette/alpha inputs
/// are coerced to RGB; anything other than 8 bits per sample is rejected.
GeoRaster read_raster(const std::filesystem::path& image, const std::filesystem::path& world,
                      std::string crs_id = "EPSG:32632");
GeoRaster read_raster(const std::filesystem::path& image, std::string crs_id = "EPSG:32632");

/// Pixels only, no world file; the transform is the unit identity.
GeoRaster read_image(const std::filesystem::path& image);

void write_png(const GeoRaster& r, const std::filesystem::path& path);
void write_png(const GrayImage& img, const std::filesystem::path& path);
void write_ppm(const GeoRaster& r, const std::filesystem::path& path);

/// Encodes to an in-memory PNG (used by the exchange protocol and HTTP service).
std::vector<std::uint8_t> encode_png(const GeoRaster& r);

// Geometry ops ----------------------------------------------------------------

GeoRaster crop(const GeoRaster& r, const PixelWindow& win);

/// Resamples so that output pixels have the given ground size. The output grid
/// shares the source's top-left edge; dimensions are exactly (out_w, out_h).
/// Axes coarser than the source use area averaging, finer axes use bilinear.
GeoRaster resample(const GeoRaster& r, double target_gsd, int out_w, int out_h);
GeoRaster resample(const GeoRaster& r, double target_gsd_x, double target_gsd_y, int out_w,
                   int out_h);

/// Round half up to the nearest 8-bit value, clamped to [0, 255].
std::uint8_t to_u8(double v);

}  // namespace wastescan
