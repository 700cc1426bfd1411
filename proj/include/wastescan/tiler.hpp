#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "wastescan/georaster.hpp"

namespace wastescan {

/// Nearest multiple of 4 to 100 * context_m / gsd_cm. Exact halves round down.
/// Throws ContextTooSmall when the result would be below 4.
int compute_image_size(double gsd_cm, double context_m);

/// (GSD, Context Size, Image Size) triple describing the tiles fed to a classifier.
struct TileSpec {
  double gsd_cm = 0.0;
  double context_m = 0.0;
  int image_px = 0;

  static TileSpec make(double gsd_cm, double context_m);

  double gsd_m() const noexcept { return gsd_cm / 100.0; }
};

struct TileId {
  int row = 0;
  int col = 0;

  auto operator<=>(const TileId&) const = default;

  /// "r0003_c0012"; zero padding keeps string order equal to (row, col) order.
  std::string str() const;
  static TileId parse(const std::string& s);
};

/// Closed ring of world coordinates, counter-clockwise (exterior ring).
using Polygon = std::array<WorldPoint, 5>;

struct Tile {
  TileId id;
  PixelWindow window;
  Polygon polygon;
  bool snapped = false;  ///< shifted inward to end at the raster edge
};

struct TileGrid {
  std::vector<Tile> tiles;  ///< row-major
  int rows = 0;
  int cols = 0;
  double context_m = 0.0;
  double stride_m = 0.0;
  int raster_width = 0;
  int raster_height = 0;
  AffineTransform transform;
};

/// Polygon of a pixel window, taken at the outer pixel edges.
Polygon window_polygon(const AffineTransform& t, const PixelWindow& win);

/// Tiles the raster from its top-left corner. Trailing tiles that would spill
/// past the raster are snapped inward so they end exactly at the edge.
TileGrid build_grid(const GeoRaster& r, double context_m, double stride_m);
inline TileGrid build_grid(const GeoRaster& r, double context_m) {
  return build_grid(r, context_m, context_m);
}

/// Crops the tile window and resamples it to spec.image_px square. The output
/// covers exactly the tile polygon.
GeoRaster extract_tile(const GeoRaster& r, const Tile& t, const TileSpec& spec);

struct ContextCrop {
  GeoRaster image;
  double context_m;
  /// False when the crop is under 100 m, i.e. positives may lose their label.
  bool label_preserved;
};

/// Centered square crop reducing a tile's ground context.
ContextCrop center_crop_context(const GeoRaster& img, double to_context_m);

/// One JSON object per line: tile_id, row, col, window, polygon, context_m, gsd_cm, image_px.
void write_tile_manifest(const TileGrid& grid, const TileSpec& spec,
                         const std::filesystem::path& path);

}  // namespace wastescan
