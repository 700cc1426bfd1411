#include "wastescan/tiler.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "wastescan/error.hpp"

namespace wastescan {

int compute_image_size(double gsd_cm, double context_m) {
  if (!(gsd_cm > 0.0) || !(context_m > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "GSD and context size must be positive");
  }
  const double quarters = 100.0 * context_m / gsd_cm / 4.0;
  const double lower = std::floor(quarters);
  const double frac = quarters - lower;
  // Halfway goes down; the tolerance keeps scaled inputs (k*g, k*c) on the same side.
  const double k = (frac > 0.5 + 1e-9) ? lower + 1.0 : lower;
  const double px = 4.0 * k;
  if (px < 4.0) {
    throw Error(ErrorCode::ContextTooSmall,
                fmt::format("context {} m at {} cm/px gives fewer than 4 pixels", context_m,
                            gsd_cm));
  }
  return static_cast<int>(px);
}

TileSpec TileSpec::make(double gsd_cm, double context_m) {
  return {gsd_cm, context_m, compute_image_size(gsd_cm, context_m)};
}

std::string TileId::str() const { return fmt::format("r{:04d}_c{:04d}", row, col); }

TileId TileId::parse(const std::string& s) {
  TileId id;
  int consumed = 0;
  if (std::sscanf(s.c_str(), "r%d_c%d%n", &id.row, &id.col, &consumed) != 2 ||
      consumed != static_cast<int>(s.size()) || id.row < 0 || id.col < 0) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("bad tile id '{}'", s));
  }
  return id;
}

Polygon window_polygon(const AffineTransform& t, const PixelWindow& win) {
  const auto tl = pixel_to_world(t, win.col0 - 0.5, win.row0 - 0.5);
  const auto br = pixel_to_world(t, win.col0 + win.w - 0.5, win.row0 + win.h - 0.5);
  // Counter-clockwise from the south-west corner.
  return {WorldPoint{tl.x, br.y}, WorldPoint{br.x, br.y}, WorldPoint{br.x, tl.y},
          WorldPoint{tl.x, tl.y}, WorldPoint{tl.x, br.y}};
}

namespace {

struct AxisStart {
  int start;
  bool snapped;
};

std::vector<AxisStart> axis_starts(int n, int side, int stride) {
  std::vector<AxisStart> starts;
  for (int p = 0; p + side <= n; p += stride) starts.push_back({p, false});
  if (starts.back().start + side < n) starts.push_back({n - side, true});
  return starts;
}

}  // namespace

TileGrid build_grid(const GeoRaster& r, double context_m, double stride_m) {
  if (!(context_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "context must be positive");
  if (!(stride_m > 0.0) || stride_m > context_m) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("stride {} m must be in (0, context {} m]", stride_m, context_m));
  }
  const auto& t = r.transform();
  const int side_x = static_cast<int>(std::lround(context_m / t.gsd_x));
  const int side_y = static_cast<int>(std::lround(context_m / t.gsd_y));
  if (side_x < 1 || side_y < 1 || side_x > r.width() || side_y > r.height()) {
    throw Error(ErrorCode::AOISmallerThanTile,
                fmt::format("raster {:.2f} x {:.2f} m cannot hold a {} m tile", r.extent_x(),
                            r.extent_y(), context_m));
  }
  const int stride_x = std::max(1, static_cast<int>(std::lround(stride_m / t.gsd_x)));
  const int stride_y = std::max(1, static_cast<int>(std::lround(stride_m / t.gsd_y)));
  const auto xs = axis_starts(r.width(), side_x, stride_x);
  const auto ys = axis_starts(r.height(), side_y, stride_y);

  TileGrid grid;
  grid.rows = static_cast<int>(ys.size());
  grid.cols = static_cast<int>(xs.size());
  grid.context_m = context_m;
  grid.stride_m = stride_m;
  grid.raster_width = r.width();
  grid.raster_height = r.height();
  grid.transform = t;
  grid.tiles.reserve(xs.size() * ys.size());
  for (int row = 0; row < grid.rows; ++row) {
    for (int col = 0; col < grid.cols; ++col) {
      Tile tile;
      tile.id = {row, col};
      tile.window = {xs[col].start, ys[row].start, side_x, side_y};
      tile.polygon = window_polygon(t, tile.window);
      tile.snapped = xs[col].snapped || ys[row].snapped;
      grid.tiles.push_back(tile);
    }
  }
  return grid;
}

GeoRaster extract_tile(const GeoRaster& r, const Tile& t, const TileSpec& spec) {
  GeoRaster cropped = crop(r, t.window);
  if (cropped.width() == spec.image_px && cropped.height() == spec.image_px) return cropped;
  const double gx = cropped.extent_x() / spec.image_px;
  const double gy = cropped.extent_y() / spec.image_px;
  return resample(cropped, gx, gy, spec.image_px, spec.image_px);
}

ContextCrop center_crop_context(const GeoRaster& img, double to_context_m) {
  const double in_context = img.extent_x();
  if (!(to_context_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "context must be positive");
  if (to_context_m > in_context * (1.0 + 1e-9)) {
    throw Error(ErrorCode::CropLargerThanTile,
                fmt::format("cannot crop {:.2f} m tile to {:.2f} m", in_context, to_context_m));
  }
  const double fraction = to_context_m / in_context;
  const int w = std::max(1, static_cast<int>(std::lround(fraction * img.width())));
  const int h = std::max(1, static_cast<int>(std::lround(fraction * img.height())));
  const PixelWindow win{(img.width() - w) / 2, (img.height() - h) / 2, w, h};
  return {crop(img, win), to_context_m, to_context_m >= 100.0 - 1e-9};
}

void write_tile_manifest(const TileGrid& grid, const TileSpec& spec,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  for (const auto& t : grid.tiles) {
    nlohmann::ordered_json row;
    row["tile_id"] = t.id.str();
    row["row"] = t.id.row;
    row["col"] = t.id.col;
    row["window"] = {t.window.col0, t.window.row0, t.window.w, t.window.h};
    auto ring = nlohmann::ordered_json::array();
    for (const auto& p : t.polygon) ring.push_back({p.x, p.y});
    row["polygon"] = ring;
    row["context_m"] = grid.context_m;
    row["gsd_cm"] = spec.gsd_cm;
    row["image_px"] = spec.image_px;
    out << row.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

}  // namespace wastescan
