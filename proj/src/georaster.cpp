#include "wastescan/georaster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "wastescan/error.hpp"

namespace wastescan {

GeoRaster::GeoRaster(int width, int height, std::vector<std::uint8_t> pixels,
                     AffineTransform transform, std::string crs_id)
    : width_(width),
      height_(height),
      pixels_(std::move(pixels)),
      transform_(transform),
      crs_id_(std::move(crs_id)) {
  if (width_ < 1 || height_ < 1) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("raster size {}x{}", width_, height_));
  }
  if (pixels_.size() != static_cast<std::size_t>(width_) * height_ * kBands) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("pixel buffer has {} bytes, expected {}", pixels_.size(),
                            static_cast<std::size_t>(width_) * height_ * kBands));
  }
  if (!(transform_.gsd_x > 0.0) || !(transform_.gsd_y > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "ground sampling distance must be positive");
  }
}

GeoRaster GeoRaster::filled(int width, int height, Rgb color, AffineTransform transform,
                            std::string crs_id) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(std::max(width, 0)) *
                               std::max(height, 0) * kBands);
  for (std::size_t i = 0; i < px.size(); i += kBands) {
    px[i] = color.r;
    px[i + 1] = color.g;
    px[i + 2] = color.b;
  }
  return GeoRaster(width, height, std::move(px), transform, std::move(crs_id));
}

WorldPoint pixel_to_world(const AffineTransform& t, double col, double row) {
  return {t.origin_x + col * t.gsd_x, t.origin_y - row * t.gsd_y};
}

PixelPoint world_to_pixel(const AffineTransform& t, double x, double y) {
  return {(x - t.origin_x) / t.gsd_x, (t.origin_y - y) / t.gsd_y};
}

std::uint8_t to_u8(double v) {
  // The epsilon absorbs accumulated error in weights that sum to one.
  const double r = std::floor(v + 0.5 + 1e-9);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

// World files -----------------------------------------------------------------

AffineTransform parse_world_file(const std::string& text) {
  std::vector<double> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string token = line.substr(first, last - first + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedWorldFile, fmt::format("not a number: '{}'", token));
    }
    if (used != token.size() || !std::isfinite(v)) {
      throw Error(ErrorCode::MalformedWorldFile, fmt::format("not a number: '{}'", token));
    }
    values.push_back(v);
  }
  if (values.size() != 6) {
    throw Error(ErrorCode::MalformedWorldFile,
                fmt::format("expected 6 values, found {}", values.size()));
  }
  // Line order: A, D, B, E, C, F.
  const double a = values[0], d = values[1], b = values[2], e = values[3];
  if (d != 0.0 || b != 0.0) {
    throw Error(ErrorCode::UnsupportedRotation, "rotation terms must be zero");
  }
  if (!(a > 0.0)) {
    throw Error(ErrorCode::MalformedWorldFile, "pixel width must be positive");
  }
  if (!(e < 0.0)) {
    throw Error(ErrorCode::UnsupportedRotation, "only north-up rasters are supported");
  }
  return {a, -e, values[4], values[5]};
}

AffineTransform read_world_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::MalformedWorldFile, fmt::format("cannot open {}", path.string()));
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_world_file(ss.str());
}

std::string format_world_file(const AffineTransform& t) {
  return fmt::format("{:.12f}\n{:.12f}\n{:.12f}\n{:.12f}\n{:.12f}\n{:.12f}\n", t.gsd_x, 0.0, 0.0,
                     -t.gsd_y, t.origin_x, t.origin_y);
}

void write_world_file(const AffineTransform& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << format_world_file(t);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

std::filesystem::path sidecar_world_path(const std::filesystem::path& image) {
  auto wld = std::filesystem::path(image).replace_extension(".wld");
  if (std::filesystem::exists(wld)) return wld;
  auto pgw = std::filesystem::path(image).replace_extension(".pgw");
  if (std::filesystem::exists(pgw)) return pgw;
  return wld;
}

// Geometry ops ----------------------------------------------------------------

GeoRaster crop(const GeoRaster& r, const PixelWindow& win) {
  if (win.col0 < 0 || win.row0 < 0 || win.w < 1 || win.h < 1 ||
      win.col0 + win.w > r.width() || win.row0 + win.h > r.height()) {
    throw Error(ErrorCode::WindowOutOfBounds,
                fmt::format("window ({},{},{},{}) outside {}x{} raster", win.col0, win.row0,
                            win.w, win.h, r.width(), r.height()));
  }
  std::vector<std::uint8_t> px(static_cast<std::size_t>(win.w) * win.h * GeoRaster::kBands);
  const auto src = r.pixels();
  const std::size_t row_bytes = static_cast<std::size_t>(win.w) * GeoRaster::kBands;
  for (int y = 0; y < win.h; ++y) {
    const std::size_t offset =
        (static_cast<std::size_t>(win.row0 + y) * r.width() + win.col0) * GeoRaster::kBands;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(offset), row_bytes,
                px.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  const auto origin = pixel_to_world(r, win.col0, win.row0);
  AffineTransform t = r.transform();
  t.origin_x = origin.x;
  t.origin_y = origin.y;
  return GeoRaster(win.w, win.h, std::move(px), t, r.crs_id());
}

namespace {

struct Tap {
  int index;
  double weight;
};

// Source taps for each output index along one axis. `scale` is output pixel
// size over source pixel size; both grids share the leading edge.
std::vector<std::vector<Tap>> axis_taps(int src_n, int out_n, double scale) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out_n));
  for (int i = 0; i < out_n; ++i) {
    auto& t = taps[static_cast<std::size_t>(i)];
    if (scale > 1.0) {
      double a = std::clamp(i * scale, 0.0, static_cast<double>(src_n));
      double b = std::clamp((i + 1) * scale, 0.0, static_cast<double>(src_n));
      if (b - a <= 0.0) {
        t.push_back({src_n - 1, 1.0});
        continue;
      }
      double total = 0.0;
      const int k0 = static_cast<int>(std::floor(a));
      const int k1 = std::min(src_n, static_cast<int>(std::ceil(b)));
      for (int k = k0; k < k1; ++k) {
        const double w = std::min(b, k + 1.0) - std::max(a, static_cast<double>(k));
        if (w > 0.0) {
          t.push_back({k, w});
          total += w;
        }
      }
      for (auto& tap : t) tap.weight /= total;
    } else {
      double u = (i + 0.5) * scale - 0.5;
      u = std::clamp(u, 0.0, static_cast<double>(src_n - 1));
      const int k0 = static_cast<int>(std::floor(u));
      const double f = u - k0;
      t.push_back({k0, 1.0 - f});
      if (f > 0.0 && k0 + 1 < src_n) t.push_back({k0 + 1, f});
    }
  }
  return taps;
}

}  // namespace

GeoRaster resample(const GeoRaster& r, double target_gsd, int out_w, int out_h) {
  return resample(r, target_gsd, target_gsd, out_w, out_h);
}

GeoRaster resample(const GeoRaster& r, double target_gsd_x, double target_gsd_y, int out_w,
                   int out_h) {
  if (!(target_gsd_x > 0.0) || !(target_gsd_y > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "target GSD must be positive");
  }
  if (out_w < 1 || out_h < 1) {
    throw Error(ErrorCode::InvalidArgument, "output size must be at least 1x1");
  }
  const auto& st = r.transform();
  const auto xt = axis_taps(r.width(), out_w, target_gsd_x / st.gsd_x);
  const auto yt = axis_taps(r.height(), out_h, target_gsd_y / st.gsd_y);
  constexpr int B = GeoRaster::kBands;

  // Horizontal pass into a (src_h x out_w) buffer, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(r.height()) * out_w * B, 0.0);
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < out_w; ++x) {
      double* dst = &tmp[(static_cast<std::size_t>(y) * out_w + x) * B];
      for (const auto& tap : xt[static_cast<std::size_t>(x)]) {
        for (int b = 0; b < B; ++b) dst[b] += tap.weight * r.at(tap.index, y, b);
      }
    }
  }
  std::vector<std::uint8_t> px(static_cast<std::size_t>(out_w) * out_h * B);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double acc[B] = {0.0, 0.0, 0.0};
      for (const auto& tap : yt[static_cast<std::size_t>(y)]) {
        const double* src = &tmp[(static_cast<std::size_t>(tap.index) * out_w + x) * B];
        for (int b = 0; b < B; ++b) acc[b] += tap.weight * src[b];
      }
      for (int b = 0; b < B; ++b) {
        px[(static_cast<std::size_t>(y) * out_w + x) * B + b] = to_u8(acc[b]);
      }
    }
  }
  AffineTransform t;
  t.gsd_x = target_gsd_x;
  t.gsd_y = target_gsd_y;
  t.origin_x = st.origin_x - 0.5 * st.gsd_x + 0.5 * target_gsd_x;
  t.origin_y = st.origin_y + 0.5 * st.gsd_y - 0.5 * target_gsd_y;
  return GeoRaster(out_w, out_h, std::move(px), t, r.crs_id());
}

}  // namespace wastescan
