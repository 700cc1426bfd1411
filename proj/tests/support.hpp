#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "wastescan/georaster.hpp"

namespace testing {

class TempDir {
public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "wastescan-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline wastescan::AffineTransform utm(double gsd, double ox = 500000.0, double oy = 5000000.0) {
  return {gsd, gsd, ox, oy};
}

inline wastescan::GeoRaster uniform(int w, int h, std::uint8_t v, double gsd = 1.0) {
  return wastescan::GeoRaster::filled(w, h, {v, v, v}, utm(gsd), "EPSG:32632");
}

/// Alternating 0/255 pixels, period 2 in both directions.
inline wastescan::GeoRaster checkerboard(int w, int h, double gsd = 1.0) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t v = (x + y) % 2 ? 255 : 0;
      for (int b = 0; b < 3; ++b) px[(static_cast<std::size_t>(y) * w + x) * 3 + b] = v;
    }
  }
  return wastescan::GeoRaster(w, h, std::move(px), utm(gsd), "EPSG:32632");
}

inline wastescan::GeoRaster random_raster(std::mt19937_64& rng, int w, int h, double gsd = 1.0) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : px) p = static_cast<std::uint8_t>(d(rng));
  return wastescan::GeoRaster(w, h, std::move(px), utm(gsd), "EPSG:32632");
}

}  // namespace testing
