#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wastescan/backend.hpp"
#include "wastescan/georaster.hpp"
#include "wastescan/tiler.hpp"

namespace wastescan {

struct ScanConfig {
  TileSpec spec;
  std::optional<double> stride_m;  ///< defaults to spec.context_m
  double candidate_threshold = 0.2;
  double high_risk_threshold = 0.7;
  std::optional<double> saliency_threshold;  ///< defaults to candidate_threshold
  int workers = 1;
  std::filesystem::path output_dir;  ///< empty: no per-tile artifacts

  void validate() const;
  double stride() const { return stride_m.value_or(spec.context_m); }
  double saliency_cutoff() const { return saliency_threshold.value_or(candidate_threshold); }
};

struct SaliencyPaths {
  std::string grayscale;  ///< relative to the scan output directory
  std::string overlay;
};

struct Detection {
  TileId tile_id;
  PixelWindow window;
  Polygon polygon;
  bool snapped = false;
  double score = 0.0;
  std::optional<Rgb> color;  ///< set when score >= candidate threshold
  std::optional<SaliencyPaths> saliency;
  std::optional<std::string> image;  ///< tile image, written for candidates
};

struct RasterInfo {
  int width = 0;
  int height = 0;
  AffineTransform transform;
  std::string crs_id;
};

struct ScanResult {
  std::vector<Detection> detections;  ///< one per grid tile, sorted by tile id
  ScanConfig config;
  BackendConfig backend;
  RasterInfo raster;
  int grid_rows = 0;
  int grid_cols = 0;
  double total_area_km2 = 0.0;
  double candidate_area_km2 = 0.0;
  double high_risk_area_km2 = 0.0;
};

/// Grid, extract, classify, saliency for high scorers, area accounting. Output
/// does not depend on the worker count. A backend failure aborts the scan and
/// removes any artifacts already written.
ScanResult scan(const GeoRaster& r, const ScanConfig& cfg, const BackendConfig& backend);

/// Detections with score >= threshold, order preserved.
std::vector<Detection> filter_detections(std::span<const Detection> detections, double threshold);
inline std::vector<Detection> filter_detections(const ScanResult& res, double threshold) {
  return filter_detections(res.detections, threshold);
}

/// Yellow (score == t0) to red (score == 1), linear in the green channel.
Rgb score_to_color(double score, double t0);
std::string color_hex(Rgb c);

/// 1-based ranks aligned with `detections`: descending score, ties by tile id.
std::vector<int> rank_detections(std::span<const Detection> detections);

/// Area in km2 of the union of pixel windows.
double union_area_km2(std::span<const PixelWindow> windows, const AffineTransform& t);

std::string geojson_string(const ScanResult& res);
void write_geojson(const ScanResult& res, const std::filesystem::path& path);

nlohmann::ordered_json scan_report_json(const ScanResult& res);
void write_scan_report(const ScanResult& res, const std::filesystem::path& path);

}  // namespace wastescan
