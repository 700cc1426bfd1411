#include "wastescan/scanner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#include <fmt/format.h>

#include "wastescan/error.hpp"
#include "wastescan/parallel.hpp"
#include "wastescan/saliency.hpp"

namespace wastescan {

namespace fs = std::filesystem;

void ScanConfig::validate() const {
  if (!(spec.gsd_cm > 0.0) || !(spec.context_m > 0.0) || spec.image_px < 4) {
    throw Error(ErrorCode::InvalidArgument, "tile spec is not initialized");
  }
  if (!(0.0 <= candidate_threshold && candidate_threshold <= high_risk_threshold &&
        high_risk_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("thresholds must satisfy 0 <= {} <= {} <= 1", candidate_threshold,
                            high_risk_threshold));
  }
  if (saliency_threshold && !(*saliency_threshold >= 0.0 && *saliency_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "saliency threshold must be in [0, 1]");
  }
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");
}

Rgb score_to_color(double score, double t0) {
  if (!(t0 < 1.0)) throw Error(ErrorCode::InvalidArgument, "t0 must be below 1");
  if (score < t0) {
    throw Error(ErrorCode::NotACandidate, fmt::format("score {} below threshold {}", score, t0));
  }
  const double u = std::min(1.0, (score - t0) / (1.0 - t0));
  return {255, to_u8(255.0 * (1.0 - u)), 0};
}

std::string color_hex(Rgb c) { return fmt::format("#{:02X}{:02X}{:02X}", c.r, c.g, c.b); }

std::vector<Detection> filter_detections(std::span<const Detection> detections, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must be in [0, 1]");
  }
  std::vector<Detection> out;
  for (const auto& d : detections) {
    if (d.score >= threshold) out.push_back(d);
  }
  return out;
}

std::vector<int> rank_detections(std::span<const Detection> detections) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (detections[a].score != detections[b].score) {
      return detections[a].score > detections[b].score;
    }
    return detections[a].tile_id < detections[b].tile_id;
  });
  std::vector<int> ranks(detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranks[order[i]] = static_cast<int>(i) + 1;
  return ranks;
}

double union_area_km2(std::span<const PixelWindow> windows, const AffineTransform& t) {
  if (windows.empty()) return 0.0;
  std::vector<int> xs, ys;
  for (const auto& w : windows) {
    xs.push_back(w.col0);
    xs.push_back(w.col0 + w.w);
    ys.push_back(w.row0);
    ys.push_back(w.row0 + w.h);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  const std::size_t nx = xs.size() - 1;
  const std::size_t ny = ys.size() - 1;
  std::vector<char> covered(nx * ny, 0);
  for (const auto& w : windows) {
    const auto x0 = std::lower_bound(xs.begin(), xs.end(), w.col0) - xs.begin();
    const auto x1 = std::lower_bound(xs.begin(), xs.end(), w.col0 + w.w) - xs.begin();
    const auto y0 = std::lower_bound(ys.begin(), ys.end(), w.row0) - ys.begin();
    const auto y1 = std::lower_bound(ys.begin(), ys.end(), w.row0 + w.h) - ys.begin();
    for (auto y = y0; y < y1; ++y) {
      for (auto x = x0; x < x1; ++x) covered[static_cast<std::size_t>(y) * nx + x] = 1;
    }
  }
  long long pixels = 0;
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t x = 0; x < nx; ++x) {
      if (covered[y * nx + x]) {
        pixels += static_cast<long long>(xs[x + 1] - xs[x]) * (ys[y + 1] - ys[y]);
      }
    }
  }
  return static_cast<double>(pixels) * t.gsd_x * t.gsd_y / 1e6;
}

namespace {

std::vector<PixelWindow> windows_at_or_above(std::span<const Detection> dets, double threshold) {
  std::vector<PixelWindow> out;
  for (const auto& d : dets) {
    if (d.score >= threshold) out.push_back(d.window);
  }
  return out;
}

}  // namespace

ScanResult scan(const GeoRaster& r, const ScanConfig& cfg, const BackendConfig& backend) {
  cfg.validate();
  backend.validate();
  const TileGrid grid = build_grid(r, cfg.spec.context_m, cfg.stride());
  const bool write_artifacts = !cfg.output_dir.empty();
  if (write_artifacts) fs::create_directories(cfg.output_dir);

  std::vector<Detection> detections(grid.tiles.size());
  std::vector<fs::path> written;
  std::mutex written_mutex;

  // Batches are a fixed partition of the row-major tile list, so results do
  // not depend on which worker handles which batch.
  const auto batch = static_cast<std::size_t>(backend.batch_size);
  const std::size_t n_batches = (grid.tiles.size() + batch - 1) / batch;

  auto process_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch;
    const std::size_t end = std::min(grid.tiles.size(), begin + batch);
    std::vector<GeoRaster> images;
    std::vector<std::string> ids;
    images.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(extract_tile(r, grid.tiles[i], cfg.spec));
      ids.push_back(grid.tiles[i].id.str());
    }
    const auto outputs = classify_batch(images, backend, ids);

    std::vector<fs::path> mine;
    auto record = [&] {
      std::lock_guard lock(written_mutex);
      written.insert(written.end(), mine.begin(), mine.end());
    };
    try {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& tile = grid.tiles[i];
      const auto& out = outputs[i - begin];
      const auto& img = images[i - begin];
      Detection d;
      d.tile_id = tile.id;
      d.window = tile.window;
      d.polygon = tile.polygon;
      d.snapped = tile.snapped;
      d.score = out.score;
      if (d.score >= cfg.candidate_threshold && cfg.candidate_threshold < 1.0) {
        d.color = score_to_color(d.score, cfg.candidate_threshold);
      } else if (d.score >= cfg.candidate_threshold) {
        d.color = Rgb{255, 0, 0};
      }
      const std::string stem = "tile_" + tile.id.str();
      if (write_artifacts && d.score >= cfg.candidate_threshold) {
        d.image = stem + "_image.png";
        write_png(img, cfg.output_dir / *d.image);
        write_world_file(img.transform(), cfg.output_dir / (stem + "_image.wld"));
        mine.push_back(cfg.output_dir / *d.image);
        mine.push_back(cfg.output_dir / (stem + "_image.wld"));
      }
      if (write_artifacts && d.score >= cfg.saliency_cutoff() && out.activations &&
          out.channel_weights) {
        const auto cam = grad_cam(*out.activations, *out.channel_weights);
        const auto full = upsample_map(cam, img.width(), img.height());
        const auto overlay = render_overlay(img, full);
        SaliencyPaths paths{stem + "_saliency.png", stem + "_overlay.png"};
        write_png(overlay.grayscale, cfg.output_dir / paths.grayscale);
        write_world_file(overlay.grayscale.transform, cfg.output_dir / (stem + "_saliency.wld"));
        write_png(overlay.colorized, cfg.output_dir / paths.overlay);
        mine.push_back(cfg.output_dir / paths.grayscale);
        mine.push_back(cfg.output_dir / (stem + "_saliency.wld"));
        mine.push_back(cfg.output_dir / paths.overlay);
        d.saliency = std::move(paths);
      }
      detections[i] = std::move(d);
    }
    } catch (...) {
      record();
      throw;
    }
    record();
  };

  try {
    parallel_for(n_batches, cfg.workers, process_batch);
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }

  ScanResult res;
  res.detections = std::move(detections);
  res.config = cfg;
  res.backend = backend;
  res.raster = {r.width(), r.height(), r.transform(), r.crs_id()};
  res.grid_rows = grid.rows;
  res.grid_cols = grid.cols;
  std::vector<PixelWindow> all;
  for (const auto& t : grid.tiles) all.push_back(t.window);
  res.total_area_km2 = union_area_km2(all, r.transform());
  res.candidate_area_km2 = union_area_km2(
      windows_at_or_above(res.detections, cfg.candidate_threshold), r.transform());
  res.high_risk_area_km2 = union_area_km2(
      windows_at_or_above(res.detections, cfg.high_risk_threshold), r.transform());
  return res;
}

// Output ----------------------------------------------------------------------

namespace {

std::string quoted(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s).dump() : "null";
}

}  // namespace

std::string geojson_string(const ScanResult& res) {
  const auto ranks = rank_detections(res.detections);
  std::string out;
  out += "{\"type\":\"FeatureCollection\",\"name\":\"detections\",";
  out += fmt::format("\"crs\":{{\"type\":\"name\",\"properties\":{{\"name\":{}}}}},",
                     nlohmann::json(res.raster.crs_id).dump());
  out += "\"features\":[\n";
  for (std::size_t i = 0; i < res.detections.size(); ++i) {
    const auto& d = res.detections[i];
    std::string ring;
    for (std::size_t k = 0; k < d.polygon.size(); ++k) {
      ring += fmt::format("{}[{:.6f},{:.6f}]", k ? "," : "", d.polygon[k].x, d.polygon[k].y);
    }
    const std::string id = d.tile_id.str();
    out += fmt::format(
        "{{\"type\":\"Feature\",\"id\":\"{}\",\"geometry\":{{\"type\":\"Polygon\","
        "\"coordinates\":[[{}]]}},\"properties\":{{\"tile_id\":\"{}\",\"score\":{:.6f},"
        "\"score_raw\":{},\"color\":{},\"rank\":{},\"context_m\":{},\"gsd_cm\":{},\"image\":{},"
        "\"saliency\":{},\"overlay\":{}}}}}{}\n",
        id, ring, id, d.score, d.score, d.color ? "\"" + color_hex(*d.color) + "\"" : "null", ranks[i],
        res.config.spec.context_m, res.config.spec.gsd_cm, quoted(d.image),
        quoted(d.saliency ? std::optional(d.saliency->grayscale) : std::nullopt),
        quoted(d.saliency ? std::optional(d.saliency->overlay) : std::nullopt),
        i + 1 < res.detections.size() ? "," : "");
  }
  out += "]}\n";
  return out;
}

void write_geojson(const ScanResult& res, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << geojson_string(res);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

nlohmann::ordered_json scan_report_json(const ScanResult& res) {
  using nlohmann::ordered_json;
  const auto& c = res.config;
  std::size_t candidates = 0, high = 0, salient = 0, snapped = 0;
  for (const auto& d : res.detections) {
    candidates += d.score >= c.candidate_threshold;
    high += d.score >= c.high_risk_threshold;
    salient += d.saliency.has_value();
    snapped += d.snapped;
  }
  auto pct_reduction = [](double part, double whole) -> ordered_json {
    if (whole <= 0.0) return nullptr;
    return 100.0 * (whole - part) / whole;
  };
  ordered_json j;
  j["config"] = {
      {"gsd_cm", c.spec.gsd_cm},
      {"context_m", c.spec.context_m},
      {"image_px", c.spec.image_px},
      {"stride_m", c.stride()},
      {"candidate_threshold", c.candidate_threshold},
      {"high_risk_threshold", c.high_risk_threshold},
      {"saliency_threshold", c.saliency_cutoff()},
      {"workers", c.workers},
  };
  j["backend"] = {
      {"kind", res.backend.kind == BackendKind::Heuristic ? "heuristic" : "external"},
      {"exchange_dir", res.backend.exchange_dir.string()},
      {"variance_threshold", res.backend.variance_threshold},
      {"block", res.backend.block},
      {"batch_size", res.backend.batch_size},
  };
  j["raster"] = {
      {"width", res.raster.width},
      {"height", res.raster.height},
      {"gsd_x", res.raster.transform.gsd_x},
      {"gsd_y", res.raster.transform.gsd_y},
      {"origin_x", res.raster.transform.origin_x},
      {"origin_y", res.raster.transform.origin_y},
      {"crs_id", res.raster.crs_id},
  };
  j["grid"] = {{"rows", res.grid_rows},
               {"cols", res.grid_cols},
               {"tiles", res.detections.size()},
               {"snapped_tiles", snapped}};
  j["counts"] = {{"candidates", candidates}, {"high_risk", high}, {"with_saliency", salient}};
  j["area"] = {
      {"total_km2", res.total_area_km2},
      {"candidate_km2", res.candidate_area_km2},
      {"high_risk_km2", res.high_risk_area_km2},
      {"candidate_reduction_vs_total_pct", pct_reduction(res.candidate_area_km2,
                                                         res.total_area_km2)},
      {"high_risk_reduction_vs_total_pct", pct_reduction(res.high_risk_area_km2,
                                                         res.total_area_km2)},
      {"high_risk_reduction_vs_candidate_pct", pct_reduction(res.high_risk_area_km2,
                                                             res.candidate_area_km2)},
  };
  return j;
}

void write_scan_report(const ScanResult& res, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << scan_report_json(res).dump(2) << '\n';
}

}  // namespace wastescan
