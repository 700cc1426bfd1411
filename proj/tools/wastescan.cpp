#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "wastescan/datasetkit.hpp"
#include "wastescan/error.hpp"
#include "wastescan/evalkit.hpp"
#include "wastescan/reviewsvc.hpp"
#include "wastescan/scanner.hpp"

using namespace wastescan;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};
ReviewServer* g_server = nullptr;

void on_signal(int) {
  g_stop = true;
  if (g_server) g_server->stop();
}

GeoRaster load_raster(const fs::path& image, const std::string& world, const std::string& crs) {
  if (world.empty()) return read_raster(image, crs);
  return read_raster(image, fs::path(world), crs);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  out << text;
}

struct RasterArgs {
  std::string raster;
  std::string world;
  std::string crs = "EPSG:32632";

  void add(CLI::App* app) {
    app->add_option("--raster", raster, "Orthophoto (PNG or PPM)")->required()->check(CLI::ExistingFile);
    app->add_option("--world", world, "World file; defaults to the image's sidecar");
    app->add_option("--crs", crs, "CRS identifier carried into the outputs")->capture_default_str();
  }
};

struct BackendArgs {
  std::string spec = "heuristic";
  double variance_threshold = 100.0;
  int block = 8;
  int batch_size = 120;
  int timeout_s = 60;

  void add(CLI::App* app) {
    app->add_option("--backend", spec, "heuristic | external:<dir>")->capture_default_str();
    app->add_option("--variance-threshold", variance_threshold, "Heuristic block variance threshold")
        ->capture_default_str();
    app->add_option("--block", block, "Heuristic block size in pixels")->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--timeout", timeout_s, "External backend timeout per batch, seconds")
        ->capture_default_str();
  }

  BackendConfig config() const {
    auto cfg = BackendConfig::parse(spec);
    cfg.variance_threshold = variance_threshold;
    cfg.block = block;
    cfg.batch_size = batch_size;
    cfg.timeout = std::chrono::seconds(timeout_s);
    cfg.validate();
    return cfg;
  }
};

void add_scan(CLI::App& app) {
  auto* cmd = app.add_subcommand("scan", "Tile, classify and visualize an orthophoto");
  auto raster = std::make_shared<RasterArgs>();
  auto backend = std::make_shared<BackendArgs>();
  auto gsd = std::make_shared<double>(), context = std::make_shared<double>();
  auto stride = std::make_shared<double>(0.0);
  auto t_cand = std::make_shared<double>(0.2), t_high = std::make_shared<double>(0.7);
  auto t_sal = std::make_shared<double>(-1.0);
  auto workers = std::make_shared<int>(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  auto out = std::make_shared<std::string>();
  raster->add(cmd);
  backend->add(cmd);
  cmd->add_option("--gsd-cm", *gsd, "Classifier GSD in cm/px")->required();
  cmd->add_option("--context-m", *context, "Tile side on the ground in metres")->required();
  cmd->add_option("--stride-m", *stride, "Grid stride in metres (default: context)");
  cmd->add_option("--t-candidate", *t_cand)->capture_default_str();
  cmd->add_option("--t-high", *t_high)->capture_default_str();
  cmd->add_option("--t-saliency", *t_sal, "Saliency cutoff (default: candidate threshold)");
  cmd->add_option("--workers", *workers)->capture_default_str();
  cmd->add_option("--out", *out, "Output directory")->required();
  cmd->callback([=] {
    ScanConfig cfg;
    cfg.spec = TileSpec::make(*gsd, *context);
    if (*stride > 0) cfg.stride_m = *stride;
    cfg.candidate_threshold = *t_cand;
    cfg.high_risk_threshold = *t_high;
    if (*t_sal >= 0) cfg.saliency_threshold = *t_sal;
    cfg.workers = *workers;
    cfg.output_dir = *out;
    cfg.validate();
    const auto be = backend->config();
    const auto r = load_raster(raster->raster, raster->world, raster->crs);
    fs::create_directories(*out);
    const auto res = scan(r, cfg, be);
    write_geojson(res, fs::path(*out) / "detections.geojson");
    write_scan_report(res, fs::path(*out) / "scan_report.json");
    const auto high = filter_detections(res, cfg.high_risk_threshold).size();
    fmt::print("{} tiles ({}x{}), {} candidates, {} high risk\n", res.detections.size(), res.grid_rows,
               res.grid_cols, filter_detections(res, cfg.candidate_threshold).size(), high);
    fmt::print("area km2: total {:.4f}, candidate {:.4f}, high risk {:.4f}\n", res.total_area_km2,
               res.candidate_area_km2, res.high_risk_area_km2);
  });
}

void add_tiles(CLI::App& app) {
  auto* cmd = app.add_subcommand("tiles", "Write the tile grid of an orthophoto as JSON Lines");
  auto raster = std::make_shared<RasterArgs>();
  auto gsd = std::make_shared<double>(), context = std::make_shared<double>();
  auto stride = std::make_shared<double>(0.0);
  auto out = std::make_shared<std::string>();
  auto images = std::make_shared<std::string>();
  raster->add(cmd);
  cmd->add_option("--gsd-cm", *gsd)->required();
  cmd->add_option("--context-m", *context)->required();
  cmd->add_option("--stride-m", *stride, "Grid stride in metres (default: context)");
  cmd->add_option("--out", *out, "Tile manifest (.jsonl)")->required();
  cmd->add_option("--images", *images, "Also write resampled tile PNGs and world files here");
  cmd->callback([=] {
    const auto spec = TileSpec::make(*gsd, *context);
    const auto r = load_raster(raster->raster, raster->world, raster->crs);
    const auto grid = build_grid(r, *context, *stride > 0 ? *stride : *context);
    write_tile_manifest(grid, spec, *out);
    if (!images->empty()) {
      fs::create_directories(*images);
      for (const auto& t : grid.tiles) {
        const auto img = extract_tile(r, t, spec);
        const auto stem = fs::path(*images) / ("tile_" + t.id.str());
        write_png(img, stem.string() + ".png");
        write_world_file(img.transform(), stem.string() + ".wld");
      }
    }
    fmt::print("{} tiles ({}x{}) at {} px\n", grid.tiles.size(), grid.rows, grid.cols, spec.image_px);
  });
}

void add_grid(CLI::App& app) {
  auto* cmd = app.add_subcommand("grid", "Write the experiment grid as JSON Lines");
  auto out = std::make_shared<std::string>();
  cmd->add_option("--out", *out, "Output file (default: stdout)");
  cmd->callback([=] {
    const auto g = enumerate_grid();
    if (out->empty()) {
      for (const auto& c : g) fmt::print("{}\n", to_json(c).dump());
    } else {
      write_grid_jsonl(g, *out);
    }
  });
}

void add_field_report(CLI::App& app) {
  auto* cmd = app.add_subcommand("field-report", "Compare a manual and an aided inspection campaign");
  auto manual = std::make_shared<CampaignStats>(), aided = std::make_shared<CampaignStats>();
  auto json_out = std::make_shared<std::string>();
  cmd->add_option("--manual-area", manual->inspected_area_km2, "km2")->required();
  cmd->add_option("--manual-sites", manual->detected_sites)->required();
  cmd->add_option("--manual-time", manual->total_time_min, "minutes")->required();
  cmd->add_option("--aided-area", aided->inspected_area_km2, "km2")->required();
  cmd->add_option("--aided-sites", aided->detected_sites)->required();
  cmd->add_option("--aided-time", aided->total_time_min, "minutes")->required();
  cmd->add_option("--json", *json_out, "Also write the report as JSON");
  cmd->callback([=] {
    const auto r = field_report(*manual, *aided);
    fmt::print("{}", format_field_report(r));
    if (!json_out->empty()) write_text(*json_out, to_json(r).dump(2) + "\n");
  });
}

void add_sample(CLI::App& app) {
  auto* cmd = app.add_subcommand("sample", "Draw negative locations around positives");
  auto in = std::make_shared<std::string>(), out = std::make_shared<std::string>();
  auto cfg = std::make_shared<SamplingConfig>();
  auto context = std::make_shared<double>(0.0);
  cmd->add_option("--positives", *in, "Locations CSV (id,x,y,label,source)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", *out, "Output CSV with positives and negatives")->required();
  cmd->add_option("--ratio", cfg->ratio)->capture_default_str();
  cmd->add_option("--r-min", cfg->r_min, "metres")->capture_default_str();
  cmd->add_option("--r-max", cfg->r_max, "metres")->capture_default_str();
  cmd->add_option("--min-separation", cfg->min_separation, "metres")->capture_default_str();
  cmd->add_option("--context-m", *context, "Derive the separation from the largest tile context");
  cmd->add_option("--seed", cfg->seed)->capture_default_str();
  cmd->callback([=] {
    auto c = *cfg;
    if (*context > 0) c.min_separation = std::max(c.min_separation, SamplingConfig::separation_for(*context));
    c.validate();
    const auto all = read_locations_csv(*in);
    std::vector<LocationRecord> pos;
    for (const auto& l : all) {
      if (l.label == Label::Positive) pos.push_back(l);
    }
    auto negs = sample_negatives(pos, c);
    std::vector<LocationRecord> merged = pos;
    merged.insert(merged.end(), negs.begin(), negs.end());
    write_locations_csv(merged, *out);
    fmt::print("{} positives, {} negatives\n", pos.size(), negs.size());
  });
}

void add_manifest(CLI::App& app) {
  auto* cmd = app.add_subcommand("manifest", "Cut dataset tiles around locations from source rasters");
  auto locs = std::make_shared<std::string>(), out = std::make_shared<std::string>();
  auto sources = std::make_shared<std::vector<std::string>>();
  auto gsd = std::make_shared<double>(), context = std::make_shared<double>();
  auto crs = std::make_shared<std::string>("EPSG:32632");
  cmd->add_option("--locations", *locs, "Locations CSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--source", *sources, "name=image.png (world file alongside); repeatable")->required();
  cmd->add_option("--gsd-cm", *gsd)->required();
  cmd->add_option("--context-m", *context)->required();
  cmd->add_option("--crs", *crs)->capture_default_str();
  cmd->add_option("--out", *out, "Output directory (tiles and manifest.jsonl)")->required();
  cmd->callback([=] {
    std::vector<SourceRaster> rasters;
    for (const auto& s : *sources) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("--source '{}' is not name=path", s));
      }
      rasters.push_back({s.substr(0, eq), read_raster(fs::path(s.substr(eq + 1)), *crs)});
    }
    fs::create_directories(*out);
    const auto m = build_manifest(read_locations_csv(*locs), rasters, TileSpec::make(*gsd, *context), *out);
    write_manifest(m, fs::path(*out) / "manifest.jsonl");
    fmt::print("{} tiles: {} positive, {} negative\n", m.entries.size(), m.count(Label::Positive),
               m.count(Label::Negative));
  });
}

void add_split(CLI::App& app) {
  auto* cmd = app.add_subcommand("split", "Location-level stratified train/test split");
  auto in = std::make_shared<std::string>(), out = std::make_shared<std::string>();
  auto fraction = std::make_shared<double>(0.2);
  auto seed = std::make_shared<std::uint64_t>(0);
  cmd->add_option("--manifest", *in)->required()->check(CLI::ExistingFile);
  cmd->add_option("--test-fraction", *fraction)->capture_default_str();
  cmd->add_option("--seed", *seed)->capture_default_str();
  cmd->add_option("--out", *out, "Directory for train.jsonl, test.jsonl, split_report.json")->required();
  cmd->callback([=] {
    const auto s = split_manifest(read_manifest(*in), *fraction, *seed);
    fs::create_directories(*out);
    write_manifest(s.train, fs::path(*out) / "train.jsonl");
    write_manifest(s.test, fs::path(*out) / "test.jsonl");
    write_split_report(s, *fraction, *seed, fs::path(*out) / "split_report.json");
    fmt::print("train {}/{}  test {}/{}  (positive/negative)\n", s.train.count(Label::Positive),
               s.train.count(Label::Negative), s.test.count(Label::Positive), s.test.count(Label::Negative));
  });
}

void add_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "Score a labelled manifest and report metrics");
  auto in = std::make_shared<std::string>(), base = std::make_shared<std::string>();
  auto json_out = std::make_shared<std::string>();
  auto backend = std::make_shared<BackendArgs>();
  auto gsd = std::make_shared<double>(), context = std::make_shared<double>();
  auto threshold = std::make_shared<double>(0.5);
  auto workers = std::make_shared<int>(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
  backend->add(cmd);
  cmd->add_option("--manifest", *in)->required()->check(CLI::ExistingFile);
  cmd->add_option("--base-dir", *base, "Directory tile_file paths are relative to (default: manifest's)");
  cmd->add_option("--gsd-cm", *gsd)->required();
  cmd->add_option("--context-m", *context)->required();
  cmd->add_option("--threshold", *threshold)->capture_default_str();
  cmd->add_option("--workers", *workers)->capture_default_str();
  cmd->add_option("--json", *json_out, "Also write the report as JSON");
  cmd->callback([=] {
    const fs::path dir = base->empty() ? fs::path(*in).parent_path() : fs::path(*base);
    const auto r = evaluate_manifest(read_manifest(*in), backend->config(), TileSpec::make(*gsd, *context),
                                     dir, *workers, *threshold);
    fmt::print("{}", format_metrics(r));
    if (!json_out->empty()) write_text(*json_out, to_json(r).dump(2) + "\n");
  });
}

void add_serve(CLI::App& app) {
  auto* cmd = app.add_subcommand("serve", "Serve scans and record review verdicts over HTTP");
  auto scans = std::make_shared<std::vector<std::string>>();
  auto log = std::make_shared<std::string>("review_log.jsonl");
  auto opts = std::make_shared<ServerOptions>();
  cmd->add_option("--scan", *scans, "Scan output directory; repeatable")->required();
  cmd->add_option("--log", *log, "Verdict event log (JSON Lines)")->capture_default_str();
  cmd->add_option("--host", opts->host)->capture_default_str();
  cmd->add_option("--port", opts->port)->capture_default_str();
  cmd->add_option("--cors-origin", opts->cors_origin)->capture_default_str();
  cmd->callback([=] {
    std::vector<ScanHandle> handles;
    for (const auto& s : *scans) handles.push_back(load_scan(s));
    ReviewService service(std::move(handles), *log);
    ReviewServer server(service, *opts);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    fmt::print("serving {} scan(s) on {}:{}\n", scans->size(), opts->host, opts->port);
    std::fflush(stdout);
    server.run();
    g_server = nullptr;
  });
}

void add_respond(CLI::App& app) {
  auto* cmd = app.add_subcommand("respond", "Answer external-backend requests with the heuristic scorer");
  auto dir = std::make_shared<std::string>();
  auto tau = std::make_shared<double>(100.0);
  auto block = std::make_shared<int>(8);
  auto once = std::make_shared<bool>(false);
  cmd->add_option("--exchange", *dir, "Exchange directory")->required();
  cmd->add_option("--variance-threshold", *tau)->capture_default_str();
  cmd->add_option("--block", *block)->capture_default_str();
  cmd->add_flag("--once", *once, "Handle a single request and exit");
  cmd->callback([=] {
    fs::create_directories(*dir);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto scorer = [&](const GeoRaster& img) { return heuristic_score(img, *tau, *block); };
    while (!g_stop) {
      if (respond_once(*dir, scorer)) {
        if (*once) return;
      } else {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Waste-site scanning of geo-referenced orthophotos"};
  app.require_subcommand(1);
  add_scan(app);
  add_tiles(app);
  add_grid(app);
  add_field_report(app);
  add_sample(app);
  add_manifest(app);
  add_split(app);
  add_eval(app);
  add_serve(app);
  add_respond(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
