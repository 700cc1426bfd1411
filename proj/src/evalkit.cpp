#include "wastescan/evalkit.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "wastescan/error.hpp"
#include "wastescan/parallel.hpp"

namespace wastescan {

namespace fs = std::filesystem;

ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("{} scores vs {} labels", scores.size(), labels.size()));
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("label {} is not binary", labels[i]));
    }
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? cm.tp : cm.fn)++;
    } else {
      (predicted ? cm.fp : cm.tn)++;
    }
  }
  return cm;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  if (cm.total() <= 0) throw Error(ErrorCode::InvalidArgument, "empty confusion matrix");
  MetricsReport m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fp > 0) {
    m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  } else {
    m.precision_undefined = true;
  }
  if (cm.tp + cm.fn > 0) {
    m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  } else {
    m.recall_undefined = true;
  }
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

std::string format_percent(double fraction) { return fmt::format("{:.2f}%", 100.0 * fraction); }

// Grid ---------------------------------------------------------------------------

std::string_view to_string(Architecture a) {
  return a == Architecture::ResNet50 ? "resnet50" : "swin_t";
}

std::string_view to_string(Pretraining p) { return p == Pretraining::RSP ? "RSP" : "INP"; }

std::string ExperimentConfig::name() const {
  return fmt::format("{}_g{}_c{}_{}", to_string(architecture), gsd_cm, context_m,
                     to_string(pretraining));
}

std::vector<ExperimentConfig> enumerate_grid() {
  std::vector<ExperimentConfig> grid;
  for (auto arch : {Architecture::ResNet50, Architecture::SwinT}) {
    for (int gsd : kGridGsdCm) {
      for (int ctx : kGridContextM) {
        for (auto pre : {Pretraining::RSP, Pretraining::INP}) {
          ExperimentConfig c;
          c.architecture = arch;
          c.gsd_cm = gsd;
          c.context_m = ctx;
          c.pretraining = pre;
          c.image_px = compute_image_size(gsd, ctx);
          grid.push_back(c);
        }
      }
    }
  }
  return grid;
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name();
  j["architecture"] = to_string(c.architecture);
  j["gsd_cm"] = c.gsd_cm;
  j["context_m"] = c.context_m;
  j["pretraining"] = to_string(c.pretraining);
  j["image_px"] = c.image_px;
  j["batch_size"] = c.hyper.batch_size;
  j["lr_transfer"] = c.hyper.lr_transfer;
  j["lr_finetune"] = c.hyper.lr_finetune;
  return j;
}

void write_grid_jsonl(std::span<const ExperimentConfig> grid, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
  for (const auto& c : grid) out << to_json(c).dump() << '\n';
}

// Field report -------------------------------------------------------------------

FieldReport field_report(const CampaignStats& manual, const CampaignStats& aided) {
  if (manual.detected_sites <= 0 || aided.detected_sites <= 0) {
    throw Error(ErrorCode::Infeasible, "average time per site needs at least one site per campaign");
  }
  if (manual.inspected_area_km2 == 0.0 || manual.total_time_min == 0.0) {
    throw Error(ErrorCode::Infeasible, "manual baseline has a zero column; variation undefined");
  }
  auto variation = [](double aided_v, double manual_v) { return (aided_v - manual_v) / manual_v; };
  auto trunc1 = [](double v) { return std::trunc(v * 10.0) / 10.0; };
  FieldReport r;
  r.manual = manual;
  r.aided = aided;
  r.manual_avg_time_min = manual.avg_time_per_site();
  r.aided_avg_time_min = aided.avg_time_per_site();
  r.area_variation = variation(aided.inspected_area_km2, manual.inspected_area_km2);
  r.sites_variation = variation(static_cast<double>(aided.detected_sites),
                                static_cast<double>(manual.detected_sites));
  r.total_time_variation = variation(aided.total_time_min, manual.total_time_min);
  r.avg_time_variation = variation(r.aided_avg_time_min, r.manual_avg_time_min);
  r.avg_time_variation_from_truncated =
      variation(trunc1(r.aided_avg_time_min), trunc1(r.manual_avg_time_min));
  return r;
}

nlohmann::ordered_json to_json(const FieldReport& r) {
  auto stats = [](const CampaignStats& s, double avg) {
    nlohmann::ordered_json j;
    j["inspected_area_km2"] = s.inspected_area_km2;
    j["detected_sites"] = s.detected_sites;
    j["total_time_min"] = s.total_time_min;
    j["avg_time_per_site_min"] = avg;
    return j;
  };
  nlohmann::ordered_json j;
  j["manual"] = stats(r.manual, r.manual_avg_time_min);
  j["aided"] = stats(r.aided, r.aided_avg_time_min);
  j["variation_pct"] = {
      {"inspected_area", 100.0 * r.area_variation},
      {"detected_sites", 100.0 * r.sites_variation},
      {"total_time", 100.0 * r.total_time_variation},
      {"avg_time_per_site", 100.0 * r.avg_time_variation},
  };
  j["avg_time_per_site_variation_from_truncated_pct"] = 100.0 * r.avg_time_variation_from_truncated;
  return j;
}

std::string format_field_report(const FieldReport& r) {
  auto row = [](const std::string& name, double area, std::string sites, double time, double avg) {
    return fmt::format("{:<14}{:>12.2f}{:>10}{:>12.1f}{:>14.1f}\n", name, area, sites, time, avg);
  };
  auto pct = [](double v) { return fmt::format("{:+.1f}%", 100.0 * v); };
  std::string out = fmt::format("{:<14}{:>12}{:>10}{:>12}{:>14}\n", "approach", "area_km2",
                                "sites", "time_min", "min_per_site");
  out += row("manual", r.manual.inspected_area_km2, std::to_string(r.manual.detected_sites),
             r.manual.total_time_min, r.manual_avg_time_min);
  out += row("aided", r.aided.inspected_area_km2, std::to_string(r.aided.detected_sites),
             r.aided.total_time_min, r.aided_avg_time_min);
  out += fmt::format("{:<14}{:>12}{:>10}{:>12}{:>14}\n", "variation", pct(r.area_variation),
                     pct(r.sites_variation), pct(r.total_time_variation),
                     pct(r.avg_time_variation));
  out += fmt::format(
      "note: min_per_site variation is {} from exact averages ({:.2f} vs {:.2f}); "
      "from one-decimal truncated averages it would read {}\n",
      pct(r.avg_time_variation), r.manual_avg_time_min, r.aided_avg_time_min,
      pct(r.avg_time_variation_from_truncated));
  return out;
}

// Manifest evaluation ------------------------------------------------------------

namespace {

GeoRaster adapt_to_spec(GeoRaster img, const TileSpec& spec) {
  if (img.extent_x() > spec.context_m * (1.0 + 1e-6)) {
    img = center_crop_context(img, spec.context_m).image;
  }
  if (img.width() != spec.image_px || img.height() != spec.image_px) {
    img = resample(img, img.extent_x() / spec.image_px, img.extent_y() / spec.image_px,
                   spec.image_px, spec.image_px);
  }
  return img;
}

}  // namespace

EvaluationResult evaluate_manifest(const Manifest& manifest, const BackendConfig& backend,
                                   const TileSpec& spec, const fs::path& base_dir, int workers,
                                   double threshold) {
  if (manifest.entries.empty()) throw Error(ErrorCode::EmptyManifest, "manifest has no entries");
  backend.validate();
  const auto& entries = manifest.entries;
  std::vector<double> scores(entries.size());
  const auto batch = static_cast<std::size_t>(backend.batch_size);
  const std::size_t n_batches = (entries.size() + batch - 1) / batch;
  parallel_for(n_batches, workers, [&](std::size_t b) {
    const std::size_t begin = b * batch;
    const std::size_t end = std::min(entries.size(), begin + batch);
    std::vector<GeoRaster> images;
    std::vector<std::string> ids;
    for (std::size_t i = begin; i < end; ++i) {
      const fs::path file = base_dir / entries[i].tile_file;
      const fs::path world = fs::path(file).replace_extension(".wld");
      GeoRaster img = fs::exists(world) ? read_raster(file, world) : [&] {
        // No world file: trust the manifest's declared ground context.
        GeoRaster raw = read_image(file);
        const double gsd = entries[i].context_m / raw.width();
        return GeoRaster(raw.width(), raw.height(),
                         std::vector<std::uint8_t>(raw.pixels().begin(), raw.pixels().end()),
                         AffineTransform{gsd, gsd, 0.0, 0.0}, "");
      }();
      images.push_back(adapt_to_spec(std::move(img), spec));
      ids.push_back(fmt::format("{:06d}", i));
    }
    const auto outputs = classify_batch(images, backend, ids);
    for (std::size_t i = begin; i < end; ++i) scores[i] = outputs[i - begin].score;
  });

  std::vector<int> labels;
  labels.reserve(entries.size());
  for (const auto& e : entries) labels.push_back(e.label == Label::Positive ? 1 : 0);
  EvaluationResult r;
  r.cm = confusion(scores, labels, threshold);
  r.metrics = metrics(r.cm);
  r.scores = std::move(scores);
  return r;
}

nlohmann::ordered_json to_json(const EvaluationResult& r) {
  nlohmann::ordered_json j;
  j["confusion"] = {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}};
  j["accuracy"] = r.metrics.accuracy;
  j["precision"] = r.metrics.precision;
  j["recall"] = r.metrics.recall;
  j["f1"] = r.metrics.f1;
  j["precision_undefined"] = r.metrics.precision_undefined;
  j["recall_undefined"] = r.metrics.recall_undefined;
  j["formatted"] = {{"accuracy", format_percent(r.metrics.accuracy)},
                    {"precision", format_percent(r.metrics.precision)},
                    {"recall", format_percent(r.metrics.recall)},
                    {"f1", format_percent(r.metrics.f1)}};
  return j;
}

std::string format_metrics(const EvaluationResult& r) {
  std::string out;
  out += fmt::format("{:<10}{:>10}\n", "samples", r.cm.total());
  out += fmt::format("{:<10}{:>10}{:>8}{:>10}{:>8}\n", "tp", r.cm.tp, "fp", r.cm.fp, "");
  out += fmt::format("{:<10}{:>10}{:>8}{:>10}{:>8}\n", "fn", r.cm.fn, "tn", r.cm.tn, "");
  out += fmt::format("{:<10}{:>10}{}\n", "precision", format_percent(r.metrics.precision),
                     r.metrics.precision_undefined ? "  (undefined, no predicted positives)" : "");
  out += fmt::format("{:<10}{:>10}{}\n", "recall", format_percent(r.metrics.recall),
                     r.metrics.recall_undefined ? "  (undefined, no actual positives)" : "");
  out += fmt::format("{:<10}{:>10}\n", "f1", format_percent(r.metrics.f1));
  out += fmt::format("{:<10}{:>10}\n", "accuracy", format_percent(r.metrics.accuracy));
  return out;
}

}  // namespace wastescan
