#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wastescan/backend.hpp"
#include "wastescan/datasetkit.hpp"
#include "wastescan/tiler.hpp"

namespace wastescan {

struct ConfusionMatrix {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  long long total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Predicted positive iff score >= threshold.
ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                          double threshold = 0.5);

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  ///< no predicted positives; reported as 0
  bool recall_undefined = false;     ///< no actual positives; reported as 0
};

MetricsReport metrics(const ConfusionMatrix& cm);

/// Harmonic mean; 0 when both inputs are 0.
double f1_score(double precision, double recall);

/// "92.47%": fraction in [0, 1] rendered as a percentage with 2 decimals.
std::string format_percent(double fraction);

// Experiment grid ---------------------------------------------------------------

enum class Architecture { ResNet50, SwinT };
enum class Pretraining { RSP, INP };

std::string_view to_string(Architecture a);
std::string_view to_string(Pretraining p);

struct Hyperparameters {
  int batch_size = 120;
  double lr_transfer = 0.001;   ///< head-only phase, backbone frozen
  double lr_finetune = 0.0001;  ///< all layers unfrozen
};

struct ExperimentConfig {
  Architecture architecture = Architecture::ResNet50;
  int gsd_cm = 0;
  int context_m = 0;
  Pretraining pretraining = Pretraining::RSP;
  int image_px = 0;
  Hyperparameters hyper;

  std::string name() const;
  auto key() const { return std::tuple(architecture, gsd_cm, context_m, pretraining); }
};

inline constexpr int kGridGsdCm[] = {20, 30, 40, 50};
inline constexpr int kGridContextM[] = {100, 150, 210};

/// Full factorial 2 x 4 x 3 x 2 grid in lexicographic (architecture, gsd,
/// context, pretraining) order.
std::vector<ExperimentConfig> enumerate_grid();
nlohmann::ordered_json to_json(const ExperimentConfig& c);
void write_grid_jsonl(std::span<const ExperimentConfig> grid, const std::filesystem::path& path);

// Field validation ---------------------------------------------------------------

struct CampaignStats {
  double inspected_area_km2 = 0.0;
  long long detected_sites = 0;
  double total_time_min = 0.0;

  double avg_time_per_site() const { return total_time_min / static_cast<double>(detected_sites); }
};

struct FieldReport {
  CampaignStats manual;
  CampaignStats aided;
  double manual_avg_time_min = 0.0;
  double aided_avg_time_min = 0.0;
  // Relative variations (aided - manual) / manual, as fractions.
  double area_variation = 0.0;
  double sites_variation = 0.0;
  double total_time_variation = 0.0;
  double avg_time_variation = 0.0;
  /// Same variation recomputed from averages truncated to one decimal, the way
  /// a printed table shows them; kept to explain discrepancies with such tables.
  double avg_time_variation_from_truncated = 0.0;
};

FieldReport field_report(const CampaignStats& manual, const CampaignStats& aided);
nlohmann::ordered_json to_json(const FieldReport& r);
/// Aligned-column text table, times and percentages to one decimal.
std::string format_field_report(const FieldReport& r);

// Manifest evaluation -------------------------------------------------------------

struct EvaluationResult {
  ConfusionMatrix cm;
  MetricsReport metrics;
  std::vector<double> scores;  ///< aligned with manifest entries
};

/// Scores every manifest tile (tile files resolved against base_dir), adapting
/// each to the spec first: center crop when its context is larger, resample
/// when its pixel size differs. Works unchanged on cross-region manifests.
EvaluationResult evaluate_manifest(const Manifest& manifest, const BackendConfig& backend,
                                   const TileSpec& spec, const std::filesystem::path& base_dir,
                                   int workers = 1, double threshold = 0.5);

nlohmann::ordered_json to_json(const EvaluationResult& r);
std::string format_metrics(const EvaluationResult& r);

}  // namespace wastescan
