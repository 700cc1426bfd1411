#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wastescan/georaster.hpp"

namespace wastescan {

/// K feature maps of size h x w, channel-major then row-major.
struct ActivationStack {
  int k = 0;
  int h = 0;
  int w = 0;
  std::vector<double> values;

  double at(int channel, int row, int col) const {
    return values[(static_cast<std::size_t>(channel) * h + row) * w + col];
  }
  void validate() const;
};

struct ClassifierOutput {
  double score = 0.0;  ///< confidence in [0, 1] that the tile is positive
  std::optional<ActivationStack> activations;
  std::optional<std::vector<double>> channel_weights;

  void validate() const;
};

enum class BackendKind { Heuristic, External };

struct BackendConfig {
  BackendKind kind = BackendKind::Heuristic;
  std::filesystem::path exchange_dir;
  double variance_threshold = 100.0;
  int block = 8;
  int batch_size = 120;
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
  std::chrono::milliseconds poll_interval{20};

  void validate() const;
  /// "heuristic" or "external:<dir>".
  static BackendConfig parse(const std::string& spec);
};

/// Block-variance clutter score. The image is converted to integer grayscale,
/// split into block x block cells (remainder ignored), and the score is the
/// fraction of cells whose population variance reaches the threshold. The
/// per-cell variances form a single-channel activation map with weight 1.
ClassifierOutput heuristic_score(const GeoRaster& img, double variance_threshold, int block);

/// Scores images in order. Inputs are split into chunks of cfg.batch_size;
/// each chunk must have uniform pixel dimensions. `tile_ids` names the images
/// for the external protocol and defaults to their positions.
std::vector<ClassifierOutput> classify_batch(std::span<const GeoRaster> images,
                                             const BackendConfig& cfg,
                                             std::span<const std::string> tile_ids = {});

// External file-exchange protocol ---------------------------------------------
//
// request.json   {batch_id, entries: [{tile_id, image_file}]}, images as PNG
// response.json  {batch_id, entries: [{tile_id, score, activations_file?, K?, h?, w?,
//                 channel_weights?}]}
// activation files: little-endian float32, channel-major, row-major, no header
// response.done  empty marker written last by the responder

struct BatchRequest {
  std::string batch_id;
  std::vector<std::string> tile_ids;
  std::vector<std::string> image_files;  ///< relative to the exchange directory
};

BatchRequest write_batch_request(std::span<const GeoRaster> images,
                                 std::span<const std::string> tile_ids,
                                 const std::filesystem::path& dir, const std::string& batch_id);

BatchRequest read_batch_request(const std::filesystem::path& dir);

/// Parses and validates response.json against the request.
std::vector<ClassifierOutput> read_batch_response(const std::filesystem::path& dir,
                                                  const BatchRequest& request);

/// Responder side: writes response.json (plus activation files) and then response.done.
void write_batch_response(const std::filesystem::path& dir, const BatchRequest& request,
                          std::span<const ClassifierOutput> outputs);

/// Blocks until response.done appears or the timeout expires.
bool wait_for_response(const std::filesystem::path& dir, std::chrono::milliseconds timeout,
                       std::chrono::milliseconds poll_interval);

/// Handles one pending request with the given scorer. Returns false if no request is present.
bool respond_once(const std::filesystem::path& dir,
                  const std::function<ClassifierOutput(const GeoRaster&)>& scorer);

}  // namespace wastescan
