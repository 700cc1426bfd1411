#include "wastescan/backend.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "wastescan/error.hpp"

namespace wastescan {

namespace fs = std::filesystem;
using nlohmann::json;

void ActivationStack::validate() const {
  if (k < 1 || h < 1 || w < 1) {
    throw Error(ErrorCode::InvalidActivations, fmt::format("bad shape ({}, {}, {})", k, h, w));
  }
  if (values.size() != static_cast<std::size_t>(k) * h * w) {
    throw Error(ErrorCode::InvalidActivations,
                fmt::format("{} values for shape ({}, {}, {})", values.size(), k, h, w));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidActivations, "non-finite activation");
  }
}

void ClassifierOutput::validate() const {
  if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
    throw Error(ErrorCode::BackendError, fmt::format("score {} outside [0, 1]", score));
  }
  if (activations) {
    if (!channel_weights || channel_weights->size() != static_cast<std::size_t>(activations->k)) {
      throw Error(ErrorCode::BackendError, "activations need one channel weight per channel");
    }
    activations->validate();
    for (double v : *channel_weights) {
      if (!std::isfinite(v)) throw Error(ErrorCode::BackendError, "non-finite channel weight");
    }
  }
}

void BackendConfig::validate() const {
  if (!(variance_threshold > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "variance threshold must be positive");
  }
  if (block < 2) throw Error(ErrorCode::InvalidArgument, "block must be at least 2");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be at least 1");
  if (kind == BackendKind::External && exchange_dir.empty()) {
    throw Error(ErrorCode::InvalidArgument, "external backend needs an exchange directory");
  }
}

BackendConfig BackendConfig::parse(const std::string& spec) {
  BackendConfig cfg;
  if (spec == "heuristic") return cfg;
  constexpr std::string_view prefix = "external:";
  if (spec.rfind(prefix, 0) == 0 && spec.size() > prefix.size()) {
    cfg.kind = BackendKind::External;
    cfg.exchange_dir = spec.substr(prefix.size());
    return cfg;
  }
  throw Error(ErrorCode::InvalidArgument,
              fmt::format("backend must be 'heuristic' or 'external:<dir>', got '{}'", spec));
}

// Heuristic -------------------------------------------------------------------

ClassifierOutput heuristic_score(const GeoRaster& img, double variance_threshold, int block) {
  if (block < 1) throw Error(ErrorCode::InvalidArgument, "block must be positive");
  const int bw = img.width() / block;
  const int bh = img.height() / block;
  if (bw < 1 || bh < 1) {
    throw Error(ErrorCode::ImageTooSmall,
                fmt::format("{}x{} image is smaller than one {}px block", img.width(),
                            img.height(), block));
  }
  // Integer luma, rounded half up: round(0.299 R + 0.587 G + 0.114 B).
  std::vector<std::int64_t> gray(static_cast<std::size_t>(img.width()) * img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::int64_t v =
          299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2);
      gray[static_cast<std::size_t>(y) * img.width() + x] = (v + 500) / 1000;
    }
  }
  ActivationStack acts{1, bh, bw, std::vector<double>(static_cast<std::size_t>(bw) * bh)};
  const std::int64_t n = static_cast<std::int64_t>(block) * block;
  int hot = 0;
  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      std::int64_t sum = 0;
      std::int64_t sq = 0;
      for (int y = by * block; y < (by + 1) * block; ++y) {
        for (int x = bx * block; x < (bx + 1) * block; ++x) {
          const auto g = gray[static_cast<std::size_t>(y) * img.width() + x];
          sum += g;
          sq += g * g;
        }
      }
      // Population variance, exact numerator: (n * sum(g^2) - sum(g)^2) / n^2.
      const double var = static_cast<double>(n * sq - sum * sum) / static_cast<double>(n * n);
      acts.values[static_cast<std::size_t>(by) * bw + bx] = var;
      if (var >= variance_threshold) ++hot;
    }
  }
  ClassifierOutput out;
  out.score = static_cast<double>(hot) / (static_cast<double>(bw) * bh);
  out.activations = std::move(acts);
  out.channel_weights = std::vector<double>{1.0};
  return out;
}

// Exchange protocol -----------------------------------------------------------

namespace {

constexpr const char* kRequest = "request.json";
constexpr const char* kResponse = "response.json";
constexpr const char* kDone = "response.done";

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", tmp.string()));
    out << text;
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path, ErrorCode code) {
  std::ifstream in(path);
  if (!in) throw Error(code, fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(code, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<double> read_f32le(const fs::path& path, std::size_t expected_count,
                               const std::string& batch_id) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) {
    throw Error(ErrorCode::BackendError,
                fmt::format("batch {}: missing activation file {}", batch_id, path.string()));
  }
  if (size != expected_count * 4) {
    throw Error(ErrorCode::BackendError,
                fmt::format("batch {}: {} has {} bytes, shape needs {}", batch_id,
                            path.filename().string(), size, expected_count * 4));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> raw(size);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                               static_cast<std::uint32_t>(raw[4 * i + 1]) << 8 |
                               static_cast<std::uint32_t>(raw[4 * i + 2]) << 16 |
                               static_cast<std::uint32_t>(raw[4 * i + 3]) << 24;
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = f;
  }
  return out;
}

void write_f32le(const fs::path& path, const std::vector<double>& values) {
  std::vector<unsigned char> raw(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
}

// Access to one exchange directory is serialized across threads.
std::mutex& exchange_mutex(const fs::path& dir) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::unique_ptr<std::mutex>> registry;
  std::lock_guard lock(registry_mutex);
  auto key = fs::weakly_canonical(dir).string();
  auto& slot = registry[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

void clear_exchange(const fs::path& dir, const BatchRequest& req) {
  std::error_code ec;
  fs::remove(dir / kRequest, ec);
  for (const auto& f : req.image_files) fs::remove(dir / f, ec);
  if (fs::exists(dir / kResponse, ec)) {
    try {
      const auto resp = read_json_file(dir / kResponse, ErrorCode::BackendError);
      for (const auto& e : resp.value("entries", json::array())) {
        if (e.is_object() && e.contains("activations_file") && e["activations_file"].is_string()) {
          fs::remove(dir / e["activations_file"].get<std::string>(), ec);
        }
      }
    } catch (const std::exception&) {
    }
  }
  fs::remove(dir / kResponse, ec);
  fs::remove(dir / kDone, ec);
}

std::string next_batch_id() {
  static std::atomic<std::uint64_t> counter{0};
  return fmt::format("batch-{:06d}", ++counter);
}

}  // namespace

BatchRequest write_batch_request(std::span<const GeoRaster> images,
                                 std::span<const std::string> tile_ids, const fs::path& dir,
                                 const std::string& batch_id) {
  if (images.size() != tile_ids.size()) {
    throw Error(ErrorCode::InvalidArgument, "one tile id per image required");
  }
  fs::create_directories(dir);
  BatchRequest req;
  req.batch_id = batch_id;
  json entries = json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string file = fmt::format("{}_{}.png", batch_id, tile_ids[i]);
    write_png(images[i], dir / file);
    req.tile_ids.push_back(tile_ids[i]);
    req.image_files.push_back(file);
    entries.push_back({{"tile_id", tile_ids[i]}, {"image_file", file}});
  }
  const json doc = {{"batch_id", batch_id}, {"entries", entries}};
  write_text_atomic(dir / kRequest, doc.dump(2) + "\n");
  return req;
}

BatchRequest read_batch_request(const fs::path& dir) {
  const auto doc = read_json_file(dir / kRequest, ErrorCode::BackendError);
  BatchRequest req;
  try {
    req.batch_id = doc.at("batch_id").get<std::string>();
    for (const auto& e : doc.at("entries")) {
      req.tile_ids.push_back(e.at("tile_id").get<std::string>());
      req.image_files.push_back(e.at("image_file").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendError, fmt::format("malformed request: {}", e.what()));
  }
  return req;
}

std::vector<ClassifierOutput> read_batch_response(const fs::path& dir,
                                                  const BatchRequest& request) {
  const auto& bid = request.batch_id;
  const auto doc = read_json_file(dir / kResponse, ErrorCode::BackendError);
  auto fail = [&](const std::string& what) {
    return Error(ErrorCode::BackendError, fmt::format("batch {}: {}", bid, what));
  };
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw fail("response.json lacks an entries array");
  }
  if (doc.value("batch_id", std::string()) != bid) {
    throw fail(fmt::format("response is for batch '{}'", doc.value("batch_id", std::string())));
  }
  const auto& entries = doc["entries"];
  if (entries.size() != request.tile_ids.size()) {
    throw fail(fmt::format("{} response records for {} inputs", entries.size(),
                           request.tile_ids.size()));
  }
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < request.tile_ids.size(); ++i) slot[request.tile_ids[i]] = i;

  std::vector<ClassifierOutput> outputs(request.tile_ids.size());
  std::set<std::string> seen;
  for (const auto& e : entries) {
    try {
      const auto tile_id = e.at("tile_id").get<std::string>();
      auto it = slot.find(tile_id);
      if (it == slot.end()) throw fail(fmt::format("unknown tile_id '{}'", tile_id));
      if (!seen.insert(tile_id).second) throw fail(fmt::format("duplicate tile_id '{}'", tile_id));
      ClassifierOutput out;
      out.score = e.at("score").get<double>();
      if (!std::isfinite(out.score) || out.score < 0.0 || out.score > 1.0) {
        throw fail(fmt::format("tile {} score {} outside [0, 1]", tile_id, out.score));
      }
      if (e.contains("activations_file") && !e["activations_file"].is_null()) {
        ActivationStack acts;
        acts.k = e.at("K").get<int>();
        acts.h = e.at("h").get<int>();
        acts.w = e.at("w").get<int>();
        if (acts.k < 1 || acts.h < 1 || acts.w < 1) {
          throw fail(fmt::format("tile {} has bad activation shape", tile_id));
        }
        acts.values = read_f32le(dir / e["activations_file"].get<std::string>(),
                                 static_cast<std::size_t>(acts.k) * acts.h * acts.w, bid);
        out.activations = std::move(acts);
        out.channel_weights = e.at("channel_weights").get<std::vector<double>>();
      }
      try {
        out.validate();
      } catch (const Error& err) {
        throw fail(fmt::format("tile {}: {}", tile_id, err.what()));
      }
      outputs[it->second] = std::move(out);
    } catch (const json::exception& ex) {
      throw fail(fmt::format("malformed record: {}", ex.what()));
    }
  }
  return outputs;
}

void write_batch_response(const fs::path& dir, const BatchRequest& request,
                          std::span<const ClassifierOutput> outputs) {
  if (outputs.size() != request.tile_ids.size()) {
    throw Error(ErrorCode::InvalidArgument, "one output per request entry required");
  }
  json entries = json::array();
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = outputs[i];
    json e = {{"tile_id", request.tile_ids[i]}, {"score", out.score}};
    if (out.activations && out.channel_weights) {
      const std::string file = fmt::format("{}_{}.f32", request.batch_id, request.tile_ids[i]);
      write_f32le(dir / file, out.activations->values);
      e["activations_file"] = file;
      e["K"] = out.activations->k;
      e["h"] = out.activations->h;
      e["w"] = out.activations->w;
      e["channel_weights"] = *out.channel_weights;
    }
    entries.push_back(std::move(e));
  }
  const json doc = {{"batch_id", request.batch_id}, {"entries", entries}};
  write_text_atomic(dir / kResponse, doc.dump(2) + "\n");
  std::ofstream(dir / kDone, std::ios::binary).flush();
}

bool wait_for_response(const fs::path& dir, std::chrono::milliseconds timeout,
                       std::chrono::milliseconds poll_interval) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (fs::exists(dir / kDone)) return true;
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(poll_interval);
  }
}

bool respond_once(const fs::path& dir,
                  const std::function<ClassifierOutput(const GeoRaster&)>& scorer) {
  if (!fs::exists(dir / kRequest) || fs::exists(dir / kDone)) return false;
  const auto req = read_batch_request(dir);
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(req.image_files.size());
  for (const auto& f : req.image_files) outputs.push_back(scorer(read_image(dir / f)));
  write_batch_response(dir, req, outputs);
  return true;
}

namespace {

std::vector<ClassifierOutput> classify_external(std::span<const GeoRaster> images,
                                                std::span<const std::string> ids,
                                                const BackendConfig& cfg) {
  const auto& dir = cfg.exchange_dir;
  std::lock_guard lock(exchange_mutex(dir));
  const std::string batch_id = next_batch_id();
  {
    std::error_code ec;
    fs::remove(dir / kDone, ec);
    fs::remove(dir / kResponse, ec);
  }
  const auto req = write_batch_request(images, ids, dir, batch_id);
  try {
    if (!wait_for_response(dir, cfg.timeout, cfg.poll_interval)) {
      std::string tiles;
      for (const auto& id : ids) tiles += (tiles.empty() ? "" : ",") + id;
      throw Error(ErrorCode::BackendError,
                  fmt::format("batch {}: no response within {} ms (tiles {})", batch_id,
                              cfg.timeout.count(), tiles));
    }
    auto outputs = read_batch_response(dir, req);
    clear_exchange(dir, req);
    return outputs;
  } catch (...) {
    clear_exchange(dir, req);
    throw;
  }
}

}  // namespace

std::vector<ClassifierOutput> classify_batch(std::span<const GeoRaster> images,
                                             const BackendConfig& cfg,
                                             std::span<const std::string> tile_ids) {
  cfg.validate();
  std::vector<std::string> default_ids;
  if (tile_ids.empty()) {
    for (std::size_t i = 0; i < images.size(); ++i) default_ids.push_back(fmt::format("{:06d}", i));
    tile_ids = default_ids;
  }
  if (tile_ids.size() != images.size()) {
    throw Error(ErrorCode::InvalidArgument, "one tile id per image required");
  }
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(images.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t begin = 0; begin < images.size(); begin += batch) {
    const std::size_t n = std::min(batch, images.size() - begin);
    const auto chunk = images.subspan(begin, n);
    for (const auto& img : chunk) {
      if (img.width() != chunk.front().width() || img.height() != chunk.front().height()) {
        throw Error(ErrorCode::InvalidArgument, "images in a batch must share pixel dimensions");
      }
    }
    if (cfg.kind == BackendKind::Heuristic) {
      for (const auto& img : chunk) {
        outputs.push_back(heuristic_score(img, cfg.variance_threshold, cfg.block));
      }
    } else {
      auto part = classify_external(chunk, tile_ids.subspan(begin, n), cfg);
      for (auto& o : part) outputs.push_back(std::move(o));
    }
  }
  return outputs;
}

}  // namespace wastescan
