#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wastescan/evalkit.hpp"

namespace wastescan {

using TimePoint = std::chrono::sys_time<std::chrono::milliseconds>;

/// "2024-05-01T10:00:00Z" or with fraction / numeric offset. Fractions finer
/// than a millisecond are truncated.
TimePoint parse_rfc3339(std::string_view s);
/// Always UTC with millisecond precision: "2024-05-01T10:00:00.000Z".
std::string format_rfc3339(TimePoint t);

// Scans ---------------------------------------------------------------------------

struct DetectionSummary {
  std::string tile_id;
  double score = 0.0;
  int rank = 0;
  std::optional<std::string> color;
  nlohmann::json geometry;
  std::optional<std::string> image;
  std::optional<std::string> saliency;
  std::optional<std::string> overlay;
};

struct ScanHandle {
  std::string id;
  std::filesystem::path dir;
  std::vector<DetectionSummary> detections;  ///< rank order
  nlohmann::json report;

  const DetectionSummary* find(std::string_view tile_id) const;

private:
  friend ScanHandle load_scan(const std::filesystem::path&, std::string);
  std::unordered_map<std::string, std::size_t> by_tile_;
};

/// Reads detections.geojson and scan_report.json. The id defaults to the
/// directory name.
ScanHandle load_scan(const std::filesystem::path& dir, std::string id = {});

nlohmann::json to_json(const DetectionSummary& d);

struct DetectionPage {
  std::size_t total = 0;  ///< matches across all pages
  int page = 0;           ///< 0-based
  int page_size = 0;
  std::vector<DetectionSummary> items;
};

nlohmann::json to_json(const DetectionPage& p);

// Sessions and verdicts -----------------------------------------------------------

enum class Decision { Confirmed, Dismissed, Unsure };

std::string_view to_string(Decision d);
Decision parse_decision(std::string_view s);

struct ReviewSession {
  std::string session_id;
  std::string scan_id;
  std::string operator_name;
  double threshold = 0.0;
  TimePoint created_at;

  bool operator==(const ReviewSession&) const = default;
};

struct Verdict {
  std::string session_id;
  std::string tile_id;
  Decision decision = Decision::Unsure;
  TimePoint opened_at;
  TimePoint decided_at;

  std::chrono::milliseconds duration() const { return decided_at - opened_at; }
  bool operator==(const Verdict&) const = default;
};

nlohmann::json to_json(const ReviewSession& s);
nlohmann::json to_json(const Verdict& v);

struct SessionReport {
  std::string session_id;
  std::string scan_id;
  long long reviewed = 0;
  long long confirmed = 0;
  long long dismissed = 0;
  long long unsure = 0;
  std::chrono::milliseconds total_time{0};
  double total_time_min = 0.0;
  std::optional<double> avg_time_per_site_min;  ///< absent with no confirmed sites

  bool operator==(const SessionReport&) const = default;
};

nlohmann::json to_json(const SessionReport& r);

struct PostResult {
  Verdict verdict;
  bool replayed = false;  ///< identical to a verdict already recorded; nothing appended
};

/// Review state backed by an append-only JSON Lines event log. Writes are
/// serialized on the log; readers work on an immutable snapshot swapped in
/// after each successful append.
class ReviewService {
public:
  using Clock = std::function<TimePoint()>;

  /// Replays `log_path` if it exists (a torn trailing line is discarded).
  ReviewService(std::vector<ScanHandle> scans, std::filesystem::path log_path, Clock clock = {});

  std::vector<const ScanHandle*> scans() const;
  const ScanHandle& scan(std::string_view scan_id) const;

  DetectionPage list_detections(std::string_view scan_id, double min_score, int page,
                                int page_size) const;
  DetectionPage list_session_detections(std::string_view session_id, double min_score, int page,
                                        int page_size) const;

  ReviewSession create_session(const std::string& scan_id, const std::string& operator_name,
                               double threshold);
  ReviewSession session(std::string_view session_id) const;
  std::vector<ReviewSession> sessions() const;

  PostResult post_verdict(const Verdict& v);
  /// Final verdicts of a session, ordered by tile id.
  std::vector<Verdict> verdicts(std::string_view session_id) const;

  SessionReport session_report(std::string_view session_id) const;

  const std::filesystem::path& log_path() const { return log_path_; }

private:
  struct State {
    std::map<std::string, ReviewSession, std::less<>> sessions;
    // session -> tile -> final verdict
    std::map<std::string, std::map<std::string, Verdict, std::less<>>, std::less<>> finals;
    // session -> tile -> every verdict ever accepted, for replay detection
    std::map<std::string, std::map<std::string, std::vector<Verdict>>, std::less<>> history;
  };

  std::shared_ptr<const State> snapshot() const;
  static void apply(State& st, const nlohmann::json& event);
  void append(const nlohmann::json& event, std::shared_ptr<State> next);
  void check_verdict(const State& st, const Verdict& v) const;

  std::vector<ScanHandle> scans_;
  std::filesystem::path log_path_;
  Clock clock_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const State> state_;
  std::mutex write_mutex_;
};

// HTTP ----------------------------------------------------------------------------

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0: pick a free port
  std::string cors_origin = "*";
};

/// JSON API over a ReviewService. Blocking `run` or background `start`.
class ReviewServer {
public:
  ReviewServer(ReviewService& service, ServerOptions options);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace wastescan
