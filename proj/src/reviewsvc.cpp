#include "wastescan/reviewsvc.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "wastescan/error.hpp"

namespace wastescan {

namespace fs = std::filesystem;
using nlohmann::json;

// Timestamps ----------------------------------------------------------------------

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw Error(ErrorCode::ValidationError, fmt::format("bad timestamp '{}'", s));
  int v = 0;
  auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + n, v);
  if (ec != std::errc() || p != s.data() + pos + n) {
    throw Error(ErrorCode::ValidationError, fmt::format("bad timestamp '{}'", s));
  }
  return v;
}

}  // namespace

TimePoint parse_rfc3339(std::string_view s) {
  using namespace std::chrono;
  auto bad = [&] { return Error(ErrorCode::ValidationError, fmt::format("bad timestamp '{}'", s)); };
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't') ||
      s[13] != ':' || s[16] != ':') {
    throw bad();
  }
  const year_month_day ymd{year{digits(s, 0, 4)}, month{static_cast<unsigned>(digits(s, 5, 2))},
                           day{static_cast<unsigned>(digits(s, 8, 2))}};
  if (!ymd.ok()) throw bad();
  const int hh = digits(s, 11, 2), mm = digits(s, 14, 2), ss = digits(s, 17, 2);
  if (hh > 23 || mm > 59 || ss > 60) throw bad();
  std::size_t pos = 19;
  long long ms = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) throw bad();
    std::string frac(s.substr(start, std::min<std::size_t>(pos - start, 3)));
    frac.resize(3, '0');
    ms = digits(frac, 0, 3);
  }
  if (pos >= s.size()) throw bad();
  minutes offset{0};
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    if (pos + 6 != s.size() || s[pos + 3] != ':') throw bad();
    const int oh = digits(s, pos + 1, 2), om = digits(s, pos + 4, 2);
    if (oh > 23 || om > 59) throw bad();
    offset = minutes(oh * 60 + om) * (s[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    throw bad();
  }
  if (pos != s.size()) throw bad();
  return TimePoint(sys_days(ymd) + hours(hh) + minutes(mm) + seconds(ss) + milliseconds(ms) -
                   offset);
}

std::string format_rfc3339(TimePoint t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const auto ms = (t - day).count();
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}.{:03d}Z", int(ymd.year()),
                     unsigned(ymd.month()), unsigned(ymd.day()), ms / 3600000, ms / 60000 % 60,
                     ms / 1000 % 60, ms % 1000);
}

// Scans ---------------------------------------------------------------------------

const DetectionSummary* ScanHandle::find(std::string_view tile_id) const {
  auto it = by_tile_.find(std::string(tile_id));
  return it == by_tile_.end() ? nullptr : &detections[it->second];
}

namespace {

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::LoadError, fmt::format("missing {}", p.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::LoadError, fmt::format("{}: {}", p.string(), e.what()));
  }
}

std::optional<std::string> optional_path(const json& props, const char* key, const std::string& fid) {
  if (!props.contains(key) || props[key].is_null()) return std::nullopt;
  if (!props[key].is_string()) {
    throw Error(ErrorCode::LoadError, fmt::format("feature {}: '{}' is not a string", fid, key));
  }
  std::string p = props[key].get<std::string>();
  const fs::path rel(p);
  if (rel.is_absolute() || std::any_of(rel.begin(), rel.end(), [](const fs::path& c) { return c == ".."; })) {
    throw Error(ErrorCode::LoadError, fmt::format("feature {}: '{}' escapes the scan directory", fid, key));
  }
  return p;
}

}  // namespace

ScanHandle load_scan(const fs::path& dir, std::string id) {
  const json gj = read_json_file(dir / "detections.geojson");
  json report = read_json_file(dir / "scan_report.json");
  if (!gj.is_object() || gj.value("type", "") != "FeatureCollection" || !gj.contains("features") ||
      !gj["features"].is_array()) {
    throw Error(ErrorCode::LoadError, "detections.geojson is not a FeatureCollection");
  }
  ScanHandle h;
  h.id = id.empty() ? fs::absolute(dir).lexically_normal().filename().string() : std::move(id);
  if (h.id.empty()) h.id = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  h.dir = dir;
  h.report = std::move(report);
  std::size_t index = 0;
  for (const auto& f : gj["features"]) {
    const std::string fid = f.contains("id") && f["id"].is_string()
                                ? f["id"].get<std::string>()
                                : fmt::format("#{}", index);
    ++index;
    if (!f.contains("properties") || !f["properties"].is_object()) {
      throw Error(ErrorCode::LoadError, fmt::format("feature {} has no properties", fid));
    }
    const json& p = f["properties"];
    if (!p.contains("score") || !p["score"].is_number()) {
      throw Error(ErrorCode::LoadError, fmt::format("feature {} has no score", fid));
    }
    if (!p.contains("tile_id") || !p["tile_id"].is_string()) {
      throw Error(ErrorCode::LoadError, fmt::format("feature {} has no tile_id", fid));
    }
    DetectionSummary d;
    d.tile_id = p["tile_id"].get<std::string>();
    d.score = p.contains("score_raw") && p["score_raw"].is_number() ? p["score_raw"].get<double>()
                                                                    : p["score"].get<double>();
    d.rank = p.value("rank", 0);
    if (p.contains("color") && p["color"].is_string()) d.color = p["color"].get<std::string>();
    d.geometry = f.value("geometry", json());
    d.image = optional_path(p, "image", fid);
    d.saliency = optional_path(p, "saliency", fid);
    d.overlay = optional_path(p, "overlay", fid);
    if (h.by_tile_.count(d.tile_id)) {
      throw Error(ErrorCode::LoadError, fmt::format("duplicate tile_id {}", d.tile_id));
    }
    h.by_tile_[d.tile_id] = h.detections.size();
    h.detections.push_back(std::move(d));
  }
  std::stable_sort(h.detections.begin(), h.detections.end(), [](const auto& a, const auto& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.score != b.score) return a.score > b.score;
    return a.tile_id < b.tile_id;
  });
  for (std::size_t i = 0; i < h.detections.size(); ++i) h.by_tile_[h.detections[i].tile_id] = i;
  return h;
}

json to_json(const DetectionSummary& d) {
  auto opt = [](const std::optional<std::string>& s) { return s ? json(*s) : json(); };
  return {{"tile_id", d.tile_id},
          {"score", d.score},
          {"rank", d.rank},
          {"color", opt(d.color)},
          {"geometry", d.geometry},
          {"has_image", d.image.has_value()},
          {"has_saliency", d.saliency.has_value()},
          {"has_overlay", d.overlay.has_value()}};
}

json to_json(const DetectionPage& p) {
  json items = json::array();
  for (const auto& d : p.items) items.push_back(to_json(d));
  return {{"total", p.total}, {"page", p.page}, {"page_size", p.page_size}, {"items", items}};
}

// Sessions ------------------------------------------------------------------------

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Confirmed: return "confirmed";
    case Decision::Dismissed: return "dismissed";
    case Decision::Unsure: return "unsure";
  }
  return "unsure";
}

Decision parse_decision(std::string_view s) {
  if (s == "confirmed") return Decision::Confirmed;
  if (s == "dismissed") return Decision::Dismissed;
  if (s == "unsure") return Decision::Unsure;
  throw Error(ErrorCode::ValidationError, fmt::format("unknown decision '{}'", s));
}

json to_json(const ReviewSession& s) {
  return {{"session_id", s.session_id},
          {"scan_id", s.scan_id},
          {"operator", s.operator_name},
          {"threshold", s.threshold},
          {"created_at", format_rfc3339(s.created_at)}};
}

json to_json(const Verdict& v) {
  return {{"session_id", v.session_id},
          {"tile_id", v.tile_id},
          {"decision", to_string(v.decision)},
          {"opened_at", format_rfc3339(v.opened_at)},
          {"decided_at", format_rfc3339(v.decided_at)}};
}

json to_json(const SessionReport& r) {
  return {{"session_id", r.session_id},
          {"scan_id", r.scan_id},
          {"reviewed", r.reviewed},
          {"confirmed", r.confirmed},
          {"dismissed", r.dismissed},
          {"unsure", r.unsure},
          {"total_time_min", r.total_time_min},
          {"avg_time_per_site_min", r.avg_time_per_site_min ? json(*r.avg_time_per_site_min) : json()}};
}

namespace {

Verdict verdict_from_json(const json& j) {
  Verdict v;
  v.session_id = j.at("session_id").get<std::string>();
  v.tile_id = j.at("tile_id").get<std::string>();
  v.decision = parse_decision(j.at("decision").get<std::string>());
  v.opened_at = parse_rfc3339(j.at("opened_at").get<std::string>());
  v.decided_at = parse_rfc3339(j.at("decided_at").get<std::string>());
  return v;
}

ReviewSession session_from_json(const json& j) {
  ReviewSession s;
  s.session_id = j.at("session_id").get<std::string>();
  s.scan_id = j.at("scan_id").get<std::string>();
  s.operator_name = j.at("operator").get<std::string>();
  s.threshold = j.at("threshold").get<double>();
  s.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  return s;
}

}  // namespace

ReviewService::ReviewService(std::vector<ScanHandle> scans, fs::path log_path, Clock clock)
    : scans_(std::move(scans)), log_path_(std::move(log_path)), clock_(std::move(clock)) {
  if (!clock_) {
    clock_ = [] { return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now()); };
  }
  for (std::size_t i = 0; i < scans_.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (scans_[i].id == scans_[k].id) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate scan id {}", scans_[i].id));
      }
    }
  }
  auto st = std::make_shared<State>();
  if (fs::exists(log_path_)) {
    std::ifstream in(log_path_, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t complete = content.rfind('\n') == std::string::npos ? 0 : content.rfind('\n') + 1;
    if (complete != content.size()) {
      in.close();
      fs::resize_file(log_path_, complete);
    }
    std::size_t line_no = 0, pos = 0;
    while (pos < complete) {
      const std::size_t nl = content.find('\n', pos);
      const std::string_view line(content.data() + pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        const json ev = json::parse(line);
        if (ev.at("type") == "session_created") {
          const auto s = session_from_json(ev);
          scan(s.scan_id);
        } else if (ev.at("type") == "verdict") {
          const auto v = verdict_from_json(ev);
          check_verdict(*st, v);
        }
        apply(*st, ev);
      } catch (const std::exception& e) {
        throw Error(ErrorCode::LoadError,
                    fmt::format("{}:{}: {}", log_path_.string(), line_no, e.what()));
      }
    }
  }
  state_ = std::move(st);
}

std::shared_ptr<const ReviewService::State> ReviewService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return state_;
}

void ReviewService::apply(State& st, const json& ev) {
  const std::string type = ev.at("type").get<std::string>();
  if (type == "session_created") {
    auto s = session_from_json(ev);
    if (st.sessions.count(s.session_id)) {
      throw Error(ErrorCode::LoadError, fmt::format("session {} created twice", s.session_id));
    }
    st.sessions.emplace(s.session_id, std::move(s));
  } else if (type == "verdict") {
    auto v = verdict_from_json(ev);
    st.history[v.session_id][v.tile_id].push_back(v);
    st.finals[v.session_id].insert_or_assign(v.tile_id, std::move(v));
  } else {
    throw Error(ErrorCode::LoadError, fmt::format("unknown event type '{}'", type));
  }
}

void ReviewService::append(const json& event, std::shared_ptr<State> next) {
  {
    std::ofstream out(log_path_, std::ios::binary | std::ios::app);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot append to {}", log_path_.string()));
  }
  std::lock_guard lock(snapshot_mutex_);
  state_ = std::move(next);
}

std::vector<const ScanHandle*> ReviewService::scans() const {
  std::vector<const ScanHandle*> out;
  for (const auto& s : scans_) out.push_back(&s);
  return out;
}

const ScanHandle& ReviewService::scan(std::string_view scan_id) const {
  for (const auto& s : scans_) {
    if (s.id == scan_id) return s;
  }
  throw Error(ErrorCode::NotFound, fmt::format("unknown scan {}", scan_id));
}

DetectionPage ReviewService::list_detections(std::string_view scan_id, double min_score, int page,
                                             int page_size) const {
  if (page < 0) throw Error(ErrorCode::ValidationError, "page must be >= 0");
  if (page_size <= 0) throw Error(ErrorCode::ValidationError, "page_size must be > 0");
  const auto& sc = scan(scan_id);
  DetectionPage out;
  out.page = page;
  out.page_size = page_size;
  const std::size_t first = static_cast<std::size_t>(page) * static_cast<std::size_t>(page_size);
  for (const auto& d : sc.detections) {
    if (d.score < min_score) continue;
    if (out.total >= first && out.items.size() < static_cast<std::size_t>(page_size)) {
      out.items.push_back(d);
    }
    ++out.total;
  }
  return out;
}

DetectionPage ReviewService::list_session_detections(std::string_view session_id, double min_score,
                                                     int page, int page_size) const {
  return list_detections(session(session_id).scan_id, min_score, page, page_size);
}

ReviewSession ReviewService::create_session(const std::string& scan_id,
                                            const std::string& operator_name, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::ValidationError, fmt::format("threshold {} outside [0, 1]", threshold));
  }
  scan(scan_id);
  std::lock_guard lock(write_mutex_);
  auto next = std::make_shared<State>(*snapshot());
  ReviewSession s;
  s.session_id = fmt::format("s{:04d}", next->sessions.size() + 1);
  s.scan_id = scan_id;
  s.operator_name = operator_name;
  s.threshold = threshold;
  s.created_at = clock_();
  json ev = to_json(s);
  ev["type"] = "session_created";
  apply(*next, ev);
  append(ev, std::move(next));
  return s;
}

ReviewSession ReviewService::session(std::string_view session_id) const {
  const auto st = snapshot();
  auto it = st->sessions.find(session_id);
  if (it == st->sessions.end()) {
    throw Error(ErrorCode::NotFound, fmt::format("unknown session {}", session_id));
  }
  return it->second;
}

std::vector<ReviewSession> ReviewService::sessions() const {
  std::vector<ReviewSession> out;
  for (const auto& [id, s] : snapshot()->sessions) out.push_back(s);
  return out;
}

void ReviewService::check_verdict(const State& st, const Verdict& v) const {
  auto it = st.sessions.find(v.session_id);
  if (it == st.sessions.end()) {
    throw Error(ErrorCode::NotFound, fmt::format("unknown session {}", v.session_id));
  }
  if (!scan(it->second.scan_id).find(v.tile_id)) {
    throw Error(ErrorCode::NotFound, fmt::format("unknown tile {}", v.tile_id));
  }
  if (v.decided_at < v.opened_at) {
    throw Error(ErrorCode::ValidationError,
                fmt::format("decided_at {} precedes opened_at {}", format_rfc3339(v.decided_at),
                            format_rfc3339(v.opened_at)));
  }
}

PostResult ReviewService::post_verdict(const Verdict& v) {
  std::lock_guard lock(write_mutex_);
  const auto cur = snapshot();
  check_verdict(*cur, v);
  if (auto s = cur->history.find(v.session_id); s != cur->history.end()) {
    if (auto t = s->second.find(v.tile_id); t != s->second.end()) {
      if (std::find(t->second.begin(), t->second.end(), v) != t->second.end()) {
        return {v, true};
      }
    }
  }
  auto next = std::make_shared<State>(*cur);
  json ev = to_json(v);
  ev["type"] = "verdict";
  apply(*next, ev);
  append(ev, std::move(next));
  return {v, false};
}

std::vector<Verdict> ReviewService::verdicts(std::string_view session_id) const {
  session(session_id);
  const auto st = snapshot();
  std::vector<Verdict> out;
  if (auto it = st->finals.find(session_id); it != st->finals.end()) {
    for (const auto& [tile, v] : it->second) out.push_back(v);
  }
  return out;
}

SessionReport ReviewService::session_report(std::string_view session_id) const {
  const auto s = session(session_id);
  SessionReport r;
  r.session_id = s.session_id;
  r.scan_id = s.scan_id;
  for (const auto& v : verdicts(session_id)) {
    ++r.reviewed;
    r.total_time += v.duration();
    switch (v.decision) {
      case Decision::Confirmed: ++r.confirmed; break;
      case Decision::Dismissed: ++r.dismissed; break;
      case Decision::Unsure: ++r.unsure; break;
    }
  }
  r.total_time_min = static_cast<double>(r.total_time.count()) / 60000.0;
  if (r.confirmed > 0) r.avg_time_per_site_min = r.total_time_min / static_cast<double>(r.confirmed);
  return r;
}

// HTTP ----------------------------------------------------------------------------

struct ReviewServer::Impl {
  ReviewService& service;
  ServerOptions options;
  httplib::Server server;
  std::thread thread;

  Impl(ReviewService& s, ServerOptions o) : service(s), options(std::move(o)) { routes(); }

  static int status_for(ErrorCode c) {
    switch (c) {
      case ErrorCode::NotFound: return 404;
      case ErrorCode::ValidationError:
      case ErrorCode::InvalidArgument:
      case ErrorCode::Infeasible: return 400;
      default: return 500;
    }
  }

  static void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, std::string_view code,
                         std::string_view message) {
    send_json(res, {{"error", code}, {"message", message}}, status);
  }

  template <class Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, status_for(e.code()), to_string(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "ValidationError", e.what());
      } catch (const std::invalid_argument& e) {
        send_error(res, 400, "ValidationError", e.what());
      } catch (const std::out_of_range& e) {
        send_error(res, 400, "ValidationError", e.what());
      }
    };
  }

  static double query_double(const httplib::Request& req, const char* key, double def) {
    if (!req.has_param(key)) return def;
    const std::string v = req.get_param_value(key);
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw Error(ErrorCode::ValidationError, fmt::format("bad {} '{}'", key, v));
    return d;
  }

  static int query_int(const httplib::Request& req, const char* key, int def) {
    if (!req.has_param(key)) return def;
    const std::string v = req.get_param_value(key);
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used != v.size()) throw Error(ErrorCode::ValidationError, fmt::format("bad {} '{}'", key, v));
    return i;
  }

  static json parse_body(const httplib::Request& req) {
    json body = json::parse(req.body);
    if (!body.is_object()) throw Error(ErrorCode::ValidationError, "body must be a JSON object");
    return body;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });

    server.Get("/scans", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto* s : service.scans()) {
        out.push_back({{"scan_id", s->id},
                       {"detections", s->detections.size()},
                       {"report", s->report}});
      }
      send_json(res, out);
    }));

    server.Get(R"(/scans/([^/]+)/detections)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto page = service.list_detections(
                     req.matches[1].str(), query_double(req, "min_score", 0.0),
                     query_int(req, "page", 0), query_int(req, "page_size", 50));
                 send_json(res, to_json(page));
               }));

    server.Get(R"(/scans/([^/]+)/tiles/([^/]+)/(image|saliency|overlay))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto& sc = service.scan(req.matches[1].str());
                 const std::string tile = req.matches[2].str();
                 const std::string kind = req.matches[3].str();
                 const auto* d = sc.find(tile);
                 if (!d) throw Error(ErrorCode::NotFound, fmt::format("unknown tile {}", tile));
                 const auto& rel = kind == "image" ? d->image : kind == "saliency" ? d->saliency : d->overlay;
                 if (!rel) throw Error(ErrorCode::NotFound, fmt::format("tile {} has no {}", tile, kind));
                 std::ifstream in(sc.dir / *rel, std::ios::binary);
                 if (!in) throw Error(ErrorCode::NotFound, fmt::format("{} file missing", *rel));
                 std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                 res.set_content(std::move(bytes), "image/png");
               }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const auto s = service.create_session(body.at("scan_id").get<std::string>(),
                                            body.value("operator", std::string()),
                                            body.value("threshold", 0.0));
      send_json(res, to_json(s), 201);
    }));

    server.Get(R"(/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, to_json(service.session(req.matches[1].str())));
               }));

    server.Get(R"(/sessions/([^/]+)/detections)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto s = service.session(req.matches[1].str());
                 const auto page = service.list_session_detections(
                     s.session_id, query_double(req, "min_score", s.threshold),
                     query_int(req, "page", 0), query_int(req, "page_size", 50));
                 send_json(res, to_json(page));
               }));

    server.Post(R"(/sessions/([^/]+)/verdicts)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  json body = parse_body(req);
                  body["session_id"] = req.matches[1].str();
                  for (const char* key : {"tile_id", "decision", "opened_at", "decided_at"}) {
                    if (!body.contains(key) || !body[key].is_string()) {
                      throw Error(ErrorCode::ValidationError, fmt::format("missing string field {}", key));
                    }
                  }
                  const auto r = service.post_verdict(verdict_from_json(body));
                  json out = to_json(r.verdict);
                  out["replayed"] = r.replayed;
                  send_json(res, out, r.replayed ? 200 : 201);
                }));

    server.Get(R"(/sessions/([^/]+)/report)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto r = service.session_report(req.matches[1].str());
                 json out = to_json(r);
                 if (req.has_param("manual_sites")) {
                   CampaignStats manual;
                   manual.inspected_area_km2 = query_double(req, "manual_area_km2", 0.0);
                   manual.detected_sites = query_int(req, "manual_sites", 0);
                   manual.total_time_min = query_double(req, "manual_time_min", 0.0);
                   CampaignStats aided;
                   const auto& sc = service.scan(r.scan_id);
                   double area = 0.0;
                   if (sc.report.contains("area") && sc.report["area"].value("candidate_km2", json()).is_number()) {
                     area = sc.report["area"]["candidate_km2"].get<double>();
                   }
                   aided.inspected_area_km2 = query_double(req, "aided_area_km2", area);
                   aided.detected_sites = r.confirmed;
                   aided.total_time_min = r.total_time_min;
                   out["field_report"] = to_json(field_report(manual, aided));
                 }
                 send_json(res, out);
               }));
  }
};

ReviewServer::ReviewServer(ReviewService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start() {
  int port = impl_->options.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (!impl_->server.bind_to_port(impl_->options.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw Error(ErrorCode::IoError, fmt::format("cannot bind {}:{}", impl_->options.host,
                                                impl_->options.port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ReviewServer::run() {
  if (!impl_->server.listen(impl_->options.host, impl_->options.port)) {
    throw Error(ErrorCode::IoError, fmt::format("cannot serve on {}:{}", impl_->options.host,
                                                impl_->options.port));
  }
}

void ReviewServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace wastescan
