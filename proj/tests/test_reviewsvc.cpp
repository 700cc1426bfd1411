#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <httplib.h>
#include <json.hpp>

#include "support.hpp"
#include "wastescan/error.hpp"
#include "wastescan/reviewsvc.hpp"
#include "wastescan/scanner.hpp"

using namespace wastescan;
using testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

// `side` x `side` tiles of 100 px at 1 m. Noise amplitude varies per tile so
// scores spread over [0, 1]; tile (0, 1) is a checkerboard.
GeoRaster varied_raster(int side, std::uint64_t seed) {
  const int n = side * 100;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(-127, 127);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(n) * n * 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int tile = (y / 100) * side + x / 100;
      const double amp = (tile * 7 % 17) / 40.0;
      std::uint8_t v = static_cast<std::uint8_t>(128 + d(rng) * amp);
      if (y < 100 && x >= 100 && x < 200) v = (x + y) % 2 ? 255 : 0;
      for (int b = 0; b < 3; ++b) px[(static_cast<std::size_t>(y) * n + x) * 3 + b] = v;
    }
  }
  return GeoRaster(n, n, std::move(px), testing::utm(1.0), "EPSG:32632");
}

ScanResult make_scan(const fs::path& dir, int side, bool artifacts = true) {
  fs::create_directories(dir);
  ScanConfig cfg;
  cfg.spec = TileSpec::make(100, 100);
  if (artifacts) cfg.output_dir = dir;
  const auto res = scan(varied_raster(side, 5), cfg, BackendConfig{});
  write_geojson(res, dir / "detections.geojson");
  write_scan_report(res, dir / "scan_report.json");
  return res;
}

struct FakeClock {
  std::shared_ptr<TimePoint> now = std::make_shared<TimePoint>(parse_rfc3339("2024-05-01T09:00:00Z"));
  TimePoint operator()() const { return *now; }
};

Verdict verdict(const std::string& session, const std::string& tile, Decision d,
                const std::string& opened, const std::string& decided) {
  return {session, tile, d, parse_rfc3339(opened), parse_rfc3339(decided)};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("reviewsvc") {

TEST_CASE("rfc3339 timestamps") {
  const auto t = parse_rfc3339("2024-05-01T10:00:00Z");
  CHECK(format_rfc3339(t) == "2024-05-01T10:00:00.000Z");
  CHECK(parse_rfc3339("2024-05-01T12:00:00+02:00") == t);
  CHECK(parse_rfc3339("2024-05-01T09:30:00-00:30") == t);
  CHECK(format_rfc3339(parse_rfc3339("2024-02-29T23:59:59.1239Z")) == "2024-02-29T23:59:59.123Z");
  CHECK(parse_rfc3339("2024-05-01T10:10:00Z") - t == 10min);
  for (const char* bad : {"", "2024-05-01", "2024-13-01T00:00:00Z", "2024-05-01T10:00:00",
                          "2023-02-29T00:00:00Z", "2024-05-01T10:00:00Zjunk"}) {
    CHECK_THROWS_AS(parse_rfc3339(bad), Error);
  }
}

TEST_CASE("decisions") {
  CHECK(parse_decision("confirmed") == Decision::Confirmed);
  CHECK(to_string(Decision::Dismissed) == "dismissed");
  CHECK_THROWS_AS(parse_decision("maybe"), Error);
}

TEST_CASE("load_scan reads scanner output") {
  TempDir dir;
  const auto res = make_scan(dir / "scanA", 3);
  const auto h = load_scan(dir / "scanA");
  CHECK(h.id == "scanA");
  REQUIRE(h.detections.size() == 9);
  for (std::size_t i = 0; i < h.detections.size(); ++i) CHECK(h.detections[i].rank == static_cast<int>(i) + 1);
  const auto* hot = h.find("r0000_c0001");
  REQUIRE(hot);
  CHECK(hot->score == 1.0);
  CHECK(hot->saliency.has_value());
  CHECK(h.report["counts"]["candidates"].is_number());
  for (const auto& d : res.detections) {
    REQUIRE(h.find(d.tile_id.str()));
    CHECK(h.find(d.tile_id.str())->score == d.score);
  }
  CHECK(h.find("r0099_c0000") == nullptr);
}

TEST_CASE("load_scan errors") {
  TempDir dir;
  try {
    load_scan(dir.path());
    FAIL("expected LoadError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LoadError);
  }
  make_scan(dir / "s", 2, false);
  auto gj = json::parse(std::ifstream(dir / "s/detections.geojson"));
  gj["features"][2]["properties"].erase("score");
  gj["features"][2]["properties"].erase("score_raw");
  std::ofstream(dir / "s/detections.geojson") << gj.dump();
  try {
    load_scan(dir / "s");
    FAIL("expected LoadError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LoadError);
    CHECK(std::string(e.what()).find("r0001_c0000") != std::string::npos);
  }
  gj = json::parse(std::ifstream(dir / "s/detections.geojson"));
  gj["features"][2]["properties"]["score"] = 0.3;
  gj["features"][2]["properties"]["saliency"] = "../../etc/passwd";
  std::ofstream(dir / "s/detections.geojson") << gj.dump();
  CHECK_THROWS_AS(load_scan(dir / "s"), Error);
}

TEST_CASE("listing matches scanner filtering") {
  TempDir dir;
  const auto res = make_scan(dir / "scan", 6, false);
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double t = i == 0 ? 0.0 : u(rng);
    const auto page = svc.list_detections("scan", t, 0, 1000);
    std::set<std::string> got, want;
    for (const auto& d : page.items) got.insert(d.tile_id);
    for (const auto& d : filter_detections(res, t)) want.insert(d.tile_id.str());
    REQUIRE(got == want);
    CHECK(page.total == want.size());
  }
  CHECK(svc.list_detections("scan", 0.0, 0, 1000).total == 36);
}

TEST_CASE("paging") {
  TempDir dir;
  make_scan(dir / "scan", 4, false);
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  std::vector<std::string> all;
  for (int p = 0; p < 4; ++p) {
    const auto page = svc.list_detections("scan", 0.0, p, 5);
    CHECK(page.total == 16);
    for (const auto& d : page.items) all.push_back(d.tile_id);
  }
  CHECK(all.size() == 16);
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == 16);
  CHECK(svc.list_detections("scan", 0.0, 9, 5).items.empty());
  CHECK_THROWS_AS(svc.list_detections("scan", 0.0, -1, 5), Error);
  CHECK_THROWS_AS(svc.list_detections("scan", 0.0, 0, 0), Error);
  CHECK_THROWS_AS(svc.list_detections("nope", 0.0, 0, 5), Error);
}

TEST_CASE("verdict lifecycle") {
  TempDir dir;
  make_scan(dir / "scan", 2, false);
  FakeClock clock;
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl", clock);
  const auto s = svc.create_session("scan", "ana", 0.5);
  CHECK(s.session_id == "s0001");
  CHECK(s.created_at == *clock.now);
  CHECK_THROWS_AS(svc.create_session("scan", "ana", 1.5), Error);
  CHECK_THROWS_AS(svc.create_session("missing", "ana", 0.5), Error);

  const auto v1 = verdict("s0001", "r0000_c0000", Decision::Confirmed, "2024-05-01T10:00:00Z",
                          "2024-05-01T10:10:00Z");
  CHECK_FALSE(svc.post_verdict(v1).replayed);
  CHECK(svc.verdicts("s0001") == std::vector<Verdict>{v1});
  const auto lines = line_count(svc.log_path());

  // retry of the same request
  CHECK(svc.post_verdict(v1).replayed);
  CHECK(line_count(svc.log_path()) == lines);

  // a later verdict supersedes
  const auto v2 = verdict("s0001", "r0000_c0000", Decision::Dismissed, "2024-05-01T10:20:00Z",
                          "2024-05-01T10:21:00Z");
  CHECK_FALSE(svc.post_verdict(v2).replayed);
  CHECK(svc.verdicts("s0001") == std::vector<Verdict>{v2});
  // a stale retry of v1 does not revert it
  CHECK(svc.post_verdict(v1).replayed);
  CHECK(svc.verdicts("s0001") == std::vector<Verdict>{v2});

  auto check_code = [&](const Verdict& v, ErrorCode code) {
    try {
      svc.post_verdict(v);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  check_code(verdict("s0001", "r0001_c0001", Decision::Unsure, "2024-05-01T10:00:00Z",
                     "2024-05-01T09:59:59Z"),
             ErrorCode::ValidationError);
  check_code(verdict("s0001", "r0042_c0000", Decision::Unsure, "2024-05-01T10:00:00Z",
                     "2024-05-01T10:00:00Z"),
             ErrorCode::NotFound);
  check_code(verdict("s0009", "r0000_c0000", Decision::Unsure, "2024-05-01T10:00:00Z",
                     "2024-05-01T10:00:00Z"),
             ErrorCode::NotFound);
}

TEST_CASE("session report") {
  TempDir dir;
  make_scan(dir / "scan", 2, false);
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  svc.create_session("scan", "ana", 0.5);
  const auto empty = svc.session_report("s0001");
  CHECK(empty.reviewed == 0);
  CHECK_FALSE(empty.avg_time_per_site_min);
  CHECK(to_json(empty)["avg_time_per_site_min"].is_null());

  svc.post_verdict(verdict("s0001", "r0000_c0000", Decision::Confirmed, "2024-05-01T10:00:00Z",
                           "2024-05-01T10:10:00Z"));
  svc.post_verdict(verdict("s0001", "r0000_c0001", Decision::Confirmed, "2024-05-01T11:00:00Z",
                           "2024-05-01T11:20:00Z"));
  const auto r = svc.session_report("s0001");
  CHECK(r.confirmed == 2);
  CHECK(r.total_time_min == doctest::Approx(30.0));
  REQUIRE(r.avg_time_per_site_min);
  CHECK(*r.avg_time_per_site_min == doctest::Approx(15.0));

  svc.post_verdict(verdict("s0001", "r0001_c0000", Decision::Dismissed, "2024-05-01T12:00:00Z",
                           "2024-05-01T12:06:00Z"));
  const auto r2 = svc.session_report("s0001");
  CHECK(r2.reviewed == 3);
  CHECK(r2.dismissed == 1);
  CHECK(*r2.avg_time_per_site_min == doctest::Approx(18.0));
}

TEST_CASE("campaign-sized report") {
  TempDir dir;
  make_scan(dir / "scan", 13, false);
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  svc.create_session("scan", "ana", 0.0);
  const auto& dets = svc.scan("scan").detections;
  REQUIRE(dets.size() >= 155);
  // 155 confirmations totalling 2133 minutes.
  auto t = parse_rfc3339("2024-05-01T08:00:00Z");
  for (int i = 0; i < 155; ++i) {
    const auto minutes = std::chrono::minutes(i < 118 ? 14 : 13);
    svc.post_verdict({"s0001", dets[static_cast<std::size_t>(i)].tile_id, Decision::Confirmed, t, t + minutes});
    t += 1h;
  }
  const auto r = svc.session_report("s0001");
  CHECK(r.total_time_min == doctest::Approx(2133.0));
  CHECK(*r.avg_time_per_site_min == doctest::Approx(2133.0 / 155.0));
  CHECK(fmt::format("{:.2f}", *r.avg_time_per_site_min) == "13.76");
}

TEST_CASE("restart replays the log into identical reports") {
  TempDir dir;
  make_scan(dir / "scan", 4, false);
  std::mt19937_64 rng(21);
  std::vector<SessionReport> before;
  std::vector<std::vector<Verdict>> verdicts_before;
  {
    ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
    const auto& dets = svc.scan("scan").detections;
    std::uniform_int_distribution<std::size_t> pick(0, dets.size() - 1);
    std::uniform_int_distribution<int> dec(0, 2), secs(0, 900);
    for (int s = 0; s < 3; ++s) {
      svc.create_session("scan", "op" + std::to_string(s), 0.25 * s);
      auto t = parse_rfc3339("2024-05-01T08:00:00Z");
      for (int i = 0; i < 40; ++i) {
        const auto opened = t;
        t += std::chrono::seconds(secs(rng));
        svc.post_verdict({fmt::format("s{:04d}", s + 1), dets[pick(rng)].tile_id,
                          static_cast<Decision>(dec(rng)), opened, t});
      }
    }
    for (const auto& s : svc.sessions()) {
      before.push_back(svc.session_report(s.session_id));
      verdicts_before.push_back(svc.verdicts(s.session_id));
    }
  }
  ReviewService again({load_scan(dir / "scan")}, dir / "log.jsonl");
  REQUIRE(again.sessions().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto id = again.sessions()[i].session_id;
    CHECK(again.session_report(id) == before[i]);
    CHECK(again.verdicts(id) == verdicts_before[i]);
  }
  CHECK(again.create_session("scan", "x", 0.5).session_id == "s0004");
}

TEST_CASE("torn trailing line is discarded") {
  TempDir dir;
  make_scan(dir / "scan", 2, false);
  {
    ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
    svc.create_session("scan", "ana", 0.5);
    svc.post_verdict(verdict("s0001", "r0000_c0000", Decision::Confirmed, "2024-05-01T10:00:00Z",
                             "2024-05-01T10:10:00Z"));
  }
  { std::ofstream(dir / "log.jsonl", std::ios::app) << R"({"type":"verdict","session_id":"s00)"; }
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  CHECK(svc.session_report("s0001").confirmed == 1);
  CHECK(line_count(dir / "log.jsonl") == 2);
  svc.post_verdict(verdict("s0001", "r0000_c0001", Decision::Dismissed, "2024-05-01T11:00:00Z",
                           "2024-05-01T11:01:00Z"));
  ReviewService third({load_scan(dir / "scan")}, dir / "log.jsonl");
  CHECK(third.session_report("s0001").reviewed == 2);
}

TEST_CASE("corrupt complete line fails with its position") {
  TempDir dir;
  make_scan(dir / "scan", 2, false);
  std::ofstream(dir / "log.jsonl") << "{\"type\":\"nonsense\"}\n";
  try {
    ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
    FAIL("expected LoadError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LoadError);
    CHECK(std::string(e.what()).find("log.jsonl:1") != std::string::npos);
  }
}

TEST_CASE("http api") {
  TempDir dir;
  make_scan(dir / "scan", 3);
  ReviewService svc({load_scan(dir / "scan")}, dir / "log.jsonl");
  ReviewServer server(svc, {"127.0.0.1", 0, "http://localhost:5173"});
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto scans = cli.Get("/scans");
  REQUIRE(scans);
  CHECK(scans->status == 200);
  CHECK(scans->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
  const auto sj = json::parse(scans->body);
  CHECK(sj[0]["scan_id"] == "scan");
  CHECK(sj[0]["detections"] == 9);

  auto pre = cli.Options("/sessions");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  auto list = cli.Get("/scans/scan/detections?min_score=0.5&page_size=2");
  REQUIRE(list);
  const auto lj = json::parse(list->body);
  CHECK(lj["items"][0]["tile_id"] == "r0000_c0001");
  CHECK(lj["items"][0]["has_saliency"] == true);
  CHECK(lj["page_size"] == 2);

  auto png = cli.Get("/scans/scan/tiles/r0000_c0001/saliency");
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(png->get_header_value("Content-Type") == "image/png");
  CHECK(png->body.substr(1, 3) == "PNG");
  CHECK(cli.Get("/scans/scan/tiles/r0009_c0009/image")->status == 404);
  CHECK(cli.Get("/scans/other/detections")->status == 404);
  CHECK(cli.Get("/scans/scan/detections?min_score=abc")->status == 400);

  auto created = cli.Post("/sessions", R"({"scan_id":"scan","operator":"ana","threshold":0.5})",
                          "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = json::parse(created->body)["session_id"].get<std::string>();
  CHECK(cli.Post("/sessions", R"({"scan_id":"scan","threshold":2})", "application/json")->status == 400);
  CHECK(cli.Post("/sessions", "not json", "application/json")->status == 400);
  CHECK(cli.Get("/sessions/" + id)->status == 200);
  CHECK(cli.Get("/sessions/s0999")->status == 404);

  const auto sess_list = json::parse(cli.Get("/sessions/" + id + "/detections")->body);
  for (const auto& item : sess_list["items"]) CHECK(item["score"].get<double>() >= 0.5);

  const std::string body =
      R"({"tile_id":"r0000_c0001","decision":"confirmed","opened_at":"2024-05-01T10:00:00Z","decided_at":"2024-05-01T10:12:00Z"})";
  auto first = cli.Post("/sessions/" + id + "/verdicts", body, "application/json");
  REQUIRE(first);
  CHECK(first->status == 201);
  auto retry = cli.Post("/sessions/" + id + "/verdicts", body, "application/json");
  CHECK(retry->status == 200);
  CHECK(json::parse(retry->body)["replayed"] == true);
  CHECK(cli.Post("/sessions/" + id + "/verdicts",
                 R"({"tile_id":"r0000_c0001","decision":"confirmed","opened_at":"2024-05-01T10:00:00Z","decided_at":"2024-05-01T09:00:00Z"})",
                 "application/json")
            ->status == 400);
  CHECK(cli.Post("/sessions/" + id + "/verdicts", R"({"tile_id":"r0000_c0001"})", "application/json")
            ->status == 400);

  const auto rep = json::parse(cli.Get("/sessions/" + id + "/report")->body);
  CHECK(rep["confirmed"] == 1);
  CHECK(rep["total_time_min"].get<double>() == doctest::Approx(12.0));
  CHECK_FALSE(rep.contains("field_report"));
  const auto with_field = json::parse(
      cli.Get("/sessions/" + id + "/report?manual_area_km2=0.09&manual_sites=1&manual_time_min=24")->body);
  CHECK(with_field["field_report"]["variation_pct"]["total_time"].get<double>() == doctest::Approx(-50.0));
  server.stop();
}

}  // TEST_SUITE
