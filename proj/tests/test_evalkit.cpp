#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "support.hpp"
#include "wastescan/error.hpp"
#include "wastescan/evalkit.hpp"

using namespace wastescan;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

// Writes `pos` checkerboard and `neg` uniform tiles plus a manifest.
Manifest write_corpus(const fs::path& dir, int pos, int neg, int px, double context_m,
                      bool with_world) {
  Manifest m;
  fs::create_directories(dir / "src");
  const double gsd = context_m / px;
  for (int i = 0; i < pos + neg; ++i) {
    const bool positive = i < pos;
    auto img = positive ? testing::checkerboard(px, px, gsd) : testing::uniform(px, px, 60 + i % 50, gsd);
    ManifestEntry e;
    e.location_id = "L" + std::to_string(i);
    e.label = positive ? Label::Positive : Label::Negative;
    e.tile_file = "src/" + e.location_id + ".png";
    e.context_m = context_m;
    e.gsd_cm = 100.0 * gsd;
    e.image_px = px;
    e.source = "src";
    write_png(img, dir / e.tile_file);
    if (with_world) write_world_file(img.transform(), dir / ("src/" + e.location_id + ".wld"));
    m.entries.push_back(e);
  }
  return m;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("confusion counts") {
  const std::vector<double> s{0.9, 0.1};
  const std::vector<int> l{1, 0};
  const auto cm = confusion(s, l);
  CHECK(cm == ConfusionMatrix{1, 0, 1, 0});
  const std::vector<double> half{0.5};
  const std::vector<int> neg{0};
  CHECK(confusion(half, neg).fp == 1);
  const std::vector<int> bad{0, 1, 1};
  CHECK_THROWS_AS(confusion(s, bad), Error);
  const std::vector<int> three{2, 0};
  CHECK_THROWS_AS(confusion(s, three), Error);
}

TEST_CASE("perfect classifier on the test split counts") {
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 869; ++i) { s.push_back(1.0); l.push_back(1); }
  for (int i = 0; i < 1738; ++i) { s.push_back(0.0); l.push_back(0); }
  const auto cm = confusion(s, l);
  CHECK(cm.tp == 869);
  CHECK(cm.tn == 1738);
  const auto m = metrics(cm);
  CHECK(m.accuracy == 1.0);
  CHECK(format_percent(m.accuracy) == "100.00%");
}

TEST_CASE("metric definitions against counts") {
  const ConfusionMatrix cm{45, 5, 40, 10};
  const auto m = metrics(cm);
  CHECK(m.accuracy == doctest::Approx(0.85));
  CHECK(m.precision == doctest::Approx(0.9));
  CHECK(m.recall == doctest::Approx(45.0 / 55.0));
  CHECK(m.f1 == doctest::Approx(2 * 0.9 * (45.0 / 55.0) / (0.9 + 45.0 / 55.0)));
  const auto none = metrics({0, 0, 10, 0});
  CHECK(none.precision_undefined);
  CHECK(none.recall_undefined);
  CHECK(none.f1 == 0.0);
  CHECK_THROWS_AS(metrics({}), Error);
}

TEST_CASE("f1 from rounded precision and recall") {
  CHECK(format_percent(f1_score(0.9281, 0.8769)) == "90.18%");
  CHECK(format_percent(f1_score(0.9041, 0.9333)) == "91.85%");
  for (double x : {0.1, 0.5, 0.873}) CHECK(f1_score(x, x) == doctest::Approx(x));
  CHECK(f1_score(0, 0) == 0.0);
}

TEST_CASE("percent rendering") {
  CHECK(format_percent(0.8921) == "89.21%");
  CHECK(format_percent(0.8829) == "88.29%");
}

TEST_CASE("experiment grid") {
  const auto g = enumerate_grid();
  REQUIRE(g.size() == 48);
  std::set<std::tuple<Architecture, int, int, Pretraining>> keys;
  for (const auto& c : g) {
    keys.insert(c.key());
    CHECK(c.image_px == compute_image_size(c.gsd_cm, c.context_m));
    CHECK(c.hyper.batch_size == 120);
    CHECK(c.hyper.lr_transfer == 0.001);
    CHECK(c.hyper.lr_finetune == 0.0001);
  }
  CHECK(keys.size() == 48);
  CHECK(std::is_sorted(g.begin(), g.end(), [](const auto& a, const auto& b) {
    return std::tuple(a.architecture, a.gsd_cm, a.context_m, a.pretraining) <
           std::tuple(b.architecture, b.gsd_cm, b.context_m, b.pretraining);
  }));
  bool found = false;
  for (const auto& c : g) {
    if (c.architecture == Architecture::SwinT && c.gsd_cm == 20 && c.context_m == 150 &&
        c.pretraining == Pretraining::INP) {
      found = true;
      CHECK(c.image_px == 748);
      CHECK(c.name() == "swin_t_g20_c150_INP");
    }
  }
  CHECK(found);

  TempDir dir;
  write_grid_jsonl(g, dir / "grid.jsonl");
  std::ifstream in(dir / "grid.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("image_px"));
    ++lines;
  }
  CHECK(lines == 48);
}

TEST_CASE("field report arithmetic") {
  const CampaignStats manual{125.24, 95, 1486};
  const CampaignStats aided{49.84, 155, 2133};
  const auto r = field_report(manual, aided);
  CHECK(100 * r.area_variation == doctest::Approx(-60.204).epsilon(1e-4));
  CHECK(100 * r.sites_variation == doctest::Approx(63.158).epsilon(1e-4));
  CHECK(100 * r.total_time_variation == doctest::Approx(43.540).epsilon(1e-4));
  CHECK(r.manual_avg_time_min == doctest::Approx(15.642).epsilon(1e-4));
  CHECK(r.aided_avg_time_min == doctest::Approx(13.761).epsilon(1e-4));
  CHECK(100 * r.avg_time_variation == doctest::Approx(-12.024).epsilon(1e-4));
  CHECK(100 * r.avg_time_variation_from_truncated == doctest::Approx(-12.179).epsilon(1e-4));
  const auto text = format_field_report(r);
  CHECK(text.find("-60.2%") != std::string::npos);
  CHECK(text.find("+63.2%") != std::string::npos);
  CHECK(text.find("+43.5%") != std::string::npos);
  CHECK(text.find("-12.0%") != std::string::npos);
  CHECK(text.find("-12.2%") != std::string::npos);
  CHECK(text.find("13.8") != std::string::npos);
  const auto j = to_json(r);
  CHECK(j["variation_pct"]["inspected_area"].get<double>() == doctest::Approx(-60.204).epsilon(1e-4));
}

TEST_CASE("field report identities") {
  const CampaignStats a{10, 20, 300};
  const auto same = field_report(a, a);
  CHECK(same.area_variation == 0.0);
  CHECK(same.sites_variation == 0.0);
  CHECK(same.total_time_variation == 0.0);
  CHECK(same.avg_time_variation == 0.0);
  const auto doubled = field_report(a, {10, 40, 600});
  CHECK(doubled.avg_time_variation == doctest::Approx(0.0));
  try {
    field_report(a, {10, 0, 5});
    FAIL("expected Infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Infeasible);
  }
}

TEST_CASE("synthetic corpus evaluates perfectly") {
  TempDir dir;
  const auto m = write_corpus(dir.path(), 6, 12, 200, 100.0, true);
  BackendConfig be;
  be.batch_size = 5;
  const auto r = evaluate_manifest(m, be, TileSpec::make(50, 100), dir.path(), 2);
  CHECK(r.metrics.accuracy == 1.0);
  CHECK(r.cm == ConfusionMatrix{6, 0, 12, 0});
  CHECK(format_metrics(r).find("100.00%") != std::string::npos);
  CHECK(to_json(r)["formatted"]["f1"] == "100.00%");
}

TEST_CASE("larger-context tiles are center cropped first") {
  TempDir dir;
  // 210 m tiles at 0.5 m (420 px); a 100 m crop is exactly 200 px.
  const auto m = write_corpus(dir.path(), 3, 6, 420, 210.0, false);
  const auto r = evaluate_manifest(m, BackendConfig{}, TileSpec::make(50, 100), dir.path());
  CHECK(r.metrics.accuracy == 1.0);
  CHECK(r.scores.size() == 9);
}

TEST_CASE("empty manifest") {
  try {
    evaluate_manifest(Manifest{}, BackendConfig{}, TileSpec::make(50, 100), ".");
    FAIL("expected EmptyManifest");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyManifest);
  }
}

}  // TEST_SUITE
