#include "hyperql/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "hyperql/config.hpp"
#include "hyperql/hypernet.hpp"
#include "hyperql/plot.hpp"
#include "hyperql/rng.hpp"

using namespace hyperql;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

ParamStore random_store(std::uint64_t seed) {
  ParamStore ps;
  ps.add("layer.W", 3, 4);
  ps.add("layer.b", 1, 4);
  ps.add("head.W", 4, 2);
  RngStream rng(seed);
  for (auto& p : ps) {
    for (double& v : p.value) v = rng.uniform(-10, 10) * std::pow(10.0, rng.uniform(-8, 8));
  }
  return ps;
}

}  // namespace

TEST(Format, G17RoundTripsDoubles) {
  RngStream rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-300, 300));
    EXPECT_EQ(std::stod(fmt_g17(v)), v);
  }
}

TEST(Csv, RowWidthEnforced) {
  CsvWriter w({"a", "b"});
  EXPECT_THROW(w.row({1.0}), IoError);
  w.row({1.0, 2.0});
  EXPECT_EQ(w.row_count(), 1);
}

TEST(Csv, SaveLoadRoundTrip) {
  CsvWriter w({"x", "y"});
  w.row({1.0, -0.12345678901234567});
  w.row({2.0, 3.5});
  auto path = temp_file("hyperql_io_csv.csv");
  w.save(path);
  CsvTable t = load_csv(path);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"x", "y"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], -0.12345678901234567);
  EXPECT_THROW(t.column("z"), IoError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamStore a = random_store(7);
  auto path = temp_file("hyperql_ckpt_roundtrip.ckpt");
  checkpoint_save(a, path);
  ParamStore b = random_store(8);  // same layout, different values
  checkpoint_load(b, path);
  for (int i = 0; i < a.count(); ++i) {
    for (size_t j = 0; j < a.at(i).value.size(); ++j) {
      EXPECT_EQ(a.at(i).value[j], b.at(i).value[j]);
    }
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingTensorRejected) {
  ParamStore a = random_store(9);
  auto path = temp_file("hyperql_ckpt_missing.ckpt");
  checkpoint_save(a, path);
  ParamStore b;
  b.add("layer.W", 3, 4);
  b.add("layer.b", 1, 4);
  b.add("other.W", 4, 2);
  try {
    checkpoint_load(b, path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("other.W"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchNamesTheTensor) {
  ParamStore a = random_store(10);
  auto path = temp_file("hyperql_ckpt_shape.ckpt");
  checkpoint_save(a, path);
  ParamStore b;
  b.add("layer.W", 4, 3);  // transposed shape
  b.add("layer.b", 1, 4);
  b.add("head.W", 4, 2);
  try {
    checkpoint_load(b, path);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.W"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Config, UnknownKeyNamesThePath) {
  Json ref = Json{{"trainer", {{"batch", 100}}}};
  Json bad = Json{{"trainer", {{"bathc", 3}}}};
  try {
    validate_config(bad, ref);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.bathc"), std::string::npos);
  }
}

TEST(Config, OverridesParseAndApply) {
  Json cfg = Json{{"seed", 1}, {"trainer", {{"batch", 100}, {"algo", "td3"}}},
                  {"alphas", {0.0, 0.5}}};
  apply_override(cfg, "trainer.batch", "64");
  apply_override(cfg, "trainer.algo", "sac");
  apply_override(cfg, "alphas", "[0.1,0.9]");
  EXPECT_EQ(cfg["trainer"]["batch"], 64);
  EXPECT_EQ(cfg["trainer"]["algo"], "sac");
  EXPECT_EQ(cfg["alphas"][1], 0.9);
  EXPECT_THROW(apply_override(cfg, "trainer.nope", "1"), ConfigError);
}

TEST(Config, MergeIsRecursive) {
  Json base = Json{{"a", {{"x", 1}, {"y", 2}}}, {"b", 3}};
  Json over = Json{{"a", {{"y", 20}}}};
  merge_config(base, over);
  EXPECT_EQ(base["a"]["x"], 1);
  EXPECT_EQ(base["a"]["y"], 20);
  EXPECT_EQ(base["b"], 3);
}

TEST(Plot, ConstantSeriesIsHorizontal) {
  CsvTable t;
  t.columns = {"step", "v"};
  for (int i = 0; i < 5; ++i) t.rows.push_back({static_cast<double>(i), 2.5});
  PlotSpec spec;
  spec.y = "v";
  std::string svg = render_svg({t}, spec);
  // One data polyline whose y coordinates are all equal.
  const size_t pos = svg.find("<polyline");
  ASSERT_NE(pos, std::string::npos);
  const size_t start = svg.find("points=\"", pos) + 8;
  const size_t end = svg.find('"', start);
  std::stringstream pts(svg.substr(start, end - start));
  std::string pair;
  double y0 = -1;
  while (pts >> pair) {
    const double y = std::stod(pair.substr(pair.find(',') + 1));
    if (y0 < 0) y0 = y;
    EXPECT_DOUBLE_EQ(y, y0);
  }
}

TEST(Plot, UnitWindowIsIdentity) {
  std::vector<double> v{1, 5, 3, 7, 2};
  EXPECT_EQ(plot_detail::moving_average(v, 1), v);
  auto w3 = plot_detail::moving_average(v, 3);
  EXPECT_DOUBLE_EQ(w3[0], 1.0);
  EXPECT_DOUBLE_EQ(w3[1], 3.0);
  EXPECT_DOUBLE_EQ(w3[2], 3.0);
  EXPECT_DOUBLE_EQ(w3[4], 4.0);
}

TEST(Plot, IqrBandOverFiveRunsRendersThreePaths) {
  std::vector<CsvTable> tables;
  RngStream rng(3);
  for (int k = 0; k < 5; ++k) {
    CsvTable t;
    t.columns = {"step", "v"};
    for (int i = 0; i < 6; ++i) {
      t.rows.push_back({static_cast<double>(i), rng.uniform(0, 1) + i});
    }
    tables.push_back(t);
  }
  PlotSpec spec;
  spec.y = "v";
  spec.iqr = true;
  std::string svg = render_svg(tables, spec);
  size_t lines = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++lines;
    ++pos;
  }
  EXPECT_EQ(lines, 3u);
  EXPECT_NE(svg.find("<polygon"), std::string::npos);
}

TEST(Plot, QuartilesMatchHandComputation) {
  // Linear-interpolation quartiles of {1,2,3,4,10}.
  std::vector<double> v{4, 1, 10, 2, 3};
  EXPECT_DOUBLE_EQ(plot_detail::quantile(v, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(plot_detail::quantile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(plot_detail::quantile(v, 0.75), 4.0);
}

TEST(Plot, MissingColumnRejected) {
  CsvTable t;
  t.columns = {"step", "v"};
  t.rows.push_back({0.0, 1.0});
  PlotSpec spec;
  spec.y = "nope";
  EXPECT_THROW(render_svg({t}, spec), IoError);
}

TEST(TvDistanceEndpoints, ExactZeroAndOne) {
  std::vector<double> a{0.1, 0.2, 0.3, 0.35};
  std::vector<double> b{0.7, 0.8, 0.9, 0.95};
  EXPECT_EQ(weight_tv_distance(a, a, 7), 0.0);
  EXPECT_EQ(weight_tv_distance(a, b, 64), 1.0);
}
