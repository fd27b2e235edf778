#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "soda/action_grid.hpp"
#include "soda/dataset.hpp"
#include "soda/error.hpp"
#include "soda/kv_config.hpp"
#include "soda/preprocess.hpp"
#include "soda/reward.hpp"
#include "soda/vasopressor.hpp"

using namespace soda;

TEST(ActionGrid, NamedExamples) {
  EXPECT_EQ(discretize_action(0, 0), 0);
  EXPECT_EQ(discretize_action(300, 0), 1);
  EXPECT_EQ(discretize_action(0, 3), 4);
  EXPECT_EQ(discretize_action(150, 0), 0);  // below the 200 mL bolus floor
  EXPECT_EQ(discretize_action(1e6, 1e6), 19);
}

TEST(ActionGrid, Components) {
  EXPECT_EQ(action_components(0), (ActionComponents{0, 0}));
  EXPECT_EQ(action_components(7), (ActionComponents{1, 3}));
  EXPECT_EQ(action_components(19), (ActionComponents{4, 3}));
  EXPECT_THROW(action_components(20), InvalidInput);
  EXPECT_THROW(action_components(-1), InvalidInput);
  EXPECT_THROW(discretize_action(-1, 0), InvalidInput);
  EXPECT_THROW(discretize_action(0, -0.5), InvalidInput);
}

TEST(ActionGrid, RandomSweepRoundTrips) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> fluid(0, 3000), vaso(0, 200);
  const auto& g = ActionGrid::standard();
  for (int i = 0; i < 20000; ++i) {
    double f = fluid(rng), v = i % 5 == 0 ? 0.0 : vaso(rng);
    auto c = action_components(discretize_action(f, v));
    EXPECT_TRUE(g.fluid_bin_contains(c.fluid_bin, f)) << f;
    EXPECT_TRUE(g.vaso_bin_contains(c.vaso_bin, v)) << v;
  }
  std::set<ActionId> ids;
  for (int v = 0; v < kNumVasoBins; ++v)
    for (int f = 0; f < kNumFluidBins; ++f) ids.insert(make_action(v, f));
  EXPECT_EQ(ids.size(), 20u);
}

TEST(Reward, Endpoints) {
  EXPECT_EQ(compute_reward(70, std::nullopt), 1.0);
  EXPECT_EQ(compute_reward(65, std::nullopt), 1.0);
  EXPECT_EQ(compute_reward(28, std::nullopt), 0.0);
  EXPECT_EQ(compute_reward(10, std::nullopt), 0.0);
  EXPECT_EQ(compute_reward(57, 30.0), 1.0);
  EXPECT_EQ(compute_reward(55, 80.0), 1.0);
  EXPECT_LT(compute_reward(54.9, 80.0), 1.0);
  EXPECT_LT(compute_reward(57, 29.9), 1.0);
}

TEST(Reward, InterpolationByHand) {
  // 50 mmHg lies between the (28, 0) and (55, 0.6) knots.
  EXPECT_NEAR(compute_reward(50, std::nullopt), 0.6 * 22.0 / 27.0, 1e-15);
  EXPECT_NEAR(compute_reward(57.5, std::nullopt), 0.6 + 0.25 * 0.5, 1e-15);
  EXPECT_NEAR(compute_reward(62, std::nullopt), 0.85 + 0.15 * 0.4, 1e-15);
}

TEST(Reward, MonotoneAndBounded) {
  for (std::optional<double> urine : {std::optional<double>{}, std::optional<double>{10.0}, std::optional<double>{50.0}}) {
    double prev = -1;
    for (int i = 0; i <= 1000; ++i) {
      double map = 10.0 + 90.0 * i / 1000.0;
      double r = compute_reward(map, urine);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
      EXPECT_GE(r, prev);
      prev = r;
    }
  }
}

TEST(Reward, ConfigValidation) {
  auto kv = KeyValueFile::parse("knots = 28:0, 60:0.5, 55:0.6, 65:1\n");
  EXPECT_THROW(RewardConfig::from_kv(kv), ConfigError);
  auto bad_end = KeyValueFile::parse("knots = 28:0, 65:0.9\n");
  EXPECT_THROW(RewardConfig::from_kv(bad_end), ConfigError);
  auto ok = RewardConfig::from_kv(KeyValueFile::parse("knots = 28:0, 65:1\nurine_exemption_threshold = 40\n"));
  EXPECT_NEAR(compute_reward(46.5, std::nullopt, ok), 0.5, 1e-15);
  EXPECT_EQ(compute_reward(60, 40.0, ok), 1.0);
}

TEST(Vasopressor, Equivalents) {
  EXPECT_DOUBLE_EQ(norepi_equivalent("norepinephrine", 6.0, 80.0), 6.0 / 80.0);
  EXPECT_EQ(norepi_equivalent("Phenylephrine", 0.0, 70.0), 0.0);
  auto table = ConversionTable::defaults();
  EXPECT_DOUBLE_EQ(norepi_equivalent("phenylephrine", 10.0, 50.0), table.factor("phenylephrine") * 10.0 / 50.0);
  EXPECT_EQ(table.factor("NOREPINEPHRINE"), 1.0);
  EXPECT_THROW(norepi_equivalent("saline", 1.0, 70.0), UnknownDrug);
  auto custom = ConversionTable::from_kv(KeyValueFile::parse("dopamine = 0.02\n"));
  EXPECT_EQ(custom.factor("dopamine"), 0.02);
  EXPECT_EQ(custom.factor("norepinephrine"), 1.0);
  EXPECT_THROW(ConversionTable::from_kv(KeyValueFile::parse("norepinephrine = 3\n")), ConfigError);
}

namespace {

HourlyRecord hour(int h, std::map<std::string, std::vector<double>> m, double fluid = 0, double vaso = 0) {
  HourlyRecord r;
  r.stay_id = "s1";
  r.hour = h;
  r.measurements = std::move(m);
  r.fluid_ml = fluid;
  r.vaso_rate = vaso;
  return r;
}

}  // namespace

TEST(Preprocess, ImputationAggregationCarryForward) {
  auto spec = PreprocessSpec::for_variables({"MAP", "Lactate", "Albumin"}, {{"MAP", 70}, {"Lactate", 1.5}, {"Albumin", 2.1}});
  std::vector<HourlyRecord> recs{hour(1, {{"MAP", {72, 64}}}, 300, 0),
                                 hour(2, {{"MAP", {66}}}),
                                 hour(3, {{"MAP", {70}}, {"Lactate", {3.3}}}),
                                 hour(4, {}), hour(5, {}), hour(6, {{"MAP", {50}}})};
  Trajectory t = preprocess(recs, spec);
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t.transitions[0].state[0], 64.0);
  for (const auto& tr : t.transitions) EXPECT_EQ(tr.state[2], 2.1);
  EXPECT_EQ(t.transitions[0].state[1], 1.5);
  for (int h = 3; h < 6; ++h) EXPECT_EQ(t.transitions[h].state[1], 3.3) << h;
  EXPECT_EQ(t.transitions[3].state[0], 70.0);
  EXPECT_EQ(t.transitions[0].action, 1);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.transitions[i].t, static_cast<int>(i) + 1);
  // The hour-5 action is scored on the hour-6 MAP.
  EXPECT_NEAR(t.transitions[4].reward, compute_reward(50, std::nullopt), 1e-15);
  EXPECT_THROW(preprocess(std::vector<HourlyRecord>{}, spec), InvalidInput);
}

TEST(Preprocess, IndicatorsAreBinary) {
  PreprocessSpec spec = PreprocessSpec::for_variables({"MAP", "Lactate"}, {{"MAP", 70}, {"Lactate", 1.5}});
  std::vector<FeatureSpec> f = spec.schema.features();
  f.push_back({"Lactate_measured", "", FeatureKind::kIndicator});
  spec.schema = Schema(f);
  spec.recipes.push_back({"Lactate", FeatureRecipe::Rule::kMeasuredWithin, 2, 0});
  std::vector<HourlyRecord> recs{hour(1, {{"MAP", {70}}}), hour(2, {{"Lactate", {2}}}), hour(3, {}), hour(4, {})};
  Trajectory t = preprocess(recs, spec);
  std::vector<double> expect{0, 1, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(t.transitions[i].state[2], expect[i]) << i;
    spec.schema.check(t.transitions[i].state);
  }
}

namespace {

Dataset random_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1e3);
  std::uniform_int_distribution<int> act(0, 19), len(1, 72);
  Dataset d;
  d.schema = Schema({{"MAP", "mmHg", FeatureKind::kContinuous}, {"x", "", FeatureKind::kContinuous},
                     {"flag", "", FeatureKind::kIndicator}});
  d.split = Split::kValidation;
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory tr;
    tr.stay_id = "stay-" + std::to_string(i);
    int T = len(rng);
    for (int t = 1; t <= T; ++t) {
      tr.transitions.push_back({t, {g(rng), g(rng) * 1e-300, double(t % 2)}, act(rng), (t % 3) / 3.0});
    }
    d.trajectories.push_back(tr);
  }
  return d;
}

}  // namespace

TEST(Dataset, RoundTripIsExact) {
  Dataset d = random_dataset(10, 3);
  auto path = std::filesystem::temp_directory_path() / "soda_roundtrip.jsonl";
  save_dataset(d, path);
  Dataset e = load_dataset(path);
  EXPECT_EQ(d, e);
  std::filesystem::remove(path);
}

TEST(Dataset, EmptyAndErrors) {
  std::istringstream empty("");
  EXPECT_TRUE(read_dataset(empty).empty());

  std::istringstream bad_action(
      "{\"stay_id\":\"a\",\"t\":1,\"state\":[1],\"action\":3,\"reward\":1}\n"
      "{\"stay_id\":\"a\",\"t\":2,\"state\":[1],\"action\":20,\"reward\":1}\n");
  try {
    read_dataset(bad_action, "f.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }

  std::istringstream gap("{\"stay_id\":\"a\",\"t\":1,\"state\":[1],\"action\":3,\"reward\":1}\n"
                         "{\"stay_id\":\"a\",\"t\":3,\"state\":[1],\"action\":3,\"reward\":1}\n");
  EXPECT_ANY_THROW(read_dataset(gap));

  std::istringstream width("{\"stay_id\":\"a\",\"t\":1,\"state\":[1],\"action\":3,\"reward\":1}\n"
                           "{\"stay_id\":\"b\",\"t\":1,\"state\":[1,2],\"action\":3,\"reward\":1}\n");
  EXPECT_ANY_THROW(read_dataset(width));

  std::istringstream reward("{\"stay_id\":\"a\",\"t\":1,\"state\":[1],\"action\":3,\"reward\":1.5}\n");
  EXPECT_ANY_THROW(read_dataset(reward));
}

TEST(Dataset, DuplicateStayRejected) {
  Dataset d = random_dataset(2, 1);
  d.trajectories[1].stay_id = d.trajectories[0].stay_id;
  EXPECT_ANY_THROW(d.validate());
}

TEST(KeyValue, ParsesBlocksAndNumbers) {
  auto kv = KeyValueFile::parse("# c\na = 1.5\nb = yes\nlist = 1, 2 3\n[tab]\n1,2\n3,4\n");
  EXPECT_EQ(kv.get_double("a", 0), 1.5);
  EXPECT_TRUE(kv.get_bool("b", false));
  EXPECT_EQ(*kv.get_doubles("list"), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(kv.block("tab").size(), 2u);
  EXPECT_THROW(KeyValueFile::parse("a = x\n").get_double("a", 0), ConfigError);
  EXPECT_THROW(KeyValueFile::load("/nonexistent/soda.conf"), ConfigError);
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125}) EXPECT_EQ(std::stod(format_number(v)), v);
}
