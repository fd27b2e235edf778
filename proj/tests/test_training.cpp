#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "soda/error.hpp"
#include "soda/objective.hpp"
#include "soda/random.hpp"
#include "soda/simulator.hpp"
#include "soda/trainer.hpp"

using namespace soda;
namespace fs = std::filesystem;

namespace {

ActionDistribution dist(std::initializer_list<std::pair<int, double>> entries) {
  ActionDistribution p{};
  for (auto [a, v] : entries) p[a] = v;
  return p;
}

// Term-by-term sum of p log(p/q) with the 1e-8 clamp inside the logs.
double kl_by_hand(const ActionDistribution& p, const ActionDistribution& q) {
  double s = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (p[a] > 0) s += p[a] * (std::log(std::max(p[a], 1e-8)) - std::log(std::max(q[a], 1e-8)));
  }
  return s;
}

Batch one_state_batch(ActionId action, SafetyMask mask, ActionDistribution behavior, int dim = 3) {
  return make_batch({StateVector(dim, 0.5)}, {action}, {mask}, {behavior});
}

struct SimFixture {
  SimConfig cfg = SimConfig::defaults();
  Dataset data;
  BehaviorTable table;

  explicit SimFixture(std::size_t n, std::uint64_t seed = 1) {
    data = simulate_dataset(cfg, n, seed);
    table = tabulate_behavior(BehaviorModel::fit(data, 50), data, false, true);
  }
};

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = 16;
  c.K = 3;
  c.epochs = 4;
  c.batch_size = 20;
  c.learning_rate = 3e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Divergence, SymKlOracles) {
  auto p = dist({{0, 0.75}, {1, 0.25}}), q = dist({{0, 0.25}, {1, 0.75}});
  const double oracle = 0.5 * (kl_by_hand(p, q) + kl_by_hand(q, p));
  EXPECT_NEAR(oracle, 0.5493, 5e-5);
  EXPECT_NEAR(sym_kl(p, q), oracle, 1e-15);
  EXPECT_NEAR(sym_kl(p, q, SafetyMask::of({0, 1})), oracle, 1e-15);
  EXPECT_EQ(sym_kl(p, q), sym_kl(q, p));
  EXPECT_EQ(sym_kl(p, p), 0.0);

  auto a = dist({{0, 1.0}}), b = dist({{1, 1.0}});
  EXPECT_NEAR(sym_kl(a, b, SafetyMask::of({0, 1})), std::log(1e8), 1e-9);
  EXPECT_NEAR(std::log(1e8), 18.42, 5e-3);
}

TEST(Quality, CrossEntropyExamples) {
  auto zero = init_params(0, 3, 8).zeros_like();
  std::vector<PolicyParams> one{zero};
  ActionDistribution beh{};
  beh.fill(0.05);
  // A zero network restricted to two actions puts 0.5 on each.
  EXPECT_NEAR(quality_loss_ce(one, one_state_batch(4, SafetyMask::of({4, 9}), beh)), std::log(2.0), 1e-12);
  EXPECT_NEAR(quality_loss_ce(one, one_state_batch(4, SafetyMask::all(), beh)), std::log(20.0), 1e-12);
  EXPECT_NEAR(quality_loss_ce(one, one_state_batch(4, SafetyMask::of({4}), beh)), 0.0, 1e-15);
  std::size_t outside = 0;
  EXPECT_NEAR(quality_loss_ce(one, one_state_batch(4, SafetyMask::of({5}), beh), &outside), std::log(1e8), 1e-9);
  EXPECT_EQ(outside, 1u);
}

TEST(Quality, SymKlZeroAtBehaviour) {
  auto zero = init_params(0, 3, 8).zeros_like();
  ActionDistribution beh{};
  beh.fill(0.05);
  auto batch = one_state_batch(2, SafetyMask::of({1, 2, 3}), beh);
  EXPECT_NEAR(quality_loss_symkl(std::vector<PolicyParams>{zero}, batch), 0.0, 1e-15);
}

TEST(Diversity, Aggregation) {
  Batch batch = soda::testing::toy_batch(7, 6, 3);
  std::vector<PolicyParams> ps{init_params(1, 6, 8), init_params(2, 6, 8), init_params(3, 6, 8)};
  const double ab = pairwise_symkl(ps[0], ps[1], batch), ac = pairwise_symkl(ps[0], ps[2], batch),
               bc = pairwise_symkl(ps[1], ps[2], batch);
  EXPECT_EQ(ab, pairwise_symkl(ps[1], ps[0], batch));
  EXPECT_EQ(pairwise_symkl(ps[0], ps[0], batch), 0.0);
  EXPECT_NEAR(diversity_loss(ps, batch), (ab + ac + bc) / 3, 1e-14);
  EXPECT_NEAR(diversity_loss(std::span(ps).first(2), batch), ab, 1e-15);
  EXPECT_EQ(diversity_loss(std::span(ps).first(1), batch), 0.0);
  std::vector<PolicyParams> same{ps[0], ps[0], ps[0]};
  EXPECT_EQ(diversity_loss(same, batch), 0.0);
  EXPECT_GT(ab, 0.0);
}

TEST(Objective, Composition) {
  Batch batch = soda::testing::toy_batch(6, 6, 4);
  std::vector<PolicyParams> ps{init_params(1, 6, 8), init_params(2, 6, 8)};
  const double q = quality_loss_symkl(ps, batch), d = diversity_loss(ps, batch);
  const double norm = ps[0].squared_norm() + ps[1].squared_norm();
  auto full = total_objective(ps, batch, {QualityKind::kSymKL, 0.4, true, 1e-3});
  EXPECT_NEAR(full.total, q - 0.4 * d + 1e-3 * norm, 1e-12);
  EXPECT_NEAR(full.l2, 1e-3 * norm, 1e-15);
  auto no_lambda = total_objective(ps, batch, {QualityKind::kSymKL, 0.0, true, 1e-3});
  EXPECT_NEAR(no_lambda.total, q + 1e-3 * norm, 1e-12);
  auto none = total_objective(ps, batch, {QualityKind::kNone, 1.0, true, 1e-3});
  EXPECT_NEAR(none.total, -d + 1e-3 * norm, 1e-12);
  auto off = total_objective(ps, batch, {QualityKind::kCrossEntropy, 1.0, false, 0.0});
  EXPECT_NEAR(off.total, quality_loss_ce(ps, batch), 1e-12);
  EXPECT_NEAR(off.diversity, d, 1e-12);
  std::vector<PolicyParams> zeros{ps[0].zeros_like()};
  EXPECT_EQ(total_objective(zeros, batch, {QualityKind::kNone, 0.0, true, 1.0}).l2, 0.0);
}

TEST(Gradients, AllVariantsMatchFiniteDifferences) {
  Batch batch = soda::testing::toy_batch(5, 6, 17);
  std::vector<PolicyParams> ps{init_params(11, 6, 8), init_params(12, 6, 8)};
  const std::vector<ObjectiveSettings> variants{
      {QualityKind::kCrossEntropy, 0.0, false, 0.0},
      {QualityKind::kSymKL, 0.0, false, 0.0},
      {QualityKind::kNone, 1.0, true, 0.0},
      {QualityKind::kSymKL, 0.4, true, 1e-2},
      {QualityKind::kCrossEntropy, 0.4, true, 1e-2},
  };
  for (const auto& s : variants) {
    auto r = soda::testing::check_gradients(ps, batch, s);
    EXPECT_LE(r.max_rel_error, 1e-4) << to_string(s.quality) << " lambda " << s.lambda;
  }
}

TEST(GradStep, StationaryPointDoesNotMove) {
  auto zero = init_params(0, 3, 8).zeros_like();
  ActionDistribution beh{};
  beh.fill(0.05);
  Batch batch = make_batch({StateVector{1, 2, 3}, StateVector{-1, 0, 2}}, {1, 2},
                           {SafetyMask::of({1, 2}), SafetyMask::of({2, 3, 4})}, {beh, beh});
  std::vector<PolicyParams> ps{zero};
  AdamState adam;
  adam.reset(ps);
  auto before = ps[0];
  grad_step(ps, batch, {QualityKind::kSymKL, 0.0, true, 0.0}, 1e-3, adam);
  auto a = soda::testing::parameter_pointers(ps[0]);
  auto b = soda::testing::parameter_pointers(before);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(*a[i] - *b[i]), 1e-6);
}

TEST(GradStep, NonFiniteGradientAborts) {
  auto p = init_params(0, 3, 8);
  p.w1(0, 0) = NAN;
  std::vector<PolicyParams> ps{p};
  AdamState adam;
  adam.reset(ps);
  ActionDistribution beh{};
  beh.fill(0.05);
  EXPECT_THROW(grad_step(ps, one_state_batch(0, SafetyMask::all(), beh), {}, 1e-3, adam), TrainingError);
}

TEST(TrainConfig, ValidationAndRoundTrip) {
  TrainConfig c;
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda = 0.01;
  c.quality = QualityKind::kCrossEntropy;
  c.use_safety = false;
  c.seed = 77;
  auto d = TrainConfig::from_kv(c.to_kv());
  EXPECT_EQ(d.to_kv().values(), c.to_kv().values());
  EXPECT_THROW(TrainConfig::from_kv(KeyValueFile::parse("quality = huber\n")), ConfigError);
  TrainConfig defaults;
  EXPECT_EQ(defaults.lambda, 0.4);
  EXPECT_EQ(defaults.epsilon, 0.03);
  EXPECT_EQ(defaults.learning_rate, 1e-3);
  EXPECT_EQ(defaults.batch_size, 100);
  EXPECT_EQ(defaults.l2_coeff, 1e-6);
  EXPECT_EQ(defaults.K, 4);
}

TEST(Train, DeterministicAndResumable) {
  SimFixture f(80);
  TrainConfig c = small_config();
  auto a = train(f.data, f.table, c);
  auto b = train(f.data, f.table, c);
  ASSERT_EQ(a.collection.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(a.collection.policies[i] == b.collection.policies[i]);

  const fs::path dir = fs::temp_directory_path() / "soda_resume_test";
  fs::remove_all(dir);
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  opt.stop_after = 2;
  auto partial = train(f.data, f.table, c, opt);
  EXPECT_EQ(partial.epochs_done, 2);
  opt.stop_after.reset();
  opt.resume = true;
  auto resumed = train(f.data, f.table, c, opt);
  EXPECT_EQ(resumed.epochs_done, 4);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(a.collection.policies[i] == resumed.collection.policies[i]);
  ASSERT_EQ(resumed.history.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(resumed.history[e].loss.total, a.history[e].loss.total);

  auto loaded = load_collection(dir / "checkpoint.json");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(loaded.policies[i] == a.collection.policies[i]);
  std::ifstream csv(dir / "history.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("epoch,quality,diversity,l2,total", 0), 0u);

  TrainConfig other = c;
  other.lambda = 0.1;
  EXPECT_THROW(train(f.data, f.table, other, opt), ConfigError);
  fs::remove_all(dir);
}

TEST(Train, SafetyMaskHoldsEveryEpoch) {
  SimFixture f(60, 2);
  TrainConfig c = small_config();
  auto s = train(f.data, f.table, c);
  for (const auto& h : s.history) EXPECT_LE(h.loss.masked_mass, 1e-12);
  EXPECT_TRUE(s.collection.use_safety);
}

TEST(Train, CrossEntropyDescends) {
  SimFixture f(100, 3);
  TrainConfig c = small_config();
  c.lambda = 0;
  c.quality = QualityKind::kCrossEntropy;
  Batch full = make_full_batch(f.data, f.table, c);
  std::vector<PolicyParams> init;
  for (int i = 0; i < c.K; ++i) init.push_back(init_params(derive_seed(c.seed, i), 10, c.hidden));
  const double before = quality_loss_ce(init, full);
  auto s = train(f.data, f.table, c);
  EXPECT_LE(quality_loss_ce(s.collection.policies, full), before);
}

TEST(Train, DiversityTermRaisesDiversity) {
  SimFixture f(100, 4);
  TrainConfig none = small_config();
  none.quality = QualityKind::kNone;
  none.lambda = 1.0;
  TrainConfig flat = none;
  flat.lambda = 0.0;
  flat.quality = QualityKind::kSymKL;
  Batch full = make_full_batch(f.data, f.table, none);
  auto a = train(f.data, f.table, none);
  auto b = train(f.data, f.table, flat);
  EXPECT_GT(diversity_loss(a.collection.policies, full), diversity_loss(b.collection.policies, full));
}

TEST(Train, DefaultObjectiveDecreasesOverTenEpochs) {
  SimFixture f(200, 6);
  TrainConfig c;
  c.epochs = 10;
  c.seed = 1;
  auto s = train(f.data, f.table, c);
  ASSERT_EQ(s.history.size(), 10u);
  EXPECT_LT(s.history.back().loss.total, s.history.front().loss.total);
}
