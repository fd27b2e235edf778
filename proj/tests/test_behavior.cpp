#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "soda/behavior.hpp"
#include "soda/error.hpp"
#include "soda/kdtree.hpp"
#include "soda/simulator.hpp"

using namespace soda;

namespace {

double sum(const ActionDistribution& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

std::vector<double> random_points(std::size_t n, std::size_t dim, std::uint64_t seed, int grid = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> pts(n * dim);
  for (double& x : pts) x = grid ? std::round(g(rng) * grid) / grid : g(rng);
  return pts;
}

}  // namespace

TEST(KdTree, MatchesBruteForce) {
  for (int grid : {0, 2}) {  // grid > 0 produces many exact ties and duplicates
    const std::size_t dim = 5, n = 3000;
    auto pts = random_points(n, dim, 11 + grid, grid);
    KdTree tree(pts, dim, 16);
    auto queries = random_points(200, dim, 99, grid);
    for (std::size_t q = 0; q < 200; ++q) {
      std::span<const double> query(queries.data() + q * dim, dim);
      for (std::size_t k : {1u, 7u, 100u}) {
        EXPECT_EQ(tree.knn(query, k), brute_force_knn(pts, dim, query, k));
      }
      std::optional<std::size_t> ex = q * 13 % n;
      EXPECT_EQ(tree.knn(query, 50, ex), brute_force_knn(pts, dim, query, 50, ex));
    }
  }
}

TEST(KdTree, BatchEqualsSingle) {
  const std::size_t dim = 4, n = 5000;
  auto pts = random_points(n, dim, 5, 3);
  KdTree tree(pts, dim);
  std::vector<std::optional<std::size_t>> ex(n);
  for (std::size_t i = 0; i < n; i += 3) ex[i] = i;
  auto batch = tree.knn_batch(pts, 30, ex);
  ASSERT_EQ(batch.size(), n);
  for (std::size_t i = 0; i < n; i += 7) {
    EXPECT_EQ(batch[i], tree.knn(tree.point(i), 30, ex[i])) << i;
  }
}

TEST(KdTree, KLargerThanSetReturnsAll) {
  auto pts = random_points(10, 3, 1);
  KdTree tree(pts, 3);
  EXPECT_EQ(tree.knn(std::span<const double>(pts.data(), 3), 50).size(), 10u);
  EXPECT_EQ(tree.knn(std::span<const double>(pts.data(), 3), 50, 0).size(), 9u);
}

TEST(Behavior, SingleReference) {
  auto m = BehaviorModel::fit(Schema::generic(2), {{1.0, 2.0}}, {6}, 1);
  auto p = behavior_probs(m, std::vector<double>{-50.0, 3.0});
  EXPECT_EQ(p[6], 1.0);
  EXPECT_EQ(sum(p), 1.0);
}

TEST(Behavior, DuplicateStatesSplitEvenly) {
  auto m = BehaviorModel::fit(Schema::generic(2), {{0.0, 0.0}, {0.0, 0.0}, {5.0, 5.0}}, {2, 9, 4}, 2);
  auto p = behavior_probs(m, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(p[9], 0.5);
  // Self exclusion drops the lowest-index exact match only.
  auto q = behavior_probs(m, std::vector<double>{0.0, 0.0}, true);
  EXPECT_EQ(q[9], 0.5);
  EXPECT_EQ(q[4], 0.5);
}

TEST(Behavior, ProportionsOfK) {
  std::vector<StateVector> states;
  std::vector<ActionId> actions;
  for (int i = 0; i < 100; ++i) {
    states.push_back({double(i) * 1e-3});
    actions.push_back(i < 3 ? 7 : 0);
  }
  states.push_back({1e6});
  actions.push_back(12);
  auto m = BehaviorModel::fit(Schema::generic(1), states, actions, 100);
  auto p = behavior_probs(m, std::vector<double>{0.05});
  EXPECT_DOUBLE_EQ(p[7], 0.03);
  EXPECT_DOUBLE_EQ(p[0], 0.97);
  EXPECT_EQ(p[12], 0.0);
}

TEST(Behavior, KTooLarge) {
  EXPECT_THROW(BehaviorModel::fit(Schema::generic(1), {{0.0}, {1.0}}, {0, 1}, 3), ConfigError);
  EXPECT_THROW(BehaviorModel::fit(Schema::generic(1), {{0.0}}, {0}, 0), ConfigError);
  EXPECT_THROW(BehaviorModel::fit(Schema::generic(2), {{0.0, 1.0}}, {0}, 1, {0.0, 0.0}), ConfigError);
}

TEST(SafetyMask, CountRule) {
  ActionCounts c{};
  c[0] = 50, c[1] = 2, c[2] = 48;
  EXPECT_EQ(mask_from_counts(c, 0.03).allowed_actions(), (std::vector<ActionId>{0, 2}));
  EXPECT_EQ(mask_from_counts(c, 0.01).allowed_actions(), (std::vector<ActionId>{0, 1, 2}));
  ActionCounts flat{};
  for (int a = 0; a < 20; ++a) flat[a] = 1;
  // threshold round(0.1 * 20) = 2 is met by nobody: argmax with lowest id.
  EXPECT_EQ(mask_from_counts(flat, 0.1).allowed_actions(), (std::vector<ActionId>{0}));
  ActionCounts tie{};
  tie[5] = 1, tie[3] = 1;
  EXPECT_EQ(mask_from_counts(tie, 0.9).allowed_actions(), (std::vector<ActionId>{3}));
}

TEST(ApplyMask, Examples) {
  ActionDistribution p{};
  p[0] = 0.2, p[1] = 0.5, p[2] = 0.3;
  auto q = apply_mask(p, SafetyMask::of({0, 2}));
  EXPECT_NEAR(q[0], 0.4, 1e-15);
  EXPECT_EQ(q[1], 0.0);
  EXPECT_NEAR(q[2], 0.6, 1e-15);

  ActionDistribution u;
  u.fill(1.0 / 20);
  std::vector<ActionId> allowed;
  for (int a = 0; a < 14; ++a) allowed.push_back(a + 3);
  std::uint32_t bits = 0;
  for (int a : allowed) bits |= 1u << a;
  auto v = apply_mask(u, SafetyMask::from_bits(bits));
  for (int a = 0; a < 20; ++a) EXPECT_NEAR(v[a], (a >= 3 && a < 17) ? 1.0 / 14 : 0.0, 1e-15);

  EXPECT_EQ(apply_mask(p, SafetyMask::all()), p);
  // No in-mask mass: uniform over the mask.
  auto w = apply_mask(p, SafetyMask::of({7, 8}));
  EXPECT_EQ(w[7], 0.5);
  EXPECT_EQ(w[8], 0.5);
}

TEST(ApplyMask, IdempotentAndNormalised) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::uint32_t> bits(1, (1u << 20) - 1);
  for (int i = 0; i < 1000; ++i) {
    ActionDistribution p;
    for (double& x : p) x = u(rng);
    double s = sum(p);
    for (double& x : p) x /= s;
    auto m = SafetyMask::from_bits(bits(rng));
    auto once = apply_mask(p, m);
    EXPECT_NEAR(sum(once), 1.0, 1e-9);
    auto twice = apply_mask(once, m);
    for (int a = 0; a < 20; ++a) EXPECT_NEAR(twice[a], once[a], 1e-15);
  }
}

TEST(Behavior, SimulatorProperties) {
  SimConfig cfg = SimConfig::defaults();
  Dataset small = simulate_dataset(cfg, 42, 1);    // ~1k transitions
  Dataset large = simulate_dataset(cfg, 417, 2);   // ~10k transitions
  Dataset probe = simulate_dataset(cfg, 21, 3, Split::kTest);
  auto ms = BehaviorModel::fit(small, 100);
  auto ml = BehaviorModel::fit(large, 100);

  std::vector<StateVector> states;
  for (const auto& t : probe.trajectories)
    for (const auto& tr : t.transitions) states.push_back(tr.state);
  states.resize(500);
  double tv_small = 0, tv_large = 0;
  for (const auto& s : states) {
    auto truth = true_behavior_probs(cfg, s);
    auto a = behavior_probs(ms, s), b = behavior_probs(ml, s);
    EXPECT_NEAR(sum(a), 1.0, 1e-9);
    for (int k = 0; k < 20; ++k) {
      tv_small += 0.5 * std::abs(a[k] - truth[k]);
      tv_large += 0.5 * std::abs(b[k] - truth[k]);
    }
  }
  EXPECT_LT(tv_large, tv_small);

  // The state itself is among its neighbours, so its action clears eps = 0.01.
  auto table = tabulate_behavior(ml, large, false, true);
  std::size_t i = 0;
  for (const auto& t : large.trajectories)
    for (const auto& tr : t.transitions) EXPECT_TRUE(table.mask(i++, 0.01).allows(tr.action));
}

TEST(Behavior, TabulateMatchesPointQueries) {
  SimConfig cfg = SimConfig::defaults();
  Dataset d = simulate_dataset(cfg, 60, 4);
  auto m = BehaviorModel::fit(d, 25);
  for (bool ex : {false, true}) {
    auto ref = tabulate_behavior(m, d, ex, true);
    auto by_lookup = tabulate_behavior(m, d, ex, false, 3);
    std::size_t i = 0;
    for (const auto& t : d.trajectories)
      for (const auto& tr : t.transitions) {
        EXPECT_EQ(ref.counts[i], m.neighbor_counts(tr.state, ex));
        EXPECT_EQ(by_lookup.counts[i], ref.counts[i]);
        ++i;
      }
  }
}

TEST(Behavior, PersistenceRoundTrips) {
  SimConfig cfg = SimConfig::defaults();
  Dataset d = simulate_dataset(cfg, 20, 9);
  auto dir = std::filesystem::temp_directory_path() / "soda_behavior_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream w(dir / "weights.txt");
    w << "MAP 4\nLactate 0.5\n";
  }
  auto weights = load_distance_weights(dir / "weights.txt", d.schema);
  EXPECT_EQ(weights[0], 4.0);
  EXPECT_EQ(weights[2], 0.5);
  EXPECT_EQ(weights[1], 1.0);
  auto m = BehaviorModel::fit(d, 10, weights);
  m.save(dir / "model.json");
  auto m2 = BehaviorModel::load(dir / "model.json");
  auto t1 = tabulate_behavior(m, d, false, true);
  auto t2 = tabulate_behavior(m2, d, false, true);
  EXPECT_EQ(t1.counts, t2.counts);
  save_mask_cache(t1, 0.03, dir / "masks.jsonl");
  auto t3 = load_mask_cache(dir / "masks.jsonl");
  EXPECT_EQ(t3.counts, t1.counts);
  EXPECT_EQ(t3.k, 10);
  {
    std::ofstream w(dir / "bad.txt");
    w << "NoSuchFeature 2\n";
  }
  EXPECT_THROW(load_distance_weights(dir / "bad.txt", d.schema), SchemaError);
  std::filesystem::remove_all(dir);
}
