#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

using namespace biofuse;

namespace {

// Score table over n subjects; genuine ~ N(0, 1), impostor ~ N(gap, 1).
ScoreTable random_table(ModalityKind m, int n, double gap, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ScoreTable t;
  t.modality = m;
  t.task = TaskKind::Keystroke;
  for (int a = 0; a < n; ++a) {
    const auto id = synth_subject_id(a);
    for (int session : {4, 5}) {
      t.genuine.push_back({id, session, 5.0 + nd(rng)});
      for (int c = 0; c < n; ++c) {
        if (c != a) t.impostor.push_back({synth_subject_id(c), id, session, 5.0 + gap + nd(rng)});
      }
    }
  }
  return t;
}

std::map<ModalityKind, ScoreTable> keystroke_tables(Rng& rng, const std::array<double, 6>& gaps) {
  std::map<ModalityKind, ScoreTable> out;
  const auto mods = task_modalities(TaskKind::Keystroke);
  for (std::size_t k = 0; k < 6; ++k) out.emplace(mods[k], random_table(mods[k], 12, gaps[k], rng));
  return out;
}

FusionSubset subset_of(TaskKind task, std::initializer_list<ModalityKind> mods) {
  const auto all = task_modalities(task);
  unsigned mask = 0;
  for (auto m : mods) {
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (all[k] == m) mask |= 1u << k;
    }
  }
  return {task, mask};
}

}  // namespace

TEST(Subsets, SixtyThreePerTask) {
  for (auto task : kAllTasks) {
    auto s = enumerate_subsets(task);
    ASSERT_EQ(s.size(), 63u);
    std::set<std::string> labels;
    int singletons = 0, full = 0;
    for (const auto& x : s) {
      labels.insert(x.label());
      singletons += x.size() == 1;
      full += x.size() == 6;
    }
    EXPECT_EQ(labels.size(), 63u);
    EXPECT_EQ(singletons, 6);
    EXPECT_EQ(full, 1);
  }
}

TEST(Subsets, Labels) {
  EXPECT_EQ(subset_of(TaskKind::Keystroke, {ModalityKind::TouchKeystroke, ModalityKind::LinearAccelerometer,
                                            ModalityKind::Magnetometer})
                .label(),
            "K+L+M");
  EXPECT_EQ(subset_of(TaskKind::Tap, {ModalityKind::TouchTap, ModalityKind::GravitySensor}).label(), "T+Gr");
}

TEST(Weights, Examples) {
  auto pair = subset_of(TaskKind::Keystroke, {ModalityKind::TouchKeystroke, ModalityKind::Accelerometer});
  auto w = compute_weights(pair, {{ModalityKind::TouchKeystroke, 10.0}, {ModalityKind::Accelerometer, 10.0}});
  EXPECT_DOUBLE_EQ(w[ModalityKind::TouchKeystroke], 0.5);
  EXPECT_DOUBLE_EQ(w[ModalityKind::Accelerometer], 0.5);

  w = compute_weights(pair, {{ModalityKind::TouchKeystroke, 10.0}, {ModalityKind::Accelerometer, 20.0}});
  EXPECT_NEAR(w[ModalityKind::TouchKeystroke], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[ModalityKind::Accelerometer], 1.0 / 3.0, 1e-15);

  auto single = subset_of(TaskKind::Keystroke, {ModalityKind::Gyroscope});
  w = compute_weights(single, {{ModalityKind::Gyroscope, 31.0}});
  EXPECT_EQ(w.size(), 1u);
  EXPECT_DOUBLE_EQ(w[ModalityKind::Gyroscope], 1.0);
}

TEST(Weights, SumToOne) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(0.5, 50.0);
  for (auto task : kAllTasks) {
    std::map<ModalityKind, double> eers;
    for (auto m : task_modalities(task)) eers[m] = u(rng);
    eers[task_modalities(task)[3]] = 0.0;
    for (const auto& s : enumerate_subsets(task)) {
      for (const auto& w : {compute_weights(s, eers), uniform_weights(s)}) {
        double sum = 0.0;
        for (const auto& [m, v] : w) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12) << s.label();
      }
    }
  }
}

TEST(Weights, MissingEerThrows) {
  auto pair = subset_of(TaskKind::Keystroke, {ModalityKind::TouchKeystroke, ModalityKind::Accelerometer});
  EXPECT_THROW(compute_weights(pair, {{ModalityKind::TouchKeystroke, 10.0}}), Error);
}

TEST(FuseScores, Examples) {
  EXPECT_NEAR(fuse_scores({{ModalityKind::Accelerometer, 0.5}, {ModalityKind::Gyroscope, 0.5}},
                          {{ModalityKind::Accelerometer, 0.2}, {ModalityKind::Gyroscope, 0.4}}),
              0.3, 1e-15);
  EXPECT_NEAR(fuse_scores({{ModalityKind::Accelerometer, 2.0 / 3.0}, {ModalityKind::Gyroscope, 1.0 / 3.0}},
                          {{ModalityKind::Accelerometer, 0.3}, {ModalityKind::Gyroscope, 0.6}}),
              0.4, 1e-15);
  EXPECT_EQ(fuse_scores({{ModalityKind::Magnetometer, 1.0}}, {{ModalityKind::Magnetometer, 0.77}}), 0.77);
}

TEST(FuseTables, CopiesOfOneTableAreIdentity) {
  Rng rng(2);
  auto base = random_table(ModalityKind::Accelerometer, 10, 1.0, rng);
  std::map<ModalityKind, ScoreTable> tables;
  FusionWeights w;
  const auto mods = task_modalities(TaskKind::Keystroke);
  for (int k = 1; k <= 4; ++k) {
    ScoreTable copy = base;
    copy.modality = mods[static_cast<std::size_t>(k)];
    tables.emplace(copy.modality, copy);
    w[copy.modality] = 0.25;
  }
  auto fused = fuse_tables(w, tables);
  auto single = fuse_tables({{ModalityKind::Accelerometer, 1.0}}, tables);
  ASSERT_EQ(fused.genuine.size(), base.genuine.size());
  for (std::size_t i = 0; i < fused.genuine.size(); ++i) EXPECT_NEAR(fused.genuine[i], single.genuine[i], 1e-12);
  EXPECT_NEAR(compute_eer(fused.genuine, fused.impostor).eer_percent,
              compute_eer(base.genuine_scores(), base.impostor_scores()).eer_percent, 1e-9);
  EXPECT_DOUBLE_EQ(fused.coverage_percent(), 100.0);
}

TEST(FuseTables, RescalingWithInverseWeights) {
  Rng rng(3);
  auto tables = keystroke_tables(rng, {1.0, 0.5, 0.2, 0.8, 0.3, 0.6});
  std::uniform_real_distribution<double> u(0.2, 5.0);
  auto subset = enumerate_subsets(TaskKind::Keystroke)[44];
  auto w = uniform_weights(subset);
  auto scaled_tables = tables;
  FusionWeights scaled_w;
  for (auto& [m, t] : scaled_tables) {
    const double c = u(rng);
    for (auto& g : t.genuine) g.score *= c;
    for (auto& i : t.impostor) i.score *= c;
    if (w.count(m)) scaled_w[m] = w[m] / c;
  }
  auto a = fuse_tables(w, tables);
  auto b = fuse_tables(scaled_w, scaled_tables);
  EXPECT_NEAR(compute_eer(a.genuine, a.impostor).eer_percent, compute_eer(b.genuine, b.impostor).eer_percent, 1e-9);
}

TEST(FuseTables, MissingPairsAreDropped) {
  Rng rng(4);
  auto a = random_table(ModalityKind::Accelerometer, 5, 1.0, rng);
  auto g = random_table(ModalityKind::Gyroscope, 5, 1.0, rng);
  g.genuine.erase(g.genuine.begin());
  g.impostor.erase(g.impostor.begin(), g.impostor.begin() + 3);
  std::map<ModalityKind, ScoreTable> tables{{ModalityKind::Accelerometer, a}, {ModalityKind::Gyroscope, g}};
  auto fused = fuse_tables({{ModalityKind::Accelerometer, 0.5}, {ModalityKind::Gyroscope, 0.5}}, tables);
  EXPECT_EQ(fused.genuine.size(), a.genuine.size() - 1);
  EXPECT_EQ(fused.impostor.size(), a.impostor.size() - 3);
  EXPECT_EQ(fused.dropped, 4u);
  EXPECT_NEAR(fused.coverage_percent(), 100.0 * 46.0 / 50.0, 1e-12);
}

TEST(FuseTables, ZnormRemovesOffsets) {
  Rng rng(5);
  auto a = random_table(ModalityKind::Accelerometer, 8, 1.5, rng);
  auto shifted = a;
  shifted.modality = ModalityKind::Gyroscope;
  for (auto& g : shifted.genuine) g.score = 100.0 + 3.0 * g.score;
  for (auto& i : shifted.impostor) i.score = 100.0 + 3.0 * i.score;
  std::map<ModalityKind, ScoreTable> tables{{ModalityKind::Accelerometer, a}, {ModalityKind::Gyroscope, shifted}};
  auto one = fuse_tables({{ModalityKind::Accelerometer, 1.0}}, tables, true);
  auto other = fuse_tables({{ModalityKind::Gyroscope, 1.0}}, tables, true);
  for (std::size_t i = 0; i < one.genuine.size(); ++i) EXPECT_NEAR(one.genuine[i], other.genuine[i], 1e-9);
}

TEST(Rank, CoversAllSubsetsOnce) {
  Rng rng(6);
  auto tables = keystroke_tables(rng, {2.0, 1.0, 0.5, 0.8, 1.2, 0.1});
  std::map<ModalityKind, double> eers;
  for (const auto& [m, t] : tables) eers[m] = compute_eer(t.genuine_scores(), t.impostor_scores()).eer_percent;
  for (auto mode : {FusionMode::Simple, FusionMode::Weighted}) {
    RankOptions opts;
    opts.mode = mode;
    auto ranked = rank_subsets(TaskKind::Keystroke, tables, eers, opts);
    ASSERT_EQ(ranked.size(), 63u);
    std::set<unsigned> masks;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      masks.insert(ranked[i].subset.mask);
      if (i > 0) EXPECT_LE(ranked[i - 1].eer_percent, ranked[i].eer_percent);
    }
    EXPECT_EQ(masks.size(), 63u);
    opts.threads = 3;
    auto again = rank_subsets(TaskKind::Keystroke, tables, eers, opts);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      EXPECT_EQ(ranked[i].subset.mask, again[i].subset.mask);
      EXPECT_EQ(ranked[i].eer_percent, again[i].eer_percent);
    }
  }
}

TEST(Rank, UniverseRestricts) {
  Rng rng(7);
  auto tables = keystroke_tables(rng, {2.0, 1.0, 0.5, 0.8, 1.2, 0.1});
  RankOptions opts;
  opts.universe = 0b101011;
  auto ranked = rank_subsets(TaskKind::Keystroke, tables, {}, opts);
  EXPECT_EQ(ranked.size(), 15u);
  for (const auto& r : ranked) EXPECT_EQ(r.subset.mask & ~opts.universe, 0u);
}

TEST(Rank, NoiseModalityIsNotNeeded) {
  Rng rng(8);
  // Modality index 3 (gyroscope) carries no identity information.
  auto tables = keystroke_tables(rng, {1.5, 1.2, 1.0, 0.0, 1.1, 1.3});
  std::map<ModalityKind, double> eers;
  for (const auto& [m, t] : tables) eers[m] = compute_eer(t.genuine_scores(), t.impostor_scores()).eer_percent;
  RankOptions opts;
  opts.mode = FusionMode::Weighted;
  auto ranked = rank_subsets(TaskKind::Keystroke, tables, eers, opts);
  const auto* best_single = best_of_size(ranked, 1, 1);
  ASSERT_NE(best_single, nullptr);
  EXPECT_LE(ranked.front().eer_percent, best_single->eer_percent);
  const double noise_weight = ranked.front().weights.count(ModalityKind::Gyroscope)
                                  ? ranked.front().weights.at(ModalityKind::Gyroscope)
                                  : 0.0;
  EXPECT_LT(noise_weight, 1.0 / static_cast<double>(ranked.front().subset.size()));
}

TEST(Rank, FusionCsv) {
  testutil::TempDir dir("fusion");
  Rng rng(9);
  auto tables = keystroke_tables(rng, {2.0, 1.0, 0.5, 0.8, 1.2, 0.1});
  auto ranked = rank_subsets(TaskKind::Keystroke, tables, {});
  write_fusion_csv(ranked, dir.path() / "f.csv");
  std::ifstream in(dir.path() / "f.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "task,mode,subset_acronyms,eer_percent,coverage_percent");
  int rows = 0;
  while (std::getline(in, line)) {
    if (rows == 0) EXPECT_EQ(line.rfind("keystroke,simple,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 63);
}
