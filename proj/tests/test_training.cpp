#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "test_util.hpp"

using namespace biofuse;

namespace {

FeatureMatrix noise_matrix(ModalityKind m, Eigen::Index rows, Rng& rng) {
  FeatureMatrix fm;
  fm.modality = m;
  fm.channels = channel_labels(m);
  fm.data.resize(rows, feature_channels(m));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = nd(rng);
  return fm;
}

TrainPool noise_pool(int subjects, int sessions, ModalityKind m, TaskKind task, Eigen::Index rows, Rng& rng) {
  TrainPool pool;
  pool.modality = m;
  pool.tasks = {task};
  for (int s = 0; s < subjects; ++s) {
    PoolSubject ps;
    ps.subject_id = synth_subject_id(s);
    for (int k = 1; k <= sessions; ++k) ps.entries.push_back({k, task, noise_matrix(m, rows, rng)});
    pool.subjects.push_back(std::move(ps));
  }
  return pool;
}

int subject_index(const std::string& id) { return std::stoi(id.substr(1)) - 1; }

EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.hidden_units = 4;
  return e;
}

TrainConfig quick_config(int epochs, int triplets, int batch) {
  TrainConfig cfg;
  cfg.max_epochs = epochs;
  cfg.patience = std::max(1, epochs);
  cfg.triplets_per_epoch = triplets;
  cfg.optimizer.batch_size = batch;
  cfg.optimizer.learning_rate = 0.005;
  cfg.seed = 5;
  return cfg;
}

struct SmallData {
  std::vector<SessionRecord> sessions;
  DatasetSplit split;
};

const SmallData& small_data() {
  static const SmallData data = [] {
    SmallData d;
    auto cfg = testutil::small_synth(8, 3);
    d.sessions = generate_sessions(cfg).sessions;
    d.split = split_dataset(subject_ids(d.sessions), 1, 2, 2);
    return d;
  }();
  return data;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.patience = 300;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.triplets_per_epoch = 100;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(SampleTriplet, SingleSessionFallback) {
  Rng rng(1);
  auto pool = noise_pool(2, 1, ModalityKind::TouchTap, TaskKind::Tap, 20, rng);
  for (int k = 0; k < 50; ++k) {
    auto t = sample_triplet(pool, TaskKind::Tap, rng);
    EXPECT_EQ(t.anchor.subject_id, t.positive.subject_id);
    EXPECT_EQ(t.anchor.session_index, t.positive.session_index);
    EXPECT_NE(t.anchor.subject_id, t.negative.subject_id);
  }
}

TEST(SampleTriplet, NeedsTwoSubjects) {
  Rng rng(2);
  auto pool = noise_pool(1, 5, ModalityKind::TouchTap, TaskKind::Tap, 20, rng);
  try {
    sample_triplet(pool, TaskKind::Tap, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientSubjects);
  }
}

TEST(SampleTriplet, NegativeIsUniformOverOthers) {
  Rng rng(3);
  auto pool = noise_pool(100, 1, ModalityKind::TouchTap, TaskKind::Tap, 16, rng);
  // Offset of the negative from the anchor, modulo 100: uniform over 1..99
  // exactly when the negative is uniform among the other subjects.
  std::vector<int> counts(100, 0);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) {
    auto t = sample_triplet(pool, TaskKind::Tap, rng);
    const int off = (subject_index(t.negative.subject_id) - subject_index(t.anchor.subject_id) + 100) % 100;
    ASSERT_NE(off, 0);
    ++counts[static_cast<std::size_t>(off)];
  }
  const double expected = draws / 99.0;
  double chi2 = 0.0;
  for (int off = 1; off < 100; ++off) chi2 += (counts[off] - expected) * (counts[off] - expected) / expected;
  EXPECT_LT(chi2, 133.4757);  // chi-square 0.99 quantile, 98 degrees of freedom
}

TEST(SampleTriplet, SubjectWithoutTaskDataNeverSampled) {
  Rng rng(4);
  auto pool = noise_pool(4, 2, ModalityKind::Accelerometer, TaskKind::Tap, 200, rng);
  pool.subjects[2].entries = {{1, TaskKind::Draw8, noise_matrix(ModalityKind::Accelerometer, 200, rng)}};
  const std::string excluded = pool.subjects[2].subject_id;
  for (int k = 0; k < 500; ++k) {
    auto t = sample_triplet(pool, TaskKind::Tap, rng);
    EXPECT_NE(t.anchor.subject_id, excluded);
    EXPECT_NE(t.negative.subject_id, excluded);
  }
}

TEST(BuildTrainPool, EmptyStreamSubjectExcluded) {
  auto sessions = generate_sessions(testutil::small_synth(3, 9)).sessions;
  for (auto& s : sessions) {
    if (s.subject_id == "u002") s.streams[TaskKind::Tap].erase(ModalityKind::TouchTap);
  }
  auto pool = build_train_pool(sessions, subject_ids(sessions), ModalityKind::TouchTap);
  ASSERT_EQ(pool.subjects.size(), 2u);
  for (const auto& ps : pool.subjects) EXPECT_NE(ps.subject_id, "u002");
  EXPECT_EQ(pool.tasks, std::vector<TaskKind>{TaskKind::Tap});
}

TEST(SampleTriplet, InvariantsHold) {
  const auto& d = small_data();
  auto pool = build_train_pool(d.sessions, d.split.train_subjects, ModalityKind::Gyroscope);
  ASSERT_EQ(pool.tasks.size(), 5u);
  Rng rng(6);
  for (int k = 0; k < 2000; ++k) {
    const TaskKind task = pool.tasks[static_cast<std::size_t>(k) % 5];
    auto t = sample_triplet(pool, task, rng);
    ASSERT_EQ(t.anchor.subject_id, t.positive.subject_id);
    ASSERT_NE(t.anchor.subject_id, t.negative.subject_id);
    ASSERT_NE(t.anchor.session_index, t.positive.session_index);
    for (const auto* w : {&t.anchor, &t.positive, &t.negative}) {
      ASSERT_EQ(w->modality, ModalityKind::Gyroscope);
      ASSERT_EQ(w->task, task);
      ASSERT_EQ(w->data.rows(), 150);
    }
  }
}

TEST(TrainModality, ZeroEpochsReturnsInitialModel) {
  const auto& d = small_data();
  auto cfg = quick_config(0, 16, 16);
  cfg.patience = 1;
  auto r = train_modality(ModalityKind::TouchTap, d.sessions, d.split, cfg, tiny_encoder());
  EXPECT_TRUE(r.history.empty());
  Rng init(derive_seed(derive_seed(cfg.seed, name(ModalityKind::TouchTap)), "init"));
  auto fresh = init_encoder(encoder_config_for(ModalityKind::TouchTap, tiny_encoder()), ModalityKind::TouchTap,
                            channel_labels(ModalityKind::TouchTap), init);
  for (std::size_t l = 0; l < fresh.layers.size(); ++l) {
    EXPECT_TRUE(r.model.layers[l].W == fresh.layers[l].W);
    EXPECT_TRUE(r.model.layers[l].U == fresh.layers[l].U);
  }
}

TEST(TrainModality, DeterministicUnderSeed) {
  const auto& d = small_data();
  auto cfg = quick_config(2, 32, 16);
  auto a = train_modality(ModalityKind::Magnetometer, d.sessions, d.split, cfg, tiny_encoder());
  auto b = train_modality(ModalityKind::Magnetometer, d.sessions, d.split, cfg, tiny_encoder());
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].mean_loss, b.history[i].mean_loss);
    EXPECT_EQ(a.history[i].val_eer, b.history[i].val_eer);
  }
  EXPECT_TRUE(a.model.layers[1].W == b.model.layers[1].W);
  cfg.threads = 3;
  auto c = train_modality(ModalityKind::Magnetometer, d.sessions, d.split, cfg, tiny_encoder());
  EXPECT_EQ(a.history.back().val_eer, c.history.back().val_eer);
}

TEST(TrainModality, SensorTaskHistogramIsEven) {
  const auto& d = small_data();
  auto cfg = quick_config(2, 64, 16);
  std::vector<EpochRecord> seen;
  train_modality(ModalityKind::LinearAccelerometer, d.sessions, d.split, cfg, tiny_encoder(), {},
                 [&](ModalityKind, const EpochRecord& r) { seen.push_back(r); });
  ASSERT_FALSE(seen.empty());
  for (const auto& r : seen) {
    ASSERT_EQ(r.task_histogram.size(), 5u);
    int lo = 1 << 30, hi = 0, total = 0;
    for (const auto& [task, n] : r.task_histogram) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
      total += n;
    }
    EXPECT_LE(hi - lo, 1);
    EXPECT_EQ(total, 64);
  }
}

TEST(TrainModality, ReturnedEerNotWorseThanInitial) {
  const auto& d = small_data();
  auto cfg = quick_config(3, 64, 32);
  auto r = train_modality(ModalityKind::TouchKeystroke, d.sessions, d.split, cfg, tiny_encoder());
  EXPECT_LE(r.best_val_eer, r.initial_val_eer);
  if (r.best_epoch > 0) {
    EXPECT_EQ(r.best_val_eer, r.history[static_cast<std::size_t>(r.best_epoch - 1)].val_eer);
  }
}

TEST(TrainModality, DivergenceAborts) {
  const auto& d = small_data();
  auto cfg = quick_config(1, 16, 16);
  cfg.loss.margin = std::numeric_limits<double>::infinity();
  try {
    train_modality(ModalityKind::TouchTap, d.sessions, d.split, cfg, tiny_encoder());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainingDiverged);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(TrainStep, LossDecreasesOnFrozenBatch) {
  const auto& d = small_data();
  auto pool = build_train_pool(d.sessions, d.split.train_subjects, ModalityKind::Accelerometer);
  Rng rng(8);
  std::vector<Triplet> batch;
  for (int k = 0; k < 32; ++k) batch.push_back(sample_triplet(pool, pool.tasks[k % 5], rng));
  EncoderConfig enc = encoder_config_for(ModalityKind::Accelerometer, {});
  enc.hidden_units = 16;
  auto model = init_encoder(enc, ModalityKind::Accelerometer, {}, rng);
  auto cfg = quick_config(1, 32, 32);

  // Loss measured without dropout so the comparison is not masked by mask noise.
  auto clean_loss = [&](const EncoderModel& m) {
    SequenceBatch sb(96);
    for (std::size_t k = 0; k < 32; ++k) {
      sb[k] = &batch[k].anchor.data;
      sb[32 + k] = &batch[k].positive.data;
      sb[64 + k] = &batch[k].negative.data;
    }
    return batch_triplet_loss(encoder_forward(m, sb, Mode::Train).embeddings, cfg.loss).loss;
  };
  const double before = clean_loss(model);
  AdamState adam;
  for (int step = 0; step < 10; ++step) train_step(model, adam, batch, cfg, rng);
  EXPECT_LT(clean_loss(model), before);
  EXPECT_EQ(adam.step, 10);
}

TEST(TrainAll, MissingGyroscopeGivesOneFailure) {
  auto sessions = small_data().sessions;
  for (auto& s : sessions) {
    for (auto& [task, streams] : s.streams) streams.erase(ModalityKind::Gyroscope);
  }
  auto cfg = quick_config(1, 16, 16);
  auto r = train_all(sessions, small_data().split, cfg, tiny_encoder());
  EXPECT_EQ(r.models.size(), 9u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures.begin()->first, ModalityKind::Gyroscope);
}

TEST(History, CsvLayout) {
  testutil::TempDir dir("history");
  TrainResult r;
  r.initial_val_eer = 40.0;
  r.history.push_back({1, 0.5, 30.0, {}});
  write_history_csv(r, dir.path() / "h.csv");
  std::ifstream in(dir.path() / "h.csv");
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "epoch,mean_loss,val_eer");
  EXPECT_EQ(l2, "0,,40");
  EXPECT_EQ(l3, "1,0.5,30");
}
