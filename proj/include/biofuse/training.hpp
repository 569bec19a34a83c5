#pragma once

// Per-modality triplet training with validation-EER model selection.
//
// Sensor models see windows from every task: triplet k of an epoch is drawn
// from task k mod (number of tasks), so each task contributes equally.
// Anchor and positive come from different sessions of one subject when the
// subject has at least two; the negative comes from a different subject.

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"
#include "biofuse/evaluation.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/optimizer.hpp"
#include "biofuse/preprocessing.hpp"
#include "biofuse/rng.hpp"
#include "biofuse/windowing.hpp"

namespace biofuse {

struct TrainConfig {
  int max_epochs = 200;
  int patience = 10;
  int triplets_per_epoch = 1024;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  TripletLossConfig loss;
  bool semi_hard = false;  // semi-hard negative selection among a few candidates
  int semi_hard_candidates = 4;
  EnrollMode enroll_mode = EnrollMode::All;  // for the validation EER
  int threads = 1;

  void validate() const {
    optimizer.validate();
    if (max_epochs < 0) throw Error(ErrorCode::InvalidConfig, "max_epochs must be non-negative");
    if (patience < 1 || (max_epochs > 0 && patience > max_epochs)) {
      throw Error(ErrorCode::InvalidConfig, "patience must lie in [1, max_epochs]");
    }
    if (triplets_per_epoch < optimizer.batch_size) {
      throw Error(ErrorCode::InvalidConfig, "triplets_per_epoch must be at least batch_size");
    }
    if (!(loss.margin > 0.0)) throw Error(ErrorCode::InvalidConfig, "triplet margin must be positive");
  }
};

struct Triplet {
  FeatureWindow anchor, positive, negative;
};

struct PoolEntry {
  int session_index = 0;
  TaskKind task = TaskKind::Keystroke;
  FeatureMatrix features;
};

struct PoolSubject {
  std::string subject_id;
  std::vector<PoolEntry> entries;
};

struct TrainPool {
  ModalityKind modality = ModalityKind::Accelerometer;
  std::vector<PoolSubject> subjects;  // only subjects with usable data
  std::vector<TaskKind> tasks;        // tasks with at least two usable subjects
  WindowOverrides overrides;
};

inline std::vector<TaskKind> tasks_for(ModalityKind modality) {
  if (is_background(modality)) return {kAllTasks.begin(), kAllTasks.end()};
  return {*task_of(modality)};
}

inline TrainPool build_train_pool(const std::vector<SessionRecord>& sessions, const std::vector<std::string>& subjects,
                                  ModalityKind modality, const WindowOverrides& overrides = {}) {
  TrainPool pool;
  pool.modality = modality;
  pool.overrides = overrides;
  std::map<TaskKind, int> subjects_per_task;
  for (const auto& id : subjects) {
    PoolSubject ps;
    ps.subject_id = id;
    std::set<TaskKind> seen;
    for (const SessionRecord* s : sessions_of(sessions, id)) {
      for (auto task : tasks_for(modality)) {
        auto fm = session_features(*s, task, modality, /*clip_to_touch=*/false);
        if (!fm || fm->length() == 0) continue;
        ps.entries.push_back({s->session_index, task, std::move(*fm)});
        seen.insert(task);
      }
    }
    for (auto t : seen) ++subjects_per_task[t];
    if (!ps.entries.empty()) pool.subjects.push_back(std::move(ps));
  }
  for (auto t : tasks_for(modality)) {
    if (subjects_per_task[t] >= 2) pool.tasks.push_back(t);
  }
  return pool;
}

namespace detail {

inline std::vector<std::size_t> entries_for_task(const PoolSubject& s, TaskKind task) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.entries.size(); ++i) {
    if (s.entries[i].task == task) idx.push_back(i);
  }
  return idx;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

inline FeatureWindow window_from(const PoolSubject& s, std::size_t entry, const TrainPool& pool, Rng& rng) {
  const PoolEntry& e = s.entries[entry];
  const WindowSpec spec = window_spec_for(pool.modality, e.task, pool.overrides);
  return extract_random_window(e.features, spec, rng, {s.subject_id, e.session_index, e.task});
}

}  // namespace detail

// Draws one triplet for `task`; see the file comment for the sampling rules.
inline Triplet sample_triplet(const TrainPool& pool, TaskKind task, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool.subjects.size(); ++i) {
    if (!detail::entries_for_task(pool.subjects[i], task).empty()) candidates.push_back(i);
  }
  if (candidates.size() < 2) {
    throw Error(ErrorCode::InsufficientSubjects, std::string(name(pool.modality)) + "/" + std::string(name(task)) +
                                                     ": triplets need at least two subjects");
  }
  std::uniform_int_distribution<std::size_t> pick_subject(0, candidates.size() - 1);
  const std::size_t a_pos = pick_subject(rng);
  const PoolSubject& a = pool.subjects[candidates[a_pos]];
  const auto a_entries = detail::entries_for_task(a, task);
  const std::size_t anchor_entry = detail::pick(a_entries, rng);
  std::vector<std::size_t> other_sessions;
  for (auto i : a_entries) {
    if (a.entries[i].session_index != a.entries[anchor_entry].session_index) other_sessions.push_back(i);
  }
  const std::size_t positive_entry = other_sessions.empty() ? anchor_entry : detail::pick(other_sessions, rng);

  std::uniform_int_distribution<std::size_t> pick_other(0, candidates.size() - 2);
  std::size_t n_pos = pick_other(rng);
  if (n_pos >= a_pos) ++n_pos;
  const PoolSubject& n = pool.subjects[candidates[n_pos]];
  const std::size_t negative_entry = detail::pick(detail::entries_for_task(n, task), rng);

  Triplet t;
  t.anchor = detail::window_from(a, anchor_entry, pool, rng);
  t.positive = detail::window_from(a, positive_entry, pool, rng);
  t.negative = detail::window_from(n, negative_entry, pool, rng);
  return t;
}

// Same as sample_triplet, but prefers a negative with
// d2(a, p) < d2(a, n) < d2(a, p) + margin under the current model.
inline Triplet sample_semi_hard_triplet(const TrainPool& pool, TaskKind task, const EncoderModel& model,
                                        const TrainConfig& cfg, Rng& rng) {
  Triplet best = sample_triplet(pool, task, rng);
  const Embedding ea = embed(model, best.anchor.data);
  const double d_ap = (ea - embed(model, best.positive.data)).squaredNorm();
  for (int k = 0; k < cfg.semi_hard_candidates; ++k) {
    Triplet cand = k == 0 ? best : sample_triplet(pool, task, rng);
    if (k > 0) {
      cand.anchor = best.anchor;
      cand.positive = best.positive;
    }
    const double d_an = (ea - embed(model, cand.negative.data)).squaredNorm();
    if (d_an > d_ap && d_an < d_ap + cfg.loss.margin) return cand;
  }
  return best;
}

// Validation features per task, prepared once.
struct ValidationSet {
  ModalityKind modality = ModalityKind::Accelerometer;
  std::vector<std::pair<TaskKind, std::vector<SubjectFeatures>>> tasks;
  WindowOverrides overrides;
};

inline ValidationSet build_validation_set(const std::vector<SessionRecord>& sessions,
                                          const std::vector<std::string>& subjects, ModalityKind modality,
                                          const WindowOverrides& overrides = {}) {
  ValidationSet v;
  v.modality = modality;
  v.overrides = overrides;
  for (auto task : tasks_for(modality)) {
    v.tasks.emplace_back(task, collect_features(sessions, subjects, task, modality, /*clip_to_touch=*/true));
  }
  return v;
}

// EER (percent) over the genuine/impostor scores pooled across the tasks of
// the set; NaN when no scores can be formed.
inline double validation_eer(const EncoderModel& model, const ValidationSet& vs, std::uint64_t eval_seed,
                             EnrollMode mode, int threads) {
  std::vector<double> genuine, impostor;
  for (const auto& [task, subjects] : vs.tasks) {
    ScoreOptions opts{eval_seed, mode, threads};
    auto table = build_score_table(subjects, task, model, window_spec_for(vs.modality, task, vs.overrides), opts);
    auto g = table.genuine_scores();
    auto i = table.impostor_scores();
    genuine.insert(genuine.end(), g.begin(), g.end());
    impostor.insert(impostor.end(), i.begin(), i.end());
  }
  if (genuine.empty() || impostor.empty()) return std::numeric_limits<double>::quiet_NaN();
  return compute_eer(genuine, impostor).eer_percent;
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_eer = 0.0;
  std::map<TaskKind, int> task_histogram;  // triplets drawn per task
};

struct TrainResult {
  EncoderModel model;
  double initial_val_eer = 0.0;
  double best_val_eer = 0.0;
  int best_epoch = 0;  // 0 = initial model
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(ModalityKind, const EpochRecord&)>;

inline EncoderConfig encoder_config_for(ModalityKind modality, EncoderConfig base) {
  base.input_dim = feature_channels(modality);
  return base;
}

// Runs one optimizer step on a batch of triplets and returns the batch loss.
inline double train_step(EncoderModel& model, AdamState& adam, const std::vector<Triplet>& triplets,
                         const TrainConfig& cfg, Rng& rng) {
  const std::size_t b = triplets.size();
  SequenceBatch batch(3 * b);
  for (std::size_t k = 0; k < b; ++k) {
    batch[k] = &triplets[k].anchor.data;
    batch[b + k] = &triplets[k].positive.data;
    batch[2 * b + k] = &triplets[k].negative.data;
  }
  const int steps = static_cast<int>(triplets.front().anchor.data.rows());
  DropoutMasks masks = sample_masks(model.config, steps, static_cast<int>(3 * b), rng);
  auto fwd = encoder_forward(model, batch, Mode::Train, &masks);
  auto loss = batch_triplet_loss(fwd.embeddings, cfg.loss);
  if (!std::isfinite(loss.loss)) return loss.loss;
  EncoderGradients grads = encoder_backward(model, fwd.cache, loss.grad_embeddings);
  adam_step(model, grads, adam, cfg.optimizer);
  update_running_stats(model, fwd.cache);
  return loss.loss;
}

inline TrainResult train_modality(ModalityKind modality, const std::vector<SessionRecord>& sessions,
                                  const DatasetSplit& split, const TrainConfig& cfg,
                                  const EncoderConfig& encoder = {}, const WindowOverrides& overrides = {},
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::uint64_t seed = derive_seed(cfg.seed, name(modality));
  Rng init_rng(derive_seed(seed, "init"));
  Rng rng(derive_seed(seed, "train"));
  const std::uint64_t eval_seed = derive_seed(seed, "validation");

  TrainResult result;
  result.model = init_encoder(encoder_config_for(modality, encoder), modality, channel_labels(modality), init_rng);
  if (cfg.max_epochs == 0) {
    result.initial_val_eer = result.best_val_eer = std::numeric_limits<double>::quiet_NaN();
    return result;
  }

  TrainPool pool = build_train_pool(sessions, split.train_subjects, modality, overrides);
  if (pool.tasks.empty()) {
    throw Error(ErrorCode::InsufficientSubjects,
                std::string(name(modality)) + ": fewer than two training subjects with data");
  }
  ValidationSet vs = build_validation_set(sessions, split.validation_subjects, modality, overrides);

  result.initial_val_eer = validation_eer(result.model, vs, eval_seed, cfg.enroll_mode, cfg.threads);
  result.best_val_eer = result.initial_val_eer;
  EncoderModel model = result.model;
  AdamState adam;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    int drawn = 0;
    while (drawn < cfg.triplets_per_epoch) {
      const int b = std::min(cfg.optimizer.batch_size, cfg.triplets_per_epoch - drawn);
      std::vector<Triplet> triplets;
      triplets.reserve(static_cast<std::size_t>(b));
      for (int k = 0; k < b; ++k) {
        const TaskKind task = pool.tasks[static_cast<std::size_t>(drawn + k) % pool.tasks.size()];
        triplets.push_back(cfg.semi_hard ? sample_semi_hard_triplet(pool, task, model, cfg, rng)
                                         : sample_triplet(pool, task, rng));
        ++rec.task_histogram[task];
      }
      double batch_loss = 0.0;
      try {
        batch_loss = train_step(model, adam, triplets, cfg, rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        batch_loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::TrainingDiverged,
                    std::string(name(modality)) + ": loss became non-finite at epoch " + std::to_string(epoch) +
                        " (learning rate " + std::to_string(cfg.optimizer.learning_rate) +
                        "); lower optimizer.learning_rate");
      }
      loss_sum += batch_loss * b;
      drawn += b;
    }
    rec.mean_loss = loss_sum / drawn;
    rec.val_eer = validation_eer(model, vs, eval_seed, cfg.enroll_mode, cfg.threads);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(modality, rec);

    if (std::isnan(rec.val_eer)) {
      // No validation signal: keep the latest model.
      result.model = model;
      result.best_epoch = epoch;
      continue;
    }
    if (std::isnan(result.best_val_eer) || rec.val_eer < result.best_val_eer) {
      result.best_val_eer = rec.val_eer;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

// CSV: epoch,mean_loss,val_eer. Row 0 is the initial model (no loss).
inline void write_history_csv(const TrainResult& result, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "epoch,mean_loss,val_eer\n";
  out << "0,," << detail::format_double(result.initial_val_eer) << '\n';
  for (const auto& r : result.history) {
    out << r.epoch << ',' << detail::format_double(r.mean_loss) << ',' << detail::format_double(r.val_eer) << '\n';
  }
}

struct TrainAllResult {
  std::map<ModalityKind, TrainResult> models;
  std::map<ModalityKind, std::string> failures;
};

inline TrainAllResult train_all(const std::vector<SessionRecord>& sessions, const DatasetSplit& split,
                                const TrainConfig& cfg, const EncoderConfig& encoder = {},
                                const WindowOverrides& overrides = {},
                                const std::vector<ModalityKind>& modalities = {kAllModalities.begin(),
                                                                               kAllModalities.end()},
                                const EpochCallback& on_epoch = {}) {
  TrainAllResult out;
  for (auto m : modalities) {
    try {
      out.models.emplace(m, train_modality(m, sessions, split, cfg, encoder, overrides, on_epoch));
    } catch (const Error& e) {
      out.failures.emplace(m, e.what());
    }
  }
  return out;
}

}  // namespace biofuse
