#pragma once

// Fixed-length windows over feature matrices. Windows shorter than M are padded
// with trailing zero rows; spectrum channels are recomputed on the padded slice.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/preprocessing.hpp"
#include "biofuse/rng.hpp"

namespace biofuse {

struct WindowSpec {
  int length = 0;   // M
  int overlap = 0;  // enrollment overlap between consecutive windows

  int stride() const { return length - overlap; }
};

// Per-modality replacement for M.
using WindowOverrides = std::map<ModalityKind, int>;

struct FeatureWindow {
  ModalityKind modality = ModalityKind::Accelerometer;
  Eigen::MatrixXd data;  // [M x C]
  std::string subject_id;
  int session_index = 0;
  TaskKind task = TaskKind::Keystroke;
  Eigen::Index start = 0;       // first source row
  Eigen::Index data_rows = 0;   // rows copied from the source, the rest are padding
};

// Where a feature matrix came from; copied into every window cut from it.
struct WindowOrigin {
  std::string subject_id;
  int session_index = 0;
  TaskKind task = TaskKind::Keystroke;
};

inline WindowSpec window_spec_for(ModalityKind modality, TaskKind task,
                                  const WindowOverrides& overrides = {}) {
  WindowSpec spec;
  if (is_background(modality)) {
    spec = {150, 50};
  } else {
    switch (task) {
      case TaskKind::ScrollUp:
      case TaskKind::ScrollDown:
      case TaskKind::Draw8:
        spec = {100, 0};
        break;
      case TaskKind::Tap:
        spec = {15, 0};
        break;
      case TaskKind::Keystroke:
        spec = {60, 0};
        break;
    }
  }
  if (auto it = overrides.find(modality); it != overrides.end()) {
    if (it->second <= spec.overlap) {
      throw Error(ErrorCode::InvalidConfig, "window length for " + std::string(name(modality)) +
                                                " must exceed the overlap " + std::to_string(spec.overlap));
    }
    spec.length = it->second;
  }
  return spec;
}

// Rows [start, start + M) of the matrix, zero-padded past the end.
inline FeatureWindow cut_window(const FeatureMatrix& fm, const WindowSpec& spec, Eigen::Index start,
                                const WindowOrigin& origin) {
  if (fm.length() == 0) throw Error(ErrorCode::EmptySequence, "empty feature matrix");
  FeatureWindow w;
  w.modality = fm.modality;
  w.subject_id = origin.subject_id;
  w.session_index = origin.session_index;
  w.task = origin.task;
  w.start = start;
  w.data = Eigen::MatrixXd::Zero(spec.length, fm.data.cols());
  w.data_rows = std::max<Eigen::Index>(0, std::min<Eigen::Index>(spec.length, fm.length() - start));
  if (w.data_rows > 0) w.data.topRows(w.data_rows) = fm.data.middleRows(start, w.data_rows);
  refresh_spectrum(w.data, fm.modality);
  return w;
}

inline FeatureWindow extract_random_window(const FeatureMatrix& fm, const WindowSpec& spec, Rng& rng,
                                           const WindowOrigin& origin = {}) {
  if (fm.length() == 0) throw Error(ErrorCode::EmptySequence, "empty feature matrix");
  Eigen::Index start = 0;
  if (fm.length() >= spec.length) {
    std::uniform_int_distribution<Eigen::Index> dist(0, fm.length() - spec.length);
    start = dist(rng);
  }
  return cut_window(fm, spec, start, origin);
}

// Number of enrollment windows for a sequence of `rows` rows: sensors slide with
// stride M - overlap and keep a trailing partial window; touch streams yield one.
inline Eigen::Index enrollment_window_count(Eigen::Index rows, const WindowSpec& spec, bool sliding) {
  if (rows <= 0) return 0;
  if (!sliding) return 1;
  const Eigen::Index covered = rows - spec.overlap;
  const Eigen::Index n = (covered + spec.stride() - 1) / spec.stride();
  return std::max<Eigen::Index>(1, n);
}

inline std::vector<FeatureWindow> extract_enrollment_windows(const FeatureMatrix& fm, const WindowSpec& spec,
                                                             const WindowOrigin& origin = {}) {
  if (fm.length() == 0) throw Error(ErrorCode::EmptySequence, "empty feature matrix");
  const bool sliding = is_background(fm.modality);
  const Eigen::Index n = enrollment_window_count(fm.length(), spec, sliding);
  std::vector<FeatureWindow> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) out.push_back(cut_window(fm, spec, k * spec.stride(), origin));
  return out;
}

struct WindowStats {
  TaskKind task = TaskKind::Keystroke;
  double mean_windows = 0.0;
  double std_windows = 0.0;
};

// Mean/std (population) of per-subject enrollment window counts over sessions
// 1-3, computed per modality of the task and averaged over its modalities.
// Sensor streams are clipped to the touch time span, as at evaluation time.
inline WindowStats window_stats(const std::vector<SessionRecord>& sessions, TaskKind task,
                                const WindowOverrides& overrides = {}) {
  WindowStats stats;
  stats.task = task;
  const auto subjects = subject_ids(sessions);
  int used_modalities = 0;
  for (auto modality : task_modalities(task)) {
    const WindowSpec spec = window_spec_for(modality, task, overrides);
    std::vector<double> counts;
    for (const auto& id : subjects) {
      double count = 0.0;
      bool any = false;
      for (const SessionRecord* s : sessions_of(sessions, id)) {
        if (s->session_index > 3) continue;
        auto fm = session_features(*s, task, modality, /*clip_to_touch=*/true);
        if (!fm) continue;
        any = true;
        count += static_cast<double>(enrollment_window_count(fm->length(), spec, is_background(modality)));
      }
      if (any) counts.push_back(count);
    }
    if (counts.empty()) continue;
    double mean = 0.0;
    for (double c : counts) mean += c;
    mean /= static_cast<double>(counts.size());
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    var /= static_cast<double>(counts.size());
    stats.mean_windows += mean;
    stats.std_windows += std::sqrt(var);
    ++used_modalities;
  }
  if (used_modalities > 0) {
    stats.mean_windows /= used_modalities;
    stats.std_windows /= used_modalities;
  }
  return stats;
}

}  // namespace biofuse
