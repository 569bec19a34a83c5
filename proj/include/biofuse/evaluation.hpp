#pragma once

// Verification protocol and error metrics.
//
// Sessions 1-3 enroll a subject (every enrollment window is embedded), sessions
// 4 and 5 each contribute one probe window drawn with a fixed evaluation seed.
// A score is the mean Euclidean distance between the probe embedding and the
// template embeddings; lower means more likely genuine. Each probe is scored
// against its own template (genuine) and every other template (impostor).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/parallel.hpp"
#include "biofuse/preprocessing.hpp"
#include "biofuse/rng.hpp"
#include "biofuse/windowing.hpp"

namespace biofuse {

inline constexpr int kEnrollmentSessions = 3;
inline constexpr std::array<int, 2> kVerificationSessions = {4, 5};

enum class EnrollMode { All, One };

inline EnrollMode parse_enroll_mode(std::string_view s) {
  if (s == "all") return EnrollMode::All;
  if (s == "one") return EnrollMode::One;
  throw Error(ErrorCode::InvalidArgument, "enroll windows must be 'all' or 'one'");
}

inline std::string_view name(EnrollMode m) { return m == EnrollMode::All ? "all" : "one"; }

// Feature matrices of one subject for one (task, modality), keyed by session.
struct SubjectFeatures {
  std::string subject_id;
  std::map<int, FeatureMatrix> sessions;
};

// Sensor streams are clipped to the touch time span when `clip_to_touch`.
inline std::vector<SubjectFeatures> collect_features(const std::vector<SessionRecord>& sessions,
                                                     const std::vector<std::string>& subjects, TaskKind task,
                                                     ModalityKind modality, bool clip_to_touch) {
  std::vector<SubjectFeatures> out;
  for (const auto& id : subjects) {
    SubjectFeatures sf;
    sf.subject_id = id;
    for (const SessionRecord* s : sessions_of(sessions, id)) {
      auto fm = session_features(*s, task, modality, clip_to_touch);
      if (fm) sf.sessions.emplace(s->session_index, std::move(*fm));
    }
    out.push_back(std::move(sf));
  }
  return out;
}

struct EnrollmentTemplate {
  std::string subject_id;
  ModalityKind modality = ModalityKind::Accelerometer;
  std::vector<Embedding> embeddings;
};

inline EnrollmentTemplate enroll(const SubjectFeatures& subject, TaskKind task, const EncoderModel& model,
                                 const WindowSpec& spec, EnrollMode mode = EnrollMode::All) {
  EnrollmentTemplate tpl;
  tpl.subject_id = subject.subject_id;
  tpl.modality = model.modality;
  for (const auto& [index, fm] : subject.sessions) {
    if (index < 1 || index > kEnrollmentSessions) continue;
    if (fm.modality != model.modality) {
      throw Error(ErrorCode::InvalidArgument, "model modality does not match the enrollment data");
    }
    if (fm.length() == 0) continue;
    auto windows = extract_enrollment_windows(fm, spec, {subject.subject_id, index, task});
    if (mode == EnrollMode::One) windows.resize(1);
    for (const auto& w : windows) tpl.embeddings.push_back(embed(model, w.data));
  }
  if (tpl.embeddings.empty()) {
    throw Error(ErrorCode::EmptyTemplate, subject.subject_id + ": no usable enrollment data");
  }
  return tpl;
}

inline double verify_score(const EnrollmentTemplate& tpl, const Embedding& probe) {
  if (tpl.embeddings.empty()) throw Error(ErrorCode::EmptyTemplate, tpl.subject_id + ": empty template");
  double sum = 0.0;
  for (const auto& e : tpl.embeddings) {
    if (e.size() != probe.size()) throw Error(ErrorCode::DimensionMismatch, "embedding dimensions differ");
    sum += (e - probe).norm();
  }
  return sum / static_cast<double>(tpl.embeddings.size());
}

inline double verify_score(const EnrollmentTemplate& tpl, const FeatureWindow& probe, const EncoderModel& model) {
  if (probe.modality != model.modality || tpl.modality != model.modality) {
    throw Error(ErrorCode::InvalidArgument, "probe, template and model modalities must match");
  }
  return verify_score(tpl, embed(model, probe.data));
}

struct GenuineScore {
  std::string subject_id;
  int session = 0;
  double score = 0.0;
};

struct ImpostorScore {
  std::string claimed_id;
  std::string actual_id;
  int session = 0;
  double score = 0.0;
};

struct ScoreTable {
  ModalityKind modality = ModalityKind::Accelerometer;
  TaskKind task = TaskKind::Keystroke;
  std::vector<GenuineScore> genuine;
  std::vector<ImpostorScore> impostor;
  std::vector<std::string> skipped;  // subjects without enrollment or probe data

  std::vector<double> genuine_scores() const {
    std::vector<double> v;
    for (const auto& g : genuine) v.push_back(g.score);
    return v;
  }
  std::vector<double> impostor_scores() const {
    std::vector<double> v;
    for (const auto& i : impostor) v.push_back(i.score);
    return v;
  }
};

// Seed of the probe window for (subject, session) under a given evaluation seed.
inline std::uint64_t probe_seed(std::uint64_t eval_seed, ModalityKind modality, TaskKind task,
                                const std::string& subject_id, int session) {
  std::uint64_t s = derive_seed(eval_seed, name(modality));
  s = derive_seed(s, name(task));
  s = derive_seed(s, subject_id);
  return derive_seed(s, static_cast<std::uint64_t>(session));
}

struct ScoreOptions {
  std::uint64_t eval_seed = 0;
  EnrollMode enroll_mode = EnrollMode::All;
  int threads = 1;
};

inline ScoreTable build_score_table(const std::vector<SubjectFeatures>& subjects, TaskKind task,
                                    const EncoderModel& model, const WindowSpec& spec,
                                    const ScoreOptions& options = {}) {
  ScoreTable table;
  table.modality = model.modality;
  table.task = task;

  struct Prepared {
    std::optional<EnrollmentTemplate> tpl;
    std::vector<std::pair<int, Embedding>> probes;
  };
  std::vector<Prepared> prepared(subjects.size());
  parallel_for(subjects.size(), options.threads, [&](std::size_t k) {
    const auto& sf = subjects[k];
    Prepared p;
    for (int session : kVerificationSessions) {
      auto it = sf.sessions.find(session);
      if (it == sf.sessions.end() || it->second.length() == 0) return;
      Rng rng(probe_seed(options.eval_seed, model.modality, task, sf.subject_id, session));
      auto w = extract_random_window(it->second, spec, rng, {sf.subject_id, session, task});
      p.probes.emplace_back(session, embed(model, w.data));
    }
    try {
      p.tpl = enroll(sf, task, model, spec, options.enroll_mode);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyTemplate) throw;
      return;
    }
    prepared[k] = std::move(p);
  });

  std::vector<std::size_t> usable;
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    if (prepared[k].tpl) {
      usable.push_back(k);
    } else {
      table.skipped.push_back(subjects[k].subject_id);
    }
  }
  for (std::size_t a : usable) {
    for (const auto& [session, probe] : prepared[a].probes) {
      table.genuine.push_back({subjects[a].subject_id, session, verify_score(*prepared[a].tpl, probe)});
      for (std::size_t c : usable) {
        if (c == a) continue;
        table.impostor.push_back(
            {subjects[c].subject_id, subjects[a].subject_id, session, verify_score(*prepared[c].tpl, probe)});
      }
    }
  }
  return table;
}

struct OperatingPoint {
  double threshold = 0.0;
  double far = 0.0;  // fraction of impostor scores <= threshold
  double frr = 0.0;  // fraction of genuine scores > threshold
};

namespace detail {

inline void require_scores(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty()) {
    throw Error(ErrorCode::EmptyScores, "EER needs genuine and impostor scores");
  }
}

}  // namespace detail

// Operating points at -inf and at every distinct score, in threshold order.
// Thresholds between consecutive scores (e.g. midpoints) share the operating
// point of the lower score, so this sweep covers them.
inline std::vector<OperatingPoint> operating_points(std::vector<double> genuine, std::vector<double> impostor) {
  detail::require_scores(genuine, impostor);
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::vector<double> thresholds = genuine;
  thresholds.insert(thresholds.end(), impostor.begin(), impostor.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  const double ng = static_cast<double>(genuine.size());
  const double ni = static_cast<double>(impostor.size());
  std::vector<OperatingPoint> points;
  points.reserve(thresholds.size() + 1);
  points.push_back({-std::numeric_limits<double>::infinity(), 0.0, 1.0});
  for (double t : thresholds) {
    const auto imp_le = std::upper_bound(impostor.begin(), impostor.end(), t) - impostor.begin();
    const auto gen_le = std::upper_bound(genuine.begin(), genuine.end(), t) - genuine.begin();
    points.push_back({t, static_cast<double>(imp_le) / ni, (ng - static_cast<double>(gen_le)) / ng});
  }
  return points;
}

struct EerResult {
  double eer_percent = 0.0;
  double threshold = 0.0;
};

// FAR rises and FRR falls along the sweep; the EER is read where they cross,
// interpolating linearly between the two adjacent operating points when the
// crossing falls between them.
inline EerResult compute_eer(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  const auto points = operating_points(genuine, impostor);
  std::size_t k = 1;
  while (k < points.size() && points[k].frr - points[k].far > 0.0) ++k;
  const auto& cur = points[k];
  const double d1 = cur.frr - cur.far;
  if (d1 == 0.0) {
    // FAR == FRR on [t_k, t_{k+1}); report the middle of that interval.
    const double upper = k + 1 < points.size() ? points[k + 1].threshold : cur.threshold;
    return {100.0 * cur.far, 0.5 * (cur.threshold + upper)};
  }
  const auto& prev = points[k - 1];
  const double d0 = prev.frr - prev.far;
  const double lambda = d0 / (d0 - d1);
  const double eer = prev.far + lambda * (cur.far - prev.far);
  const double t0 = k == 1 ? cur.threshold : prev.threshold;
  return {100.0 * eer, t0 + lambda * (cur.threshold - t0)};
}

// DET operating points (FAR ascending, FRR non-increasing). With n_points > 1
// the sweep is subsampled evenly, keeping both ends.
inline std::vector<OperatingPoint> det_curve(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                             std::size_t n_points = 0) {
  auto points = operating_points(genuine, impostor);
  if (n_points < 2 || points.size() <= n_points) return points;
  std::vector<OperatingPoint> out;
  out.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const std::size_t idx = (i * (points.size() - 1)) / (n_points - 1);
    out.push_back(points[idx]);
  }
  return out;
}

inline double relative_error_reduction(double eer_base, double eer_new) {
  if (eer_base == 0.0) throw Error(ErrorCode::ZeroBaseline, "baseline EER is zero");
  return 100.0 * (eer_base - eer_new) / eer_base;
}

// CSV: modality,kind,claimed_id,actual_id,session,score
inline void write_score_table_csv(const ScoreTable& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "modality,kind,claimed_id,actual_id,session,score\n";
  const std::string m(name(table.modality));
  for (const auto& g : table.genuine) {
    out << m << ",genuine," << g.subject_id << ',' << g.subject_id << ',' << g.session << ','
        << detail::format_double(g.score) << '\n';
  }
  for (const auto& i : table.impostor) {
    out << m << ",impostor," << i.claimed_id << ',' << i.actual_id << ',' << i.session << ','
        << detail::format_double(i.score) << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline ScoreTable read_score_table_csv(const std::filesystem::path& path, TaskKind task) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open score table " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "modality,kind,claimed_id,actual_id,session,score") {
    throw Error(ErrorCode::CorruptFile, path.string() + ": bad score table header");
  }
  ScoreTable table;
  table.task = task;
  bool first = true;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    std::int64_t session = 0;
    double score = 0.0;
    if (cells.size() != 6 || !detail::parse_int(cells[4], session) || !detail::parse_double(cells[5], score)) {
      throw Error(ErrorCode::CorruptFile, path.string() + ": malformed row '" + line + "'");
    }
    const ModalityKind m = parse_modality(cells[0]);
    if (first) {
      table.modality = m;
      first = false;
    } else if (m != table.modality) {
      throw Error(ErrorCode::CorruptFile, path.string() + ": mixed modalities");
    }
    if (cells[1] == "genuine") {
      table.genuine.push_back({cells[3], static_cast<int>(session), score});
    } else if (cells[1] == "impostor") {
      table.impostor.push_back({cells[2], cells[3], static_cast<int>(session), score});
    } else {
      throw Error(ErrorCode::CorruptFile, path.string() + ": unknown score kind '" + cells[1] + "'");
    }
  }
  return table;
}

// Plot-ready DET CSV: threshold,far,frr
inline void write_det_csv(const std::vector<OperatingPoint>& points, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "threshold,far,frr\n";
  for (const auto& p : points) {
    out << detail::format_double(p.threshold) << ',' << detail::format_double(p.far) << ','
        << detail::format_double(p.frr) << '\n';
  }
}

}  // namespace biofuse
