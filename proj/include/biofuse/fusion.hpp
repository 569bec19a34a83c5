#pragma once

// Score-level fusion over modality subsets of a task.
//
// A task has six modalities: its touch modality (bit 0) and the five
// background sensors (bits 1..5, in kBackgroundModalities order). A subset is
// the bitmask over those six positions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "biofuse/error.hpp"
#include "biofuse/evaluation.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/parallel.hpp"

namespace biofuse {

enum class FusionMode { Simple, Weighted };

inline FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "simple") return FusionMode::Simple;
  if (s == "weighted") return FusionMode::Weighted;
  throw Error(ErrorCode::InvalidArgument, "fusion mode must be simple or weighted, got '" + std::string(s) + "'");
}

inline std::string_view name(FusionMode m) { return m == FusionMode::Simple ? "simple" : "weighted"; }

inline constexpr unsigned kFullSubsetMask = 0x3F;

struct FusionSubset {
  TaskKind task = TaskKind::Keystroke;
  unsigned mask = 0;  // bit k = task_modalities(task)[k]

  std::vector<ModalityKind> modalities() const {
    const auto all = task_modalities(task);
    std::vector<ModalityKind> out;
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (mask & (1u << k)) out.push_back(all[k]);
    }
    return out;
  }
  int size() const { return std::popcount(mask); }

  // Acronyms joined by '+', e.g. "K+L+M".
  std::string label() const {
    std::string s;
    for (auto m : modalities()) {
      if (!s.empty()) s += '+';
      s += acronym(m);
    }
    return s;
  }
};

using FusionWeights = std::map<ModalityKind, double>;

// All non-empty subsets in ascending bitmask order.
inline std::vector<FusionSubset> enumerate_subsets(TaskKind task) {
  std::vector<FusionSubset> out;
  for (unsigned mask = 1; mask <= kFullSubsetMask; ++mask) out.push_back({task, mask});
  return out;
}

// Normalized inverse EER. Modalities with EER 0 share the whole weight.
inline FusionWeights compute_weights(const FusionSubset& subset, const std::map<ModalityKind, double>& eers) {
  const auto mods = subset.modalities();
  if (mods.empty()) throw Error(ErrorCode::InvalidArgument, "empty fusion subset");
  std::vector<ModalityKind> zero;
  for (auto m : mods) {
    auto it = eers.find(m);
    if (it == eers.end()) {
      throw Error(ErrorCode::InvalidArgument, "no validation EER for " + std::string(name(m)));
    }
    if (!std::isfinite(it->second) || it->second < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "validation EER for " + std::string(name(m)) + " is not a valid percent");
    }
    if (it->second == 0.0) zero.push_back(m);
  }
  FusionWeights w;
  if (!zero.empty()) {
    for (auto m : mods) w[m] = 0.0;
    for (auto m : zero) w[m] = 1.0 / static_cast<double>(zero.size());
    return w;
  }
  double total = 0.0;
  for (auto m : mods) total += 1.0 / eers.at(m);
  for (auto m : mods) w[m] = (1.0 / eers.at(m)) / total;
  return w;
}

inline FusionWeights uniform_weights(const FusionSubset& subset) {
  FusionWeights w;
  const auto mods = subset.modalities();
  for (auto m : mods) w[m] = 1.0 / static_cast<double>(mods.size());
  return w;
}

// S_W = sum_n w_n s_n over the modalities of the weight map.
inline double fuse_scores(const FusionWeights& weights, const std::map<ModalityKind, double>& scores) {
  double s = 0.0;
  for (const auto& [m, w] : weights) {
    auto it = scores.find(m);
    if (it == scores.end()) {
      throw Error(ErrorCode::InvalidArgument, "missing score for " + std::string(name(m)));
    }
    s += w * it->second;
  }
  return s;
}

struct FusedScores {
  std::vector<double> genuine, impostor;
  std::size_t dropped = 0;

  double coverage_percent() const {
    const double kept = static_cast<double>(genuine.size() + impostor.size());
    const double total = kept + static_cast<double>(dropped);
    return total == 0.0 ? 0.0 : 100.0 * kept / total;
  }
};

namespace detail {

using PairKey = std::tuple<std::string, std::string, int>;  // claimed, actual, session

inline std::map<PairKey, double> keyed_scores(const ScoreTable& t, bool genuine) {
  std::map<PairKey, double> out;
  if (genuine) {
    for (const auto& g : t.genuine) out[{g.subject_id, g.subject_id, g.session}] = g.score;
  } else {
    for (const auto& i : t.impostor) out[{i.claimed_id, i.actual_id, i.session}] = i.score;
  }
  return out;
}

// Population z-normalization parameters over all scores of a table.
inline std::pair<double, double> score_moments(const ScoreTable& t) {
  auto g = t.genuine_scores();
  auto i = t.impostor_scores();
  g.insert(g.end(), i.begin(), i.end());
  if (g.empty()) return {0.0, 1.0};
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(g.size()));
  return {mean, sd > 0.0 ? sd : 1.0};
}

}  // namespace detail

// Fuses the tables of the weight map's modalities. Pairs are matched on
// (claimed, actual, session); a pair missing from any table is dropped.
inline FusedScores fuse_tables(const FusionWeights& weights, const std::map<ModalityKind, ScoreTable>& tables,
                               bool znorm = false) {
  FusedScores out;
  if (weights.empty()) return out;
  for (bool genuine : {true, false}) {
    std::vector<std::pair<double, std::map<detail::PairKey, double>>> keyed;
    std::vector<std::pair<double, double>> moments;
    for (const auto& [m, w] : weights) {
      auto it = tables.find(m);
      if (it == tables.end()) {
        throw Error(ErrorCode::InvalidArgument, "no score table for " + std::string(name(m)));
      }
      keyed.emplace_back(w, detail::keyed_scores(it->second, genuine));
      moments.push_back(znorm ? detail::score_moments(it->second) : std::pair<double, double>{0.0, 1.0});
    }
    std::map<detail::PairKey, bool> all_keys;
    for (const auto& k : keyed) {
      for (const auto& [key, s] : k.second) all_keys[key] = true;
    }
    for (const auto& [key, unused] : all_keys) {
      double s = 0.0;
      bool complete = true;
      for (std::size_t n = 0; n < keyed.size(); ++n) {
        auto it = keyed[n].second.find(key);
        if (it == keyed[n].second.end()) {
          complete = false;
          break;
        }
        s += keyed[n].first * (it->second - moments[n].first) / moments[n].second;
      }
      if (!complete) {
        ++out.dropped;
        continue;
      }
      (genuine ? out.genuine : out.impostor).push_back(s);
    }
  }
  return out;
}

struct SubsetResult {
  FusionSubset subset;
  FusionMode mode = FusionMode::Simple;
  double eer_percent = 0.0;
  double coverage_percent = 0.0;
  FusionWeights weights;
};

struct RankOptions {
  FusionMode mode = FusionMode::Simple;
  bool znorm = false;
  unsigned universe = kFullSubsetMask;  // only subsets inside this mask are ranked
  int threads = 1;
};

// EER of every subset's fused scores, sorted ascending (ties by bitmask).
// Subsets with no fused genuine or impostor scores are left out.
inline std::vector<SubsetResult> rank_subsets(TaskKind task, const std::map<ModalityKind, ScoreTable>& tables,
                                              const std::map<ModalityKind, double>& validation_eers,
                                              const RankOptions& options = {}) {
  std::vector<FusionSubset> subsets;
  for (const auto& s : enumerate_subsets(task)) {
    if ((s.mask & ~options.universe) == 0) subsets.push_back(s);
  }
  std::vector<std::optional<SubsetResult>> results(subsets.size());
  parallel_for(subsets.size(), options.threads, [&](std::size_t k) {
    const auto& subset = subsets[k];
    FusionWeights w =
        options.mode == FusionMode::Weighted ? compute_weights(subset, validation_eers) : uniform_weights(subset);
    FusedScores fused = fuse_tables(w, tables, options.znorm);
    if (fused.genuine.empty() || fused.impostor.empty()) return;
    results[k] = SubsetResult{subset, options.mode, compute_eer(fused.genuine, fused.impostor).eer_percent,
                              fused.coverage_percent(), std::move(w)};
  });
  std::vector<SubsetResult> out;
  for (auto& r : results) {
    if (r) out.push_back(std::move(*r));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SubsetResult& a, const SubsetResult& b) { return a.eer_percent < b.eer_percent; });
  return out;
}

inline const SubsetResult* best_of_size(const std::vector<SubsetResult>& ranked, int min_size, int max_size) {
  for (const auto& r : ranked) {
    if (r.subset.size() >= min_size && r.subset.size() <= max_size) return &r;
  }
  return nullptr;
}

// CSV: task,mode,subset_acronyms,eer_percent,coverage_percent
inline void write_fusion_csv(const std::vector<SubsetResult>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "task,mode,subset_acronyms,eer_percent,coverage_percent\n";
  for (const auto& r : rows) {
    out << name(r.subset.task) << ',' << name(r.mode) << ',' << r.subset.label() << ','
        << detail::format_double(r.eer_percent) << ',' << detail::format_double(r.coverage_percent) << '\n';
  }
}

}  // namespace biofuse
