#pragma once

// Run configuration and the pipeline stages behind the command-line tool.
//
// Output directory layout:
//   config.json                      effective configuration of the last command
//   split.json, window_stats.csv     from ingest
//   models/<modality>.json           one encoder per modality
//   history/<modality>.csv           epoch,mean_loss,val_eer
//   scores/<split>/<task>__<modality>.csv
//   det/<task>__<modality>.csv       test-split DET points
//   eer.csv, fusion.csv, report.txt
//
// Seeds: every stage derives its own seed from the root seed with
// derive_seed(root, "<stage>"), so stages can be rerun in isolation.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/encoder.hpp"
#include "biofuse/error.hpp"
#include "biofuse/evaluation.hpp"
#include "biofuse/fusion.hpp"
#include "biofuse/gradcheck.hpp"
#include "biofuse/model_io.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/rng.hpp"
#include "biofuse/synthgen.hpp"
#include "biofuse/training.hpp"
#include "biofuse/windowing.hpp"

namespace biofuse {

struct RunConfig {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> manifest;
  std::filesystem::path out = "biofuse_out";
  std::uint64_t seed = 1;
  int threads = 1;
  int validation_subjects = 0;  // 0: a fifth of the subjects (at least 2)
  int test_subjects = 0;
  bool validate_subjects = true;
  WindowOverrides windows;
  EncoderConfig encoder;
  TrainConfig train;
  std::optional<FusionMode> fusion_mode;  // unset: both modes
  bool fusion_znorm = false;
  EnrollMode enroll_mode = EnrollMode::All;
  std::vector<ModalityKind> modalities{kAllModalities.begin(), kAllModalities.end()};
  std::vector<TaskKind> tasks{kAllTasks.begin(), kAllTasks.end()};
  SynthConfig synth;

  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }
};

namespace detail {

// Reads keys of one JSON object and rejects any key that was not consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::InvalidConfig, where() + " must be an object");
  }

  const nlohmann::json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const auto* v = get(key)) {
      try {
        out = v->get<T>();
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::InvalidConfig, key_path(key) + " has the wrong type");
      }
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key_path(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Fn>
auto parse_named(const std::string& key, const std::string& value, Fn&& parse) {
  try {
    return parse(value);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, key + ": " + e.what());
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

// Relative paths in the file are resolved against `base` (the config file's
// directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  RunConfig cfg;
  detail::ObjectReader r(j, "");
  std::string s;
  if (const auto* v = r.get("dataset")) cfg.dataset = detail::resolve(base, v->get<std::string>());
  if (const auto* v = r.get("manifest")) cfg.manifest = detail::resolve(base, v->get<std::string>());
  if (const auto* v = r.get("out")) cfg.out = detail::resolve(base, v->get<std::string>());
  r.read("seed", cfg.seed);
  r.read("threads", cfg.threads);
  r.read("validate_subjects", cfg.validate_subjects);
  if (const auto* v = r.get("split")) {
    detail::ObjectReader sr(*v, "split");
    sr.read("validation", cfg.validation_subjects);
    sr.read("test", cfg.test_subjects);
    sr.finish();
  }
  if (const auto* v = r.get("windows")) {
    if (!v->is_object()) throw Error(ErrorCode::InvalidConfig, "'windows' must be an object");
    for (auto it = v->begin(); it != v->end(); ++it) {
      const auto m = detail::parse_named("windows." + it.key(), it.key(), [](const std::string& x) { return parse_modality(x); });
      if (!it->is_number_integer()) throw Error(ErrorCode::InvalidConfig, "windows." + it.key() + " must be an integer");
      cfg.windows[m] = it->get<int>();
    }
  }
  if (const auto* v = r.get("encoder")) {
    detail::ObjectReader er(*v, "encoder");
    er.read("hidden_units", cfg.encoder.hidden_units);
    er.read("num_layers", cfg.encoder.num_layers);
    er.read("dropout", cfg.encoder.dropout_between);
    er.read("recurrent_dropout", cfg.encoder.recurrent_dropout);
    er.read("bn_momentum", cfg.encoder.bn_momentum);
    er.read("bn_eps", cfg.encoder.bn_eps);
    er.finish();
  }
  if (const auto* v = r.get("train")) {
    detail::ObjectReader tr(*v, "train");
    tr.read("max_epochs", cfg.train.max_epochs);
    tr.read("patience", cfg.train.patience);
    tr.read("triplets_per_epoch", cfg.train.triplets_per_epoch);
    tr.read("semi_hard", cfg.train.semi_hard);
    tr.read("margin", cfg.train.loss.margin);
    tr.finish();
  }
  if (const auto* v = r.get("optimizer")) {
    detail::ObjectReader orr(*v, "optimizer");
    orr.read("learning_rate", cfg.train.optimizer.learning_rate);
    orr.read("beta1", cfg.train.optimizer.beta1);
    orr.read("beta2", cfg.train.optimizer.beta2);
    orr.read("epsilon", cfg.train.optimizer.epsilon);
    orr.read("batch_size", cfg.train.optimizer.batch_size);
    orr.finish();
  }
  if (const auto* v = r.get("fusion")) {
    detail::ObjectReader fr(*v, "fusion");
    if (const auto* m = fr.get("mode")) {
      const auto text = m->get<std::string>();
      if (text == "both") {
        cfg.fusion_mode.reset();
      } else {
        cfg.fusion_mode = detail::parse_named("fusion.mode", text, [](const std::string& x) { return parse_fusion_mode(x); });
      }
    }
    fr.read("znorm", cfg.fusion_znorm);
    fr.finish();
  }
  if (const auto* v = r.get("enroll_windows")) {
    cfg.enroll_mode = detail::parse_named("enroll_windows", v->get<std::string>(), [](const std::string& x) { return parse_enroll_mode(x); });
  }
  if (const auto* v = r.get("modalities")) {
    cfg.modalities.clear();
    for (const auto& m : *v) {
      cfg.modalities.push_back(detail::parse_named("modalities", m.get<std::string>(), [](const std::string& x) { return parse_modality(x); }));
    }
  }
  if (const auto* v = r.get("tasks")) {
    cfg.tasks.clear();
    for (const auto& t : *v) {
      cfg.tasks.push_back(detail::parse_named("tasks", t.get<std::string>(), [](const std::string& x) { return parse_task(x); }));
    }
  }
  if (const auto* v = r.get("synth")) {
    detail::ObjectReader sr(*v, "synth");
    sr.read("subjects", cfg.synth.n_subjects);
    sr.read("sensor_rate_hz", cfg.synth.sensor_rate_hz);
    sr.read("separability", cfg.synth.separability);
    sr.read("noise", cfg.synth.noise);
    sr.read("session_jitter", cfg.synth.session_jitter);
    sr.read("touch_rate_hz", cfg.synth.touch_rate_hz);
    if (const auto* u = sr.get("uninformative")) {
      for (const auto& m : *u) {
        cfg.synth.uninformative.insert(detail::parse_named("synth.uninformative", m.get<std::string>(), [](const std::string& x) { return parse_modality(x); }));
      }
    }
    sr.finish();
  }
  r.finish();
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = cfg.dataset.string();
  j["manifest"] = cfg.manifest ? nlohmann::json(cfg.manifest->string()) : nlohmann::json(nullptr);
  j["out"] = cfg.out.string();
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["validate_subjects"] = cfg.validate_subjects;
  j["split"] = {{"validation", cfg.validation_subjects}, {"test", cfg.test_subjects}};
  nlohmann::json windows = nlohmann::json::object();
  for (const auto& [m, len] : cfg.windows) windows[std::string(name(m))] = len;
  j["windows"] = windows;
  j["encoder"] = {{"hidden_units", cfg.encoder.hidden_units},
                  {"num_layers", cfg.encoder.num_layers},
                  {"dropout", cfg.encoder.dropout_between},
                  {"recurrent_dropout", cfg.encoder.recurrent_dropout},
                  {"bn_momentum", cfg.encoder.bn_momentum},
                  {"bn_eps", cfg.encoder.bn_eps}};
  j["train"] = {{"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"triplets_per_epoch", cfg.train.triplets_per_epoch},
                {"semi_hard", cfg.train.semi_hard},
                {"margin", cfg.train.loss.margin}};
  j["optimizer"] = {{"learning_rate", cfg.train.optimizer.learning_rate},
                    {"beta1", cfg.train.optimizer.beta1},
                    {"beta2", cfg.train.optimizer.beta2},
                    {"epsilon", cfg.train.optimizer.epsilon},
                    {"batch_size", cfg.train.optimizer.batch_size}};
  j["fusion"] = {{"mode", cfg.fusion_mode ? std::string(name(*cfg.fusion_mode)) : std::string("both")},
                 {"znorm", cfg.fusion_znorm}};
  j["enroll_windows"] = std::string(name(cfg.enroll_mode));
  nlohmann::json mods = nlohmann::json::array();
  for (auto m : cfg.modalities) mods.push_back(std::string(name(m)));
  j["modalities"] = mods;
  nlohmann::json tasks = nlohmann::json::array();
  for (auto t : cfg.tasks) tasks.push_back(std::string(name(t)));
  j["tasks"] = tasks;
  nlohmann::json unin = nlohmann::json::array();
  for (auto m : cfg.synth.uninformative) unin.push_back(std::string(name(m)));
  j["synth"] = {{"subjects", cfg.synth.n_subjects},
                {"sensor_rate_hz", cfg.synth.sensor_rate_hz},
                {"separability", cfg.synth.separability},
                {"noise", cfg.synth.noise},
                {"session_jitter", cfg.synth.session_jitter},
                {"touch_rate_hz", cfg.synth.touch_rate_hz},
                {"uninformative", unin}};
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingInput, "cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j, path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline void validate_run_config(const RunConfig& cfg) {
  cfg.train.validate();
  EncoderConfig enc = cfg.encoder;
  enc.input_dim = 1;
  enc.validate();
  if (cfg.threads < 1) throw Error(ErrorCode::InvalidConfig, "threads must be at least 1");
  if (cfg.validation_subjects < 0 || cfg.test_subjects < 0) {
    throw Error(ErrorCode::InvalidConfig, "split sizes must be non-negative");
  }
  for (auto m : kAllModalities) {
    for (auto t : kAllTasks) window_spec_for(m, t, cfg.windows);
  }
  if (cfg.modalities.empty()) throw Error(ErrorCode::InvalidConfig, "modalities must not be empty");
  if (cfg.tasks.empty()) throw Error(ErrorCode::InvalidConfig, "tasks must not be empty");
  cfg.synth.validate();
}

inline void write_effective_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  std::ofstream out(cfg.out / "config.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (cfg.out / "config.json").string());
  out << run_config_to_json(cfg).dump(2) << '\n';
}

inline std::filesystem::path model_path(const RunConfig& cfg, ModalityKind m) {
  return cfg.out / "models" / (std::string(name(m)) + ".json");
}

inline std::string table_stem(TaskKind task, ModalityKind m) {
  return std::string(name(task)) + "__" + std::string(name(m));
}

inline std::filesystem::path score_path(const RunConfig& cfg, std::string_view split, TaskKind task, ModalityKind m) {
  return cfg.out / "scores" / std::string(split) / (table_stem(task, m) + ".csv");
}

// Tasks under which modality `m` is evaluated.
inline std::vector<TaskKind> eval_tasks(const RunConfig& cfg, ModalityKind m) {
  std::vector<TaskKind> out;
  for (auto t : cfg.tasks) {
    if (is_background(m) || task_of(m) == t) out.push_back(t);
  }
  return out;
}

// ---- synth -----------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  if (cfg.dataset.empty()) throw Error(ErrorCode::InvalidConfig, "dataset: no output directory for the synthetic dataset");
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.stage_seed("synth");
  generate_dataset(sc, cfg.dataset);
  log << "wrote " << sc.n_subjects << " synthetic subjects to " << cfg.dataset.string() << '\n';
}

// ---- ingest ----------------------------------------------------------------

struct LoadedData {
  LoadResult load;
  DatasetSplit split;
};

inline LoadedData load_and_split(const RunConfig& cfg, std::ostream& log) {
  if (cfg.dataset.empty()) throw Error(ErrorCode::InvalidConfig, "dataset: no dataset root configured");
  if (!std::filesystem::is_directory(cfg.dataset)) {
    throw Error(ErrorCode::MissingInput, "dataset: directory not found: " + cfg.dataset.string());
  }
  if (cfg.manifest && !std::filesystem::is_regular_file(*cfg.manifest)) {
    throw Error(ErrorCode::MissingInput, "manifest: file not found: " + cfg.manifest->string());
  }
  LoadedData d;
  d.load = load_dataset(cfg.dataset, cfg.manifest, {cfg.validate_subjects});
  for (const auto& w : d.load.warnings) log << "warning: " << w << '\n';
  const auto ids = subject_ids(d.load.sessions);
  const int n = static_cast<int>(ids.size());
  const int auto_size = std::max(2, n / 5);
  const int n_val = cfg.validation_subjects > 0 ? cfg.validation_subjects : auto_size;
  const int n_test = cfg.test_subjects > 0 ? cfg.test_subjects : auto_size;
  if (n - n_val - n_test < 2) {
    throw Error(ErrorCode::InsufficientSubjects, "split: " + std::to_string(n) + " usable subjects cannot supply " +
                                                     std::to_string(n_val) + " validation + " +
                                                     std::to_string(n_test) + " test + 2 training subjects");
  }
  d.split = split_dataset(ids, cfg.stage_seed("split"), n_val, n_test);
  return d;
}

inline void cmd_ingest(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  LoadedData d = load_and_split(cfg, log);
  write_effective_config(cfg);
  nlohmann::json split = {{"train", d.split.train_subjects},
                          {"validation", d.split.validation_subjects},
                          {"test", d.split.test_subjects},
                          {"rejected", d.load.rejected_subjects}};
  {
    std::ofstream out(cfg.out / "split.json", std::ios::binary);
    out << split.dump(2) << '\n';
  }
  std::ofstream ws(cfg.out / "window_stats.csv", std::ios::binary);
  ws << "task,mean_windows,std_windows\n";
  for (auto t : cfg.tasks) {
    const auto stats = window_stats(d.load.sessions, t, cfg.windows);
    ws << name(t) << ',' << detail::format_double(stats.mean_windows) << ','
       << detail::format_double(stats.std_windows) << '\n';
  }
  log << subject_ids(d.load.sessions).size() << " subjects loaded, " << d.load.rejected_subjects.size()
      << " rejected; split " << d.split.train_subjects.size() << '/' << d.split.validation_subjects.size() << '/'
      << d.split.test_subjects.size() << " (train/validation/test)\n";
}

// ---- train -----------------------------------------------------------------

inline TrainConfig effective_train_config(const RunConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.stage_seed("train");
  tc.threads = cfg.threads;
  tc.enroll_mode = cfg.enroll_mode;
  return tc;
}

// Returns the number of modalities that failed.
inline int cmd_train(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  LoadedData d = load_and_split(cfg, log);
  write_effective_config(cfg);
  const TrainConfig tc = effective_train_config(cfg);
  auto progress = [&log](ModalityKind m, const EpochRecord& r) {
    log << name(m) << " epoch " << r.epoch << " loss " << r.mean_loss << " val_eer " << r.val_eer << '\n'
        << std::flush;
  };
  auto result = train_all(d.load.sessions, d.split, tc, cfg.encoder, cfg.windows, cfg.modalities, progress);
  for (const auto& [m, r] : result.models) {
    save_model(r.model, model_path(cfg, m));
    write_history_csv(r, cfg.out / "history" / (std::string(name(m)) + ".csv"));
    log << name(m) << ": best validation EER " << r.best_val_eer << "% at epoch " << r.best_epoch << '\n';
  }
  for (const auto& [m, msg] : result.failures) log << name(m) << ": training failed: " << msg << '\n';
  return static_cast<int>(result.failures.size());
}

// ---- eval ------------------------------------------------------------------

// Rebuilds eer.csv from every score table present under scores/.
inline void write_eer_summary(const RunConfig& cfg) {
  std::ofstream out(cfg.out / "eer.csv", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (cfg.out / "eer.csv").string());
  out << "split,task,modality,eer_percent,threshold,genuine,impostor\n";
  for (std::string_view split : {"validation", "test"}) {
    for (auto t : kAllTasks) {
      for (auto m : task_modalities(t)) {
        const auto path = score_path(cfg, split, t, m);
        if (!std::filesystem::exists(path)) continue;
        const ScoreTable table = read_score_table_csv(path, t);
        const auto g = table.genuine_scores();
        const auto i = table.impostor_scores();
        out << split << ',' << name(t) << ',' << name(m) << ',';
        if (g.empty() || i.empty()) {
          out << "nan,nan,";
        } else {
          const auto eer = compute_eer(g, i);
          out << detail::format_double(eer.eer_percent) << ',' << detail::format_double(eer.threshold) << ',';
        }
        out << g.size() << ',' << i.size() << '\n';
      }
    }
  }
}

inline void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  std::map<ModalityKind, EncoderModel> models;
  for (auto m : cfg.modalities) {
    const auto path = model_path(cfg, m);
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::MissingInput, "model file not found: " + path.string() + " (run train first)");
    }
    models.emplace(m, load_model(path));
  }
  LoadedData d = load_and_split(cfg, log);
  write_effective_config(cfg);
  const std::uint64_t eval_seed = cfg.stage_seed("eval");
  for (const auto& [m, model] : models) {
    for (auto t : eval_tasks(cfg, m)) {
      const WindowSpec spec = window_spec_for(m, t, cfg.windows);
      for (std::string_view split : {"validation", "test"}) {
        const auto& subjects = split == "test" ? d.split.test_subjects : d.split.validation_subjects;
        auto features = collect_features(d.load.sessions, subjects, t, m, /*clip_to_touch=*/true);
        ScoreTable table = build_score_table(features, t, model, spec, {eval_seed, cfg.enroll_mode, cfg.threads});
        write_score_table_csv(table, score_path(cfg, split, t, m));
        if (split == "test") {
          const auto g = table.genuine_scores();
          const auto i = table.impostor_scores();
          if (!g.empty() && !i.empty()) {
            write_det_csv(det_curve(g, i, 0), cfg.out / "det" / (table_stem(t, m) + ".csv"));
            log << name(t) << '/' << name(m) << ": test EER " << compute_eer(g, i).eer_percent << "%\n";
          } else {
            log << name(t) << '/' << name(m) << ": no test scores\n";
          }
        }
      }
    }
  }
  write_eer_summary(cfg);
}

// ---- fuse ------------------------------------------------------------------

struct TaskScores {
  std::map<ModalityKind, ScoreTable> test;
  std::map<ModalityKind, double> validation_eer;
  unsigned universe = 0;
};

inline TaskScores load_task_scores(const RunConfig& cfg, TaskKind task) {
  TaskScores s;
  const auto mods = task_modalities(task);
  for (std::size_t k = 0; k < mods.size(); ++k) {
    const auto test_path = score_path(cfg, "test", task, mods[k]);
    const auto val_path = score_path(cfg, "validation", task, mods[k]);
    if (!std::filesystem::exists(test_path) || !std::filesystem::exists(val_path)) continue;
    ScoreTable val = read_score_table_csv(val_path, task);
    const auto g = val.genuine_scores();
    const auto i = val.impostor_scores();
    if (g.empty() || i.empty()) continue;
    s.validation_eer[mods[k]] = compute_eer(g, i).eer_percent;
    s.test.emplace(mods[k], read_score_table_csv(test_path, task));
    s.universe |= 1u << k;
  }
  return s;
}

inline std::vector<FusionMode> fusion_modes(const RunConfig& cfg) {
  if (cfg.fusion_mode) return {*cfg.fusion_mode};
  return {FusionMode::Simple, FusionMode::Weighted};
}

inline void cmd_fuse(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  if (!std::filesystem::is_directory(cfg.out / "scores")) {
    throw Error(ErrorCode::MissingInput, "score directory not found: " + (cfg.out / "scores").string() +
                                             " (run eval first)");
  }
  write_effective_config(cfg);
  std::vector<SubsetResult> rows;
  for (auto mode : fusion_modes(cfg)) {
    for (auto t : cfg.tasks) {
      TaskScores s = load_task_scores(cfg, t);
      if (s.universe == 0) {
        log << name(t) << ": no score tables, skipped\n";
        continue;
      }
      if (s.universe != kFullSubsetMask) {
        log << name(t) << ": fusing over the " << std::popcount(s.universe) << " modalities with scores\n";
      }
      auto ranked = rank_subsets(t, s.test, s.validation_eer, {mode, cfg.fusion_znorm, s.universe, cfg.threads});
      if (!ranked.empty()) {
        log << name(t) << " (" << name(mode) << "): best " << ranked.front().subset.label() << " at "
            << ranked.front().eer_percent << "% EER\n";
      }
      rows.insert(rows.end(), ranked.begin(), ranked.end());
    }
  }
  write_fusion_csv(rows, cfg.out / "fusion.csv");
}

// ---- report ----------------------------------------------------------------

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingInput, "file not found: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  return rows;
}

inline std::string fixed2(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

inline double to_double(const std::string& s) {
  double v = 0.0;
  if (s == "nan" || !parse_double(s, v)) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

}  // namespace detail

inline std::string build_report(const RunConfig& cfg) {
  std::ostringstream r;
  const auto eer_rows = detail::read_csv_rows(cfg.out / "eer.csv");
  std::map<std::pair<std::string, std::string>, double> test_eer;  // (task, modality)
  for (const auto& row : eer_rows) {
    if (row.size() >= 4 && row[0] == "test") test_eer[{row[1], row[2]}] = detail::to_double(row[3]);
  }

  if (std::filesystem::exists(cfg.out / "window_stats.csv")) {
    r << "Enrollment windows per subject (sessions 1-3)\n";
    r << std::left << std::setw(14) << "task" << std::right << std::setw(8) << "mean" << std::setw(8) << "std" << '\n';
    for (const auto& row : detail::read_csv_rows(cfg.out / "window_stats.csv")) {
      if (row.size() < 3) continue;
      r << std::left << std::setw(14) << row[0] << std::right << std::setw(8) << detail::fixed2(detail::to_double(row[1]))
        << std::setw(8) << detail::fixed2(detail::to_double(row[2])) << '\n';
    }
    r << '\n';
  }

  r << "Unimodal test EER (%)\n";
  r << std::left << std::setw(14) << "task" << std::right << std::setw(8) << "touch";
  for (auto m : kBackgroundModalities) r << std::setw(8) << acronym(m);
  r << '\n';
  for (auto t : kAllTasks) {
    r << std::left << std::setw(14) << name(t) << std::right;
    for (auto m : task_modalities(t)) {
      auto it = test_eer.find({std::string(name(t)), std::string(name(m))});
      r << std::setw(8) << (it == test_eer.end() ? std::string("-") : detail::fixed2(it->second));
    }
    r << '\n';
  }

  if (std::filesystem::exists(cfg.out / "fusion.csv")) {
    const auto fusion_rows = detail::read_csv_rows(cfg.out / "fusion.csv");
    for (std::string mode : {"simple", "weighted"}) {
      bool header = false;
      for (auto t : kAllTasks) {
        std::vector<const std::vector<std::string>*> ranked;
        for (const auto& row : fusion_rows) {
          if (row.size() >= 5 && row[0] == name(t) && row[1] == mode) ranked.push_back(&row);
        }
        if (ranked.empty()) continue;
        if (!header) {
          r << "\nBest fused subsets, " << mode << " fusion (test EER %)\n";
          header = true;
        }
        double best_single = std::numeric_limits<double>::quiet_NaN();
        for (const auto* row : ranked) {
          if ((*row)[2].find('+') == std::string::npos) {
            best_single = detail::to_double((*row)[3]);
            break;
          }
        }
        r << name(t) << ':';
        for (std::size_t k = 0; k < std::min<std::size_t>(3, ranked.size()); ++k) {
          r << "  " << (*ranked[k])[2] << ' ' << detail::fixed2(detail::to_double((*ranked[k])[3]));
        }
        const double best = detail::to_double((*ranked.front())[3]);
        if (best_single > 0.0) {
          r << "  (relative error reduction vs best single modality "
            << detail::fixed2(relative_error_reduction(best_single, best)) << "%)";
        }
        r << '\n';
      }
    }
  }
  return r.str();
}

inline void cmd_report(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  if (!std::filesystem::exists(cfg.out / "eer.csv")) {
    throw Error(ErrorCode::MissingInput, "EER summary not found: " + (cfg.out / "eer.csv").string() +
                                             " (run eval first)");
  }
  const std::string report = build_report(cfg);
  std::ofstream out(cfg.out / "report.txt", std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (cfg.out / "report.txt").string());
  out << report;
  log << report;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckSummary {
  double max_relative_error = 0.0;
  int encoders = 0;
};

inline GradcheckSummary cmd_gradcheck(std::uint64_t seed, int encoders, std::ostream& log) {
  GradcheckSummary s;
  s.encoders = encoders;
  for (int k = 0; k < encoders; ++k) {
    GradientCheckSpec spec;
    spec.hidden_units = 2 + k % 7;  // 2..8 units
    spec.input_dim = 1 + k % 4;
    const auto report = gradient_check(spec, derive_seed(seed, static_cast<std::uint64_t>(k)));
    s.max_relative_error = std::max(s.max_relative_error, report.max_relative_error);
  }
  log << "gradient check over " << encoders << " encoders: max relative error " << std::scientific
      << s.max_relative_error << std::defaultfloat << '\n';
  return s;
}

}  // namespace biofuse
