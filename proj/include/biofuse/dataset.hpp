#pragma once

// On-disk dataset contract and in-memory session records.
//
// Layout (CSV, header row required):
//   <root>/<subject_id>/session_<k>/device.csv          screen_width,screen_height,model
//   <root>/<subject_id>/session_<k>/<task>/<modality>.csv
// Triaxial sensors use "timestamp,x,y,z", gravity "timestamp,v", touch
// "timestamp,x,y,p" and keystroke "timestamp,keycode". Timestamps are integer
// milliseconds since session start.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/rng.hpp"

namespace biofuse {

struct RawSeries {
  std::vector<std::int64_t> timestamps;
  Eigen::MatrixXd values;  // [T x C_raw]

  Eigen::Index size() const { return static_cast<Eigen::Index>(timestamps.size()); }
  Eigen::Index channels() const { return values.cols(); }
  bool empty() const { return timestamps.empty(); }

  friend bool operator==(const RawSeries& a, const RawSeries& b) {
    return a.timestamps == b.timestamps && a.values.rows() == b.values.rows() &&
           a.values.cols() == b.values.cols() && a.values == b.values;
  }
};

struct DeviceMeta {
  int screen_width = 0;
  int screen_height = 0;
  std::string device_model;

  friend bool operator==(const DeviceMeta&, const DeviceMeta&) = default;
};

using TaskStreams = std::map<ModalityKind, RawSeries>;

struct SessionRecord {
  std::string subject_id;
  int session_index = 0;
  DeviceMeta device;
  std::map<TaskKind, TaskStreams> streams;

  const RawSeries* find(TaskKind task, ModalityKind modality) const {
    auto t = streams.find(task);
    if (t == streams.end()) return nullptr;
    auto m = t->second.find(modality);
    return m == t->second.end() ? nullptr : &m->second;
  }

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

struct SamplingInfo {
  double f_s = 0.0;  // Hz
};

struct DatasetSplit {
  std::vector<std::string> train_subjects;
  std::vector<std::string> validation_subjects;
  std::vector<std::string> test_subjects;
};

namespace detail {

inline std::string header_for(ModalityKind m) {
  switch (m) {
    case ModalityKind::GravitySensor: return "timestamp,v";
    case ModalityKind::TouchKeystroke: return "timestamp,keycode";
    case ModalityKind::TouchScrollUp:
    case ModalityKind::TouchScrollDown:
    case ModalityKind::TouchDraw8:
    case ModalityKind::TouchTap:
      return "timestamp,x,y,p";
    default:
      return "timestamp,x,y,z";
  }
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline RawSeries read_stream_csv(const std::filesystem::path& path, ModalityKind modality) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::CorruptFile, path.string() + ": missing header");
  if (trim(line) != header_for(modality)) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": expected header '" +
                                            header_for(modality) + "', got '" + trim(line) + "'");
  }
  const int channels = raw_channels(modality);
  std::vector<std::int64_t> ts;
  std::vector<double> vals;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != static_cast<std::size_t>(channels + 1)) {
      throw Error(ErrorCode::CorruptFile,
                  path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    }
    std::int64_t t = 0;
    if (!parse_int(cells[0], t)) {
      throw Error(ErrorCode::CorruptFile,
                  path.string() + ":" + std::to_string(line_no) + ": bad timestamp");
    }
    ts.push_back(t);
    for (int c = 0; c < channels; ++c) {
      double v = 0.0;
      if (!parse_double(cells[c + 1], v) || !std::isfinite(v)) {
        throw Error(ErrorCode::CorruptFile, path.string() + ":" + std::to_string(line_no) +
                                                ": non-finite or unparsable value '" +
                                                cells[c + 1] + "'");
      }
      vals.push_back(v);
    }
  }
  RawSeries series;
  series.timestamps = std::move(ts);
  series.values.resize(static_cast<Eigen::Index>(series.timestamps.size()), channels);
  for (Eigen::Index r = 0; r < series.values.rows(); ++r) {
    for (int c = 0; c < channels; ++c) series.values(r, c) = vals[r * channels + c];
  }
  if (!std::is_sorted(series.timestamps.begin(), series.timestamps.end())) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": timestamps not sorted");
  }
  return series;
}

inline void write_stream_csv(const std::filesystem::path& path, ModalityKind modality,
                             const RawSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << header_for(modality) << '\n';
  const bool integer_values = modality == ModalityKind::TouchKeystroke;
  for (Eigen::Index r = 0; r < series.size(); ++r) {
    out << series.timestamps[r];
    for (Eigen::Index c = 0; c < series.channels(); ++c) {
      out << ',';
      if (integer_values) {
        out << static_cast<std::int64_t>(std::llround(series.values(r, c)));
      } else {
        out << format_double(series.values(r, c));
      }
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline DeviceMeta read_device_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "screen_width,screen_height,model") {
    throw Error(ErrorCode::CorruptFile, path.string() + ": bad device header");
  }
  if (!std::getline(in, line)) throw Error(ErrorCode::CorruptFile, path.string() + ": no device row");
  auto cells = split_csv_line(trim(line));
  if (cells.size() < 3) throw Error(ErrorCode::CorruptFile, path.string() + ": short device row");
  std::int64_t w = 0, h = 0;
  if (!parse_int(cells[0], w) || !parse_int(cells[1], h) || w <= 0 || h <= 0) {
    throw Error(ErrorCode::InvalidDevice, path.string() + ": screen dimensions must be positive");
  }
  DeviceMeta meta;
  meta.screen_width = static_cast<int>(w);
  meta.screen_height = static_cast<int>(h);
  // Model names may themselves contain commas.
  std::string model = cells[2];
  for (std::size_t i = 3; i < cells.size(); ++i) model += "," + cells[i];
  meta.device_model = model;
  return meta;
}

inline bool all_zero(const RawSeries& s) {
  return s.values.size() == 0 || (s.values.array() == 0.0).all();
}

inline void check_touch_bounds(const RawSeries& s, const DeviceMeta& dev, const std::string& where) {
  for (Eigen::Index r = 0; r < s.size(); ++r) {
    double x = s.values(r, 0), y = s.values(r, 1);
    if (x < 0 || x > dev.screen_width || y < 0 || y > dev.screen_height) {
      throw Error(ErrorCode::CorruptFile, where + ": touch coordinate outside the screen");
    }
  }
}

}  // namespace detail

struct LoadOptions {
  // Drop subjects that fail validate_subject.
  bool validate = true;
};

struct LoadResult {
  std::vector<SessionRecord> sessions;
  std::vector<std::string> warnings;           // one line per invalid session or rejected subject
  std::vector<std::string> rejected_subjects;  // subjects dropped by validation
};

// Streams whose absence or all-zero content disqualifies a subject: the touch
// stream of every task plus the five sensors recorded during keystroke.
inline std::vector<std::pair<TaskKind, ModalityKind>> required_streams() {
  std::vector<std::pair<TaskKind, ModalityKind>> req;
  for (auto t : kAllTasks) req.emplace_back(t, touch_modality(t));
  for (auto m : kBackgroundModalities) req.emplace_back(TaskKind::Keystroke, m);
  return req;
}

inline bool validate_subject(const std::vector<SessionRecord>& sessions) {
  if (sessions.size() != 5) return false;
  std::set<int> indices;
  for (const auto& s : sessions) indices.insert(s.session_index);
  if (indices != std::set<int>{1, 2, 3, 4, 5}) return false;
  for (const auto& s : sessions) {
    for (auto [task, modality] : required_streams()) {
      const RawSeries* series = s.find(task, modality);
      if (series == nullptr || series->empty() || detail::all_zero(*series)) return false;
    }
  }
  return true;
}

inline SamplingInfo estimate_sampling_frequency(const RawSeries& series) {
  if (series.size() < 2) {
    throw Error(ErrorCode::SamplingUndefined, "need at least two samples");
  }
  const double duration_s =
      static_cast<double>(series.timestamps.back() - series.timestamps.front()) / 1000.0;
  if (duration_s <= 0.0) throw Error(ErrorCode::SamplingUndefined, "zero duration");
  return {static_cast<double>(series.size() - 1) / duration_s};
}

inline std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (!line.empty() && line.front() != '#') ids.push_back(line);
  }
  return ids;
}

inline SessionRecord load_session(const std::filesystem::path& dir, const std::string& subject_id,
                                  int session_index) {
  namespace fs = std::filesystem;
  SessionRecord rec;
  rec.subject_id = subject_id;
  rec.session_index = session_index;
  rec.device = detail::read_device_csv(dir / "device.csv");
  for (auto task : kAllTasks) {
    fs::path task_dir = dir / std::string(name(task));
    if (!fs::is_directory(task_dir)) continue;
    TaskStreams streams;
    auto load_one = [&](ModalityKind m) {
      fs::path file = task_dir / (std::string(name(m)) + ".csv");
      if (!fs::exists(file)) return;
      RawSeries s = detail::read_stream_csv(file, m);
      if (is_touch(m) && m != ModalityKind::TouchKeystroke) {
        detail::check_touch_bounds(s, rec.device, file.string());
      }
      streams.emplace(m, std::move(s));
    };
    load_one(touch_modality(task));
    for (auto m : kBackgroundModalities) load_one(m);
    rec.streams.emplace(task, std::move(streams));
  }
  return rec;
}

inline LoadResult load_dataset(const std::filesystem::path& root,
                               const std::optional<std::filesystem::path>& manifest = std::nullopt,
                               LoadOptions options = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorCode::Io, "dataset root is not a readable directory: " + root.string());
  }
  std::optional<std::set<std::string>> include;
  if (manifest) {
    auto ids = read_manifest(*manifest);
    include.emplace(ids.begin(), ids.end());
  }

  std::vector<std::string> subjects;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    if (!entry.is_directory()) continue;
    std::string id = entry.path().filename().string();
    if (include && !include->count(id)) continue;
    subjects.push_back(id);
  }
  if (ec) throw Error(ErrorCode::Io, "cannot list " + root.string() + ": " + ec.message());
  std::sort(subjects.begin(), subjects.end());

  LoadResult result;
  for (const auto& id : subjects) {
    std::map<int, fs::path> session_dirs;
    for (const auto& entry : fs::directory_iterator(root / id)) {
      std::string dn = entry.path().filename().string();
      std::int64_t k = 0;
      if (entry.is_directory() && dn.rfind("session_", 0) == 0 && detail::parse_int(dn.substr(8), k)) {
        session_dirs.emplace(static_cast<int>(k), entry.path());
      }
    }
    std::vector<SessionRecord> loaded;
    for (const auto& [k, dir] : session_dirs) {
      if (loaded.size() == 5) break;  // extra sessions beyond the first five are ignored
      try {
        loaded.push_back(load_session(dir, id, k));
      } catch (const Error& e) {
        result.warnings.push_back(id + "/session_" + std::to_string(k) + ": invalid (" + e.what() + ")");
      }
    }
    if (options.validate && !validate_subject(loaded)) {
      result.rejected_subjects.push_back(id);
      result.warnings.push_back(id + ": rejected (incomplete sessions or all-zero streams)");
      continue;
    }
    for (auto& s : loaded) result.sessions.push_back(std::move(s));
  }
  return result;
}

inline void write_dataset(const std::filesystem::path& root, const std::vector<SessionRecord>& sessions) {
  namespace fs = std::filesystem;
  for (const auto& s : sessions) {
    fs::path dir = root / s.subject_id / ("session_" + std::to_string(s.session_index));
    fs::create_directories(dir);
    {
      std::ofstream dev(dir / "device.csv", std::ios::binary);
      if (!dev) throw Error(ErrorCode::Io, "cannot write " + (dir / "device.csv").string());
      dev << "screen_width,screen_height,model\n"
          << s.device.screen_width << ',' << s.device.screen_height << ',' << s.device.device_model
          << '\n';
    }
    for (const auto& [task, streams] : s.streams) {
      fs::path task_dir = dir / std::string(name(task));
      fs::create_directories(task_dir);
      for (const auto& [modality, series] : streams) {
        detail::write_stream_csv(task_dir / (std::string(name(modality)) + ".csv"), modality, series);
      }
    }
  }
}

// Subjects that appear in the session list, sorted.
inline std::vector<std::string> subject_ids(const std::vector<SessionRecord>& sessions) {
  std::set<std::string> ids;
  for (const auto& s : sessions) ids.insert(s.subject_id);
  return {ids.begin(), ids.end()};
}

inline DatasetSplit split_dataset(std::vector<std::string> subjects, std::uint64_t seed, int n_val,
                                  int n_test) {
  if (n_val < 0 || n_test < 0 || static_cast<std::size_t>(n_val + n_test) > subjects.size()) {
    throw Error(ErrorCode::InsufficientSubjects,
                std::to_string(subjects.size()) + " subjects cannot supply " +
                    std::to_string(n_val) + " validation + " + std::to_string(n_test) + " test");
  }
  std::sort(subjects.begin(), subjects.end());
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  DatasetSplit split;
  auto it = subjects.begin();
  split.validation_subjects.assign(it, it + n_val);
  it += n_val;
  split.test_subjects.assign(it, it + n_test);
  it += n_test;
  split.train_subjects.assign(it, subjects.end());
  std::sort(split.train_subjects.begin(), split.train_subjects.end());
  std::sort(split.validation_subjects.begin(), split.validation_subjects.end());
  std::sort(split.test_subjects.begin(), split.test_subjects.end());
  return split;
}

// Sessions of one subject, ordered by session index.
inline std::vector<const SessionRecord*> sessions_of(const std::vector<SessionRecord>& sessions,
                                                     const std::string& subject_id) {
  std::vector<const SessionRecord*> out;
  for (const auto& s : sessions) {
    if (s.subject_id == subject_id) out.push_back(&s);
  }
  std::sort(out.begin(), out.end(),
            [](const SessionRecord* a, const SessionRecord* b) { return a->session_index < b->session_index; });
  return out;
}

}  // namespace biofuse
