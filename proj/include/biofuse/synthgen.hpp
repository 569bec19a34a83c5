#pragma once

// Synthetic multimodal sessions with controllable subject separability.
//
// Every generative parameter has a shared center c and a half-range r. A
// subject's value is c + separability * r * u with u ~ U(-1, 1) drawn once per
// subject, so separability 0 gives every subject the same profile. Sessions
// perturb the profile by a small relative jitter. Modalities listed as
// uninformative always use the shared center.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"
#include "biofuse/rng.hpp"

namespace biofuse {

inline constexpr std::string_view kTypedSentence = "En un lugar de la Mancha, de cuyo nombre no quiero acordarme";

struct SensorProfile {
  // Per axis: two sinusoid frequencies (Hz), the relative amplitude and phase
  // of the second component.
  std::array<double, 3> f1{}, f2{}, a2{}, ph{};
};

struct SubjectProfile {
  std::array<SensorProfile, 5> sensors{};  // kBackgroundModalities order
  double drift = 0.0;                      // random-walk step, relative to signal scale
  double key_mean = 0.0;                   // s
  double key_std = 0.0;                    // log-normal sigma
  std::array<double, 16> key_factors{};    // per (previous, current) key class
  double scroll_speed = 0.0, scroll_curve = 0.0, scroll_x = 0.0, scroll_pressure_peak = 0.0;
  double draw_width = 0.0, draw_aspect = 0.0, draw_period = 0.0, draw_tilt = 0.0;
  double tap_cadence = 0.0, tap_dx = 0.0, tap_dy = 0.0, tap_pressure = 0.0;
};

struct SynthConfig {
  int n_subjects = 20;
  int sessions_per_subject = 5;
  int sensor_rate_hz = 100;  // 50, 100, 200, or 0 for a per-subject mix
  double separability = 0.8;
  std::uint64_t seed = 1;
  double noise = 0.2;           // white noise, relative to signal amplitude
  double session_jitter = 0.03; // relative per-session parameter jitter
  int touch_rate_hz = 60;
  std::set<ModalityKind> uninformative;
  int screen_width = 1080;
  int screen_height = 2280;

  void validate() const {
    if (n_subjects < 1) throw Error(ErrorCode::InvalidConfig, "synth.n_subjects must be at least 1");
    if (sessions_per_subject != 5) throw Error(ErrorCode::InvalidConfig, "synth.sessions_per_subject must be 5");
    if (sensor_rate_hz != 0 && sensor_rate_hz != 50 && sensor_rate_hz != 100 && sensor_rate_hz != 200) {
      throw Error(ErrorCode::InvalidConfig, "synth.sensor_rate_hz must be 50, 100, 200 or 0 (mixed)");
    }
    if (!(separability >= 0.0 && separability <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "synth.separability must lie in [0, 1]");
    }
    if (!(noise >= 0.0) || !(session_jitter >= 0.0)) {
      throw Error(ErrorCode::InvalidConfig, "synth noise levels must be non-negative");
    }
    if (touch_rate_hz < 10) throw Error(ErrorCode::InvalidConfig, "synth.touch_rate_hz must be at least 10");
  }
};

namespace detail {

// Groups of parameters. Group k of a modality is skipped (kept at the center)
// when that modality is uninformative.
enum class ParamGroup { Sensor0, Sensor1, Sensor2, Sensor3, Sensor4, Keystroke, Scroll, Draw8, Tap, Shared };

inline ParamGroup group_of(ModalityKind m) {
  switch (m) {
    case ModalityKind::Accelerometer: return ParamGroup::Sensor0;
    case ModalityKind::GravitySensor: return ParamGroup::Sensor1;
    case ModalityKind::Gyroscope: return ParamGroup::Sensor2;
    case ModalityKind::LinearAccelerometer: return ParamGroup::Sensor3;
    case ModalityKind::Magnetometer: return ParamGroup::Sensor4;
    case ModalityKind::TouchKeystroke: return ParamGroup::Keystroke;
    case ModalityKind::TouchScrollUp:
    case ModalityKind::TouchScrollDown: return ParamGroup::Scroll;
    case ModalityKind::TouchDraw8: return ParamGroup::Draw8;
    case ModalityKind::TouchTap: return ParamGroup::Tap;
  }
  return ParamGroup::Shared;
}

// Calls f(value, center, half_range, group) for every generative parameter in
// a fixed order.
template <typename Profile, typename F>
void for_each_param(Profile& p, F&& f) {
  for (std::size_t s = 0; s < p.sensors.size(); ++s) {
    auto g = static_cast<ParamGroup>(s);
    auto& sp = p.sensors[s];
    for (std::size_t a = 0; a < 3; ++a) {
      f(sp.f1[a], 1.6 + 0.3 * static_cast<double>(a), 1.0, g);
      f(sp.f2[a], 4.5 + 0.5 * static_cast<double>(a), 2.5, g);
      f(sp.a2[a], 0.6, 0.4, g);
      f(sp.ph[a], 0.0, 3.0, g);
    }
  }
  f(p.drift, 0.02, 0.015, ParamGroup::Shared);
  f(p.key_mean, 0.28, 0.12, ParamGroup::Keystroke);
  f(p.key_std, 0.15, 0.08, ParamGroup::Keystroke);
  for (auto& k : p.key_factors) f(k, 1.0, 0.45, ParamGroup::Keystroke);
  f(p.scroll_speed, 2000.0, 900.0, ParamGroup::Scroll);
  f(p.scroll_curve, 0.0, 120.0, ParamGroup::Scroll);
  f(p.scroll_x, 0.5, 0.25, ParamGroup::Scroll);
  f(p.scroll_pressure_peak, 0.5, 0.3, ParamGroup::Scroll);
  f(p.draw_width, 500.0, 250.0, ParamGroup::Draw8);
  f(p.draw_aspect, 1.4, 0.6, ParamGroup::Draw8);
  f(p.draw_period, 1.5, 0.6, ParamGroup::Draw8);
  f(p.draw_tilt, 0.0, 0.5, ParamGroup::Draw8);
  f(p.tap_cadence, 0.45, 0.2, ParamGroup::Tap);
  f(p.tap_dx, 0.0, 60.0, ParamGroup::Tap);
  f(p.tap_dy, 0.0, 60.0, ParamGroup::Tap);
  f(p.tap_pressure, 0.5, 0.3, ParamGroup::Tap);
}

inline bool group_uninformative(ParamGroup g, const std::set<ModalityKind>& uninformative) {
  for (auto m : uninformative) {
    if (group_of(m) == g) return true;
  }
  return false;
}

inline int key_class(char c) {
  if (c == ' ') return 1;
  if (c >= 'A' && c <= 'Z') return 2;
  if (c >= 'a' && c <= 'z') return 0;
  return 3;
}

inline double gauss(Rng& rng, double sd) {
  std::normal_distribution<double> d(0.0, 1.0);
  return sd * d(rng);
}

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline int session_sensor_rate(const SynthConfig& cfg, std::size_t subject_index) {
  if (cfg.sensor_rate_hz != 0) return cfg.sensor_rate_hz;
  static constexpr std::array<int, 3> kRates = {50, 100, 200};
  return kRates[subject_index % kRates.size()];
}

}  // namespace detail

// The shared center profile.
inline SubjectProfile center_profile() {
  SubjectProfile p;
  detail::for_each_param(p, [](double& v, double c, double, detail::ParamGroup) { v = c; });
  return p;
}

inline SubjectProfile make_profile(const SynthConfig& cfg, std::size_t subject_index) {
  Rng rng(derive_seed(derive_seed(cfg.seed, "profile"), static_cast<std::uint64_t>(subject_index)));
  SubjectProfile p;
  detail::for_each_param(p, [&](double& v, double c, double r, detail::ParamGroup g) {
    const double u = detail::uniform(rng, -1.0, 1.0);  // always drawn, keeps streams aligned
    v = detail::group_uninformative(g, cfg.uninformative) ? c : c + cfg.separability * r * u;
  });
  return p;
}

// Profile realized in one session: each parameter moves by
// session_jitter * half_range * N(0, 1).
inline SubjectProfile session_profile(const SubjectProfile& base, double jitter, Rng& rng) {
  SubjectProfile p = base;
  detail::for_each_param(p, [&](double& v, double, double r, detail::ParamGroup) { v += detail::gauss(rng, jitter * r); });
  // Keep parameters that must stay positive away from zero.
  for (auto& s : p.sensors) {
    for (std::size_t a = 0; a < 3; ++a) {
      s.f1[a] = std::max(s.f1[a], 0.2);
      s.f2[a] = std::max(s.f2[a], 0.5);
    }
  }
  p.drift = std::max(p.drift, 0.0);
  p.key_mean = std::max(p.key_mean, 0.05);
  p.key_std = std::max(p.key_std, 0.0);
  for (auto& k : p.key_factors) k = std::max(k, 0.2);
  p.scroll_speed = std::max(p.scroll_speed, 300.0);
  p.draw_width = std::max(p.draw_width, 100.0);
  p.draw_aspect = std::max(p.draw_aspect, 0.3);
  p.draw_period = std::max(p.draw_period, 0.4);
  p.tap_cadence = std::max(p.tap_cadence, 0.1);
  return p;
}

// Normalized Euclidean distance: each parameter is divided by its half-range
// and the result by sqrt(number of parameters).
inline double oracle_distance(const SubjectProfile& a, const SubjectProfile& b) {
  std::vector<double> va, vb, scale;
  SubjectProfile ca = a, cb = b;
  detail::for_each_param(ca, [&](double& v, double, double r, detail::ParamGroup) {
    va.push_back(v);
    scale.push_back(r);
  });
  detail::for_each_param(cb, [&](double& v, double, double, detail::ParamGroup) { vb.push_back(v); });
  double sum = 0.0;
  for (std::size_t k = 0; k < va.size(); ++k) {
    const double d = (va[k] - vb[k]) / scale[k];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(va.size()));
}

namespace detail {

struct TouchTrace {
  std::vector<std::int64_t> t;  // ms
  std::vector<std::array<double, 3>> v;
};

inline RawSeries to_series(const TouchTrace& tr) {
  RawSeries s;
  s.timestamps = tr.t;
  s.values.resize(static_cast<Eigen::Index>(tr.v.size()), 3);
  for (std::size_t r = 0; r < tr.v.size(); ++r) {
    for (int c = 0; c < 3; ++c) s.values(static_cast<Eigen::Index>(r), c) = tr.v[r][static_cast<std::size_t>(c)];
  }
  return s;
}

inline double clamp_to(double v, double hi) { return std::clamp(v, 0.0, hi); }

inline std::int64_t to_ms(double seconds) { return static_cast<std::int64_t>(std::llround(seconds * 1000.0)); }

constexpr double kLeadIn = 0.5;   // s of sensor data before the first touch
constexpr double kLeadOut = 0.5;  // s of sensor data after the last touch

inline RawSeries keystroke_stream(const SubjectProfile& p, double noise, Rng& rng) {
  RawSeries s;
  s.values.resize(static_cast<Eigen::Index>(kTypedSentence.size()), 1);
  double t = kLeadIn;
  const double sigma = p.key_std * noise / 0.2;
  for (std::size_t k = 0; k < kTypedSentence.size(); ++k) {
    const char c = kTypedSentence[k];
    if (k > 0) {
      const int cls = key_class(kTypedSentence[k - 1]) * 4 + key_class(c);
      t += p.key_mean * p.key_factors[static_cast<std::size_t>(cls)] * std::exp(gauss(rng, sigma));
    }
    s.timestamps.push_back(to_ms(t));
    s.values(static_cast<Eigen::Index>(k), 0) = static_cast<double>(static_cast<unsigned char>(c));
  }
  // Millisecond rounding can merge presses; keep timestamps strictly increasing.
  for (std::size_t k = 1; k < s.timestamps.size(); ++k) {
    s.timestamps[k] = std::max(s.timestamps[k], s.timestamps[k - 1] + 1);
  }
  return s;
}

inline RawSeries scroll_stream(const SubjectProfile& p, bool up, const SynthConfig& cfg, Rng& rng) {
  TouchTrace tr;
  const double w = cfg.screen_width, h = cfg.screen_height;
  const double length = 0.45 * h;
  const double pos_noise = 15.0 * cfg.noise;
  double t = kLeadIn;
  for (int stroke = 0; stroke < 5; ++stroke) {
    const double duration = length / p.scroll_speed;
    const int n = std::max(4, static_cast<int>(std::lround(duration * cfg.touch_rate_hz)));
    const double y0 = up ? 0.75 * h : 0.25 * h;
    for (int k = 0; k < n; ++k) {
      const double u = static_cast<double>(k) / (n - 1);
      const double eased = 0.5 - 0.5 * std::cos(M_PI * u);
      const double x = p.scroll_x * w + p.scroll_curve * std::sin(M_PI * u) + gauss(rng, pos_noise);
      const double y = y0 + (up ? -1.0 : 1.0) * length * eased + gauss(rng, pos_noise);
      const double bump = std::exp(-std::pow((u - p.scroll_pressure_peak) / 0.25, 2.0));
      const double pressure = 0.3 + 0.5 * bump + gauss(rng, 0.05 * cfg.noise);
      tr.t.push_back(to_ms(t + u * duration));
      tr.v.push_back({clamp_to(x, w), clamp_to(y, h), std::max(pressure, 0.0)});
    }
    t += duration + 0.4 + uniform(rng, 0.0, 0.2);
  }
  return to_series(tr);
}

inline RawSeries draw8_stream(const SubjectProfile& p, const SynthConfig& cfg, Rng& rng) {
  TouchTrace tr;
  const double w = cfg.screen_width, h = cfg.screen_height;
  const double pos_noise = 15.0 * cfg.noise;
  const double loops = 2.0;
  const int n = std::max(8, static_cast<int>(std::lround(loops * p.draw_period * cfg.touch_rate_hz)));
  const double ct = std::cos(p.draw_tilt), st = std::sin(p.draw_tilt);
  for (int k = 0; k < n; ++k) {
    const double u = static_cast<double>(k) / (n - 1);
    const double phase = 2.0 * M_PI * loops * u;
    const double lx = 0.5 * p.draw_width * std::sin(phase);
    const double ly = 0.5 * p.draw_width * p.draw_aspect * std::sin(2.0 * phase) * 0.5;
    const double x = 0.5 * w + ct * lx - st * ly + gauss(rng, pos_noise);
    const double y = 0.5 * h + st * lx + ct * ly + gauss(rng, pos_noise);
    const double pressure = 0.5 + 0.2 * std::sin(phase + p.draw_tilt) + gauss(rng, 0.05 * cfg.noise);
    tr.t.push_back(to_ms(kLeadIn + u * loops * p.draw_period));
    tr.v.push_back({clamp_to(x, w), clamp_to(y, h), std::max(pressure, 0.0)});
  }
  return to_series(tr);
}

inline RawSeries tap_stream(const SubjectProfile& p, const SynthConfig& cfg, Rng& rng) {
  TouchTrace tr;
  const double w = cfg.screen_width, h = cfg.screen_height;
  const double pos_noise = 15.0 * cfg.noise;
  double t = kLeadIn;
  for (int k = 0; k < 20; ++k) {
    // Targets visit a 4 x 5 grid in a fixed order.
    const double tx = (0.2 + 0.2 * static_cast<double>(k % 4)) * w;
    const double ty = (0.15 + 0.175 * static_cast<double>((k * 3) % 5)) * h;
    const double x = tx + p.tap_dx * (1.0 + 0.3 * std::sin(static_cast<double>(k))) + gauss(rng, pos_noise);
    const double y = ty + p.tap_dy * (1.0 + 0.3 * std::cos(static_cast<double>(k))) + gauss(rng, pos_noise);
    const double pressure = p.tap_pressure * (1.0 + 0.4 * static_cast<double>(k % 3)) + gauss(rng, 0.05 * cfg.noise);
    tr.t.push_back(to_ms(t));
    tr.v.push_back({clamp_to(x, w), clamp_to(y, h), std::max(pressure, 0.01)});
    t += p.tap_cadence * (1.0 + gauss(rng, 0.1 * cfg.noise));
    t = std::max(t, static_cast<double>(tr.t.back()) / 1000.0 + 0.05);
  }
  return to_series(tr);
}

// Offsets and scales give each sensor plausible magnitudes; z-normalization
// removes them again in feature building.
inline RawSeries sensor_stream(const SensorProfile& sp, ModalityKind m, double drift, double end_s, int rate,
                               double noise, Rng& rng) {
  static constexpr std::array<double, 5> kScale = {1.5, 9.81, 0.8, 1.2, 45.0};
  static constexpr std::array<double, 5> kOffset = {0.0, 0.0, 0.0, 0.0, -20.0};
  std::size_t idx = 0;
  while (kBackgroundModalities[idx] != m) ++idx;
  const int channels = raw_channels(m);
  const auto n = static_cast<Eigen::Index>(std::floor(end_s * rate)) + 1;
  RawSeries s;
  s.timestamps.resize(static_cast<std::size_t>(n));
  s.values.resize(n, channels);
  std::array<double, 3> phase0{}, walk{};
  for (auto& p : phase0) p = uniform(rng, 0.0, 2.0 * M_PI);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / rate;
    s.timestamps[static_cast<std::size_t>(k)] = to_ms(t);
    for (int a = 0; a < channels; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      walk[ua] += gauss(rng, drift);
      const double clean = std::sin(2.0 * M_PI * sp.f1[ua] * t + phase0[ua]) +
                           sp.a2[ua] * std::sin(2.0 * M_PI * sp.f2[ua] * t + 2.0 * phase0[ua] + sp.ph[ua]);
      const double v = clean + walk[ua] + gauss(rng, noise);
      // Gravity is a magnitude around g, so it stays positive.
      s.values(k, a) = m == ModalityKind::GravitySensor ? kScale[idx] + 0.5 * v : kOffset[idx] + kScale[idx] * v;
    }
  }
  return s;
}

}  // namespace detail

inline std::string synth_subject_id(std::size_t index) {
  std::string digits = std::to_string(index + 1);
  return "u" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

inline SessionRecord generate_session(const SubjectProfile& profile, const SynthConfig& cfg,
                                      const std::string& subject_id, int session_index, int sensor_rate, Rng& rng) {
  SessionRecord rec;
  rec.subject_id = subject_id;
  rec.session_index = session_index;
  rec.device = {cfg.screen_width, cfg.screen_height, "synthetic"};
  const SubjectProfile p = session_profile(profile, cfg.session_jitter, rng);
  for (auto task : kAllTasks) {
    const ModalityKind touch = touch_modality(task);
    RawSeries trace;
    switch (task) {
      case TaskKind::Keystroke: trace = detail::keystroke_stream(p, cfg.noise, rng); break;
      case TaskKind::ScrollUp: trace = detail::scroll_stream(p, true, cfg, rng); break;
      case TaskKind::ScrollDown: trace = detail::scroll_stream(p, false, cfg, rng); break;
      case TaskKind::Draw8: trace = detail::draw8_stream(p, cfg, rng); break;
      case TaskKind::Tap: trace = detail::tap_stream(p, cfg, rng); break;
    }
    const double end_s = static_cast<double>(trace.timestamps.back()) / 1000.0 + detail::kLeadOut;
    TaskStreams streams;
    streams.emplace(touch, std::move(trace));
    for (std::size_t s = 0; s < kBackgroundModalities.size(); ++s) {
      const ModalityKind m = kBackgroundModalities[s];
      streams.emplace(m, detail::sensor_stream(p.sensors[s], m, p.drift, end_s, sensor_rate, cfg.noise, rng));
    }
    rec.streams.emplace(task, std::move(streams));
  }
  return rec;
}

struct SynthOutput {
  std::vector<SessionRecord> sessions;
  std::vector<SubjectProfile> profiles;  // index i belongs to synth_subject_id(i)
};

inline SynthOutput generate_sessions(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.n_subjects); ++i) {
    const SubjectProfile profile = make_profile(cfg, i);
    const std::string id = synth_subject_id(i);
    const int rate = detail::session_sensor_rate(cfg, i);
    for (int k = 1; k <= cfg.sessions_per_subject; ++k) {
      Rng rng(derive_seed(derive_seed(derive_seed(cfg.seed, "session"), id), static_cast<std::uint64_t>(k)));
      out.sessions.push_back(generate_session(profile, cfg, id, k, rate, rng));
    }
    out.profiles.push_back(profile);
  }
  return out;
}

inline std::vector<SubjectProfile> generate_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  SynthOutput out = generate_sessions(cfg);
  write_dataset(root, out.sessions);
  return out.profiles;
}

}  // namespace biofuse
