#pragma once

// Per-timestamp feature extraction for sensor, touch and keystroke streams.
//
// Sensors:   downsample by D -> per-axis z-normalization -> backward-difference
//            derivatives (1st, 2nd) -> DFT magnitude of the normalized axes.
// Touch:     x / screen_width, y / screen_height, znorm(p), then the same
//            derivative and spectrum channels, no downsampling.
// Keystroke: [inter-press seconds clipped to [0, 5], keycode / 255].
//
// Spectrum channels are index-aligned with the time axis. They are computed here
// over the whole matrix and recomputed per window by the windowing stage.

#include <Eigen/Dense>
#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "biofuse/dataset.hpp"
#include "biofuse/error.hpp"
#include "biofuse/modality.hpp"

namespace biofuse {

inline constexpr double kStdEpsilon = 1e-8;
inline constexpr double kMaxInterPressSeconds = 5.0;
inline constexpr double kKeycodeScale = 255.0;

enum class DownsampleRatio : int { One = 1, Two = 2, Four = 4 };

struct FeatureMatrix {
  ModalityKind modality = ModalityKind::Accelerometer;
  std::vector<std::string> channels;
  Eigen::MatrixXd data;  // [T' x C]

  Eigen::Index length() const { return data.rows(); }
};

// Number of leading channels that carry the normalized signal itself
// (and are the source of the spectrum channels, when present).
constexpr int signal_channels(ModalityKind m) {
  switch (m) {
    case ModalityKind::GravitySensor: return 1;
    case ModalityKind::TouchKeystroke: return 2;
    default: return 3;
  }
}

constexpr bool has_spectrum(ModalityKind m) { return m != ModalityKind::TouchKeystroke; }

inline std::vector<std::string> channel_labels(ModalityKind m) {
  if (m == ModalityKind::TouchKeystroke) return {"inter_press_time", "normalized_keycode"};
  if (m == ModalityKind::GravitySensor) return {"v", "v'", "v''", "fft(v)"};
  const std::vector<std::string> axes =
      is_background(m) ? std::vector<std::string>{"x", "y", "z"} : std::vector<std::string>{"x", "y", "p"};
  std::vector<std::string> out;
  for (const auto& a : axes) out.push_back(a);
  for (const auto& a : axes) out.push_back(a + "'");
  for (const auto& a : axes) out.push_back(a + "''");
  for (const auto& a : axes) out.push_back("fft(" + a + ")");
  return out;
}

inline DownsampleRatio downsample_ratio(SamplingInfo info) {
  if (info.f_s < 75.0) return DownsampleRatio::One;
  if (info.f_s < 150.0) return DownsampleRatio::Two;
  return DownsampleRatio::Four;
}

// Keeps samples 0, D, 2D, ...
inline RawSeries downsample(const RawSeries& series, DownsampleRatio ratio) {
  const Eigen::Index d = static_cast<Eigen::Index>(ratio);
  if (d == 1) return series;
  const Eigen::Index n = (series.size() + d - 1) / d;
  RawSeries out;
  out.timestamps.reserve(static_cast<std::size_t>(n));
  out.values.resize(n, series.channels());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.timestamps.push_back(series.timestamps[static_cast<std::size_t>(i * d)]);
    out.values.row(i) = series.values.row(i * d);
  }
  return out;
}

inline Eigen::VectorXd znorm(const Eigen::Ref<const Eigen::VectorXd>& signal) {
  const Eigen::Index n = signal.size();
  if (n == 0) return Eigen::VectorXd();
  const double mean = signal.mean();
  const double var = (signal.array() - mean).square().sum() / static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (!(sd > kStdEpsilon)) return Eigen::VectorXd::Zero(n);
  return (signal.array() - mean) / sd;
}

// Backward difference with d[0] = 0; order 2 applies the rule twice.
inline Eigen::VectorXd derivative(const Eigen::Ref<const Eigen::VectorXd>& signal, int order) {
  if (order != 1 && order != 2) {
    throw Error(ErrorCode::InvalidArgument, "derivative order must be 1 or 2");
  }
  Eigen::VectorXd d = Eigen::VectorXd::Zero(signal.size());
  for (Eigen::Index t = 1; t < signal.size(); ++t) d[t] = signal[t] - signal[t - 1];
  return order == 1 ? d : derivative(d, 1);
}

namespace detail {

// FFTW planning is not thread-safe; execution with new-array functions is.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan plan_for(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(n, p);
    return p;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [n, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mu_;
  std::map<int, fftw_plan> plans_;
};

}  // namespace detail

// |X[k]| for the length-n DFT X[k] = sum_t s[t] exp(-2 pi i k t / n).
inline Eigen::VectorXd fft_magnitude(const Eigen::Ref<const Eigen::VectorXd>& signal) {
  const int n = static_cast<int>(signal.size());
  Eigen::VectorXd mag = Eigen::VectorXd::Zero(n);
  if (n == 0) return mag;
  fftw_plan plan = detail::FftPlanCache::instance().plan_for(n);
  double* in = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  std::copy(signal.data(), signal.data() + n, in);
  fftw_execute_dft_r2c(plan, in, out);
  for (int k = 0; k <= n / 2; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  // Real input: |X[n-k]| = |X[k]|.
  for (int k = n / 2 + 1; k < n; ++k) mag[k] = mag[n - k];
  fftw_free(in);
  fftw_free(out);
  return mag;
}

// Fills the derivative and spectrum channels from the signal channels already
// present in columns [0, k). Used for whole matrices and for single windows.
inline void fill_derived_channels(Eigen::MatrixXd& data, ModalityKind m) {
  if (!has_spectrum(m)) return;
  const int k = signal_channels(m);
  for (int a = 0; a < k; ++a) {
    Eigen::VectorXd s = data.col(a);
    data.col(k + a) = derivative(s, 1);
    data.col(2 * k + a) = derivative(s, 2);
    data.col(3 * k + a) = fft_magnitude(s);
  }
}

// Recomputes only the spectrum channels, e.g. after slicing and zero padding.
inline void refresh_spectrum(Eigen::MatrixXd& data, ModalityKind m) {
  if (!has_spectrum(m)) return;
  const int k = signal_channels(m);
  for (int a = 0; a < k; ++a) data.col(3 * k + a) = fft_magnitude(data.col(a));
}

namespace detail {

inline void check_finite(const FeatureMatrix& fm) {
  if (!fm.data.allFinite()) {
    throw Error(ErrorCode::NonFinite, std::string(name(fm.modality)) + ": non-finite feature");
  }
}

}  // namespace detail

inline FeatureMatrix build_background_features(const RawSeries& series, SamplingInfo info,
                                               ModalityKind modality) {
  if (!is_background(modality)) {
    throw Error(ErrorCode::InvalidArgument, "not a background sensor: " + std::string(name(modality)));
  }
  if (!(info.f_s > 0.0)) throw Error(ErrorCode::SamplingUndefined, "sampling frequency must be positive");
  if (series.channels() != raw_channels(modality)) {
    throw Error(ErrorCode::DimensionMismatch, std::string(name(modality)) + " expects " +
                                                  std::to_string(raw_channels(modality)) + " columns");
  }
  RawSeries ds = downsample(series, downsample_ratio(info));
  FeatureMatrix fm;
  fm.modality = modality;
  fm.channels = channel_labels(modality);
  fm.data = Eigen::MatrixXd::Zero(ds.size(), feature_channels(modality));
  for (int a = 0; a < signal_channels(modality); ++a) fm.data.col(a) = znorm(ds.values.col(a));
  fill_derived_channels(fm.data, modality);
  detail::check_finite(fm);
  return fm;
}

// Estimates the sampling frequency from the stream itself.
inline FeatureMatrix build_background_features(const RawSeries& series, ModalityKind modality) {
  return build_background_features(series, estimate_sampling_frequency(series), modality);
}

inline FeatureMatrix build_touch_features(const RawSeries& series, const DeviceMeta& device,
                                          ModalityKind modality) {
  if (!is_touch(modality) || modality == ModalityKind::TouchKeystroke) {
    throw Error(ErrorCode::InvalidArgument, "not a scroll/draw/tap stream: " + std::string(name(modality)));
  }
  if (device.screen_width <= 0 || device.screen_height <= 0) {
    throw Error(ErrorCode::InvalidDevice, "screen dimensions must be positive");
  }
  if (series.channels() != 3) throw Error(ErrorCode::DimensionMismatch, "touch stream expects x,y,p");
  FeatureMatrix fm;
  fm.modality = modality;
  fm.channels = channel_labels(modality);
  fm.data = Eigen::MatrixXd::Zero(series.size(), 12);
  fm.data.col(0) = series.values.col(0) / static_cast<double>(device.screen_width);
  fm.data.col(1) = series.values.col(1) / static_cast<double>(device.screen_height);
  fm.data.col(2) = znorm(series.values.col(2));
  fill_derived_channels(fm.data, modality);
  detail::check_finite(fm);
  return fm;
}

inline FeatureMatrix build_keystroke_features(const RawSeries& series) {
  if (series.channels() != 1) throw Error(ErrorCode::DimensionMismatch, "keystroke stream expects keycode");
  FeatureMatrix fm;
  fm.modality = ModalityKind::TouchKeystroke;
  fm.channels = channel_labels(fm.modality);
  fm.data = Eigen::MatrixXd::Zero(series.size(), 2);
  for (Eigen::Index t = 0; t < series.size(); ++t) {
    const double code = series.values(t, 0);
    if (!(code >= 0.0 && code <= 255.0)) {
      throw Error(ErrorCode::InvalidKeycode, "keycode " + std::to_string(code) + " outside [0, 255]");
    }
    if (t > 0) {
      const double gap =
          static_cast<double>(series.timestamps[t] - series.timestamps[t - 1]) / 1000.0;
      fm.data(t, 0) = std::clamp(gap, 0.0, kMaxInterPressSeconds);
    }
    fm.data(t, 1) = code / kKeycodeScale;
  }
  return fm;
}

// Dispatches on modality. Sensor streams use `info` when given, otherwise the
// frequency estimated from the stream.
inline FeatureMatrix build_features(ModalityKind modality, const RawSeries& series,
                                    const DeviceMeta& device,
                                    std::optional<SamplingInfo> info = std::nullopt) {
  if (series.empty()) throw Error(ErrorCode::EmptySequence, std::string(name(modality)) + ": empty stream");
  if (is_background(modality)) {
    return info ? build_background_features(series, *info, modality)
                : build_background_features(series, modality);
  }
  if (modality == ModalityKind::TouchKeystroke) return build_keystroke_features(series);
  return build_touch_features(series, device, modality);
}

// Samples whose timestamps fall within [first, last] of the reference stream.
inline RawSeries clip_to_range(const RawSeries& series, std::int64_t first, std::int64_t last) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < series.size(); ++i) {
    auto t = series.timestamps[static_cast<std::size_t>(i)];
    if (t >= first && t <= last) keep.push_back(i);
  }
  RawSeries out;
  out.values.resize(static_cast<Eigen::Index>(keep.size()), series.channels());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.timestamps.push_back(series.timestamps[static_cast<std::size_t>(keep[j])]);
    out.values.row(static_cast<Eigen::Index>(j)) = series.values.row(keep[j]);
  }
  return out;
}

// Features for one (task, modality) stream of a session. Sensor streams can be
// restricted to the time span of the simultaneous touch stream; the sampling
// frequency is always estimated on the full stream. Returns nullopt when the
// stream is missing or empty after clipping.
inline std::optional<FeatureMatrix> session_features(const SessionRecord& session, TaskKind task,
                                                     ModalityKind modality, bool clip_to_touch) {
  const RawSeries* series = session.find(task, modality);
  if (series == nullptr || series->empty()) return std::nullopt;
  if (!is_background(modality)) return build_features(modality, *series, session.device);
  SamplingInfo info = estimate_sampling_frequency(*series);
  if (!clip_to_touch) return build_background_features(*series, info, modality);
  const RawSeries* touch = session.find(task, touch_modality(task));
  if (touch == nullptr || touch->empty()) return std::nullopt;
  RawSeries clipped = clip_to_range(*series, touch->timestamps.front(), touch->timestamps.back());
  if (clipped.empty()) return std::nullopt;
  return build_background_features(clipped, info, modality);
}

}  // namespace biofuse
