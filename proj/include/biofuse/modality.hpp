#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "biofuse/error.hpp"

namespace biofuse {

enum class ModalityKind {
  Accelerometer,
  GravitySensor,
  Gyroscope,
  LinearAccelerometer,
  Magnetometer,
  TouchKeystroke,
  TouchScrollUp,
  TouchScrollDown,
  TouchDraw8,
  TouchTap,
};

enum class TaskKind { Keystroke, ScrollUp, ScrollDown, Draw8, Tap };

inline constexpr std::array<ModalityKind, 10> kAllModalities = {
    ModalityKind::Accelerometer,  ModalityKind::GravitySensor, ModalityKind::Gyroscope,
    ModalityKind::LinearAccelerometer, ModalityKind::Magnetometer,
    ModalityKind::TouchKeystroke, ModalityKind::TouchScrollUp, ModalityKind::TouchScrollDown,
    ModalityKind::TouchDraw8,     ModalityKind::TouchTap,
};

inline constexpr std::array<ModalityKind, 5> kBackgroundModalities = {
    ModalityKind::Accelerometer, ModalityKind::GravitySensor, ModalityKind::Gyroscope,
    ModalityKind::LinearAccelerometer, ModalityKind::Magnetometer,
};

inline constexpr std::array<TaskKind, 5> kAllTasks = {
    TaskKind::Keystroke, TaskKind::ScrollUp, TaskKind::ScrollDown, TaskKind::Draw8, TaskKind::Tap,
};

constexpr bool is_background(ModalityKind m) {
  switch (m) {
    case ModalityKind::Accelerometer:
    case ModalityKind::GravitySensor:
    case ModalityKind::Gyroscope:
    case ModalityKind::LinearAccelerometer:
    case ModalityKind::Magnetometer:
      return true;
    default:
      return false;
  }
}

constexpr bool is_touch(ModalityKind m) { return !is_background(m); }

constexpr ModalityKind touch_modality(TaskKind t) {
  switch (t) {
    case TaskKind::Keystroke: return ModalityKind::TouchKeystroke;
    case TaskKind::ScrollUp: return ModalityKind::TouchScrollUp;
    case TaskKind::ScrollDown: return ModalityKind::TouchScrollDown;
    case TaskKind::Draw8: return ModalityKind::TouchDraw8;
    case TaskKind::Tap: return ModalityKind::TouchTap;
  }
  return ModalityKind::TouchKeystroke;
}

// Only defined for touch modalities.
constexpr std::optional<TaskKind> task_of(ModalityKind m) {
  switch (m) {
    case ModalityKind::TouchKeystroke: return TaskKind::Keystroke;
    case ModalityKind::TouchScrollUp: return TaskKind::ScrollUp;
    case ModalityKind::TouchScrollDown: return TaskKind::ScrollDown;
    case ModalityKind::TouchDraw8: return TaskKind::Draw8;
    case ModalityKind::TouchTap: return TaskKind::Tap;
    default: return std::nullopt;
  }
}

constexpr std::string_view name(ModalityKind m) {
  switch (m) {
    case ModalityKind::Accelerometer: return "accelerometer";
    case ModalityKind::GravitySensor: return "gravity";
    case ModalityKind::Gyroscope: return "gyroscope";
    case ModalityKind::LinearAccelerometer: return "linear_accelerometer";
    case ModalityKind::Magnetometer: return "magnetometer";
    case ModalityKind::TouchKeystroke: return "touch_keystroke";
    case ModalityKind::TouchScrollUp: return "touch_scroll_up";
    case ModalityKind::TouchScrollDown: return "touch_scroll_down";
    case ModalityKind::TouchDraw8: return "touch_draw8";
    case ModalityKind::TouchTap: return "touch_tap";
  }
  return "";
}

constexpr std::string_view name(TaskKind t) {
  switch (t) {
    case TaskKind::Keystroke: return "keystroke";
    case TaskKind::ScrollUp: return "scroll_up";
    case TaskKind::ScrollDown: return "scroll_down";
    case TaskKind::Draw8: return "draw8";
    case TaskKind::Tap: return "tap";
  }
  return "";
}

// Table acronyms: K, SU, SD, T, TD for touch; A, Gr, Gy, L, M for sensors.
constexpr std::string_view acronym(ModalityKind m) {
  switch (m) {
    case ModalityKind::Accelerometer: return "A";
    case ModalityKind::GravitySensor: return "Gr";
    case ModalityKind::Gyroscope: return "Gy";
    case ModalityKind::LinearAccelerometer: return "L";
    case ModalityKind::Magnetometer: return "M";
    case ModalityKind::TouchKeystroke: return "K";
    case ModalityKind::TouchScrollUp: return "SU";
    case ModalityKind::TouchScrollDown: return "SD";
    case ModalityKind::TouchDraw8: return "TD";
    case ModalityKind::TouchTap: return "T";
  }
  return "";
}

inline ModalityKind parse_modality(std::string_view s) {
  for (auto m : kAllModalities) {
    if (name(m) == s || acronym(m) == s) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown modality '" + std::string(s) + "'");
}

inline TaskKind parse_task(std::string_view s) {
  for (auto t : kAllTasks) {
    if (name(t) == s) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

// Columns in the raw CSV stream, excluding the timestamp.
constexpr int raw_channels(ModalityKind m) {
  switch (m) {
    case ModalityKind::GravitySensor: return 1;
    case ModalityKind::TouchKeystroke: return 1;
    default: return 3;
  }
}

// Columns of the per-timestamp feature vector.
constexpr int feature_channels(ModalityKind m) {
  switch (m) {
    case ModalityKind::GravitySensor: return 4;
    case ModalityKind::TouchKeystroke: return 2;
    default: return 12;
  }
}

// Modalities fused for one task: its touch stream first, then the five sensors.
constexpr std::array<ModalityKind, 6> task_modalities(TaskKind t) {
  return {touch_modality(t),
          ModalityKind::Accelerometer,
          ModalityKind::GravitySensor,
          ModalityKind::Gyroscope,
          ModalityKind::LinearAccelerometer,
          ModalityKind::Magnetometer};
}

}  // namespace biofuse
