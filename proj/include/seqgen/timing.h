#pragma once

#include <array>
#include <chrono>
#include <string_view>

namespace seqgen {

using Clock = std::chrono::steady_clock;

inline double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

enum class Stage : size_t {
  kModelLoad,
  kPreprocess,
  kEncode,
  kDecode,
  kCacheMaintenance,
  kNgramBlocking,
  kSearchBookkeeping,
  kPostProcess,
  kOther,
};

inline constexpr size_t kNumStages = 9;

std::string_view stage_name(Stage stage);

// Accumulated wall-clock seconds per stage.
class StageTimes {
 public:
  double& operator[](Stage s) { return seconds_[static_cast<size_t>(s)]; }
  double operator[](Stage s) const { return seconds_[static_cast<size_t>(s)]; }

  StageTimes& operator+=(const StageTimes& other) {
    for (size_t i = 0; i < kNumStages; ++i) seconds_[i] += other.seconds_[i];
    return *this;
  }

  double total() const {
    double t = 0;
    for (double s : seconds_) t += s;
    return t;
  }

  // Seconds spent inside generation (encode through other, excluding
  // model load, preprocess and post-process).
  double generation() const;

 private:
  std::array<double, kNumStages> seconds_{};
};

// Adds the lifetime of the guard to one stage; no-op when `times` is null.
class StageTimer {
 public:
  StageTimer(StageTimes* times, Stage stage) : times_(times), stage_(stage), start_(Clock::now()) {}
  ~StageTimer() {
    if (times_) (*times_)[stage_] += seconds_between(start_, Clock::now());
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  StageTimes* times_;
  Stage stage_;
  Clock::time_point start_;
};

}  // namespace seqgen
