#pragma once

// Two images, classes Car and Bus, with every outcome worked out by hand.
//
//   score  image  class  where                      outcome
//   0.95   one    Car    on car A                   TP
//   0.90   one    Car    on car A again             FP (duplicate)
//   0.85   two    Bus    on bus E                   TP
//   0.80   one    Bus    half off bus C, IoU 1/3    FP
//   0.60   two    Car    on car D                   TP
//   0.50   two    Car    empty road                 FP
//   0.30   one    Car    on car B                   TP
//   0.20   one    Bus    on car A                   FP (wrong class)
//
// Running FP count down the list: 0 1 1 2 2 3 3 4, so FPPI = FP / 2 stays
// within 1 down to 0.60, where it equals 1 exactly. At that threshold:
// Car TP 2 FP 1 FN 1 (car B missed), Bus TP 1 FP 1 FN 1 (bus C missed).

#include <vector>

#include "wce/eval.hpp"

namespace wce::fixture {

inline const ClassTable kEvalClasses = ClassTable::with_background({"Car", "Bus"});
inline constexpr std::size_t kCar = 1, kBus = 2;

inline std::vector<Scene> eval_scenes() {
  Scene one{"one", 1280, 720, {}};
  one.objects = {{{0, 0, 100, 100}, kCar}, {{200, 0, 300, 100}, kCar}, {{0, 200, 100, 300}, kBus}};
  Scene two{"two", 1280, 720, {}};
  two.objects = {{{0, 0, 100, 100}, kCar}, {{500, 500, 600, 600}, kBus}};
  return {one, two};
}

inline std::vector<Detection> eval_detections() {
  return {
      {{0, 0, 100, 100}, kCar, 0.95, "one"},     {{2, 2, 100, 100}, kCar, 0.90, "one"},
      {{500, 500, 600, 600}, kBus, 0.85, "two"}, {{0, 250, 100, 350}, kBus, 0.80, "one"},
      {{0, 0, 100, 100}, kCar, 0.60, "two"},     {{700, 100, 800, 200}, kCar, 0.50, "two"},
      {{200, 0, 300, 100}, kCar, 0.30, "one"},   {{0, 0, 100, 100}, kBus, 0.20, "one"},
  };
}

inline constexpr double kEvalThreshold = 0.60;
inline constexpr double kEvalFppi = 1.0;
inline const ClassCounts kEvalCar{2, 1, 1};
inline const ClassCounts kEvalBus{1, 1, 1};

}  // namespace wce::fixture
