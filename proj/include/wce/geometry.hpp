#pragma once

#include <algorithm>
#include <cmath>

namespace wce {

/// Axis-aligned box in pixel coordinates, corners (x1, y1) and (x2, y2).
template <typename Scalar>
struct Box {
  Scalar x1{}, y1{}, x2{}, y2{};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }

  bool valid() const {
    using std::isfinite;
    return isfinite(x1) && isfinite(y1) && isfinite(x2) && isfinite(y2) && x1 >= Scalar(0) &&
           y1 >= Scalar(0) && x2 > x1 && y2 > y1;
  }

  Box clipped(Scalar max_x, Scalar max_y) const {
    return {std::clamp(x1, Scalar(0), max_x), std::clamp(y1, Scalar(0), max_y),
            std::clamp(x2, Scalar(0), max_x), std::clamp(y2, Scalar(0), max_y)};
  }

  bool operator==(const Box&) const = default;
};

using BoundingBox = Box<double>;

/// Intersection over union; 0 for disjoint boxes.
template <typename Scalar>
Scalar iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Scalar iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= Scalar(0) || ih <= Scalar(0)) return Scalar(0);
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

}  // namespace wce
