#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace boxrec::geometry {

// Axis-aligned box: center c and non-negative half-widths f, corners c +- f.
struct Hypercuboid {
  std::vector<double> center;
  std::vector<double> offset;

  Hypercuboid() = default;
  Hypercuboid(std::vector<double> c, std::vector<double> f);

  std::size_t dim() const { return center.size(); }
  double lower(std::size_t j) const { return center[j] - offset[j]; }
  double upper(std::size_t j) const { return center[j] + offset[j]; }
};

struct DistanceParams {
  double gamma = 0.5;
  double alpha = 200.0;
  bool use_additional = false;

  void validate() const;
};

enum class BoxMode { kSingle, kConcentric, kIndependent };

struct BoxSet {
  BoxMode mode = BoxMode::kSingle;
  std::vector<Hypercuboid> boxes;

  void validate() const;
  std::size_t dim() const { return boxes.empty() ? 0 : boxes.front().dim(); }
};

// Clamp of the item onto the closed box (the point of the box closest to the
// item; the item itself when it is inside).
std::vector<double> nearest_surface_point(const Hypercuboid& box, std::span<const double> item);

// Squared distance from the item to its clamp point. Zero iff inside.
double outside_distance(const Hypercuboid& box, std::span<const double> item);

// Squared distance from the clamp point to the center.
double inside_distance(const Hypercuboid& box, std::span<const double> item);

// outside + gamma * inside, plus the exterior penalty when enabled.
// Smaller means preferred.
double composite_distance(const Hypercuboid& box, std::span<const double> item, const DistanceParams& params);

// 2*(sigmoid(alpha * outside) - 1/2) * ||offset||^2. Zero on the closed box,
// strictly below ||offset||^2 outside it.
double additional_distance(const Hypercuboid& box, std::span<const double> item, double alpha);

// Shared center, M offsets: sum of outside distances plus gamma times the
// minimum inside distance. The exterior penalty, when enabled, is the
// per-box maximum so the M=1 case reduces exactly to composite_distance.
double concentric_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params);

// Minimum per-box composite distance; exterior penalty is the per-box
// maximum, added to the minimum.
double independent_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params);

// Mode dispatch over the three forms above.
double box_set_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params);

// Closed-box membership: lower <= item <= upper in every coordinate.
bool contains(const Hypercuboid& box, std::span<const double> item);

}  // namespace boxrec::geometry
