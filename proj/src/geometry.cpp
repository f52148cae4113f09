#include "boxrec/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace boxrec::geometry {

namespace {

void check_dims(const Hypercuboid& box, std::span<const double> item) {
  if (box.center.size() != box.offset.size())
    throw std::invalid_argument("hypercuboid: center and offset dimensions differ");
  if (box.dim() != item.size())
    throw std::invalid_argument("box/item dimension mismatch: box is " + std::to_string(box.dim()) +
                                "-d, item is " + std::to_string(item.size()) + "-d");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double squared_offset_norm(const Hypercuboid& box) {
  double s = 0.0;
  for (double f : box.offset) s += f * f;
  return s;
}

}  // namespace

Hypercuboid::Hypercuboid(std::vector<double> c, std::vector<double> f)
    : center(std::move(c)), offset(std::move(f)) {
  if (center.size() != offset.size())
    throw std::invalid_argument("hypercuboid: center and offset dimensions differ");
  for (double x : offset)
    if (x < 0.0) throw std::invalid_argument("hypercuboid: negative offset");
}

void DistanceParams::validate() const {
  if (gamma < 0.0) throw std::invalid_argument("distance params: gamma must be >= 0");
  if (use_additional && !(alpha > 100.0))
    throw std::invalid_argument("distance params: alpha must exceed 100 when the exterior penalty is on");
}

void BoxSet::validate() const {
  if (boxes.empty()) throw std::invalid_argument("box set: needs at least one box");
  const std::size_t d = boxes.front().dim();
  for (const auto& b : boxes) {
    if (b.dim() != d) throw std::invalid_argument("box set: mixed dimensions");
    for (double f : b.offset)
      if (f < 0.0) throw std::invalid_argument("box set: negative offset");
  }
  if (mode == BoxMode::kSingle && boxes.size() != 1)
    throw std::invalid_argument("box set: single mode requires exactly one box");
  if (mode == BoxMode::kConcentric) {
    for (const auto& b : boxes)
      if (b.center != boxes.front().center)
        throw std::invalid_argument("box set: concentric mode requires identical centers");
  }
}

std::vector<double> nearest_surface_point(const Hypercuboid& box, std::span<const double> item) {
  check_dims(box, item);
  std::vector<double> p(item.size());
  for (std::size_t j = 0; j < item.size(); ++j)
    p[j] = std::min(box.upper(j), std::max(box.lower(j), item[j]));
  return p;
}

double outside_distance(const Hypercuboid& box, std::span<const double> item) {
  check_dims(box, item);
  double s = 0.0;
  for (std::size_t j = 0; j < item.size(); ++j) {
    const double pj = std::min(box.upper(j), std::max(box.lower(j), item[j]));
    const double d = pj - item[j];
    s += d * d;
  }
  return s;
}

double inside_distance(const Hypercuboid& box, std::span<const double> item) {
  check_dims(box, item);
  double s = 0.0;
  for (std::size_t j = 0; j < item.size(); ++j) {
    const double pj = std::min(box.upper(j), std::max(box.lower(j), item[j]));
    const double d = pj - box.center[j];
    s += d * d;
  }
  return s;
}

double additional_distance(const Hypercuboid& box, std::span<const double> item, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("additional distance: alpha must be > 0");
  const double out = outside_distance(box, item);
  return 2.0 * (sigmoid(alpha * out) - 0.5) * squared_offset_norm(box);
}

double composite_distance(const Hypercuboid& box, std::span<const double> item, const DistanceParams& params) {
  double d = outside_distance(box, item) + params.gamma * inside_distance(box, item);
  if (params.use_additional) d += additional_distance(box, item, params.alpha);
  return d;
}

double concentric_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params) {
  if (boxes.mode != BoxMode::kConcentric && boxes.mode != BoxMode::kSingle)
    throw std::invalid_argument("concentric distance: box set is not concentric");
  if (boxes.boxes.empty()) throw std::invalid_argument("concentric distance: empty box set");

  double sum_out = 0.0;
  double min_in = std::numeric_limits<double>::infinity();
  double max_add = 0.0;
  for (const auto& b : boxes.boxes) {
    sum_out += outside_distance(b, item);
    min_in = std::min(min_in, inside_distance(b, item));
    if (params.use_additional) max_add = std::max(max_add, additional_distance(b, item, params.alpha));
  }
  return sum_out + params.gamma * min_in + max_add;
}

double independent_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params) {
  if (boxes.boxes.empty()) throw std::invalid_argument("independent distance: empty box set");

  DistanceParams base = params;
  base.use_additional = false;
  double min_comp = std::numeric_limits<double>::infinity();
  double max_add = 0.0;
  for (const auto& b : boxes.boxes) {
    min_comp = std::min(min_comp, composite_distance(b, item, base));
    if (params.use_additional) max_add = std::max(max_add, additional_distance(b, item, params.alpha));
  }
  return min_comp + max_add;
}

double box_set_distance(const BoxSet& boxes, std::span<const double> item, const DistanceParams& params) {
  switch (boxes.mode) {
    case BoxMode::kSingle:
      return composite_distance(boxes.boxes.front(), item, params);
    case BoxMode::kConcentric:
      return concentric_distance(boxes, item, params);
    case BoxMode::kIndependent:
      return independent_distance(boxes, item, params);
  }
  throw std::invalid_argument("box set: unknown mode");
}

bool contains(const Hypercuboid& box, std::span<const double> item) {
  check_dims(box, item);
  for (std::size_t j = 0; j < item.size(); ++j)
    if (item[j] < box.lower(j) || item[j] > box.upper(j)) return false;
  return true;
}

}  // namespace boxrec::geometry
