#pragma once

#include <span>
#include <vector>

#include "boxrec/geometry.hpp"
#include "boxrec/graph.hpp"

namespace boxrec::ad {

// Box emitted by the encoder as graph nodes (each 1 x d).
struct BoxNodes {
  NodeId center = kNoNode;
  NodeId offset = kNoNode;
};

template <typename T>
NodeId additional_distance_node(Graph<T>& g, const BoxNodes& box, NodeId outside,
                                const geometry::DistanceParams& params);

// outside + gamma * inside for one box. Tie handling matches the closed-form
// convention: an item coordinate sitting exactly on a corner differentiates
// as the interior branch.
template <typename T>
NodeId composite_distance_node(Graph<T>& g, const BoxNodes& box, NodeId item,
                               const geometry::DistanceParams& params) {
  const NodeId lower = g.sub(box.center, box.offset);
  const NodeId upper = g.add(box.center, box.offset);
  const NodeId p = g.elementwise_min(g.elementwise_max(item, lower), upper);
  const NodeId out = g.squared_norm(g.sub(p, item));
  const NodeId in = g.squared_norm(g.sub(p, box.center));
  NodeId total = g.add(out, g.scale(in, static_cast<T>(params.gamma)));
  if (params.use_additional) total = g.add(total, additional_distance_node(g, box, out, params));
  return total;
}

// 2*(sigmoid(alpha*outside) - 1/2) * ||offset||^2, taking the already-built
// outside-distance node.
template <typename T>
NodeId additional_distance_node(Graph<T>& g, const BoxNodes& box, NodeId outside,
                                const geometry::DistanceParams& params) {
  const NodeId sat = g.sub(g.sigmoid(g.scale(outside, static_cast<T>(params.alpha))),
                           g.constant_scalar(T(0.5)));
  return g.scale(g.mul(sat, g.squared_norm(box.offset)), T(2));
}

// Mode dispatch over a set of boxes; ties in the min/max chains resolve to
// the lowest box index, matching the closed-form evaluation.
template <typename T>
NodeId box_set_distance_node(Graph<T>& g, geometry::BoxMode mode, std::span<const BoxNodes> boxes,
                             NodeId item, const geometry::DistanceParams& params) {
  if (boxes.empty()) throw std::invalid_argument("box set distance: no boxes");

  geometry::DistanceParams base = params;
  base.use_additional = false;

  auto max_additional = [&]() {
    NodeId acc = kNoNode;
    for (const auto& b : boxes) {
      const NodeId lower = g.sub(b.center, b.offset);
      const NodeId upper = g.add(b.center, b.offset);
      const NodeId p = g.elementwise_min(g.elementwise_max(item, lower), upper);
      const NodeId out = g.squared_norm(g.sub(p, item));
      const NodeId add = additional_distance_node(g, b, out, params);
      acc = acc == kNoNode ? add : g.elementwise_max(acc, add);
    }
    return acc;
  };

  switch (mode) {
    case geometry::BoxMode::kSingle: {
      return composite_distance_node(g, boxes[0], item, params);
    }
    case geometry::BoxMode::kConcentric: {
      NodeId sum_out = kNoNode;
      NodeId min_in = kNoNode;
      for (const auto& b : boxes) {
        const NodeId lower = g.sub(b.center, b.offset);
        const NodeId upper = g.add(b.center, b.offset);
        const NodeId p = g.elementwise_min(g.elementwise_max(item, lower), upper);
        const NodeId out = g.squared_norm(g.sub(p, item));
        const NodeId in = g.squared_norm(g.sub(p, b.center));
        sum_out = sum_out == kNoNode ? out : g.add(sum_out, out);
        min_in = min_in == kNoNode ? in : g.elementwise_min(min_in, in);
      }
      NodeId total = g.add(sum_out, g.scale(min_in, static_cast<T>(params.gamma)));
      if (params.use_additional) total = g.add(total, max_additional());
      return total;
    }
    case geometry::BoxMode::kIndependent: {
      NodeId min_comp = kNoNode;
      for (const auto& b : boxes) {
        const NodeId comp = composite_distance_node(g, b, item, base);
        min_comp = min_comp == kNoNode ? comp : g.elementwise_min(min_comp, comp);
      }
      if (params.use_additional) min_comp = g.add(min_comp, max_additional());
      return min_comp;
    }
  }
  throw std::invalid_argument("box set distance: unknown mode");
}

}  // namespace boxrec::ad
