#include "boxrec/gradient_suite.hpp"

#include <cmath>
#include <functional>

#include "boxrec/distance_ops.hpp"
#include "boxrec/encoder.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/training.hpp"

namespace boxrec {

namespace {

using ad::FdEvaluation;
using ad::FdProblem;
using ad::Graph;
using ad::NodeId;
using ad::Op;

Tensor<double> random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor<double> t(rows, cols);
  for (auto& x : t.v) x = scale * rng.next_normal();
  return t;
}

// Wraps "build a graph over the current parameter tensors and return a
// scalar" into an FdProblem. The builder receives the graph plus the leaf
// node of each parameter, in order.
struct OpProblem {
  std::vector<std::pair<std::string, Tensor<double>>> storage;
  std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)> build;
  Op bug_op = Op::kLeaf;
  double bug_factor = 1.0;

  FdProblem problem() {
    FdProblem p;
    for (auto& [name, tensor] : storage) p.params.emplace_back(name, &tensor);
    p.evaluate = [this](bool with_grads) {
      Graph<double> g;
      if (bug_factor != 1.0) g.inject_gradient_bug(bug_op, bug_factor);
      std::vector<NodeId> leaves;
      for (auto& [name, tensor] : storage) leaves.push_back(g.input(tensor, true));
      const NodeId loss = build(g, leaves);
      FdEvaluation ev;
      ev.loss = g.val(loss).v[0];
      ev.signature = g.branch_signature();
      if (with_grads) {
        g.backward(loss);
        for (NodeId leaf : leaves) ev.grads.push_back(g.grad(leaf));
      }
      return ev;
    };
    return p;
  }
};

// Scalarize a matrix-valued op as sum(out * W); the weight is rebuilt from
// the seed on every call so repeated evaluations see the same function.
NodeId weighted_sum(Graph<double>& g, NodeId out, std::uint64_t seed) {
  Rng rng(seed);
  const auto& shape = g.val(out);
  Tensor<double> w(shape.rows, shape.cols);
  for (auto& x : w.v) x = rng.next_normal();
  return g.reduce_sum(g.mul(out, g.constant(std::move(w))));
}

}  // namespace

std::vector<GradientSuiteEntry> op_gradient_suite(Op bug_op, double bug_factor) {
  std::vector<GradientSuiteEntry> entries;
  Rng rng(0xb0c5ULL);

  auto run = [&](const std::string& name, OpProblem&& op) {
    op.bug_op = bug_op;
    op.bug_factor = bug_factor;
    FdProblem p = op.problem();
    entries.push_back({name, finite_difference_check(p)});
  };

  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}, {"b", random_tensor(4, 2, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.matmul(in[0], in[1]), 101);
    };
    run("matmul", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}, {"b", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.add(in[0], in[1]), 102);
    };
    run("add", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}, {"bias", random_tensor(1, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.add(in[0], in[1]), 103);
    };
    run("add (row broadcast)", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 5, rng)}, {"b", random_tensor(2, 5, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.sub(in[0], in[1]), 104);
    };
    run("sub", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 5, rng)}, {"b", random_tensor(2, 5, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.mul(in[0], in[1]), 105);
    };
    run("mul", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.scale(in[0], -1.7), 106);
    };
    run("scale", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 3, rng)},
                  {"b", random_tensor(1, 3, rng)},
                  {"c", random_tensor(3, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.concat(0, {in[0], in[1], in[2]}), 107);
    };
    run("concat rows", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 3, rng)}, {"b", random_tensor(2, 2, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.concat(1, {in[0], in[1]}), 108);
    };
    run("concat cols", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(4, 5, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.slice(in[0], 1, 3, 2, 5), 109);
    };
    run("slice", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.transpose(in[0]), 110);
    };
    run("transpose", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"table", random_tensor(6, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      // Repeated row: the scatter-add must credit it twice.
      const std::uint32_t ids[4] = {1, 3, 1, 5};
      return weighted_sum(g, g.gather_rows(in[0], ids), 111);
    };
    run("gather_rows", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) { return g.reduce_sum(in[0]); };
    run("reduce_sum", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) { return g.reduce_mean(in[0]); };
    run("reduce_mean", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) { return g.reduce_min(in[0]); };
    run("reduce_min (all)", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(4, 3, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.reduce_min(in[0], 0), 112);
    };
    run("reduce_min (columns)", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}, {"b", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.elementwise_min(in[0], in[1]), 113);
    };
    run("elementwise_min", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}, {"b", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.elementwise_max(in[0], in[1]), 114);
    };
    run("elementwise_max", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.clamp(in[0], -0.5, 0.5), 115);
    };
    run("clamp", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.relu(in[0]), 116);
    };
    run("relu", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.sigmoid(in[0]), 117);
    };
    run("sigmoid", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.tanh(in[0]), 118);
    };
    run("tanh", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      return weighted_sum(g, g.softmax_rows(in[0]), 119);
    };
    run("softmax_rows", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(2, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) { return g.squared_norm(in[0]); };
    run("squared_norm", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"a", random_tensor(3, 4, rng)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      Rng mask_rng(99);  // same mask every evaluation
      return weighted_sum(g, g.dropout_mask(in[0], 0.3, mask_rng), 120);
    };
    run("dropout_mask", std::move(op));
  }
  {
    OpProblem op;
    op.storage = {{"center", random_tensor(1, 4, rng)},
                  {"offset_pre", random_tensor(1, 4, rng)},
                  {"item", random_tensor(1, 4, rng, 1.5)}};
    op.build = [](Graph<double>& g, const std::vector<NodeId>& in) {
      ad::BoxNodes box{in[0], g.relu(in[1])};
      geometry::DistanceParams params;
      params.gamma = 0.5;
      params.alpha = 150.0;
      params.use_additional = true;
      return ad::composite_distance_node(g, box, in[2], params);
    };
    run("box composite distance", std::move(op));
  }
  return entries;
}

std::vector<GradientSuiteEntry> model_gradient_suite() {
  std::vector<GradientSuiteEntry> entries;
  const std::size_t n_items = 7;

  struct Case {
    geometry::BoxMode mode;
    std::size_t boxes;
  };
  const Case cases[] = {{geometry::BoxMode::kSingle, 1},
                        {geometry::BoxMode::kConcentric, 1},
                        {geometry::BoxMode::kConcentric, 2},
                        {geometry::BoxMode::kIndependent, 1},
                        {geometry::BoxMode::kIndependent, 2}};

  for (const Case& c : cases) {
    for (const double gamma : {0.0, 0.5}) {
      for (const bool additional : {false, true}) {
        EncoderConfig cfg;
        cfg.dim = 4;
        cfg.window = 3;
        cfg.memory_slots = 2;
        cfg.mode = c.mode;
        cfg.boxes = c.boxes;

        geometry::DistanceParams dparams;
        dparams.gamma = gamma;
        dparams.alpha = 150.0;
        dparams.use_additional = additional;

        Rng init(0x517eedULL + c.boxes * 31 + static_cast<std::uint64_t>(c.mode) * 7 +
                 (additional ? 101 : 0) + (gamma > 0 ? 3 : 0));
        auto params = EncoderParams<double>::random_init(cfg, n_items, init);

        const std::vector<std::uint32_t> window = {2, 5, 3};
        const std::uint32_t pos[2] = {1, 4};
        const std::uint32_t neg[2] = {6, 2};

        FdProblem problem;
        for_each_tensor(params, [&](const std::string& name, Tensor<double>& t) {
          problem.params.emplace_back(name, &t);
        });
        problem.evaluate = [&, window](bool with_grads) {
          ad::Graph<double> g;
          EncodeOptions opts;
          opts.record_gradients = true;
          opts.dense_table_grad = true;
          const auto eg = build_encoder_graph(g, cfg, params, window, opts);
          // Wide margin keeps both hinge terms active.
          const ad::NodeId margin = g.constant_scalar(5.0);
          ad::NodeId loss = ad::kNoNode;
          for (int t = 0; t < 2; ++t) {
            const ad::NodeId pv = g.gather_rows(eg.item_table, std::span(&pos[t], 1));
            const ad::NodeId nv = g.gather_rows(eg.item_table, std::span(&neg[t], 1));
            const ad::NodeId dp = ad::box_set_distance_node(g, cfg.mode, eg.boxes, pv, dparams);
            const ad::NodeId dn = ad::box_set_distance_node(g, cfg.mode, eg.boxes, nv, dparams);
            const ad::NodeId hinge = g.relu(g.add(g.sub(dp, dn), margin));
            loss = loss == ad::kNoNode ? hinge : g.add(loss, hinge);
          }
          FdEvaluation ev;
          ev.loss = g.val(loss).v[0];
          ev.signature = g.branch_signature();
          if (with_grads) {
            g.backward(loss);
            std::map<std::string, Tensor<double>> grads;
            for (const auto& [name, node] : eg.param_nodes) grads[name] = g.grad(node);
            for (const auto& [name, ptr] : problem.params) {
              auto it = grads.find(name);
              ev.grads.push_back(it != grads.end() ? it->second : Tensor<double>(ptr->rows, ptr->cols));
            }
          }
          return ev;
        };

        std::string label = std::string("loss ") + mode_name(c.mode) + " M=" + std::to_string(c.boxes) +
                            " gamma=" + (gamma > 0 ? "0.5" : "0") + (additional ? " +penalty" : "");
        entries.push_back({label, finite_difference_check(problem)});
      }
    }
  }
  return entries;
}

}  // namespace boxrec
