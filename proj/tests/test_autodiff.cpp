#include <doctest.h>

#include <cmath>
#include <vector>

#include "boxrec/distance_ops.hpp"
#include "boxrec/errors.hpp"
#include "boxrec/geometry.hpp"
#include "boxrec/gradcheck.hpp"
#include "boxrec/gradient_suite.hpp"
#include "boxrec/graph.hpp"
#include "boxrec/rng.hpp"

using namespace boxrec;
using ad::Graph;
using ad::NodeId;

TEST_CASE("softmax of a uniform row is uniform") {
  Graph<double> g;
  const NodeId out = g.softmax_rows(g.constant(Tensor<double>(1, 3)));
  for (double x : g.val(out).v) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are strictly positive") {
  Rng rng(11);
  Tensor<double> logits(6, 9);
  for (auto& x : logits.v) x = rng.next_range(-30.0, 30.0);
  Graph<double> g;
  const auto& y = g.val(g.softmax_rows(g.input(logits, false)));
  for (std::size_t r = 0; r < y.rows; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < y.cols; ++c) {
      CHECK(y.at(r, c) > 0.0);
      sum += y.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("relu forward and mask") {
  Graph<double> g;
  const NodeId x = g.input(Tensor<double>::row({-1, 0, 2}), true);
  const NodeId y = g.relu(x);
  CHECK(g.val(y).v == std::vector<double>{0, 0, 2});
  g.backward(g.reduce_sum(y));
  // The at-zero gradient is defined as 0.
  CHECK(g.grad(x).v == std::vector<double>{0, 0, 1});
}

TEST_CASE("squared_norm gradient is 2x") {
  Graph<double> g;
  const NodeId x = g.input(Tensor<double>::row({1, 2}), true);
  g.backward(g.squared_norm(x));
  CHECK(g.grad(x).v == std::vector<double>{2, 4});
}

TEST_CASE("backward of sum(W x) leaves the outer product on W") {
  Graph<double> g;
  Tensor<double> w(2, 3);
  Tensor<double> x(3, 1, {1, 2, 3});
  const NodeId wn = g.input(w, true);
  const NodeId xn = g.input(x, false);
  g.backward(g.reduce_sum(g.matmul(wn, xn)));
  // d/dW sum(Wx) = 1 * x^T stacked per row.
  CHECK(g.grad(wn).v == std::vector<double>{1, 2, 3, 1, 2, 3});
}

TEST_CASE("backward requires a scalar loss") {
  Graph<double> g;
  const NodeId x = g.input(Tensor<double>::row({1, 2}), true);
  CHECK_THROWS_AS(g.backward(g.relu(x)), std::invalid_argument);
}

TEST_CASE("shape mismatches are rejected with the op name") {
  Graph<double> g;
  const NodeId a = g.constant(Tensor<double>(2, 3));
  const NodeId b = g.constant(Tensor<double>(2, 2));
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), std::invalid_argument);
  CHECK_THROWS_AS(g.gather_rows(a, std::vector<std::uint32_t>{5}), std::invalid_argument);
}

TEST_CASE("non-finite forward values raise a numeric fault naming the op") {
  Graph<double> g;
  const NodeId big = g.constant(Tensor<double>::row({1e308}));
  CHECK_THROWS_WITH_AS(g.mul(big, big), doctest::Contains("mul"), NumericFault);
}

TEST_CASE("reduce_min ties route the gradient to the lowest index") {
  Graph<double> g;
  const NodeId x = g.input(Tensor<double>::row({3, 1, 1, 2}), true);
  g.backward(g.reduce_min(x));
  CHECK(g.grad(x).v == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("elementwise min/max ties route the gradient to the first argument") {
  Graph<double> g;
  const NodeId a = g.input(Tensor<double>::row({1, 5}), true);
  const NodeId b = g.input(Tensor<double>::row({1, 2}), true);
  g.backward(g.reduce_sum(g.elementwise_min(a, b)));
  CHECK(g.grad(a).v == std::vector<double>{1, 0});
  CHECK(g.grad(b).v == std::vector<double>{0, 1});

  Graph<double> h;
  const NodeId c = h.input(Tensor<double>::row({1, 5}), true);
  const NodeId d = h.input(Tensor<double>::row({1, 2}), true);
  h.backward(h.reduce_sum(h.elementwise_max(c, d)));
  CHECK(h.grad(c).v == std::vector<double>{1, 1});
  CHECK(h.grad(d).v == std::vector<double>{0, 0});
}

TEST_CASE("gather_rows credits a repeated row once per occurrence") {
  // Against the dense formulation: one-hot selection matrix times the table.
  Tensor<double> table(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<std::uint32_t> ids = {2, 0, 2};

  Graph<double> g;
  const NodeId tn = g.input(table, true);
  const NodeId picked = g.gather_rows(tn, ids);
  Tensor<double> w(3, 2, {1, 1, 1, 1, 1, 1});
  g.backward(g.reduce_sum(g.mul(picked, g.constant(w))));

  Graph<double> h;
  const NodeId tn2 = h.input(table, true);
  Tensor<double> onehot(3, 4);
  for (std::size_t i = 0; i < ids.size(); ++i) onehot.at(i, ids[i]) = 1.0;
  h.backward(h.reduce_sum(h.mul(h.matmul(h.constant(onehot), tn2), h.constant(w))));

  CHECK(g.grad(tn).v == h.grad(tn2).v);
}

TEST_CASE("sparse-grad leaves report gradients per row") {
  Tensor<double> table(5, 2, {0, 0, 1, 1, 2, 2, 3, 3, 4, 4});
  Graph<double> g;
  const NodeId tn = g.input(table, true, /*sparse_grad=*/true);
  const std::vector<std::uint32_t> ids = {3, 1, 3};
  g.backward(g.reduce_sum(g.gather_rows(tn, ids)));
  const auto rows = g.sparse_grad_rows(tn);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].first == 1);
  CHECK(rows[0].second == std::vector<double>{1, 1});
  CHECK(rows[1].first == 3);
  CHECK(rows[1].second == std::vector<double>{2, 2});
}

TEST_CASE("rebuilding a graph reproduces bitwise-identical values and gradients") {
  Rng rng(17);
  Tensor<double> a(4, 4), b(4, 4);
  for (auto& x : a.v) x = rng.next_normal();
  for (auto& x : b.v) x = rng.next_normal();

  auto run = [&](std::vector<double>& value, std::vector<double>& grad) {
    Graph<double> g;
    const NodeId an = g.input(a, true);
    const NodeId bn = g.input(b, false);
    const NodeId out = g.softmax_rows(g.tanh(g.matmul(an, bn)));
    const NodeId loss = g.squared_norm(out);
    value = g.val(loss).v;
    g.backward(loss);
    grad = g.grad(an).v;
  };
  std::vector<double> v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("graph distance matches the closed-form geometry evaluation") {
  Rng rng(23);
  for (int i = 0; i < 300; ++i) {
    const std::size_t d = 2 + rng.next_below(3);
    std::vector<double> center(d), offset(d), item(d);
    for (auto& x : center) x = rng.next_range(-2, 2);
    for (auto& x : offset) x = rng.next_range(0, 1.5);
    for (auto& x : item) x = rng.next_range(-3, 3);

    geometry::DistanceParams params;
    params.gamma = rng.next_double();
    params.alpha = 150.0;
    params.use_additional = rng.next_double() < 0.5;

    Graph<double> g;
    ad::BoxNodes box{g.input(Tensor<double>::row(center), true),
                     g.input(Tensor<double>::row(offset), true)};
    const NodeId item_node = g.constant(Tensor<double>::row(item));
    const NodeId dist = ad::composite_distance_node(g, box, item_node, params);

    const geometry::Hypercuboid hbox{center, offset};
    CHECK(g.val(dist).v[0] ==
          doctest::Approx(geometry::composite_distance(hbox, item, params)).epsilon(1e-12));
  }
}

TEST_CASE("graph distance gradient matches the hand-derived piecewise form") {
  // Outside/inside both decompose per axis; the derivative cases are
  // below / inside / above the box along each coordinate.
  Rng rng(29);
  geometry::DistanceParams params;
  params.gamma = 0.37;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t d = 3;
    std::vector<double> center(d), offset(d), item(d);
    for (auto& x : center) x = rng.next_range(-2, 2);
    for (auto& x : offset) x = rng.next_range(0.05, 1.5);
    for (auto& x : item) x = rng.next_range(-3.5, 3.5);

    Graph<double> g;
    ad::BoxNodes box{g.input(Tensor<double>::row(center), true),
                     g.input(Tensor<double>::row(offset), true)};
    const NodeId item_node = g.input(Tensor<double>::row(item), true);
    g.backward(ad::composite_distance_node(g, box, item_node, params));

    for (std::size_t j = 0; j < d; ++j) {
      const double lo = center[j] - offset[j], hi = center[j] + offset[j];
      double dc, df, dv;
      if (item[j] > hi) {
        // out_j = (v - c - f)^2, in_j = f^2
        dc = -2 * (item[j] - hi);
        df = -2 * (item[j] - hi) + params.gamma * 2 * offset[j];
        dv = 2 * (item[j] - hi);
      } else if (item[j] < lo) {
        dc = 2 * (lo - item[j]);
        df = -2 * (lo - item[j]) + params.gamma * 2 * offset[j];
        dv = -2 * (lo - item[j]);
      } else {
        dc = params.gamma * -2 * (item[j] - center[j]);
        df = 0;
        dv = params.gamma * 2 * (item[j] - center[j]);
      }
      CHECK(g.grad(box.center).v[j] == doctest::Approx(dc).epsilon(1e-9));
      CHECK(g.grad(box.offset).v[j] == doctest::Approx(df).epsilon(1e-9));
      CHECK(g.grad(item_node).v[j] == doctest::Approx(dv).epsilon(1e-9));
    }
  }
}

TEST_CASE("finite differences: f(x)=||x||^2 at x=3") {
  Tensor<double> x = Tensor<double>::scalar(3.0);
  ad::FdProblem problem;
  problem.params = {{"x", &x}};
  problem.evaluate = [&](bool with_grads) {
    Graph<double> g;
    const NodeId xn = g.input(x, true);
    const NodeId loss = g.squared_norm(xn);
    ad::FdEvaluation ev;
    ev.loss = g.val(loss).v[0];
    if (with_grads) {
      g.backward(loss);
      ev.grads.push_back(g.grad(xn));
    }
    return ev;
  };
  const auto report = finite_difference_check(problem);
  CHECK(report.ok());
  CHECK(report.checked == 1);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("finite differences skip reduce_min ties instead of failing") {
  Tensor<double> x = Tensor<double>::row({1.0, 1.0});  // exactly tied
  ad::FdProblem problem;
  problem.params = {{"x", &x}};
  problem.evaluate = [&](bool with_grads) {
    Graph<double> g;
    const NodeId xn = g.input(x, true);
    const NodeId loss = g.reduce_min(xn);
    ad::FdEvaluation ev;
    ev.loss = g.val(loss).v[0];
    ev.signature = g.branch_signature();
    if (with_grads) {
      g.backward(loss);
      ev.grads.push_back(g.grad(xn));
    }
    return ev;
  };
  const auto report = finite_difference_check(problem);
  CHECK(report.failed == 0);
  CHECK(report.skipped == 2);
}

TEST_CASE("every op passes its finite-difference check") {
  for (const auto& entry : op_gradient_suite()) {
    CAPTURE(entry.name);
    CHECK(entry.report.ok());
    CHECK(entry.report.max_rel_error < 1e-3);
  }
}

TEST_CASE("an injected backward bug is caught") {
  bool any_failed = false;
  for (const auto& entry : op_gradient_suite(ad::Op::kSigmoid, 1.5))
    if (entry.report.failed > 0) any_failed = true;
  CHECK(any_failed);
}

TEST_CASE("dropout scales kept entries and zeroes the rest") {
  Rng rng(31);
  Tensor<double> x(1, 1000);
  x.fill(1.0);
  Graph<double> g;
  const NodeId xn = g.input(x, true);
  const NodeId y = g.dropout_mask(xn, 0.25, rng);
  std::size_t kept = 0;
  for (double v : g.val(y).v) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(1.0 / 0.75).epsilon(1e-12));
      ++kept;
    }
  }
  // Around 750 of 1000 survive.
  CHECK(kept > 650);
  CHECK(kept < 850);
}
