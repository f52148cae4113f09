#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "boxrec/errors.hpp"
#include "boxrec/kernels.hpp"
#include "boxrec/synthetic.hpp"
#include "boxrec/training.hpp"

using namespace boxrec;
using training::TrainConfig;

namespace {

datasets::SplitDataset toy_split() {
  std::vector<datasets::Interaction> log;
  for (int u = 0; u < 4; ++u) {
    const std::string user = "u" + std::to_string(u);
    for (int r = 0; r < 12; ++r)
      log.push_back({user, "i" + std::to_string((u * 5 + r) % 15), r, {}});
  }
  return datasets::chronological_split(log);
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.window = 5;
  cfg.targets = 3;
  cfg.memory_slots = 2;
  cfg.batch_size = 64;
  cfg.epochs = 2;
  cfg.seed = 99;
  return cfg;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("sliding windows: first full instance and clipped tails") {
  datasets::SplitDataset split;
  split.train = {{}, {1, 2, 3, 4, 5, 6, 7, 8}};
  split.val = {{}, {}};
  split.test = {{}, {}};
  for (int i = 0; i < 8; ++i) split.item_vocab.add("x" + std::to_string(i));
  split.user_vocab.add("u");

  const auto instances = training::make_instances(split, 5, 3);
  REQUIRE(instances.size() == 7);  // n-1 for n=8

  // Window ending at the fifth item: [1..5], targets the next three.
  const auto& full = instances[4];
  CHECK(full.window == std::vector<std::uint32_t>{1, 2, 3, 4, 5});
  CHECK(full.targets == std::vector<std::uint32_t>{6, 7, 8});

  // Earliest instance is left-padded with a single target horizon of 3.
  CHECK(instances[0].window == std::vector<std::uint32_t>{0, 0, 0, 0, 1});
  CHECK(instances[0].targets == std::vector<std::uint32_t>{2, 3, 4});

  // Final instance: targets clipped to the available suffix.
  CHECK(instances[6].window == std::vector<std::uint32_t>{3, 4, 5, 6, 7});
  CHECK(instances[6].targets == std::vector<std::uint32_t>{8});
}

TEST_CASE("instance count is n-1 for every sequence length") {
  for (std::size_t n = 2; n <= 20; ++n) {
    datasets::SplitDataset split;
    std::vector<std::uint32_t> seq(n);
    for (std::size_t i = 0; i < n; ++i) {
      split.item_vocab.add("x" + std::to_string(i));
      seq[i] = static_cast<std::uint32_t>(i + 1);
    }
    split.user_vocab.add("u");
    split.train = {{}, seq};
    split.val = {{}, {}};
    split.test = {{}, {}};
    const auto instances = training::make_instances(split, 5, 3);
    CAPTURE(n);
    CHECK(instances.size() == n - 1);
    for (const auto& inst : instances) {
      CHECK(!inst.targets.empty());
      for (std::uint32_t t : inst.targets) CHECK(t != kPaddingId);
    }
  }
}

TEST_CASE("negative sampling") {
  SUBCASE("a user covering all but one item always draws that item") {
    const std::vector<std::uint32_t> positives = {1, 2, 3, 4, 6, 7, 8, 9, 10};
    Rng rng(5);
    const auto negs = training::sample_negatives(positives, 10, 20, rng);
    for (std::uint32_t n : negs) CHECK(n == 5);
  }

  SUBCASE("samples never intersect the positives") {
    const std::vector<std::uint32_t> positives = {2, 4, 6, 8, 10, 12};
    Rng rng(6);
    const auto negs = training::sample_negatives(positives, 20, 500, rng);
    for (std::uint32_t n : negs) {
      CHECK(!std::binary_search(positives.begin(), positives.end(), n));
      CHECK(n >= 1);
      CHECK(n <= 20);
    }
  }

  SUBCASE("exhausted item space is an error") {
    const std::vector<std::uint32_t> positives = {1, 2, 3};
    Rng rng(7);
    CHECK_THROWS_AS(training::sample_negatives(positives, 3, 1, rng), DataError);
  }

  SUBCASE("draws are uniform: each candidate within 3 sigma over 1e5 samples") {
    const std::vector<std::uint32_t> positives = {3, 7, 11, 15};
    const std::size_t n_items = 24;  // 20 candidates
    const std::size_t draws = 100000;
    Rng rng(8);
    const auto negs = training::sample_negatives(positives, n_items, draws, rng);
    std::vector<std::size_t> counts(n_items + 1, 0);
    for (std::uint32_t n : negs) ++counts[n];
    const double p = 1.0 / 20.0;
    const double expect = draws * p;
    const double sigma = std::sqrt(draws * p * (1 - p));
    for (std::uint32_t id = 1; id <= n_items; ++id) {
      if (std::binary_search(positives.begin(), positives.end(), id)) {
        CHECK(counts[id] == 0);
      } else {
        CAPTURE(id);
        CHECK(std::abs(static_cast<double>(counts[id]) - expect) < 3.0 * sigma);
      }
    }
  }

  SUBCASE("fixed seed reproduces the stream") {
    const std::vector<std::uint32_t> positives = {1};
    Rng a(9), b(9);
    CHECK(training::sample_negatives(positives, 50, 100, a) ==
          training::sample_negatives(positives, 50, 100, b));
  }
}

TEST_CASE("hinge loss values") {
  geometry::BoxSet boxes;
  boxes.mode = geometry::BoxMode::kSingle;
  boxes.boxes = {geometry::Hypercuboid{{0, 0}, {1, 1}}};
  geometry::DistanceParams params;
  params.gamma = 0.0;

  // dist(pos)=0.2^2... construct directly: pos outside by sqrt(0.2) etc. Use
  // points with known outside distances.
  const std::vector<double> inside = {0.5, 0.5};       // dist 0
  const std::vector<double> at_two = {3.0, 0.0};       // dist 4
  const std::vector<double> at_one = {2.0, 0.0};       // dist 1

  // Margin satisfied: 0 + 0.5 - 4 < 0.
  CHECK(training::hinge_loss(boxes, inside, at_two, 0.5, params) == 0.0);
  // Equal distances leave exactly the margin.
  CHECK(training::hinge_loss(boxes, at_one, at_one, 0.5, params) == 0.5);
  // Violated pair: 1 + 0.5 - 0 = 1.5.
  CHECK(training::hinge_loss(boxes, at_one, inside, 0.5, params) == 1.5);
}

TEST_CASE("adagrad first step and accumulator growth") {
  // One parameter, gradient 2, lr 0.05: accumulator 4, step 0.05*2/(2+1e-8).
  Tensor<float> theta = Tensor<float>::scalar(1.0f);
  Tensor<float> accum = Tensor<float>::scalar(0.0f);
  const Tensor<float> grad = Tensor<float>::scalar(2.0f);
  training::adagrad_step(theta, grad, accum, 0.05, 1e-8);
  CHECK(accum.v[0] == 4.0f);
  CHECK(theta.v[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-6));

  // Zero gradient: nothing moves.
  Tensor<float> theta0 = Tensor<float>::scalar(3.0f);
  Tensor<float> accum0 = Tensor<float>::scalar(0.0f);
  training::adagrad_step(theta0, Tensor<float>::scalar(0.0f), accum0, 0.05, 1e-8);
  CHECK(theta0.v[0] == 3.0f);
  CHECK(accum0.v[0] == 0.0f);

  // Two identical steps: the second update is smaller.
  Tensor<float> t1 = Tensor<float>::scalar(0.0f);
  Tensor<float> acc = Tensor<float>::scalar(0.0f);
  training::adagrad_step(t1, grad, acc, 0.05, 1e-8);
  const float first = -t1.v[0];
  const float before = t1.v[0];
  training::adagrad_step(t1, grad, acc, 0.05, 1e-8);
  const float second = before - t1.v[0];
  CHECK(second < first);
  CHECK(acc.v[0] == 8.0f);
}

TEST_CASE("sparse adagrad touches only the given rows") {
  Tensor<float> theta(4, 2, {1, 1, 2, 2, 3, 3, 4, 4});
  Tensor<float> accum(4, 2);
  const Tensor<float> before = theta;
  std::map<std::uint32_t, std::vector<float>> rows;
  rows[2] = {1.0f, -1.0f};
  training::adagrad_step_rows(theta, rows, accum, 0.1, 1e-8);
  CHECK(theta.at(0, 0) == before.at(0, 0));
  CHECK(theta.at(1, 1) == before.at(1, 1));
  CHECK(theta.at(3, 0) == before.at(3, 0));
  CHECK(theta.at(2, 0) != before.at(2, 0));
  CHECK(accum.at(2, 0) == 1.0f);
  CHECK(accum.at(0, 0) == 0.0f);
}

TEST_CASE("fit is deterministic: same seed, same data, bitwise-equal checkpoints") {
  const auto split = toy_split();
  TrainConfig cfg = toy_config();
  const auto dir = std::filesystem::temp_directory_path() / "boxrec_fit_det";
  const auto r1 = training::fit(split, cfg, dir / "a");
  const auto r2 = training::fit(split, cfg, dir / "b");
  CHECK(r1.epoch_mean_loss == r2.epoch_mean_loss);
  CHECK(read_bytes(dir / "a" / "checkpoint.bin") == read_bytes(dir / "b" / "checkpoint.bin"));

  // A different seed moves the numbers.
  cfg.seed = 100;
  const auto r3 = training::fit(split, cfg, dir / "c");
  CHECK(read_bytes(dir / "a" / "checkpoint.bin") != read_bytes(dir / "c" / "checkpoint.bin"));
}

TEST_CASE("fit does not depend on the thread count") {
  const auto split = toy_split();
  const TrainConfig cfg = toy_config();
  const auto dir = std::filesystem::temp_directory_path() / "boxrec_fit_threads";
  kernels::set_max_threads(1);
  const auto serial = training::fit(split, cfg, dir / "serial");
  kernels::set_max_threads(4);
  const auto parallel = training::fit(split, cfg, dir / "parallel");
  kernels::set_max_threads(0);
  CHECK(serial.epoch_mean_loss == parallel.epoch_mean_loss);
  CHECK(read_bytes(dir / "serial" / "checkpoint.bin") ==
        read_bytes(dir / "parallel" / "checkpoint.bin"));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto split = toy_split();
  TrainConfig cfg = toy_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  const auto one = training::fit(split, cfg, {});
  cfg.epochs = 3;
  const auto three = training::fit(split, cfg, {});
  CHECK(one.model.params.item_embeddings.v == three.model.params.item_embeddings.v);
  CHECK(one.model.params.key_matrix.v == three.model.params.key_matrix.v);
  // Negatives are redrawn per epoch, so per-epoch losses differ even with
  // frozen parameters; they must still be reproducible run to run.
  const auto again = training::fit(split, cfg, {});
  CHECK(three.epoch_mean_loss == again.epoch_mean_loss);
}

TEST_CASE("gradient flows only through violated pairs") {
  // Hinge on a satisfied pair: zero loss, zero gradient everywhere. On a
  // violated pair the box parameters move.
  geometry::DistanceParams params;
  params.gamma = 0.5;
  auto hinge_grad = [&](const std::vector<double>& pos, const std::vector<double>& neg) {
    ad::Graph<double> g;
    ad::BoxNodes box{g.input(Tensor<double>::row({0, 0}), true),
                     g.input(Tensor<double>::row({1, 1}), true)};
    const auto dp = ad::composite_distance_node(g, box, g.constant(Tensor<double>::row(pos)), params);
    const auto dn = ad::composite_distance_node(g, box, g.constant(Tensor<double>::row(neg)), params);
    const auto loss = g.relu(g.add(g.sub(dp, dn), g.constant_scalar(0.5)));
    g.backward(loss);
    double total = 0;
    for (double x : g.grad(box.center).v) total += std::abs(x);
    for (double x : g.grad(box.offset).v) total += std::abs(x);
    return std::pair{g.val(loss).v[0], total};
  };

  // Positive at the center, negative far away: satisfied.
  const auto [l_ok, g_ok] = hinge_grad({0, 0}, {5, 0});
  CHECK(l_ok == 0.0);
  CHECK(g_ok == 0.0);
  // Positive far, negative at the center: violated.
  const auto [l_bad, g_bad] = hinge_grad({5, 0}, {0, 0});
  CHECK(l_bad > 0.0);
  CHECK(g_bad > 0.0);
}

TEST_CASE("sparse update touches exactly the batch's windows, targets, and negatives") {
  datasets::SplitDataset split;
  for (int i = 0; i < 30; ++i) split.item_vocab.add("x" + std::to_string(i));
  split.user_vocab.add("u");
  split.train = {{}, {1, 2, 3}};
  split.val = {{}, {}};
  split.test = {{}, {}};

  TrainConfig cfg = toy_config();
  cfg.epochs = 1;
  cfg.l2 = 0.0;
  const auto result = training::fit(split, cfg, {});

  // Same seed with a zero learning rate recovers the initial parameters.
  TrainConfig frozen = cfg;
  frozen.learning_rate = 0.0;
  const auto fresh = training::fit(split, frozen, {}).model.params;

  // Rows 1..3 are windows/targets; negatives are drawn outside {1,2,3}. The
  // padding row 0 must never move. Some rows beyond 3 move (negatives).
  std::set<std::uint32_t> moved;
  for (std::uint32_t r = 0; r < fresh.item_embeddings.rows; ++r)
    for (std::size_t c = 0; c < fresh.item_embeddings.cols; ++c)
      if (result.model.params.item_embeddings.at(r, c) != fresh.item_embeddings.at(r, c)) {
        moved.insert(r);
        break;
      }
  CHECK(moved.count(0) == 0);
  CHECK(moved.count(1) > 0);
  CHECK(moved.count(2) > 0);
  CHECK(moved.count(3) > 0);
  std::size_t beyond = 0;
  for (std::uint32_t r : moved)
    if (r > 3) ++beyond;
  CHECK(beyond >= 1);
  CHECK(beyond <= 4);  // two instances, up to 2 targets each, 1 negative per target
}

TEST_CASE("loss decreases markedly on a learnable world") {
  synthetic::WorldConfig wcfg;
  wcfg.users = 15;
  wcfg.items = 120;
  wcfg.seed = 31;
  const auto world = synthetic::generate_box_world(wcfg);
  const auto split = datasets::chronological_split(world.log);

  TrainConfig cfg;
  cfg.dim = 8;
  cfg.window = 5;
  cfg.targets = 2;
  cfg.memory_slots = 2;
  cfg.batch_size = 128;
  cfg.epochs = 12;
  cfg.seed = 17;
  const auto result = training::fit(split, cfg, {});
  REQUIRE(result.epoch_mean_loss.size() == 12);
  CHECK(result.epoch_mean_loss.back() < 0.5 * result.epoch_mean_loss.front());

  // Early epochs trend downward (at least 4 of the first 5 transitions).
  int drops = 0;
  for (int e = 0; e < 5; ++e)
    if (result.epoch_mean_loss[e + 1] <= result.epoch_mean_loss[e]) ++drops;
  CHECK(drops >= 4);
}

TEST_CASE("empty training data is rejected") {
  datasets::SplitDataset split;
  split.user_vocab.add("u");
  split.item_vocab.add("i");
  split.train = {{}, {1}};  // one item: no instance has a target
  split.val = {{}, {}};
  split.test = {{}, {}};
  CHECK_THROWS_AS(training::fit(split, toy_config(), {}), DataError);
}

TEST_CASE("batch-order permutation leaves the summed update unchanged") {
  // Gradients are summed before the optimizer step, so permuting instances
  // inside one accumulation step cannot change it. The trainer sums in a
  // fixed order; this asserts the algebraic fact at the optimizer level.
  Rng rng(77);
  Tensor<float> g1(3, 3), g2(3, 3), g3(3, 3);
  for (auto* g : {&g1, &g2, &g3})
    for (auto& x : g->v) x = static_cast<float>(rng.next_normal());

  auto step_with = [&](const std::vector<const Tensor<float>*>& order) {
    Tensor<float> sum(3, 3);
    for (const auto* g : order)
      for (std::size_t i = 0; i < sum.size(); ++i) sum.v[i] += g->v[i];
    Tensor<float> theta(3, 3);
    theta.fill(1.0f);
    Tensor<float> accum(3, 3);
    training::adagrad_step(theta, sum, accum, 0.05, 1e-8);
    return theta.v;
  };
  const auto a = step_with({&g1, &g2, &g3});
  const auto b = step_with({&g3, &g1, &g2});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}
