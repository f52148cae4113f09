#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "boxrec/datasets.hpp"
#include "boxrec/evaluation.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/synthetic.hpp"

using namespace boxrec;
using synthetic::WorldConfig;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("noise-free worlds only log in-box items") {
  WorldConfig cfg;
  cfg.users = 10;
  cfg.items = 150;
  cfg.noise = 0.0;
  cfg.seed = 2;
  const auto world = synthetic::generate_box_world(cfg);
  std::map<std::string, std::size_t> user_index;
  for (std::size_t u = 0; u < cfg.users; ++u) user_index[synthetic::user_name(u)] = u;

  for (const auto& it : world.log) {
    const auto& boxes = world.users[user_index[it.user]].boxes;
    const std::size_t j = std::stoul(it.item.substr(1));
    bool inside = false;
    for (const auto& b : boxes) inside = inside || geometry::contains(b, world.item_features[j]);
    CHECK(inside);
  }
}

TEST_CASE("noisy worlds carry the configured fraction of out-of-box positives") {
  WorldConfig cfg;
  cfg.users = 20;
  cfg.items = 300;
  cfg.noise = 0.1;
  cfg.seed = 3;
  const auto world = synthetic::generate_box_world(cfg);
  std::map<std::string, std::size_t> user_index;
  for (std::size_t u = 0; u < cfg.users; ++u) user_index[synthetic::user_name(u)] = u;

  std::size_t outside = 0;
  for (const auto& it : world.log) {
    const auto& boxes = world.users[user_index[it.user]].boxes;
    const std::size_t j = std::stoul(it.item.substr(1));
    bool inside = false;
    for (const auto& b : boxes) inside = inside || geometry::contains(b, world.item_features[j]);
    if (!inside) ++outside;
  }
  const double fraction = static_cast<double>(outside) / static_cast<double>(world.log.size());
  CHECK(fraction == doctest::Approx(0.1).epsilon(0.35));
}

TEST_CASE("two disjoint boxes mix two item clusters in one log") {
  WorldConfig cfg;
  cfg.users = 6;
  cfg.items = 400;
  cfg.boxes_per_user = 2;
  cfg.noise = 0.0;
  cfg.seed = 4;
  cfg.offset_min = 0.3;
  cfg.offset_max = 0.45;
  cfg.min_center_gap = 1.2;
  const auto world = synthetic::generate_box_world(cfg);

  std::map<std::string, std::size_t> user_index;
  for (std::size_t u = 0; u < cfg.users; ++u) user_index[synthetic::user_name(u)] = u;
  std::map<std::size_t, std::set<std::size_t>> boxes_hit;  // user -> box ids with items
  for (const auto& it : world.log) {
    const std::size_t u = user_index[it.user];
    const std::size_t j = std::stoul(it.item.substr(1));
    for (std::size_t b = 0; b < world.users[u].boxes.size(); ++b)
      if (geometry::contains(world.users[u].boxes[b], world.item_features[j])) boxes_hit[u].insert(b);
  }
  std::size_t users_with_two = 0;
  for (const auto& [u, hit] : boxes_hit)
    if (hit.size() == 2) ++users_with_two;
  CHECK(users_with_two >= 4);  // most users draw from both clusters
}

TEST_CASE("expected positives per user track the monte-carlo volume estimate") {
  WorldConfig cfg;
  cfg.users = 40;
  cfg.items = 500;
  cfg.noise = 0.0;
  cfg.seed = 5;
  cfg.min_items_per_user = 1;  // leave the size distribution untouched
  const auto world = synthetic::generate_box_world(cfg);
  const double per_user =
      static_cast<double>(world.log.size()) / static_cast<double>(cfg.users);

  // Monte-Carlo estimate of E[#items in a random box] under the same draw
  // distributions.
  Rng rng(1234);
  double expect = 0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t) {
    double volume_fraction = 1.0;
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
      const double c = rng.next_range(-cfg.center_range, cfg.center_range);
      const double f = rng.next_range(cfg.offset_min, cfg.offset_max);
      const double lo = std::max(-1.0, c - f), hi = std::min(1.0, c + f);
      volume_fraction *= std::max(0.0, hi - lo) / 2.0;
    }
    expect += volume_fraction * static_cast<double>(cfg.items);
  }
  expect /= trials;
  // Same order of magnitude; the generator also re-draws underpopulated
  // users, which biases the realized count slightly upward.
  CHECK(per_user > 0.5 * expect);
  CHECK(per_user < 2.5 * expect);
}

TEST_CASE("world generation is a pure function of its seed") {
  WorldConfig cfg;
  cfg.users = 8;
  cfg.items = 120;
  cfg.seed = 7;
  const auto a = synthetic::generate_box_world(cfg);
  const auto b = synthetic::generate_box_world(cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].user == b.log[i].user);
    CHECK(a.log[i].item == b.log[i].item);
    CHECK(a.log[i].timestamp == b.log[i].timestamp);
  }
  CHECK(a.item_features == b.item_features);

  cfg.seed = 8;
  const auto c = synthetic::generate_box_world(cfg);
  CHECK(a.item_features != c.item_features);
}

TEST_CASE("grid oracle agrees with the closed-form nearest point") {
  Rng rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 2 + rng.next_below(2);
    std::vector<double> center(d), offset(d), item(d);
    for (auto& x : center) x = rng.next_range(-1.5, 1.5);
    for (auto& x : offset) x = rng.next_range(0.0, 1.0);
    for (auto& x : item) x = rng.next_range(-3.0, 3.0);
    const geometry::Hypercuboid box{center, offset};

    const std::size_t res = 64;
    const auto oracle = synthetic::grid_nearest_point_oracle(box, item, res);
    const double closed = geometry::outside_distance(box, item);

    // The grid point nearest the true projection is within half a cell
    // diagonal; expand the squared-distance tolerance accordingly.
    double cell2 = 0;
    for (double f : offset) {
      const double h = 2 * f / static_cast<double>(res - 1);
      cell2 += h * h;
    }
    const double delta = 0.5 * std::sqrt(cell2);
    const double tol = 2.0 * std::sqrt(closed) * delta + delta * delta + 1e-12;
    CHECK(oracle.squared_distance >= closed - 1e-12);
    CHECK(oracle.squared_distance <= closed + tol);
  }

  // Interior items and point boxes are exact.
  const geometry::Hypercuboid box{{0, 0}, {1, 1}};
  CHECK(synthetic::grid_nearest_point_oracle(box, std::vector<double>{0.25, -0.5}, 51).squared_distance ==
        doctest::Approx(0.0).epsilon(1e-3));
  const geometry::Hypercuboid point{{1, 2}, {0, 0}};
  CHECK(synthetic::grid_nearest_point_oracle(point, std::vector<double>{1, 0}, 51).squared_distance ==
        doctest::Approx(4.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      synthetic::grid_nearest_point_oracle(geometry::Hypercuboid{{0}, {1}}, std::vector<double>{0}, 10),
      std::invalid_argument);
  CHECK_THROWS_AS(synthetic::grid_nearest_point_oracle(
                      geometry::Hypercuboid{{0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1}},
                      std::vector<double>{0, 0, 0, 0, 0, 0}, 50),
                  std::invalid_argument);
}

TEST_CASE("write_world emits identical bundles for identical seeds") {
  WorldConfig cfg;
  cfg.users = 6;
  cfg.items = 100;
  cfg.seed = 11;
  const auto dir = std::filesystem::temp_directory_path() / "boxrec_world_test";
  synthetic::write_world(synthetic::generate_box_world(cfg), dir / "a");
  synthetic::write_world(synthetic::generate_box_world(cfg), dir / "b");
  for (const char* f : {"log.tsv", "truth.txt", "users.vocab", "items.vocab", "train.txt", "val.txt",
                        "test.txt"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(!slurp(dir / "a" / f).empty());
  }
}

TEST_CASE("truth sidecar round-trips") {
  WorldConfig cfg;
  cfg.users = 5;
  cfg.items = 80;
  cfg.boxes_per_user = 2;
  cfg.seed = 12;
  cfg.offset_min = 0.3;
  cfg.offset_max = 0.5;
  const auto world = synthetic::generate_box_world(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "boxrec_truth_test";
  synthetic::write_world(world, dir);

  const auto truth = synthetic::read_truth(dir / "truth.txt");
  CHECK(truth.latent_dim == cfg.latent_dim);
  REQUIRE(truth.item_features.size() == cfg.items);
  REQUIRE(truth.users.size() == cfg.users);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    REQUIRE(truth.users[u].boxes.size() == 2);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
        CHECK(truth.users[u].boxes[b].center[j] ==
              doctest::Approx(world.users[u].boxes[b].center[j]).epsilon(1e-15));
        CHECK(truth.users[u].boxes[b].offset[j] ==
              doctest::Approx(world.users[u].boxes[b].offset[j]).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("untrained models sit at chance level AUC") {
  WorldConfig cfg;
  cfg.users = 50;
  cfg.items = 400;
  cfg.seed = 13;
  const auto world = synthetic::generate_box_world(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "boxrec_auc_test";
  synthetic::write_world(world, dir);
  const auto split = datasets::load_bundle(dir);
  const auto truth = synthetic::read_truth(dir / "truth.txt");

  LoadedModel model;
  model.config.dim = 8;
  model.config.window = 5;
  model.config.memory_slots = 2;
  Rng rng(999);
  model.params = EncoderParams<float>::random_init(model.config, split.n_items(), rng);

  const auto report = synthetic::recovery_report(model, split, truth);
  CHECK(report.users_scored >= 40);
  CHECK(report.mean_auc == doctest::Approx(0.5).epsilon(0.1));
  CHECK(std::abs(report.mean_auc - 0.5) < 0.05);
  CHECK(report.random_recall_at_10 > 0.0);
}
