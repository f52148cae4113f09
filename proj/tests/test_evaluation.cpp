#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "boxrec/errors.hpp"
#include "boxrec/evaluation.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/synthetic.hpp"
#include "boxrec/training.hpp"

using namespace boxrec;

namespace {

// Textbook re-implementations, kept independent of the library path.
struct OracleMetrics {
  double recall, ndcg, ap;
};

OracleMetrics metric_oracle(const std::vector<std::uint32_t>& ranked,
                            const std::set<std::uint32_t>& relevant, std::size_t k) {
  std::size_t hits = 0;
  double dcg = 0.0, ap_sum = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (relevant.count(ranked[r])) {
      ++hits;
      dcg += 1.0 / std::log2(r + 2.0);
      ap_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) idcg += 1.0 / std::log2(r + 2.0);
  OracleMetrics m;
  m.recall = relevant.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(relevant.size());
  m.ndcg = idcg > 0 ? dcg / idcg : 0.0;
  m.ap = ap_sum / static_cast<double>(std::min(k, relevant.size() == 0 ? 1 : relevant.size()));
  return m;
}

std::vector<char> flags(std::size_t n_items, const std::set<std::uint32_t>& relevant) {
  std::vector<char> f(n_items + 1, 0);
  for (std::uint32_t id : relevant) f[id] = 1;
  return f;
}

LoadedModel tiny_model(const datasets::SplitDataset& split, std::uint64_t seed = 12,
                       std::size_t boxes = 1,
                       geometry::BoxMode mode = geometry::BoxMode::kSingle) {
  LoadedModel m;
  m.config.dim = 8;
  m.config.window = 4;
  m.config.memory_slots = 2;
  m.config.boxes = boxes;
  m.config.mode = mode;
  m.distance.gamma = 0.5;
  Rng rng(seed);
  m.params = EncoderParams<float>::random_init(m.config, split.n_items(), rng);
  return m;
}

datasets::SplitDataset small_split(std::uint64_t seed = 3) {
  synthetic::WorldConfig cfg;
  cfg.users = 12;
  cfg.items = 60;
  cfg.seed = seed;
  cfg.min_items_per_user = 8;
  return datasets::chronological_split(synthetic::generate_box_world(cfg).log);
}

}  // namespace

TEST_CASE("worked example: one relevant item at rank 3, k=10") {
  // Ranked list with the single relevant item in third place.
  const std::vector<std::uint32_t> ranked = {7, 9, 4, 2, 8, 1, 3, 5, 6, 10};
  const std::set<std::uint32_t> relevant = {4};
  const auto f = flags(10, relevant);
  CHECK(evaluation::recall_at_k(ranked, f, 1, 10) == 1.0);
  CHECK(evaluation::ndcg_at_k(ranked, f, 1, 10) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(evaluation::ap_at_k(ranked, f, 1, 10) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("perfect ranking scores 1.0 on all three metrics") {
  const std::vector<std::uint32_t> ranked = {2, 5, 9, 1, 3, 4, 6, 7, 8};
  const std::set<std::uint32_t> relevant = {2, 5, 9};
  const auto f = flags(9, relevant);
  CHECK(evaluation::recall_at_k(ranked, f, 3, 10) == 1.0);
  CHECK(evaluation::ndcg_at_k(ranked, f, 3, 10) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(evaluation::ap_at_k(ranked, f, 3, 10) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("no relevant item in the top k scores zero") {
  std::vector<std::uint32_t> ranked;
  for (std::uint32_t i = 1; i <= 30; ++i) ranked.push_back(i);
  const std::set<std::uint32_t> relevant = {25, 28};
  const auto f = flags(30, relevant);
  CHECK(evaluation::recall_at_k(ranked, f, 2, 10) == 0.0);
  CHECK(evaluation::ndcg_at_k(ranked, f, 2, 10) == 0.0);
  CHECK(evaluation::ap_at_k(ranked, f, 2, 10) == 0.0);
}

TEST_CASE("library metrics equal the brute-force oracle on random instances") {
  Rng rng(41);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n_items = 20 + rng.next_below(60);
    std::vector<std::uint32_t> ranked(n_items);
    for (std::size_t i = 0; i < n_items; ++i) ranked[i] = static_cast<std::uint32_t>(i + 1);
    for (std::size_t i = n_items; i > 1; --i) std::swap(ranked[i - 1], ranked[rng.next_below(i)]);

    std::set<std::uint32_t> relevant;
    const std::size_t n_rel = 1 + rng.next_below(8);
    while (relevant.size() < n_rel)
      relevant.insert(static_cast<std::uint32_t>(1 + rng.next_below(n_items)));
    const std::size_t k = 1 + rng.next_below(25);

    const auto f = flags(n_items, relevant);
    const auto oracle = metric_oracle(ranked, relevant, k);
    CAPTURE(rep);
    CHECK(evaluation::recall_at_k(ranked, f, relevant.size(), k) == oracle.recall);
    CHECK(evaluation::ndcg_at_k(ranked, f, relevant.size(), k) == oracle.ndcg);
    CHECK(evaluation::ap_at_k(ranked, f, relevant.size(), k) == oracle.ap);
  }
}

TEST_CASE("metrics live in [0,1] and recall grows with k") {
  Rng rng(43);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n_items = 30;
    std::vector<std::uint32_t> ranked(n_items);
    for (std::size_t i = 0; i < n_items; ++i) ranked[i] = static_cast<std::uint32_t>(i + 1);
    for (std::size_t i = n_items; i > 1; --i) std::swap(ranked[i - 1], ranked[rng.next_below(i)]);
    std::set<std::uint32_t> relevant;
    while (relevant.size() < 5) relevant.insert(static_cast<std::uint32_t>(1 + rng.next_below(n_items)));
    const auto f = flags(n_items, relevant);

    double prev = 0.0;
    for (std::size_t k : {1, 3, 5, 10, 20, 30}) {
      const double r = evaluation::recall_at_k(ranked, f, 5, k);
      const double n = evaluation::ndcg_at_k(ranked, f, 5, k);
      const double a = evaluation::ap_at_k(ranked, f, 5, k);
      for (double x : {r, n, a}) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
      }
      CHECK(r >= prev);
      prev = r;
    }
  }
}

TEST_CASE("score_all excludes rated items and breaks ties by item id") {
  const auto split = small_split();
  const auto model = tiny_model(split);
  for (std::uint32_t user = 1; user <= split.n_users(); ++user) {
    if (split.test[user].empty()) continue;
    const auto ranked = evaluation::score_all(model, split, user);

    std::set<std::uint32_t> excluded(split.train[user].begin(), split.train[user].end());
    excluded.insert(split.val[user].begin(), split.val[user].end());
    for (std::uint32_t id : ranked.items) CHECK(excluded.count(id) == 0);
    CHECK(ranked.items.size() == split.n_items() - excluded.size());

    std::set<std::uint32_t> seen(ranked.items.begin(), ranked.items.end());
    CHECK(seen.size() == ranked.items.size());  // no duplicates

    for (std::size_t i = 1; i < ranked.items.size(); ++i) {
      CHECK(ranked.distances[i - 1] <= ranked.distances[i]);
      if (ranked.distances[i - 1] == ranked.distances[i])
        CHECK(ranked.items[i - 1] < ranked.items[i]);
    }
  }
  CHECK_THROWS_AS(evaluation::score_all(model, split, 0), DataError);
}

TEST_CASE("point-degenerate boxes rank by squared euclidean distance from the center") {
  const auto split = small_split();
  auto model = tiny_model(split);
  const auto view = evaluation::point_baseline(model);

  const std::uint32_t user = 1;
  const auto ranked = evaluation::score_all(view, split, user);

  const auto history = split.inference_history(user);
  const auto boxes = encode_user(view.config, view.params, history);
  REQUIRE(boxes.boxes.size() == 1);
  for (double f : boxes.boxes[0].offset) CHECK(f == 0.0);

  for (std::size_t i = 0; i < std::min<std::size_t>(ranked.items.size(), 20); ++i) {
    double d2 = 0;
    for (std::size_t c = 0; c < view.config.dim; ++c) {
      const double diff =
          view.params.item_embeddings.at(ranked.items[i], c) - boxes.boxes[0].center[c];
      d2 += diff * diff;
    }
    CHECK(ranked.distances[i] == doctest::Approx(d2).epsilon(1e-9));
  }

  // The view leaves the source model untouched.
  CHECK_FALSE(model.config.freeze_offsets);
}

TEST_CASE("batched scoring matches a one-item-at-a-time loop") {
  const auto split = small_split(9);
  const auto model = tiny_model(split, 21);
  const std::uint32_t user = 2;
  const auto ranked = evaluation::score_all(model, split, user);

  const auto history = split.inference_history(user);
  const auto boxes = encode_user(model.config, model.params, history);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < ranked.items.size() && checked < 50; ++i, ++checked) {
    std::vector<double> item(model.config.dim);
    for (std::size_t c = 0; c < item.size(); ++c)
      item[c] = model.params.item_embeddings.at(ranked.items[i], c);
    CHECK(ranked.distances[i] == geometry::box_set_distance(boxes, item, model.distance));
  }
}

TEST_CASE("evaluate is deterministic and counts skipped users") {
  auto split = small_split(5);
  split.test[3].clear();  // force one skipped user
  const auto model = tiny_model(split, 33);
  const std::size_t ks[] = {5, 10, 20};
  const auto a = evaluation::evaluate(model, split, ks);
  const auto b = evaluation::evaluate(model, split, ks);
  REQUIRE(a.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.rows[i].recall == b.rows[i].recall);
    CHECK(a.rows[i].ndcg == b.rows[i].ndcg);
    CHECK(a.rows[i].map == b.rows[i].map);
  }
  CHECK(a.users_skipped == 1);
  CHECK(a.users_evaluated == split.n_users() - 1);

  // Recall means stay monotone in k as well.
  CHECK(a.rows[0].recall <= a.rows[1].recall);
  CHECK(a.rows[1].recall <= a.rows[2].recall);
}

TEST_CASE("random model recall matches the analytic random baseline within 3 sigma") {
  // With random parameters the ranking is exchangeable, so per-user
  // E[recall@k] = k / n_candidates.
  synthetic::WorldConfig wcfg;
  wcfg.users = 60;
  wcfg.items = 300;
  wcfg.seed = 13;
  const auto split = datasets::chronological_split(synthetic::generate_box_world(wcfg).log);
  const auto model = tiny_model(split, 55);

  const std::size_t k = 10;
  const std::size_t ks[] = {k};
  const auto report = evaluation::evaluate(model, split, ks);

  std::vector<double> expectations, observed;
  for (std::uint32_t user = 1; user <= split.n_users(); ++user) {
    if (split.test[user].empty()) continue;
    std::set<std::uint32_t> excluded(split.train[user].begin(), split.train[user].end());
    excluded.insert(split.val[user].begin(), split.val[user].end());
    expectations.push_back(static_cast<double>(k) /
                           static_cast<double>(split.n_items() - excluded.size()));
  }
  double mean_expect = 0;
  for (double e : expectations) mean_expect += e;
  mean_expect /= static_cast<double>(expectations.size());

  // Bernoulli-style bound on the variance of per-user recall.
  double var = 0;
  for (double e : expectations) var += e * (1 - e);
  const double sigma = std::sqrt(var) / static_cast<double>(expectations.size());
  CHECK(std::abs(report.rows[0].recall - mean_expect) < 3.0 * sigma + 0.02);
}

TEST_CASE("checkpoint/bundle item mismatch is a data error") {
  const auto split = small_split(15);
  auto model = tiny_model(split);
  model.params.item_embeddings = Tensor<float>(split.n_items() + 5, model.config.dim);
  CHECK_THROWS_AS(evaluation::score_all(model, split, 1), DataError);
}
