#include "boxrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "boxrec/encoder.hpp"
#include "boxrec/errors.hpp"
#include "boxrec/geometry.hpp"
#include "boxrec/kernels.hpp"

namespace boxrec::evaluation {

namespace {

std::vector<double> item_vector(const EncoderParams<float>& params, std::uint32_t id) {
  std::vector<double> v(params.dim());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = params.item_embeddings.at(id, c);
  return v;
}

}  // namespace

RankedList score_all(const LoadedModel& model, const datasets::SplitDataset& split, std::uint32_t user) {
  if (model.params.n_items() != split.n_items())
    throw DataError("checkpoint/bundle mismatch: checkpoint has " +
                    std::to_string(model.params.n_items()) + " items, bundle has " +
                    std::to_string(split.n_items()));
  const auto history = split.inference_history(user);
  const geometry::BoxSet boxes = encode_user(model.config, model.params, history);

  const std::size_t n_items = split.n_items();
  std::vector<char> excluded(n_items + 1, 0);
  for (std::uint32_t id : split.train[user]) excluded[id] = 1;
  for (std::uint32_t id : split.val[user]) excluded[id] = 1;

  std::vector<std::uint32_t> candidates;
  candidates.reserve(n_items);
  for (std::uint32_t id = 1; id <= n_items; ++id)
    if (!excluded[id]) candidates.push_back(id);

  std::vector<double> dist(candidates.size());
  kernels::parallel_for(candidates.size(), [&](std::size_t i) {
    dist[i] = geometry::box_set_distance(boxes, item_vector(model.params, candidates[i]), model.distance);
  });

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return candidates[a] < candidates[b];
  });

  RankedList out;
  out.items.reserve(order.size());
  out.distances.reserve(order.size());
  for (std::size_t i : order) {
    out.items.push_back(candidates[i]);
    out.distances.push_back(dist[i]);
  }
  return out;
}

double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
                   std::size_t n_relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (n_relevant == 0) return 0.0;
  std::size_t hits = 0;
  const std::size_t top = std::min(k, ranked.size());
  for (std::size_t r = 0; r < top; ++r)
    if (relevant[ranked[r]]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(n_relevant);
}

double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
                 std::size_t n_relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  if (n_relevant == 0) return 0.0;
  double dcg = 0.0;
  const std::size_t top = std::min(k, ranked.size());
  for (std::size_t r = 0; r < top; ++r)
    if (relevant[ranked[r]]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, n_relevant); ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

double ap_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
               std::size_t n_relevant, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ap_at_k: k must be >= 1");
  if (n_relevant == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  const std::size_t top = std::min(k, ranked.size());
  for (std::size_t r = 0; r < top; ++r) {
    if (relevant[ranked[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, n_relevant));
}

EvalReport evaluate(const LoadedModel& model, const datasets::SplitDataset& split,
                    std::span<const std::size_t> ks) {
  EvalReport report;
  for (std::size_t k : ks) report.rows.push_back({k, 0.0, 0.0, 0.0});

  const std::size_t n_users = split.n_users();
  struct UserMetrics {
    bool scored = false;
    std::vector<double> recall, ndcg, ap;
  };
  std::vector<UserMetrics> per_user(n_users + 1);

  kernels::parallel_for(n_users, [&](std::size_t i) {
    const auto user = static_cast<std::uint32_t>(i + 1);
    if (split.test[user].empty()) return;
    const RankedList ranked = score_all(model, split, user);
    std::vector<char> relevant(split.n_items() + 1, 0);
    std::size_t n_relevant = 0;
    for (std::uint32_t id : split.test[user])
      if (!relevant[id]) {
        relevant[id] = 1;
        ++n_relevant;
      }
    UserMetrics& m = per_user[user];
    m.scored = true;
    for (std::size_t k : ks) {
      m.recall.push_back(recall_at_k(ranked.items, relevant, n_relevant, k));
      m.ndcg.push_back(ndcg_at_k(ranked.items, relevant, n_relevant, k));
      m.ap.push_back(ap_at_k(ranked.items, relevant, n_relevant, k));
    }
  });

  // Fixed user-id order keeps the report reduction deterministic.
  for (std::uint32_t user = 1; user <= n_users; ++user) {
    const UserMetrics& m = per_user[user];
    if (!m.scored) {
      ++report.users_skipped;
      continue;
    }
    ++report.users_evaluated;
    for (std::size_t j = 0; j < ks.size(); ++j) {
      report.rows[j].recall += m.recall[j];
      report.rows[j].ndcg += m.ndcg[j];
      report.rows[j].map += m.ap[j];
    }
  }
  if (report.users_evaluated > 0) {
    const auto n = static_cast<double>(report.users_evaluated);
    for (auto& row : report.rows) {
      row.recall /= n;
      row.ndcg /= n;
      row.map /= n;
    }
  }
  return report;
}

LoadedModel point_baseline(const LoadedModel& model) {
  LoadedModel view = model;
  view.config.freeze_offsets = true;
  return view;
}

}  // namespace boxrec::evaluation
