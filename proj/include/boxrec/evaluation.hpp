#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "boxrec/checkpoint.hpp"
#include "boxrec/datasets.hpp"

namespace boxrec::evaluation {

// Items ranked by ascending distance (ascending item id on exact ties).
// Items the user rated in train or validation are never listed.
struct RankedList {
  std::vector<std::uint32_t> items;
  std::vector<double> distances;
};

// Encodes the user from the train+validation history and scores every
// unexcluded item. Deterministic; throws DataError for unknown users or a
// checkpoint/bundle item-count mismatch.
RankedList score_all(const LoadedModel& model, const datasets::SplitDataset& split, std::uint32_t user);

// `relevant` must be a 0/1 flag vector indexed by internal item id.
double recall_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
                   std::size_t n_relevant, std::size_t k);
double ndcg_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
                 std::size_t n_relevant, std::size_t k);
// Average precision with the min(k, |relevant|) normalizer, so AP@k <= 1.
double ap_at_k(std::span<const std::uint32_t> ranked, std::span<const char> relevant,
               std::size_t n_relevant, std::size_t k);

struct MetricRow {
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  double map = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::size_t users_evaluated = 0;
  std::size_t users_skipped = 0;  // empty test set
};

// Per-k means over users with a non-empty test set. Users are scored
// independently (in parallel) and reduced in user-id order.
EvalReport evaluate(const LoadedModel& model, const datasets::SplitDataset& split,
                    std::span<const std::size_t> ks);

// Read-only view of a trained model with offsets pinned to zero at encode
// time: scoring degenerates to squared Euclidean distance from the center.
LoadedModel point_baseline(const LoadedModel& model);

}  // namespace boxrec::evaluation
