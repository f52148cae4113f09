#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "boxrec/checkpoint.hpp"
#include "boxrec/datasets.hpp"
#include "boxrec/encoder.hpp"
#include "boxrec/geometry.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/tensor.hpp"

namespace boxrec::training {

struct TrainConfig {
  // model
  std::size_t dim = 100;
  std::size_t window = 5;   // L
  std::size_t targets = 3;  // T
  std::size_t boxes = 1;    // M
  geometry::BoxMode mode = geometry::BoxMode::kSingle;
  std::size_t memory_slots = 10;  // N
  Pooling pooling = Pooling::kMean;
  double dropout_rate = 0.0;
  bool ablate_neural = false;
  bool freeze_offsets = false;

  // distance
  double gamma = 0.5;
  double alpha = 200.0;
  bool use_additional = false;

  // optimization
  double learning_rate = 0.05;
  double margin = 0.5;  // hinge margin lambda
  double l2 = 1e-3;
  std::size_t batch_size = 4096;
  std::size_t epochs = 10;
  std::size_t negatives_per_positive = 1;
  std::uint64_t seed = 42;

  EncoderConfig encoder_config() const;
  geometry::DistanceParams distance_params() const;
  void validate() const;
};

struct TrainInstance {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> window;   // length L, left-padded
  std::vector<std::uint32_t> targets;  // 1..T upcoming items, never padding
};

// Stride-1 sliding windows over each user's train sequence: the window ends
// at position t, targets are the next T positions clipped to the sequence.
// A length-n sequence yields n-1 instances.
std::vector<TrainInstance> make_instances(const datasets::SplitDataset& split, std::size_t window,
                                          std::size_t targets);

// Uniform over the items (internal ids 1..n_items) not in the user's
// train-positive set. `sorted_positives` must be sorted and deduplicated.
std::vector<std::uint32_t> sample_negatives(std::span<const std::uint32_t> sorted_positives,
                                            std::size_t n_items, std::size_t count, Rng& rng);

// max(0, dist(pos) + margin - dist(neg)), closed form.
double hinge_loss(const geometry::BoxSet& boxes, std::span<const double> pos_item,
                  std::span<const double> neg_item, double margin,
                  const geometry::DistanceParams& params);

// acc += g^2; theta -= lr * g / (sqrt(acc) + eps), elementwise.
void adagrad_step(Tensor<float>& theta, const Tensor<float>& grad, Tensor<float>& accumulator,
                  double learning_rate, double epsilon);

// Row-sparse variant for the embedding table; touches only the given rows.
void adagrad_step_rows(Tensor<float>& theta,
                       const std::map<std::uint32_t, std::vector<float>>& row_grads,
                       Tensor<float>& accumulator, double learning_rate, double epsilon);

struct FitResult {
  LoadedModel model;
  std::vector<double> epoch_mean_loss;  // mean hinge value per scored pair
  std::filesystem::path checkpoint_path;
};

// Full training loop: seeded shuffling and negative resampling per epoch,
// fixed-order gradient reduction (thread count never changes the numbers),
// Adagrad with a sparse embedding update, checkpoint + trace line per epoch.
// Writes checkpoint.bin and loss_trace.tsv under out_dir unless it is empty.
FitResult fit(const datasets::SplitDataset& split, const TrainConfig& cfg,
              const std::filesystem::path& out_dir);

}  // namespace boxrec::training
