#include "boxrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "boxrec/distance_ops.hpp"
#include "boxrec/errors.hpp"
#include "boxrec/graph.hpp"
#include "boxrec/kernels.hpp"

namespace boxrec::training {

namespace {

// Substream tags so shuffling, sampling, dropout, and init never collide.
enum RngTag : std::uint64_t { kInitTag = 1, kShuffleTag, kNegativeTag, kDropoutTag };

// Instances processed per parallel chunk. Fixed so the gradient reduction
// order (and therefore every float) is independent of thread count.
constexpr std::size_t kChunk = 32;

struct InstanceResult {
  double loss = 0.0;
  std::size_t pairs = 0;
  std::vector<Tensor<float>> dense;  // aligned with the canonical name order
  std::vector<std::pair<std::uint32_t, std::vector<float>>> table_rows;
};

}  // namespace

EncoderConfig TrainConfig::encoder_config() const {
  EncoderConfig e;
  e.dim = dim;
  e.window = window;
  e.boxes = boxes;
  e.mode = mode;
  e.memory_slots = memory_slots;
  e.pooling = pooling;
  e.dropout_rate = dropout_rate;
  e.ablate_neural = ablate_neural;
  e.freeze_offsets = freeze_offsets;
  return e;
}

geometry::DistanceParams TrainConfig::distance_params() const {
  geometry::DistanceParams p;
  p.gamma = gamma;
  p.alpha = alpha;
  p.use_additional = use_additional;
  return p;
}

void TrainConfig::validate() const {
  encoder_config().validate();
  distance_params().validate();
  if (!(margin > 0.0)) throw std::invalid_argument("train config: margin must be > 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning_rate must be >= 0");
  if (targets == 0) throw std::invalid_argument("train config: targets must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (negatives_per_positive == 0)
    throw std::invalid_argument("train config: negatives_per_positive must be >= 1");
  if (l2 < 0.0) throw std::invalid_argument("train config: l2 must be >= 0");
}

std::vector<TrainInstance> make_instances(const datasets::SplitDataset& split, std::size_t window,
                                          std::size_t targets) {
  std::vector<TrainInstance> out;
  for (std::uint32_t user = 1; user < split.train.size(); ++user) {
    const auto& seq = split.train[user];
    if (seq.size() < 2) continue;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      TrainInstance inst;
      inst.user = user;
      const std::size_t start = t + 1 >= window ? t + 1 - window : 0;
      inst.window = pad_window(std::span(seq.data() + start, t + 1 - start), window);
      const std::size_t stop = std::min(seq.size(), t + 1 + targets);
      inst.targets.assign(seq.begin() + static_cast<std::ptrdiff_t>(t + 1),
                          seq.begin() + static_cast<std::ptrdiff_t>(stop));
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<std::uint32_t> sample_negatives(std::span<const std::uint32_t> sorted_positives,
                                            std::size_t n_items, std::size_t count, Rng& rng) {
  if (sorted_positives.size() >= n_items)
    throw DataError("negative sampling: user's positives cover the whole item space");
  std::vector<std::uint32_t> out;
  out.reserve(count);
  while (out.size() < count) {
    const auto id = static_cast<std::uint32_t>(1 + rng.next_below(n_items));
    if (!std::binary_search(sorted_positives.begin(), sorted_positives.end(), id)) out.push_back(id);
  }
  return out;
}

double hinge_loss(const geometry::BoxSet& boxes, std::span<const double> pos_item,
                  std::span<const double> neg_item, double margin,
                  const geometry::DistanceParams& params) {
  const double pos = geometry::box_set_distance(boxes, pos_item, params);
  const double neg = geometry::box_set_distance(boxes, neg_item, params);
  return std::max(0.0, pos + margin - neg);
}

void adagrad_step(Tensor<float>& theta, const Tensor<float>& grad, Tensor<float>& accumulator,
                  double learning_rate, double epsilon) {
  if (!theta.same_shape(grad)) throw std::invalid_argument("adagrad: grad shape mismatch");
  if (!theta.same_shape(accumulator)) throw std::invalid_argument("adagrad: accumulator shape mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const float g = grad.v[i];
    accumulator.v[i] += g * g;
    theta.v[i] -= static_cast<float>(learning_rate) * g /
                  (std::sqrt(accumulator.v[i]) + static_cast<float>(epsilon));
  }
}

void adagrad_step_rows(Tensor<float>& theta,
                       const std::map<std::uint32_t, std::vector<float>>& row_grads,
                       Tensor<float>& accumulator, double learning_rate, double epsilon) {
  for (const auto& [row, grad] : row_grads) {
    if (row >= theta.rows) throw std::invalid_argument("adagrad: row out of range");
    if (grad.size() != theta.cols) throw std::invalid_argument("adagrad: row grad width mismatch");
    for (std::size_t c = 0; c < theta.cols; ++c) {
      const float g = grad[c];
      accumulator.at(row, c) += g * g;
      theta.at(row, c) -= static_cast<float>(learning_rate) * g /
                          (std::sqrt(accumulator.at(row, c)) + static_cast<float>(epsilon));
    }
  }
}

namespace {

// Forward + backward for one instance; negatives and dropout use substreams
// keyed by (seed, epoch, instance id), so results do not depend on processing
// order.
InstanceResult run_instance(const TrainInstance& inst, std::size_t instance_id, std::size_t epoch,
                            const TrainConfig& cfg, const EncoderConfig& ecfg,
                            const EncoderParams<float>& params,
                            const std::vector<std::uint32_t>& user_positives,
                            std::size_t n_items) {
  Rng neg_rng = Rng::derive(cfg.seed, {kNegativeTag, epoch, instance_id});
  Rng drop_rng = Rng::derive(cfg.seed, {kDropoutTag, epoch, instance_id});

  const auto negatives = sample_negatives(user_positives, n_items,
                                          inst.targets.size() * cfg.negatives_per_positive, neg_rng);

  ad::Graph<float> g;
  EncodeOptions opts;
  opts.train_mode = true;
  opts.record_gradients = true;
  opts.dropout_rng = &drop_rng;
  const EncoderGraph<float> eg = build_encoder_graph(g, ecfg, params, inst.window, opts);

  const geometry::DistanceParams dparams = cfg.distance_params();
  const ad::NodeId margin_node = g.constant_scalar(static_cast<float>(cfg.margin));

  ad::NodeId loss = ad::kNoNode;
  std::size_t pairs = 0;
  for (std::size_t t = 0; t < inst.targets.size(); ++t) {
    const std::uint32_t pos = inst.targets[t];
    const ad::NodeId pos_vec = g.gather_rows(eg.item_table, std::span(&pos, 1));
    const ad::NodeId pos_dist = ad::box_set_distance_node(g, ecfg.mode, eg.boxes, pos_vec, dparams);
    for (std::size_t k = 0; k < cfg.negatives_per_positive; ++k) {
      const std::uint32_t neg = negatives[t * cfg.negatives_per_positive + k];
      const ad::NodeId neg_vec = g.gather_rows(eg.item_table, std::span(&neg, 1));
      const ad::NodeId neg_dist = ad::box_set_distance_node(g, ecfg.mode, eg.boxes, neg_vec, dparams);
      const ad::NodeId hinge = g.relu(g.add(g.sub(pos_dist, neg_dist), margin_node));
      loss = loss == ad::kNoNode ? hinge : g.add(loss, hinge);
      ++pairs;
    }
  }
  g.backward(loss);

  InstanceResult res;
  res.loss = g.val(loss).v[0];
  res.pairs = pairs;
  res.dense.reserve(eg.param_nodes.size());
  for (const auto& [name, node] : eg.param_nodes) res.dense.push_back(g.grad(node));
  res.table_rows = g.sparse_grad_rows(eg.item_table);
  return res;
}

void check_finite(const std::string& name, const float* data, std::size_t n, std::size_t epoch,
                  std::size_t batch) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(data[i]))
      throw NumericFault("gradient for " + name + " (epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + ")");
}

}  // namespace

FitResult fit(const datasets::SplitDataset& split, const TrainConfig& cfg,
              const std::filesystem::path& out_dir) {
  cfg.validate();
  const EncoderConfig ecfg = cfg.encoder_config();
  const std::size_t n_items = split.n_items();

  const auto instances = make_instances(split, cfg.window, cfg.targets);
  if (instances.empty()) throw DataError("training: no instances (is the train split empty?)");

  // Sorted train-positive sets drive negative sampling exclusion.
  std::vector<std::vector<std::uint32_t>> positives(split.train.size());
  for (std::uint32_t u = 1; u < split.train.size(); ++u) {
    positives[u] = split.train[u];
    std::sort(positives[u].begin(), positives[u].end());
    positives[u].erase(std::unique(positives[u].begin(), positives[u].end()), positives[u].end());
  }

  Rng init_rng = Rng::derive(cfg.seed, {kInitTag});
  EncoderParams<float> params = EncoderParams<float>::random_init(ecfg, n_items, init_rng);

  // Canonical dense-parameter order: whatever the builder emits (fixed for a
  // given config). Probe it once with the first instance's window.
  std::vector<std::string> dense_names;
  {
    ad::Graph<float> probe;
    EncodeOptions opts;
    opts.record_gradients = true;
    const auto eg = build_encoder_graph(probe, ecfg, params, instances.front().window, opts);
    for (const auto& [name, node] : eg.param_nodes) dense_names.push_back(name);
  }
  std::map<std::string, Tensor<float>*> by_name;
  for_each_tensor(params, [&](const std::string& name, Tensor<float>& t) { by_name[name] = &t; });

  // Adagrad accumulators, lazily shaped.
  std::map<std::string, Tensor<float>> accum;
  for (const auto& name : dense_names) {
    const Tensor<float>& t = *by_name.at(name);
    accum.emplace(name, Tensor<float>(t.rows, t.cols));
  }
  Tensor<float> table_accum(params.item_embeddings.rows, params.item_embeddings.cols);

  const bool has_out = !out_dir.empty();
  std::ofstream trace;
  if (has_out) {
    std::filesystem::create_directories(out_dir);
    trace.open(out_dir / "loss_trace.tsv", std::ios::trunc);
    if (!trace) throw DataError("cannot write loss trace under " + out_dir.string());
  }
  const std::filesystem::path ckpt_path = has_out ? out_dir / "checkpoint.bin" : std::filesystem::path();

  FitResult result;
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = Rng::derive(cfg.seed, {kShuffleTag, epoch});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    double loss_sum = 0.0;
    std::size_t pair_count = 0;

    for (std::size_t batch_start = 0, batch_no = 0; batch_start < order.size();
         batch_start += cfg.batch_size, ++batch_no) {
      const std::size_t batch_end = std::min(order.size(), batch_start + cfg.batch_size);

      std::vector<Tensor<float>> dense_sum;
      dense_sum.reserve(dense_names.size());
      for (const auto& name : dense_names) {
        const Tensor<float>& t = *by_name.at(name);
        dense_sum.emplace_back(t.rows, t.cols);
      }
      std::map<std::uint32_t, std::vector<float>> table_sum;

      for (std::size_t chunk_start = batch_start; chunk_start < batch_end; chunk_start += kChunk) {
        const std::size_t chunk_end = std::min(batch_end, chunk_start + kChunk);
        std::vector<InstanceResult> results(chunk_end - chunk_start);
        kernels::parallel_for(results.size(), [&](std::size_t i) {
          const std::size_t inst_id = order[chunk_start + i];
          const TrainInstance& inst = instances[inst_id];
          results[i] = run_instance(inst, inst_id, epoch, cfg, ecfg, params, positives[inst.user], n_items);
        });
        // Reduce in instance order; float sums stay identical for any thread
        // count.
        for (const auto& r : results) {
          loss_sum += r.loss;
          pair_count += r.pairs;
          for (std::size_t p = 0; p < dense_sum.size(); ++p)
            for (std::size_t i = 0; i < dense_sum[p].size(); ++i) dense_sum[p].v[i] += r.dense[p].v[i];
          for (const auto& [row, grad] : r.table_rows) {
            auto& acc = table_sum[row];
            if (acc.empty()) acc.assign(grad.size(), 0.f);
            for (std::size_t i = 0; i < grad.size(); ++i) acc[i] += grad[i];
          }
        }
      }

      // Weight decay on the head weight matrices and the touched embedding
      // rows, folded into the gradient before the accumulator update.
      const float decay = static_cast<float>(2.0 * cfg.l2);
      if (decay != 0.f) {
        for (std::size_t p = 0; p < dense_names.size(); ++p) {
          const std::string& name = dense_names[p];
          const bool is_head_weight =
              (name.rfind("center_head.", 0) == 0 || name.rfind("offset_head.", 0) == 0) &&
              name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
          if (!is_head_weight) continue;
          const Tensor<float>& theta = *by_name.at(name);
          for (std::size_t i = 0; i < theta.size(); ++i) dense_sum[p].v[i] += decay * theta.v[i];
        }
        for (auto& [row, grad] : table_sum) {
          if (row == kPaddingId) continue;
          for (std::size_t c = 0; c < grad.size(); ++c)
            grad[c] += decay * params.item_embeddings.at(row, c);
        }
      }

      for (std::size_t p = 0; p < dense_names.size(); ++p)
        check_finite(dense_names[p], dense_sum[p].data(), dense_sum[p].size(), epoch, batch_no);
      for (const auto& [row, grad] : table_sum)
        check_finite("item_embeddings row " + std::to_string(row), grad.data(), grad.size(), epoch,
                     batch_no);

      for (std::size_t p = 0; p < dense_names.size(); ++p)
        adagrad_step(*by_name.at(dense_names[p]), dense_sum[p], accum.at(dense_names[p]),
                     cfg.learning_rate, 1e-8);
      table_sum.erase(kPaddingId);  // the padding row stays zero
      adagrad_step_rows(params.item_embeddings, table_sum, table_accum, cfg.learning_rate, 1e-8);
    }

    const double mean_loss = pair_count > 0 ? loss_sum / static_cast<double>(pair_count) : 0.0;
    result.epoch_mean_loss.push_back(mean_loss);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (has_out) {
      char line[128];
      std::snprintf(line, sizeof(line), "%zu\t%.8f\t%.3f\n", epoch, mean_loss, seconds);
      trace << line;
      trace.flush();
      save_checkpoint(ckpt_path, ecfg, cfg.distance_params(), params, cfg.seed);
    }
  }

  result.model = LoadedModel{ecfg, cfg.distance_params(), std::move(params), cfg.seed};
  result.checkpoint_path = ckpt_path;
  return result;
}

}  // namespace boxrec::training
