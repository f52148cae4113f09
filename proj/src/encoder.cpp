#include "boxrec/encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace boxrec {

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::kMean: return "mean";
    case Pooling::kSum: return "sum";
    case Pooling::kMin: return "min";
    case Pooling::kMax: return "max";
  }
  return "unknown";
}

Pooling pooling_from_name(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "sum") return Pooling::kSum;
  if (name == "min") return Pooling::kMin;
  if (name == "max") return Pooling::kMax;
  throw std::invalid_argument("unknown pooling '" + name + "' (expected mean/sum/min/max)");
}

const char* mode_name(geometry::BoxMode m) {
  switch (m) {
    case geometry::BoxMode::kSingle: return "single";
    case geometry::BoxMode::kConcentric: return "concentric";
    case geometry::BoxMode::kIndependent: return "independent";
  }
  return "unknown";
}

geometry::BoxMode mode_from_name(const std::string& name) {
  if (name == "single") return geometry::BoxMode::kSingle;
  if (name == "concentric") return geometry::BoxMode::kConcentric;
  if (name == "independent") return geometry::BoxMode::kIndependent;
  throw std::invalid_argument("unknown box mode '" + name + "' (expected single/concentric/independent)");
}

void EncoderConfig::validate() const {
  if (dim == 0 || dim % 2 != 0)
    throw std::invalid_argument("encoder config: dim must be even and positive");
  if (window == 0) throw std::invalid_argument("encoder config: window must be >= 1");
  if (boxes == 0) throw std::invalid_argument("encoder config: boxes must be >= 1");
  if (memory_slots == 0) throw std::invalid_argument("encoder config: memory_slots must be >= 1");
  if (mode == geometry::BoxMode::kSingle && boxes != 1)
    throw std::invalid_argument("encoder config: single mode forces boxes = 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("encoder config: dropout_rate must be in [0,1)");
}

namespace {

template <typename T>
Tensor<T> normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor<T> t(rows, cols);
  for (auto& x : t.v) x = static_cast<T>(stddev * rng.next_normal());
  return t;
}

}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::random_init(const EncoderConfig& cfg, std::size_t n_items, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t h = d / 2;
  const double w_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double w_hid = 1.0 / std::sqrt(static_cast<double>(h));

  EncoderParams<T> p;
  p.item_embeddings = normal_tensor<T>(n_items + 1, d, 0.1, rng);
  for (std::size_t c = 0; c < d; ++c) p.item_embeddings.at(kPaddingId, c) = T(0);

  for (LstmWeights<T>* w : {&p.lstm_fwd, &p.lstm_bwd}) {
    w->w_input = normal_tensor<T>(d, 4 * h, w_in, rng);
    w->w_hidden = normal_tensor<T>(h, 4 * h, w_hid, rng);
    w->bias = Tensor<T>(1, 4 * h);
  }
  p.attn_proj = {normal_tensor<T>(d, d, w_in, rng), Tensor<T>(1, d)};
  p.key_matrix = normal_tensor<T>(d, cfg.memory_slots, w_in, rng);
  p.memory_matrix = normal_tensor<T>(d, cfg.memory_slots, 0.1, rng);
  for (std::size_t i = 0; i < cfg.center_head_count(); ++i)
    p.center_heads.push_back({normal_tensor<T>(d, d, w_in, rng), Tensor<T>(1, d)});
  for (std::size_t i = 0; i < cfg.boxes; ++i) {
    // Positive bias opens the boxes at the start; a rectified head whose
    // pre-activations go all-negative never recovers.
    Tensor<T> bias(1, d);
    bias.fill(T(0.2));
    p.offset_heads.push_back({normal_tensor<T>(d, d, w_in, rng), std::move(bias)});
  }
  return p;
}

std::vector<std::uint32_t> pad_window(std::span<const std::uint32_t> history, std::size_t window) {
  std::vector<std::uint32_t> out(window, kPaddingId);
  const std::size_t take = std::min(history.size(), window);
  for (std::size_t i = 0; i < take; ++i) out[window - take + i] = history[history.size() - take + i];
  return out;
}

template <typename T>
EncoderGraph<T> build_encoder_graph(ad::Graph<T>& g, const EncoderConfig& cfg,
                                    const EncoderParams<T>& params,
                                    std::span<const std::uint32_t> padded_window,
                                    const EncodeOptions& opts) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t h = d / 2;
  const std::size_t L = cfg.window;
  if (padded_window.size() != L)
    throw std::invalid_argument("encoder: window must be padded to length " + std::to_string(L));

  std::size_t pad = 0;
  while (pad < L && padded_window[pad] == kPaddingId) ++pad;
  if (pad == L) throw std::invalid_argument("encoder: window has no valid interactions");
  for (std::size_t i = pad; i < L; ++i)
    if (padded_window[i] == kPaddingId)
      throw std::invalid_argument("encoder: padding must be contiguous on the left");
  const std::size_t n_valid = L - pad;

  EncoderGraph<T> eg;
  const bool rg = opts.record_gradients;
  eg.item_table = g.input(params.item_embeddings, rg, /*sparse_grad=*/rg && !opts.dense_table_grad);
  if (rg && opts.dense_table_grad) eg.param_nodes.emplace_back("item_embeddings", eg.item_table);

  auto leaf = [&](const std::string& name, const Tensor<T>& t) {
    const ad::NodeId id = g.input(t, rg);
    if (rg) eg.param_nodes.emplace_back(name, id);
    return id;
  };

  const ad::NodeId seq = g.gather_rows(eg.item_table, padded_window);  // L x d

  ad::NodeId attended = ad::kNoNode;
  if (!cfg.ablate_neural) {
    // Bi-LSTM, hidden width d/2 per direction, concatenated per position.
    struct LstmNodes {
      ad::NodeId w_input, w_hidden, bias;
    };
    auto lstm_leaves = [&](const char* prefix, const LstmWeights<T>& w) {
      return LstmNodes{leaf(std::string(prefix) + ".w_input", w.w_input),
                       leaf(std::string(prefix) + ".w_hidden", w.w_hidden),
                       leaf(std::string(prefix) + ".bias", w.bias)};
    };
    const LstmNodes fwd = lstm_leaves("lstm_fwd", params.lstm_fwd);
    const LstmNodes bwd = lstm_leaves("lstm_bwd", params.lstm_bwd);

    auto lstm_pass = [&](const LstmNodes& w, bool reverse) {
      std::vector<ad::NodeId> hidden(L);
      ad::NodeId h_prev = g.constant(Tensor<T>(1, h));
      ad::NodeId c_prev = g.constant(Tensor<T>(1, h));
      for (std::size_t step = 0; step < L; ++step) {
        const std::size_t t = reverse ? L - 1 - step : step;
        const ad::NodeId x_t = g.slice(seq, t, t + 1, 0, d);
        const ad::NodeId gates =
            g.add(g.add(g.matmul(x_t, w.w_input), g.matmul(h_prev, w.w_hidden)), w.bias);
        const ad::NodeId in_gate = g.sigmoid(g.slice(gates, 0, 1, 0, h));
        const ad::NodeId forget_gate = g.sigmoid(g.slice(gates, 0, 1, h, 2 * h));
        const ad::NodeId out_gate = g.sigmoid(g.slice(gates, 0, 1, 2 * h, 3 * h));
        const ad::NodeId cand = g.tanh(g.slice(gates, 0, 1, 3 * h, 4 * h));
        const ad::NodeId cell = g.add(g.mul(forget_gate, c_prev), g.mul(in_gate, cand));
        const ad::NodeId hid = g.mul(out_gate, g.tanh(cell));
        hidden[t] = hid;
        h_prev = hid;
        c_prev = cell;
      }
      return hidden;
    };
    const std::vector<ad::NodeId> h_fwd = lstm_pass(fwd, false);
    const std::vector<ad::NodeId> h_bwd = lstm_pass(bwd, true);

    std::vector<ad::NodeId> rows(L);
    for (std::size_t t = 0; t < L; ++t) rows[t] = g.concat(1, {h_fwd[t], h_bwd[t]});
    const ad::NodeId enhanced = g.concat(0, rows);  // S', L x d
    eg.sequence_encoding = enhanced;

    // Self-attention with the original embeddings as values.
    const ad::NodeId attn_w = leaf("attn_proj.weight", params.attn_proj.weight);
    const ad::NodeId attn_b = leaf("attn_proj.bias", params.attn_proj.bias);
    const ad::NodeId projected = g.tanh(g.add(g.matmul(enhanced, attn_w), attn_b));
    ad::NodeId logits = g.scale(g.matmul(projected, g.transpose(projected)),
                                static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    if (pad > 0) {
      // Keep every row from attending to padding columns.
      Tensor<T> mask(L, L);
      for (std::size_t r = 0; r < L; ++r)
        for (std::size_t c = 0; c < pad; ++c) mask.at(r, c) = T(-1e30);
      logits = g.add(logits, g.constant(std::move(mask)));
    }
    attended = g.matmul(g.softmax_rows(logits), seq);  // L x d
  }

  // Pooling over the valid rows only.
  const ad::NodeId pool_src = cfg.ablate_neural ? seq : attended;
  const ad::NodeId body = pad > 0 ? g.slice(pool_src, pad, L, 0, d) : pool_src;
  const Pooling pooling = cfg.ablate_neural ? Pooling::kMean : cfg.pooling;
  ad::NodeId pooled = ad::kNoNode;
  switch (pooling) {
    case Pooling::kMean: {
      Tensor<T> w(1, n_valid);
      w.fill(static_cast<T>(1.0 / static_cast<double>(n_valid)));
      pooled = g.matmul(g.constant(std::move(w)), body);
      break;
    }
    case Pooling::kSum: {
      Tensor<T> w(1, n_valid);
      w.fill(T(1));
      pooled = g.matmul(g.constant(std::move(w)), body);
      break;
    }
    case Pooling::kMin:
      pooled = g.reduce_min(body, 0);
      break;
    case Pooling::kMax:
      pooled = g.neg(g.reduce_min(g.neg(body), 0));
      break;
  }

  if (opts.train_mode && cfg.dropout_rate > 0.0) {
    if (opts.dropout_rng == nullptr)
      throw std::invalid_argument("encoder: dropout requires a generator in train mode");
    pooled = g.dropout_mask(pooled, cfg.dropout_rate, *opts.dropout_rng);
  }
  eg.pooled = pooled;

  // Key-value memory read.
  const ad::NodeId keys = leaf("key_matrix", params.key_matrix);
  const ad::NodeId memory = leaf("memory_matrix", params.memory_matrix);
  const ad::NodeId key_attn = g.softmax_rows(g.matmul(pooled, keys));  // 1 x N
  const ad::NodeId memory_out = g.matmul(key_attn, g.transpose(memory));  // 1 x d
  eg.memory_out = memory_out;

  // Heads: centers from the pooled vector, offsets from the memory readout.
  std::vector<ad::NodeId> centers;
  for (std::size_t i = 0; i < cfg.center_head_count(); ++i) {
    const ad::NodeId w = leaf("center_head." + std::to_string(i) + ".weight", params.center_heads[i].weight);
    const ad::NodeId b = leaf("center_head." + std::to_string(i) + ".bias", params.center_heads[i].bias);
    centers.push_back(g.add(g.matmul(pooled, w), b));
  }
  for (std::size_t i = 0; i < cfg.boxes; ++i) {
    ad::BoxNodes box;
    box.center = centers[cfg.mode == geometry::BoxMode::kIndependent ? i : 0];
    if (cfg.freeze_offsets) {
      box.offset = g.constant(Tensor<T>(1, d));
    } else {
      const ad::NodeId w = leaf("offset_head." + std::to_string(i) + ".weight", params.offset_heads[i].weight);
      const ad::NodeId b = leaf("offset_head." + std::to_string(i) + ".bias", params.offset_heads[i].bias);
      box.offset = g.relu(g.add(g.matmul(memory_out, w), b));
    }
    eg.boxes.push_back(box);
  }
  return eg;
}

geometry::BoxSet encode_user(const EncoderConfig& cfg, const EncoderParams<float>& params,
                             std::span<const std::uint32_t> history) {
  if (history.empty()) throw std::invalid_argument("encode_user: empty history");
  const auto window = pad_window(history, cfg.window);
  ad::Graph<float> g;
  const EncoderGraph<float> eg = build_encoder_graph(g, cfg, params, window, EncodeOptions{});

  geometry::BoxSet set;
  set.mode = cfg.mode;
  for (const auto& box : eg.boxes) {
    const auto& c = g.val(box.center);
    const auto& f = g.val(box.offset);
    std::vector<double> center(c.v.begin(), c.v.end());
    std::vector<double> offset(f.v.begin(), f.v.end());
    set.boxes.emplace_back(std::move(center), std::move(offset));
  }
  set.validate();
  return set;
}

template EncoderParams<float> EncoderParams<float>::random_init(const EncoderConfig&, std::size_t, Rng&);
template EncoderParams<double> EncoderParams<double>::random_init(const EncoderConfig&, std::size_t, Rng&);
template EncoderGraph<float> build_encoder_graph<float>(ad::Graph<float>&, const EncoderConfig&,
                                                        const EncoderParams<float>&,
                                                        std::span<const std::uint32_t>, const EncodeOptions&);
template EncoderGraph<double> build_encoder_graph<double>(ad::Graph<double>&, const EncoderConfig&,
                                                          const EncoderParams<double>&,
                                                          std::span<const std::uint32_t>, const EncodeOptions&);

}  // namespace boxrec
