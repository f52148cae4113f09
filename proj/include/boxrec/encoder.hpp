#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "boxrec/distance_ops.hpp"
#include "boxrec/geometry.hpp"
#include "boxrec/graph.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/tensor.hpp"

namespace boxrec {

// Internal item id 0 is the padding slot; its embedding row stays zero.
inline constexpr std::uint32_t kPaddingId = 0;

enum class Pooling { kMean, kSum, kMin, kMax };

const char* pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& name);
const char* mode_name(geometry::BoxMode m);
geometry::BoxMode mode_from_name(const std::string& name);

struct EncoderConfig {
  std::size_t dim = 100;           // embedding size d (even: split across LSTM directions)
  std::size_t window = 5;          // input length L
  std::size_t boxes = 1;           // boxes per user M
  geometry::BoxMode mode = geometry::BoxMode::kSingle;
  std::size_t memory_slots = 10;   // N
  Pooling pooling = Pooling::kMean;
  double dropout_rate = 0.0;
  bool ablate_neural = false;      // mean-pool raw embeddings instead of LSTM+attention
  bool freeze_offsets = false;     // point model: offsets pinned at zero

  void validate() const;
  // Concentric boxes share one center head; independent boxes get their own.
  std::size_t center_head_count() const {
    return mode == geometry::BoxMode::kIndependent ? boxes : 1;
  }
};

template <typename T>
struct AffineMap {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out
};

template <typename T>
struct LstmWeights {
  Tensor<T> w_input;   // d x 4h
  Tensor<T> w_hidden;  // h x 4h
  Tensor<T> bias;      // 1 x 4h
};

template <typename T>
struct EncoderParams {
  Tensor<T> item_embeddings;            // (|I|+1) x d, row 0 = padding (zero)
  LstmWeights<T> lstm_fwd, lstm_bwd;    // hidden width d/2 each
  AffineMap<T> attn_proj;               // the nonlinearity input map, d -> d
  Tensor<T> key_matrix;                 // d x N
  Tensor<T> memory_matrix;              // d x N
  std::vector<AffineMap<T>> center_heads;
  std::vector<AffineMap<T>> offset_heads;

  std::size_t n_items() const { return item_embeddings.rows - 1; }
  std::size_t dim() const { return item_embeddings.cols; }

  static EncoderParams random_init(const EncoderConfig& cfg, std::size_t n_items, Rng& rng);

  template <typename U>
  EncoderParams<U> cast() const {
    EncoderParams<U> out;
    out.item_embeddings = item_embeddings.template cast<U>();
    out.lstm_fwd = {lstm_fwd.w_input.template cast<U>(), lstm_fwd.w_hidden.template cast<U>(),
                    lstm_fwd.bias.template cast<U>()};
    out.lstm_bwd = {lstm_bwd.w_input.template cast<U>(), lstm_bwd.w_hidden.template cast<U>(),
                    lstm_bwd.bias.template cast<U>()};
    out.attn_proj = {attn_proj.weight.template cast<U>(), attn_proj.bias.template cast<U>()};
    out.key_matrix = key_matrix.template cast<U>();
    out.memory_matrix = memory_matrix.template cast<U>();
    for (const auto& h : center_heads)
      out.center_heads.push_back({h.weight.template cast<U>(), h.bias.template cast<U>()});
    for (const auto& h : offset_heads)
      out.offset_heads.push_back({h.weight.template cast<U>(), h.bias.template cast<U>()});
    return out;
  }
};

// Fixed visitation order; drives checkpoint layout, optimizer state, and
// gradient checks.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("item_embeddings"), p.item_embeddings);
  fn(std::string("lstm_fwd.w_input"), p.lstm_fwd.w_input);
  fn(std::string("lstm_fwd.w_hidden"), p.lstm_fwd.w_hidden);
  fn(std::string("lstm_fwd.bias"), p.lstm_fwd.bias);
  fn(std::string("lstm_bwd.w_input"), p.lstm_bwd.w_input);
  fn(std::string("lstm_bwd.w_hidden"), p.lstm_bwd.w_hidden);
  fn(std::string("lstm_bwd.bias"), p.lstm_bwd.bias);
  fn(std::string("attn_proj.weight"), p.attn_proj.weight);
  fn(std::string("attn_proj.bias"), p.attn_proj.bias);
  fn(std::string("key_matrix"), p.key_matrix);
  fn(std::string("memory_matrix"), p.memory_matrix);
  for (std::size_t i = 0; i < p.center_heads.size(); ++i) {
    fn("center_head." + std::to_string(i) + ".weight", p.center_heads[i].weight);
    fn("center_head." + std::to_string(i) + ".bias", p.center_heads[i].bias);
  }
  for (std::size_t i = 0; i < p.offset_heads.size(); ++i) {
    fn("offset_head." + std::to_string(i) + ".weight", p.offset_heads[i].weight);
    fn("offset_head." + std::to_string(i) + ".bias", p.offset_heads[i].bias);
  }
}

struct EncodeOptions {
  bool train_mode = false;        // enables dropout
  bool record_gradients = false;  // leaves require grad
  bool dense_table_grad = false;  // gradient checks want the table gradient dense
  Rng* dropout_rng = nullptr;     // required when train_mode and dropout_rate > 0
};

template <typename T>
struct EncoderGraph {
  ad::NodeId item_table = ad::kNoNode;
  std::vector<std::pair<std::string, ad::NodeId>> param_nodes;  // dense-grad leaves, incl. table when dense
  std::vector<ad::BoxNodes> boxes;
  ad::NodeId sequence_encoding = ad::kNoNode;  // Bi-LSTM output (kNoNode when ablated)
  ad::NodeId pooled = ad::kNoNode;             // s
  ad::NodeId memory_out = ad::kNoNode;         // m
};

// Left-pads (or truncates to) the most recent `window` ids.
std::vector<std::uint32_t> pad_window(std::span<const std::uint32_t> history, std::size_t window);

// Emits the full pipeline into `g`: lookup -> Bi-LSTM -> self-attention ->
// pooling -> (dropout) -> key-value memory -> box heads. `padded_window` must
// have length cfg.window, left-padded with kPaddingId, and at least one valid
// id.
template <typename T>
EncoderGraph<T> build_encoder_graph(ad::Graph<T>& g, const EncoderConfig& cfg,
                                    const EncoderParams<T>& params,
                                    std::span<const std::uint32_t> padded_window,
                                    const EncodeOptions& opts);

// Eval-mode encoding of a user's history (most recent interaction last) into
// boxes for scoring. Pure function of (history, params).
geometry::BoxSet encode_user(const EncoderConfig& cfg, const EncoderParams<float>& params,
                             std::span<const std::uint32_t> history);

extern template EncoderParams<float> EncoderParams<float>::random_init(const EncoderConfig&, std::size_t, Rng&);
extern template EncoderParams<double> EncoderParams<double>::random_init(const EncoderConfig&, std::size_t, Rng&);
extern template EncoderGraph<float> build_encoder_graph<float>(ad::Graph<float>&, const EncoderConfig&,
                                                               const EncoderParams<float>&,
                                                               std::span<const std::uint32_t>,
                                                               const EncodeOptions&);
extern template EncoderGraph<double> build_encoder_graph<double>(ad::Graph<double>&, const EncoderConfig&,
                                                                 const EncoderParams<double>&,
                                                                 std::span<const std::uint32_t>,
                                                                 const EncodeOptions&);

}  // namespace boxrec
