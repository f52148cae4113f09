#include "boxrec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "boxrec/errors.hpp"

namespace boxrec {

namespace {

constexpr char kMagic[8] = {'B', 'O', 'X', 'R', 'E', 'C', '0', '1'};

std::uint64_t fnv1a(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, 2);
  put_u32(os, static_cast<std::uint32_t>(t.rows));
  put_u32(os, static_cast<std::uint32_t>(t.cols));
  static_assert(sizeof(float) == 4);
  const std::size_t bytes = t.size() * 4;
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
  put_u64(os, fnv1a(t.data(), bytes));
}

std::pair<std::string, Tensor<float>> read_tensor(std::istream& is) {
  const std::uint32_t name_len = get_u32(is);
  if (name_len > 4096) throw DataError("checkpoint: implausible tensor name length");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const std::uint32_t rank = get_u32(is);
  if (rank == 0 || rank > 2) throw DataError("checkpoint: unsupported tensor rank");
  std::uint32_t rows = 1, cols = 1;
  if (rank == 1) {
    cols = get_u32(is);
  } else {
    rows = get_u32(is);
    cols = get_u32(is);
  }
  Tensor<float> t(rows, cols);
  const std::size_t bytes = t.size() * 4;
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw DataError("checkpoint: truncated tensor '" + name + "'");
  const std::uint64_t want = get_u64(is);
  const std::uint64_t got = fnv1a(t.data(), bytes);
  if (want != got) throw DataError("checkpoint: checksum mismatch in tensor '" + name + "'");
  return {std::move(name), std::move(t)};
}

float config_scalar(const std::map<std::string, Tensor<float>>& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint: missing '" + name + "'");
  return it->second.v.at(0);
}

const Tensor<float>& named(const std::map<std::string, Tensor<float>>& tensors, const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& config,
                     const geometry::DistanceParams& distance, const EncoderParams<float>& params,
                     std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot write " + path.string());
  os.write(kMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(config.dim));
  put_u32(os, static_cast<std::uint32_t>(config.window));
  put_u32(os, static_cast<std::uint32_t>(config.memory_slots));
  put_u32(os, static_cast<std::uint32_t>(config.boxes));
  put_u32(os, static_cast<std::uint32_t>(config.mode));
  put_u32(os, static_cast<std::uint32_t>(params.n_items()));

  for_each_tensor(params, [&](const std::string& name, const Tensor<float>& t) { write_tensor(os, name, t); });

  write_tensor(os, "config.pooling", Tensor<float>::scalar(static_cast<float>(config.pooling)));
  write_tensor(os, "config.dropout_rate", Tensor<float>::scalar(static_cast<float>(config.dropout_rate)));
  write_tensor(os, "config.ablate_neural", Tensor<float>::scalar(config.ablate_neural ? 1.f : 0.f));
  write_tensor(os, "config.freeze_offsets", Tensor<float>::scalar(config.freeze_offsets ? 1.f : 0.f));
  write_tensor(os, "config.gamma", Tensor<float>::scalar(static_cast<float>(distance.gamma)));
  write_tensor(os, "config.alpha", Tensor<float>::scalar(static_cast<float>(distance.alpha)));
  write_tensor(os, "config.use_additional", Tensor<float>::scalar(distance.use_additional ? 1.f : 0.f));
  // Seed halves stored bit-exact (the floats are containers, not numbers).
  Tensor<float> seed_bits(1, 2);
  seed_bits.v[0] = std::bit_cast<float>(static_cast<std::uint32_t>(seed));
  seed_bits.v[1] = std::bit_cast<float>(static_cast<std::uint32_t>(seed >> 32));
  write_tensor(os, "config.seed", seed_bits);
  if (!os) throw DataError("checkpoint: write failed for " + path.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot read " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());

  LoadedModel m;
  m.config.dim = get_u32(is);
  m.config.window = get_u32(is);
  m.config.memory_slots = get_u32(is);
  m.config.boxes = get_u32(is);
  const std::uint32_t mode_tag = get_u32(is);
  if (mode_tag > 2) throw DataError("checkpoint: unknown mode tag");
  m.config.mode = static_cast<geometry::BoxMode>(mode_tag);
  const std::uint32_t n_items = get_u32(is);

  std::map<std::string, Tensor<float>> tensors;
  while (is.peek() != std::char_traits<char>::eof()) {
    auto [name, t] = read_tensor(is);
    tensors.emplace(std::move(name), std::move(t));
  }

  m.config.pooling = static_cast<Pooling>(static_cast<int>(config_scalar(tensors, "config.pooling")));
  m.config.dropout_rate = config_scalar(tensors, "config.dropout_rate");
  m.config.ablate_neural = config_scalar(tensors, "config.ablate_neural") != 0.f;
  m.config.freeze_offsets = config_scalar(tensors, "config.freeze_offsets") != 0.f;
  m.distance.gamma = config_scalar(tensors, "config.gamma");
  m.distance.alpha = config_scalar(tensors, "config.alpha");
  m.distance.use_additional = config_scalar(tensors, "config.use_additional") != 0.f;
  const Tensor<float>& seed_bits = named(tensors, "config.seed");
  if (seed_bits.size() != 2) throw DataError("checkpoint: malformed config.seed");
  m.seed = static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(seed_bits.v[0])) |
           (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(seed_bits.v[1])) << 32);

  auto& p = m.params;
  p.item_embeddings = named(tensors, "item_embeddings");
  if (p.item_embeddings.rows != n_items + 1 || p.item_embeddings.cols != m.config.dim)
    throw DataError("checkpoint: item table shape disagrees with header");
  p.lstm_fwd = {named(tensors, "lstm_fwd.w_input"), named(tensors, "lstm_fwd.w_hidden"),
                named(tensors, "lstm_fwd.bias")};
  p.lstm_bwd = {named(tensors, "lstm_bwd.w_input"), named(tensors, "lstm_bwd.w_hidden"),
                named(tensors, "lstm_bwd.bias")};
  p.attn_proj = {named(tensors, "attn_proj.weight"), named(tensors, "attn_proj.bias")};
  p.key_matrix = named(tensors, "key_matrix");
  p.memory_matrix = named(tensors, "memory_matrix");
  for (std::size_t i = 0; i < m.config.center_head_count(); ++i)
    p.center_heads.push_back({named(tensors, "center_head." + std::to_string(i) + ".weight"),
                              named(tensors, "center_head." + std::to_string(i) + ".bias")});
  for (std::size_t i = 0; i < m.config.boxes; ++i)
    p.offset_heads.push_back({named(tensors, "offset_head." + std::to_string(i) + ".weight"),
                              named(tensors, "offset_head." + std::to_string(i) + ".bias")});
  m.config.validate();
  m.distance.validate();
  return m;
}

}  // namespace boxrec
