#include "boxrec/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "boxrec/errors.hpp"

namespace boxrec::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + it->second + "'");
  }
}

std::uint64_t to_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("config: bad integer for " + key + ": '" + s + "'");
  return v;
}

std::size_t to_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(to_u64(kv, key, fallback));
}

bool to_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + s + "'");
}

void check_known(const KeyValues& kv, std::initializer_list<const char*> known) {
  for (const auto& [key, value] : kv) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

}  // namespace

KeyValues parse_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + " line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw DataError(origin + " line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw DataError(origin + " line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_text(buf.str(), path.string());
}

void apply(training::TrainConfig& cfg, const KeyValues& kv) {
  check_known(kv, {"dim", "window", "targets", "boxes", "mode", "memory_slots", "pooling",
                   "dropout_rate", "ablate_neural", "freeze_offsets", "gamma", "alpha",
                   "use_additional", "learning_rate", "margin", "l2", "batch_size", "epochs",
                   "negatives_per_positive", "seed"});
  cfg.dim = to_size(kv, "dim", cfg.dim);
  cfg.window = to_size(kv, "window", cfg.window);
  cfg.targets = to_size(kv, "targets", cfg.targets);
  cfg.boxes = to_size(kv, "boxes", cfg.boxes);
  if (auto it = kv.find("mode"); it != kv.end()) cfg.mode = mode_from_name(it->second);
  cfg.memory_slots = to_size(kv, "memory_slots", cfg.memory_slots);
  if (auto it = kv.find("pooling"); it != kv.end()) cfg.pooling = pooling_from_name(it->second);
  cfg.dropout_rate = to_double(kv, "dropout_rate", cfg.dropout_rate);
  cfg.ablate_neural = to_bool(kv, "ablate_neural", cfg.ablate_neural);
  cfg.freeze_offsets = to_bool(kv, "freeze_offsets", cfg.freeze_offsets);
  cfg.gamma = to_double(kv, "gamma", cfg.gamma);
  cfg.alpha = to_double(kv, "alpha", cfg.alpha);
  cfg.use_additional = to_bool(kv, "use_additional", cfg.use_additional);
  cfg.learning_rate = to_double(kv, "learning_rate", cfg.learning_rate);
  cfg.margin = to_double(kv, "margin", cfg.margin);
  cfg.l2 = to_double(kv, "l2", cfg.l2);
  cfg.batch_size = to_size(kv, "batch_size", cfg.batch_size);
  cfg.epochs = to_size(kv, "epochs", cfg.epochs);
  cfg.negatives_per_positive = to_size(kv, "negatives_per_positive", cfg.negatives_per_positive);
  cfg.seed = to_u64(kv, "seed", cfg.seed);
}

void apply(synthetic::WorldConfig& cfg, const KeyValues& kv) {
  check_known(kv, {"users", "items", "latent_dim", "boxes_per_user", "noise", "seed", "center_range",
                   "offset_min", "offset_max", "min_center_gap", "stay_prob", "min_items_per_user"});
  cfg.users = to_size(kv, "users", cfg.users);
  cfg.items = to_size(kv, "items", cfg.items);
  cfg.latent_dim = to_size(kv, "latent_dim", cfg.latent_dim);
  cfg.boxes_per_user = to_size(kv, "boxes_per_user", cfg.boxes_per_user);
  cfg.noise = to_double(kv, "noise", cfg.noise);
  cfg.seed = to_u64(kv, "seed", cfg.seed);
  cfg.center_range = to_double(kv, "center_range", cfg.center_range);
  cfg.offset_min = to_double(kv, "offset_min", cfg.offset_min);
  cfg.offset_max = to_double(kv, "offset_max", cfg.offset_max);
  cfg.min_center_gap = to_double(kv, "min_center_gap", cfg.min_center_gap);
  cfg.stay_prob = to_double(kv, "stay_prob", cfg.stay_prob);
  cfg.min_items_per_user = to_size(kv, "min_items_per_user", cfg.min_items_per_user);
}

std::string resolved(const training::TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "dim=" << cfg.dim << '\n'
     << "window=" << cfg.window << '\n'
     << "targets=" << cfg.targets << '\n'
     << "boxes=" << cfg.boxes << '\n'
     << "mode=" << mode_name(cfg.mode) << '\n'
     << "memory_slots=" << cfg.memory_slots << '\n'
     << "pooling=" << pooling_name(cfg.pooling) << '\n'
     << "dropout_rate=" << cfg.dropout_rate << '\n'
     << "ablate_neural=" << (cfg.ablate_neural ? "true" : "false") << '\n'
     << "freeze_offsets=" << (cfg.freeze_offsets ? "true" : "false") << '\n'
     << "gamma=" << cfg.gamma << '\n'
     << "alpha=" << cfg.alpha << '\n'
     << "use_additional=" << (cfg.use_additional ? "true" : "false") << '\n'
     << "learning_rate=" << cfg.learning_rate << '\n'
     << "margin=" << cfg.margin << '\n'
     << "l2=" << cfg.l2 << '\n'
     << "batch_size=" << cfg.batch_size << '\n'
     << "epochs=" << cfg.epochs << '\n'
     << "negatives_per_positive=" << cfg.negatives_per_positive << '\n'
     << "seed=" << cfg.seed << '\n';
  return os.str();
}

std::string resolved(const synthetic::WorldConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "users=" << cfg.users << '\n'
     << "items=" << cfg.items << '\n'
     << "latent_dim=" << cfg.latent_dim << '\n'
     << "boxes_per_user=" << cfg.boxes_per_user << '\n'
     << "noise=" << cfg.noise << '\n'
     << "seed=" << cfg.seed << '\n'
     << "center_range=" << cfg.center_range << '\n'
     << "offset_min=" << cfg.offset_min << '\n'
     << "offset_max=" << cfg.offset_max << '\n'
     << "min_center_gap=" << cfg.min_center_gap << '\n'
     << "stay_prob=" << cfg.stay_prob << '\n'
     << "min_items_per_user=" << cfg.min_items_per_user << '\n';
  return os.str();
}

}  // namespace boxrec::config
