#include "boxrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "boxrec/encoder.hpp"
#include "boxrec/errors.hpp"
#include "boxrec/evaluation.hpp"
#include "boxrec/kernels.hpp"
#include "boxrec/rng.hpp"

namespace boxrec::synthetic {

std::string user_name(std::size_t index) { return "u" + std::to_string(index); }
std::string item_name(std::size_t index) { return "i" + std::to_string(index); }

namespace {

constexpr std::size_t kUserRetries = 500;

std::vector<geometry::Hypercuboid> draw_boxes(const WorldConfig& cfg, Rng& rng) {
  std::vector<geometry::Hypercuboid> boxes;
  for (std::size_t b = 0; b < cfg.boxes_per_user; ++b) {
    for (std::size_t attempt = 0;; ++attempt) {
      std::vector<double> center(cfg.latent_dim), offset(cfg.latent_dim);
      for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
        center[j] = rng.next_range(-cfg.center_range, cfg.center_range);
        offset[j] = rng.next_range(cfg.offset_min, cfg.offset_max);
      }
      bool separated = true;
      for (const auto& other : boxes) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
          const double diff = center[j] - other.center[j];
          d2 += diff * diff;
        }
        if (std::sqrt(d2) < cfg.min_center_gap) {
          separated = false;
          break;
        }
      }
      if (separated || attempt > 50) {
        boxes.emplace_back(std::move(center), std::move(offset));
        break;
      }
    }
  }
  return boxes;
}

}  // namespace

BoxWorld generate_box_world(const WorldConfig& cfg) {
  if (cfg.items < 50) throw std::invalid_argument("box world: needs at least 50 items");
  if (cfg.latent_dim < 2) throw std::invalid_argument("box world: latent_dim must be >= 2");
  if (cfg.noise < 0.0 || cfg.noise >= 1.0) throw std::invalid_argument("box world: noise must be in [0,1)");

  Rng rng(cfg.seed);
  BoxWorld world;
  world.config = cfg;

  world.item_features.resize(cfg.items);
  for (auto& feat : world.item_features) {
    feat.resize(cfg.latent_dim);
    for (auto& x : feat) x = rng.next_range(-1.0, 1.0);
  }

  std::int64_t timestamp = 0;
  for (std::size_t u = 0; u < cfg.users; ++u) {
    std::vector<geometry::Hypercuboid> boxes;
    std::vector<std::vector<std::size_t>> members;  // per box
    std::vector<char> in_any;
    std::size_t in_box_count = 0;

    for (std::size_t attempt = 0;; ++attempt) {
      boxes = draw_boxes(cfg, rng);
      members.assign(boxes.size(), {});
      in_any.assign(cfg.items, 0);
      in_box_count = 0;
      for (std::size_t j = 0; j < cfg.items; ++j) {
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          if (geometry::contains(boxes[b], world.item_features[j])) {
            members[b].push_back(j);
            if (!in_any[j]) {
              in_any[j] = 1;
              ++in_box_count;
            }
          }
        }
      }
      if (in_box_count >= std::max<std::size_t>(1, cfg.min_items_per_user)) break;
      if (attempt >= kUserRetries)
        throw DataError("box world: user " + user_name(u) + " found no populated boxes after " +
                        std::to_string(kUserRetries) + " retries");
    }
    world.users.push_back({boxes});

    // Random walk among the user's boxes, consuming items without repeats.
    std::vector<char> consumed(cfg.items, 0);
    std::vector<std::vector<std::size_t>> remaining = members;
    auto prune = [&](std::size_t b) {
      auto& v = remaining[b];
      v.erase(std::remove_if(v.begin(), v.end(), [&](std::size_t j) { return consumed[j]; }), v.end());
    };
    std::vector<std::size_t> ordered;
    ordered.reserve(in_box_count);
    std::size_t current = rng.next_below(boxes.size());
    while (ordered.size() < in_box_count) {
      prune(current);
      const bool switch_box = remaining[current].empty() || rng.next_double() > cfg.stay_prob;
      if (switch_box) {
        std::vector<std::size_t> live;
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          prune(b);
          if (!remaining[b].empty()) live.push_back(b);
        }
        if (live.empty()) break;
        current = live[rng.next_below(live.size())];
      }
      if (remaining[current].empty()) continue;
      const std::size_t pick = remaining[current][rng.next_below(remaining[current].size())];
      consumed[pick] = 1;
      ordered.push_back(pick);
    }

    // Out-of-box noise positives, interleaved at random positions.
    const auto n_noise = static_cast<std::size_t>(
        std::llround(cfg.noise / (1.0 - cfg.noise) * static_cast<double>(ordered.size())));
    std::vector<std::size_t> outside;
    for (std::size_t j = 0; j < cfg.items; ++j)
      if (!in_any[j]) outside.push_back(j);
    for (std::size_t k = 0; k < n_noise && !outside.empty(); ++k) {
      const std::size_t pos = outside[rng.next_below(outside.size())];
      outside.erase(std::remove(outside.begin(), outside.end(), pos), outside.end());
      const std::size_t where = rng.next_below(ordered.size() + 1);
      ordered.insert(ordered.begin() + static_cast<std::ptrdiff_t>(where), pos);
    }

    for (std::size_t j : ordered)
      world.log.push_back({user_name(u), item_name(j), timestamp++, std::nullopt});
  }
  return world;
}

GridOracleResult grid_nearest_point_oracle(const geometry::Hypercuboid& box,
                                           std::span<const double> item, std::size_t resolution) {
  const std::size_t d = box.dim();
  if (d != item.size()) throw std::invalid_argument("grid oracle: dimension mismatch");
  if (d > 5) throw std::invalid_argument("grid oracle: dimension too large (max 5)");
  if (resolution < 50) throw std::invalid_argument("grid oracle: resolution must be >= 50 per axis");

  std::vector<std::vector<double>> axes(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (box.offset[j] == 0.0) {
      axes[j] = {box.center[j]};
    } else {
      axes[j].resize(resolution);
      const double lo = box.lower(j), hi = box.upper(j);
      for (std::size_t i = 0; i < resolution; ++i)
        axes[j][i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
  }

  GridOracleResult best;
  best.squared_distance = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(d, 0);
  std::vector<double> q(d);
  for (;;) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      q[j] = axes[j][idx[j]];
      const double diff = q[j] - item[j];
      s += diff * diff;
    }
    if (s < best.squared_distance) {
      best.squared_distance = s;
      best.point = q;
    }
    std::size_t j = 0;
    while (j < d && ++idx[j] == axes[j].size()) {
      idx[j] = 0;
      ++j;
    }
    if (j == d) break;
  }
  return best;
}

void write_world(const BoxWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::ofstream log(dir / "log.tsv", std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / "log.tsv").string());
  for (const auto& it : world.log) log << it.user << '\t' << it.item << '\t' << it.timestamp << '\n';
  log.close();

  std::ofstream truth(dir / "truth.txt", std::ios::trunc);
  if (!truth) throw DataError("cannot write " + (dir / "truth.txt").string());
  truth.precision(17);
  truth << "latent_dim " << world.config.latent_dim << '\n';
  truth << "items " << world.item_features.size() << '\n';
  for (std::size_t j = 0; j < world.item_features.size(); ++j) {
    truth << item_name(j);
    for (double x : world.item_features[j]) truth << ' ' << x;
    truth << '\n';
  }
  std::size_t box_rows = 0;
  for (const auto& u : world.users) box_rows += u.boxes.size();
  truth << "boxes " << box_rows << '\n';
  for (std::size_t u = 0; u < world.users.size(); ++u) {
    for (std::size_t b = 0; b < world.users[u].boxes.size(); ++b) {
      truth << user_name(u) << ' ' << b;
      for (double x : world.users[u].boxes[b].center) truth << ' ' << x;
      for (double x : world.users[u].boxes[b].offset) truth << ' ' << x;
      truth << '\n';
    }
  }
  truth.close();

  const auto split = datasets::chronological_split(world.log);
  datasets::save_bundle(split, dir);
}

WorldTruth read_truth(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  WorldTruth truth;
  std::string word;
  std::size_t n = 0;
  if (!(is >> word >> truth.latent_dim) || word != "latent_dim")
    throw DataError(path.string() + ": expected latent_dim header");
  if (!(is >> word >> n) || word != "items") throw DataError(path.string() + ": expected items header");

  std::unordered_map<std::string, std::size_t> item_index;
  truth.item_features.resize(n, std::vector<double>(truth.latent_dim));
  for (std::size_t j = 0; j < n; ++j) {
    std::string name;
    if (!(is >> name)) throw DataError(path.string() + ": truncated item block");
    item_index[name] = j;
    for (auto& x : truth.item_features[j])
      if (!(is >> x)) throw DataError(path.string() + ": truncated item coordinates");
  }
  // Item names are positional ("i<j>"); verify they match.
  for (const auto& [name, j] : item_index)
    if (name != item_name(j)) throw DataError(path.string() + ": unexpected item name " + name);

  if (!(is >> word >> n) || word != "boxes") throw DataError(path.string() + ": expected boxes header");
  std::unordered_map<std::string, std::size_t> user_index;
  for (std::size_t r = 0; r < n; ++r) {
    std::string name;
    std::size_t box_id = 0;
    if (!(is >> name >> box_id)) throw DataError(path.string() + ": truncated box block");
    auto [it, inserted] = user_index.try_emplace(name, user_index.size());
    if (inserted) truth.users.emplace_back();
    std::vector<double> center(truth.latent_dim), offset(truth.latent_dim);
    for (auto& x : center)
      if (!(is >> x)) throw DataError(path.string() + ": truncated box center");
    for (auto& x : offset)
      if (!(is >> x)) throw DataError(path.string() + ": truncated box offset");
    auto& boxes = truth.users[it->second].boxes;
    if (box_id != boxes.size()) throw DataError(path.string() + ": box rows out of order");
    boxes.emplace_back(std::move(center), std::move(offset));
  }
  for (const auto& [name, u] : user_index)
    if (name != user_name(u)) throw DataError(path.string() + ": unexpected user name " + name);
  return truth;
}

namespace {

std::size_t parse_index(const std::string& name, char prefix, const char* what) {
  if (name.size() < 2 || name[0] != prefix)
    throw DataError(std::string("ground truth lookup: not a world ") + what + " id: " + name);
  return std::stoul(name.substr(1));
}

}  // namespace

RecoveryReport recovery_report(const LoadedModel& model, const datasets::SplitDataset& split,
                               const WorldTruth& truth) {
  const std::size_t n_users = split.n_users();
  const std::size_t n_items = split.n_items();

  struct UserRow {
    bool has_auc = false;
    double auc = 0.0;
    bool has_recall = false;
    double recall = 0.0;
    double random_recall = 0.0;
    bool has_purity = false;
    double purity = 0.0;
    bool aligned = false;
  };
  std::vector<UserRow> rows(n_users + 1);

  // World index of every internal item id.
  std::vector<std::size_t> world_item(n_items + 1, 0);
  for (std::uint32_t id = 1; id <= n_items; ++id)
    world_item[id] = parse_index(split.item_vocab.name_of(id), 'i', "item");

  kernels::parallel_for(n_users, [&](std::size_t i) {
    const auto user = static_cast<std::uint32_t>(i + 1);
    if (split.test[user].empty()) return;
    const std::size_t wu = parse_index(split.user_vocab.name_of(user), 'u', "user");
    const auto& true_boxes = truth.users.at(wu).boxes;

    auto in_some_box = [&](std::uint32_t id) {
      const auto& feat = truth.item_features[world_item[id]];
      for (const auto& b : true_boxes)
        if (geometry::contains(b, feat)) return true;
      return false;
    };

    const evaluation::RankedList ranked = evaluation::score_all(model, split, user);
    UserRow& row = rows[user];

    // (a) AUC: held-out in-box items against unrated out-of-box items.
    {
      std::vector<double> in_dist, out_dist;
      for (std::size_t r = 0; r < ranked.items.size(); ++r)
        (in_some_box(ranked.items[r]) ? in_dist : out_dist).push_back(ranked.distances[r]);
      if (!in_dist.empty() && !out_dist.empty()) {
        double wins = 0.0;
        for (double di : in_dist)
          for (double dj : out_dist) wins += di < dj ? 1.0 : (di == dj ? 0.5 : 0.0);
        row.auc = wins / (static_cast<double>(in_dist.size()) * static_cast<double>(out_dist.size()));
        row.has_auc = true;
      }
    }

    // (b) Recall@10 plus the random-ranking expectation for this user.
    {
      std::vector<char> relevant(n_items + 1, 0);
      std::size_t n_relevant = 0;
      for (std::uint32_t id : split.test[user])
        if (!relevant[id]) {
          relevant[id] = 1;
          ++n_relevant;
        }
      row.recall = evaluation::recall_at_k(ranked.items, relevant, n_relevant, 10);
      row.random_recall = std::min(1.0, 10.0 / static_cast<double>(ranked.items.size()));
      row.has_recall = true;
    }

    // (c) Cluster purity: each known in-box item goes to its nearest learned
    // box; clusters should recover distinct true boxes.
    {
      const auto history = split.inference_history(user);
      const geometry::BoxSet learned = encode_user(model.config, model.params, history);
      geometry::DistanceParams assign_params = model.distance;
      assign_params.use_additional = false;

      std::vector<std::uint32_t> known = history;
      known.insert(known.end(), split.test[user].begin(), split.test[user].end());
      std::sort(known.begin(), known.end());
      known.erase(std::unique(known.begin(), known.end()), known.end());

      const std::size_t n_learned = learned.boxes.size();
      std::vector<std::map<std::size_t, std::size_t>> cluster_label_counts(n_learned);
      std::size_t total = 0;
      for (std::uint32_t id : known) {
        const auto& feat = truth.item_features[world_item[id]];
        std::size_t true_box = true_boxes.size();
        for (std::size_t b = 0; b < true_boxes.size(); ++b)
          if (geometry::contains(true_boxes[b], feat)) {
            true_box = b;
            break;
          }
        if (true_box == true_boxes.size()) continue;  // noise positive

        std::vector<double> emb(model.params.dim());
        for (std::size_t c = 0; c < emb.size(); ++c) emb[c] = model.params.item_embeddings.at(id, c);
        std::size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n_learned; ++b) {
          const double d = geometry::composite_distance(learned.boxes[b], emb, assign_params);
          if (d < best_dist) {
            best_dist = d;
            best = b;
          }
        }
        ++cluster_label_counts[best][true_box];
        ++total;
      }
      if (total > 0) {
        std::size_t majority_sum = 0;
        std::vector<std::size_t> majors;
        std::size_t nonempty = 0;
        for (const auto& counts : cluster_label_counts) {
          if (counts.empty()) continue;
          ++nonempty;
          std::size_t best_label = 0, best_count = 0;
          for (const auto& [label, count] : counts)
            if (count > best_count) {
              best_count = count;
              best_label = label;
            }
          majority_sum += best_count;
          majors.push_back(best_label);
        }
        row.purity = static_cast<double>(majority_sum) / static_cast<double>(total);
        std::sort(majors.begin(), majors.end());
        const bool distinct = std::adjacent_find(majors.begin(), majors.end()) == majors.end();
        row.aligned = distinct && nonempty == n_learned;
        row.has_purity = true;
      }
    }
  });

  RecoveryReport report;
  std::size_t auc_n = 0, recall_n = 0, purity_n = 0;
  for (std::uint32_t user = 1; user <= n_users; ++user) {
    const UserRow& row = rows[user];
    if (row.has_auc) {
      report.mean_auc += row.auc;
      ++auc_n;
    }
    if (row.has_recall) {
      report.recall_at_10 += row.recall;
      report.random_recall_at_10 += row.random_recall;
      ++recall_n;
    }
    if (row.has_purity) {
      report.cluster_purity += row.purity;
      report.aligned_fraction += row.aligned ? 1.0 : 0.0;
      ++purity_n;
    }
  }
  if (auc_n > 0) report.mean_auc /= static_cast<double>(auc_n);
  if (recall_n > 0) {
    report.recall_at_10 /= static_cast<double>(recall_n);
    report.random_recall_at_10 /= static_cast<double>(recall_n);
  }
  if (purity_n > 0) {
    report.cluster_purity /= static_cast<double>(purity_n);
    report.aligned_fraction /= static_cast<double>(purity_n);
  }
  report.users_scored = auc_n;
  return report;
}

}  // namespace boxrec::synthetic
