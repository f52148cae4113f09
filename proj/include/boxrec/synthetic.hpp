#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "boxrec/checkpoint.hpp"
#include "boxrec/datasets.hpp"
#include "boxrec/geometry.hpp"

namespace boxrec::synthetic {

// Ground-truth benchmark: user interests are literal boxes in a latent space,
// items are uniform points, and a user's log is exactly the items inside
// their boxes (plus a controlled fraction of out-of-box noise), ordered by a
// random walk among the boxes.
struct WorldConfig {
  std::size_t users = 50;
  std::size_t items = 500;
  std::size_t latent_dim = 4;  // decoupled from the model's embedding size
  std::size_t boxes_per_user = 1;
  double noise = 0.05;  // fraction of the log that is out-of-box
  std::uint64_t seed = 7;

  double center_range = 0.6;     // centers uniform in [-range, range]
  double offset_min = 0.35;      // per-axis half-widths
  double offset_max = 0.65;
  double min_center_gap = 0.9;   // pairwise separation for multi-box users
  double stay_prob = 0.85;       // walk keeps drawing from the current box
  std::size_t min_items_per_user = 10;  // regenerate a user below this
};

struct UserTruth {
  std::vector<geometry::Hypercuboid> boxes;
};

struct BoxWorld {
  WorldConfig config;
  std::vector<std::vector<double>> item_features;  // index j <-> external id item_name(j)
  std::vector<UserTruth> users;                    // index i <-> external id user_name(i)
  std::vector<datasets::Interaction> log;
};

std::string user_name(std::size_t index);
std::string item_name(std::size_t index);

// Pure function of the config (seed included). Users with too few in-box
// items are redrawn a bounded number of times.
BoxWorld generate_box_world(const WorldConfig& config);

// Brute-force nearest point over a `resolution`-per-axis grid spanning the
// box volume. Small dimensions only; this is the independent check for the
// closed-form clamp.
struct GridOracleResult {
  std::vector<double> point;
  double squared_distance = 0.0;
};
GridOracleResult grid_nearest_point_oracle(const geometry::Hypercuboid& box,
                                           std::span<const double> item, std::size_t resolution);

// Writes log.tsv, truth.txt (item coordinates and true boxes), and a ready
// dataset bundle into `dir`. World logs are clean by construction, so no
// activity filter is applied before splitting.
void write_world(const BoxWorld& world, const std::filesystem::path& dir);

// Ground truth loaded back from truth.txt.
struct WorldTruth {
  std::size_t latent_dim = 0;
  std::vector<std::vector<double>> item_features;
  std::vector<UserTruth> users;
};
WorldTruth read_truth(const std::filesystem::path& path);

struct RecoveryReport {
  double mean_auc = 0.0;            // held-out in-box vs out-of-box, averaged over users
  double recall_at_10 = 0.0;
  double random_recall_at_10 = 0.0; // analytic expectation of a random ranking
  double cluster_purity = 0.0;      // items assigned to their nearest learned box
  double aligned_fraction = 0.0;    // users whose learned boxes map to distinct true boxes
  std::size_t users_scored = 0;
};

// Scores the trained model against the world's ground truth.
RecoveryReport recovery_report(const LoadedModel& model, const datasets::SplitDataset& split,
                               const WorldTruth& truth);

}  // namespace boxrec::synthetic
