#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace boxrec::datasets {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  std::optional<double> rating;
};

enum class LogFormat { kTsv, kCsv };
LogFormat format_from_name(const std::string& name);

// One interaction per line: user, item, timestamp[, rating]. Rows whose
// rating falls below `rating_threshold` are dropped when a threshold is set.
std::vector<Interaction> load_log(const std::filesystem::path& path, LogFormat format,
                                  std::optional<double> rating_threshold = std::nullopt);

// Iteratively removes users with fewer than `min_user` interactions and items
// with fewer than `min_item`, until a fixed point (removals can cascade).
std::vector<Interaction> filter_min_activity(std::vector<Interaction> log, std::size_t min_user = 10,
                                             std::size_t min_item = 5);

// External id <-> dense internal id (internal ids start at 1; 0 is padding).
struct Vocab {
  std::vector<std::string> names;  // names[i] has internal id i+1
  std::unordered_map<std::string, std::uint32_t> ids;

  std::uint32_t add(const std::string& name);
  std::uint32_t at(const std::string& name) const;          // throws DataError when unknown
  const std::string& name_of(std::uint32_t id) const;       // id >= 1
  std::size_t size() const { return names.size(); }
};

struct SplitDataset {
  Vocab user_vocab;
  Vocab item_vocab;
  // Indexed by internal user id (entry 0 unused). Chronological item ids.
  std::vector<std::vector<std::uint32_t>> train, val, test;
  std::size_t users_excluded = 0;  // too few interactions to split

  std::size_t n_users() const { return user_vocab.size(); }
  std::size_t n_items() const { return item_vocab.size(); }
  std::size_t n_interactions() const;
  double density() const;  // interactions / (|U| * |I|)

  // Train followed by validation items; the tail forms the scoring window.
  std::vector<std::uint32_t> inference_history(std::uint32_t user) const;
};

// Per-user chronological split (stable on timestamp ties):
// floor(0.7 n) train, round(0.1 n) validation, remainder test. Users with
// fewer than 3 interactions are excluded and counted.
SplitDataset chronological_split(const std::vector<Interaction>& log);

// Bundle directory: users.vocab, items.vocab (one external id per line,
// line number = internal id - 1) and train/val/test.txt (user id then
// space-separated item ids).
void save_bundle(const SplitDataset& split, const std::filesystem::path& dir);
SplitDataset load_bundle(const std::filesystem::path& dir);

}  // namespace boxrec::datasets
