#include "boxrec/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "boxrec/errors.hpp"

namespace boxrec::datasets {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::int64_t parse_timestamp(const std::string& s, std::size_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line_no) + ": bad timestamp '" + s + "'");
  if (v < 0) throw DataError("line " + std::to_string(line_no) + ": negative timestamp");
  return v;
}

double parse_rating(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": bad rating '" + s + "'");
  }
}

}  // namespace

LogFormat format_from_name(const std::string& name) {
  if (name == "tsv") return LogFormat::kTsv;
  if (name == "csv") return LogFormat::kCsv;
  throw DataError("unknown log format '" + name + "' (expected tsv or csv)");
}

std::vector<Interaction> load_log(const std::filesystem::path& path, LogFormat format,
                                  std::optional<double> rating_threshold) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open log file " + path.string());
  const char sep = format == LogFormat::kTsv ? '\t' : ',';

  std::vector<Interaction> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line, sep);
    if (fields.size() < 3 || fields.size() > 4)
      throw DataError("line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                      std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty())
      throw DataError("line " + std::to_string(line_no) + ": empty user or item id");

    Interaction it;
    it.user = fields[0];
    it.item = fields[1];
    it.timestamp = parse_timestamp(fields[2], line_no);
    if (fields.size() == 4) it.rating = parse_rating(fields[3], line_no);
    if (rating_threshold && it.rating && *it.rating < *rating_threshold) continue;
    log.push_back(std::move(it));
  }
  if (log.empty()) throw DataError("log file " + path.string() + " has no usable interactions");
  return log;
}

std::vector<Interaction> filter_min_activity(std::vector<Interaction> log, std::size_t min_user,
                                             std::size_t min_item) {
  for (;;) {
    std::unordered_map<std::string, std::size_t> user_deg, item_deg;
    for (const auto& it : log) {
      ++user_deg[it.user];
      ++item_deg[it.item];
    }
    const std::size_t before = log.size();
    std::erase_if(log, [&](const Interaction& it) {
      return user_deg[it.user] < min_user || item_deg[it.item] < min_item;
    });
    if (log.size() == before) break;
  }
  if (log.empty()) throw DataError("activity filter removed every interaction");
  return log;
}

std::uint32_t Vocab::add(const std::string& name) {
  auto [it, inserted] = ids.try_emplace(name, static_cast<std::uint32_t>(names.size() + 1));
  if (inserted) names.push_back(name);
  return it->second;
}

std::uint32_t Vocab::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw DataError("unknown id '" + name + "'");
  return it->second;
}

const std::string& Vocab::name_of(std::uint32_t id) const {
  if (id == 0 || id > names.size()) throw DataError("internal id " + std::to_string(id) + " out of range");
  return names[id - 1];
}

std::size_t SplitDataset::n_interactions() const {
  std::size_t n = 0;
  for (const auto& v : train) n += v.size();
  for (const auto& v : val) n += v.size();
  for (const auto& v : test) n += v.size();
  return n;
}

double SplitDataset::density() const {
  if (n_users() == 0 || n_items() == 0) return 0.0;
  return static_cast<double>(n_interactions()) /
         (static_cast<double>(n_users()) * static_cast<double>(n_items()));
}

std::vector<std::uint32_t> SplitDataset::inference_history(std::uint32_t user) const {
  if (user == 0 || user >= train.size()) throw DataError("unknown user id " + std::to_string(user));
  std::vector<std::uint32_t> h = train[user];
  h.insert(h.end(), val[user].begin(), val[user].end());
  return h;
}

SplitDataset chronological_split(const std::vector<Interaction>& log) {
  // Group per user, keeping input order for timestamp ties.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<std::size_t>> per_user;
  for (std::size_t i = 0; i < log.size(); ++i) {
    auto [it, inserted] = per_user.try_emplace(log[i].user);
    if (inserted) user_order.push_back(log[i].user);
    it->second.push_back(i);
  }

  SplitDataset out;
  out.train.resize(1);
  out.val.resize(1);
  out.test.resize(1);

  for (const auto& user : user_order) {
    auto& idx = per_user[user];
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return log[a].timestamp < log[b].timestamp; });
    const std::size_t n = idx.size();
    if (n < 3) {
      ++out.users_excluded;
      continue;
    }
    // Integer forms of floor(0.7 n) and round(0.1 n); 0.7*n in floating point
    // can land just below the true product and floor one too low.
    const std::size_t n_train = (7 * n) / 10;
    const std::size_t n_val = (n + 5) / 10;

    out.user_vocab.add(user);
    std::vector<std::uint32_t> tr, va, te;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t item = out.item_vocab.add(log[idx[i]].item);
      if (i < n_train)
        tr.push_back(item);
      else if (i < n_train + n_val)
        va.push_back(item);
      else
        te.push_back(item);
    }
    out.train.push_back(std::move(tr));
    out.val.push_back(std::move(va));
    out.test.push_back(std::move(te));
  }
  if (out.n_users() == 0) throw DataError("no user has enough interactions to split");
  return out;
}

namespace {

void write_vocab(const std::filesystem::path& path, const Vocab& v) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& name : v.names) os << name << '\n';
}

Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

void write_split(const std::filesystem::path& path, const std::vector<std::vector<std::uint32_t>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (std::size_t u = 1; u < rows.size(); ++u) {
    os << u;
    for (std::uint32_t item : rows[u]) os << ' ' << item;
    os << '\n';
  }
}

std::vector<std::vector<std::uint32_t>> read_split(const std::filesystem::path& path, std::size_t n_users,
                                                   std::size_t n_items) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::uint32_t>> rows(n_users + 1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::uint64_t user = 0;
    if (!(ss >> user) || user == 0 || user > n_users)
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": bad user id");
    std::uint64_t item = 0;
    while (ss >> item) {
      if (item == 0 || item > n_items)
        throw DataError(path.string() + " line " + std::to_string(line_no) + ": item id out of range");
      rows[user].push_back(static_cast<std::uint32_t>(item));
    }
  }
  return rows;
}

}  // namespace

void save_bundle(const SplitDataset& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_vocab(dir / "users.vocab", split.user_vocab);
  write_vocab(dir / "items.vocab", split.item_vocab);
  write_split(dir / "train.txt", split.train);
  write_split(dir / "val.txt", split.val);
  write_split(dir / "test.txt", split.test);
}

SplitDataset load_bundle(const std::filesystem::path& dir) {
  SplitDataset out;
  out.user_vocab = read_vocab(dir / "users.vocab");
  out.item_vocab = read_vocab(dir / "items.vocab");
  out.train = read_split(dir / "train.txt", out.user_vocab.size(), out.item_vocab.size());
  out.val = read_split(dir / "val.txt", out.user_vocab.size(), out.item_vocab.size());
  out.test = read_split(dir / "test.txt", out.user_vocab.size(), out.item_vocab.size());
  return out;
}

}  // namespace boxrec::datasets
