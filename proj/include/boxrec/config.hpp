#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "boxrec/synthetic.hpp"
#include "boxrec/training.hpp"

namespace boxrec::config {

using KeyValues = std::map<std::string, std::string>;

// Flat key=value UTF-8 text; blank lines and '#' comments skipped.
KeyValues parse_file(const std::filesystem::path& path);
KeyValues parse_text(const std::string& text, const std::string& origin);

// Unknown keys are hard errors (typos in tuning sweeps should not pass
// silently).
void apply(training::TrainConfig& cfg, const KeyValues& kv);
void apply(synthetic::WorldConfig& cfg, const KeyValues& kv);

// Fully resolved key=value dumps, written into run output directories.
std::string resolved(const training::TrainConfig& cfg);
std::string resolved(const synthetic::WorldConfig& cfg);

}  // namespace boxrec::config
