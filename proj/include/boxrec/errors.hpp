#pragma once

#include <stdexcept>
#include <string>

namespace boxrec {

// Raised when a forward pass or gradient turns non-finite. Carries the name
// of the operation (or training context) that produced the bad value.
class NumericFault : public std::runtime_error {
 public:
  explicit NumericFault(const std::string& where)
      : std::runtime_error("numeric fault in " + where), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

// Input data problems: unreadable files, malformed rows, vocabulary
// mismatches. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace boxrec
