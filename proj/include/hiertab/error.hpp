#pragma once

#include <stdexcept>
#include <string>

namespace hiertab {

/// Raised for every contract violation detected at runtime (bad shapes,
/// malformed input files, invalid ids, non-finite losses).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hiertab
