#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace xmatch {

/// Library error carrying a stable machine-readable code
/// (e.g. "degenerate-homography") plus a human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace xmatch
