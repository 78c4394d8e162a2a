#include "crowdcal/error.hpp"

namespace crowdcal {

namespace {

std::string join(const std::vector<std::string>& parts, std::size_t limit) {
  std::string out;
  for (std::size_t i = 0; i < parts.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += parts[i];
  }
  if (parts.size() > limit) out += ", ... (" + std::to_string(parts.size()) + " total)";
  return out;
}

}  // namespace

InsufficientJudgments::InsufficientJudgments(std::vector<std::string> deficient)
    : Error("insufficient judgments for " + std::to_string(deficient.size()) +
            " item(s): " + join(deficient, 20)),
      items(std::move(deficient)) {}

KeyMismatchError::KeyMismatchError(std::vector<std::string> keys)
    : Error("label and truth keys differ: " + join(keys, 20)),
      symmetric_difference(std::move(keys)) {}

}  // namespace crowdcal
