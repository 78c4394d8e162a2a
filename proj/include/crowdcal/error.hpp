#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowdcal {

// Base of every error raised by the library. Callers that only want to
// report and exit can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or violated precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

// The trial sampler ran out of unseen sources.
class StreamError : public Error {
 public:
  StreamError(std::size_t trial, const std::string& what)
      : Error(what), trial_index(trial) {}
  std::size_t trial_index;
};

// One or more items have fewer judgments than a resampling plan needs.
class InsufficientJudgments : public Error {
 public:
  explicit InsufficientJudgments(std::vector<std::string> items);
  std::vector<std::string> items;
};

// Labels and truth disagree on their key sets.
class KeyMismatchError : public Error {
 public:
  explicit KeyMismatchError(std::vector<std::string> keys);
  std::vector<std::string> symmetric_difference;
};

// A calibration set that contains only one outcome class.
class SeparationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch_index, const std::string& what)
      : Error(what), epoch(epoch_index) {}
  std::size_t epoch;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace crowdcal
