#pragma once

#include <stdexcept>
#include <string>

namespace relate {

// Argument errors use std::invalid_argument directly. The types below cover
// the remaining failure kinds callers are expected to tell apart.

/// Weights, tensors or object state disagree with the configuration they are used with.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A dataset manifest references missing or unreadable files.
class DatasetCorrupt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint file is truncated or internally inconsistent.
class CorruptCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedVersion : public std::runtime_error {
 public:
  UnsupportedVersion(const std::string& what, int found, int expected)
      : std::runtime_error(what + " (found version " + std::to_string(found) + ", expected " +
                           std::to_string(expected) + ")"),
        found_(found),
        expected_(expected) {}

  int found() const { return found_; }
  int expected() const { return expected_; }

 private:
  int found_;
  int expected_;
};

/// Training produced a non-finite loss; `snapshot_path` holds the state at the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string snapshot_path)
      : std::runtime_error(what), snapshot_path_(std::move(snapshot_path)) {}

  const std::string& snapshot_path() const { return snapshot_path_; }

 private:
  std::string snapshot_path_;
};

}  // namespace relate
