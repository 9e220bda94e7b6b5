#ifndef COVERPOSE_ERRORS_HPP
#define COVERPOSE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace coverpose {

// Bad arguments are reported with std::invalid_argument throughout. The types
// below cover the failure classes that callers (mostly the CLI) need to tell
// apart.

class MalformedDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointIncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an optimization loop produces a non-finite loss. Carries the
/// path of the last checkpoint written before the failure, if any.
class TrainingFailureError : public std::runtime_error {
 public:
  TrainingFailureError(const std::string& what, std::string last_good_checkpoint = {})
      : std::runtime_error(what), last_good_(std::move(last_good_checkpoint)) {}

  const std::string& last_good_checkpoint() const noexcept { return last_good_; }

 private:
  std::string last_good_;
};

class MissingPrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace coverpose

#endif  // COVERPOSE_ERRORS_HPP
