#pragma once

#include <stdexcept>
#include <string>

namespace scribe {

// Error taxonomy shared by the library and the CLI.
// The CLI maps these to exit codes: UsageError -> 1, DataError -> 2,
// TrainError -> 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace scribe
