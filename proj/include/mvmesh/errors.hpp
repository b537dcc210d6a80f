#pragma once

#include <stdexcept>
#include <string>

namespace mvmesh {

// Error families map to process exit codes in the CLI:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PointBehindCamera : NumericError {
  using NumericError::NumericError;
};
struct DegenerateConfiguration : NumericError {
  using NumericError::NumericError;
};
struct NearZeroColumn : NumericError {
  using NumericError::NumericError;
};
struct EmptySilhouette : DataError {
  using DataError::DataError;
};
struct EmptyForeground : DataError {
  using DataError::DataError;
};
struct AllZeroLikelihood : NumericError {
  using NumericError::NumericError;
};
struct DegenerateFrame : NumericError {
  using NumericError::NumericError;
};
struct DegenerateSet : NumericError {
  using NumericError::NumericError;
};
struct NonFiniteObjective : NumericError {
  using NumericError::NumericError;
};

}  // namespace mvmesh
