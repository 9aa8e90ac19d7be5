#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace cse {

using Mat = Eigen::MatrixXd;

// Problems in user-supplied files (schema, malformed lines, mismatched
// vocabularies). The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure while running (divergence, non-finite loss). The CLI
// maps this to exit code 3.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cse
