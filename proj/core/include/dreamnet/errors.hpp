#pragma once

#include <stdexcept>
#include <string>

namespace dreamnet {

// Error taxonomy. The CLI maps InputError/ConfigError/ParseError/SchemaError/
// ShapeError to exit code 2 and NumericalError to exit code 3.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated API contract (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace dreamnet
