#pragma once

#include <stdexcept>
#include <string>

namespace sparseagg {

// Invalid user-supplied configuration or input files. CLI exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller violated an operation's preconditions (shape mismatch, bad axis, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computation produced non-finite values or otherwise failed numerically.
// CLI exit code 2.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sparseagg
