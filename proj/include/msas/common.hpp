// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace msas {

/// Shape/dimension violations (mismatched operands, empty inputs, ...).
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Out-of-range or otherwise invalid values (scores, rates, scales, ...).
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input data; carries the offending row when known.
struct IngestionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File-level I/O failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised by the training loop when optimization cannot continue
/// (non-finite loss, exploding gradients).
struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace msas
