#pragma once

#include <stdexcept>
#include <string>

namespace distortbench {

/// Bad shapes, out-of-range parameters, malformed inputs.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (e.g. removing a distortion that
/// was never applied).
struct PreconditionViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent wire frame, or a remote response that fails
/// probability normalization.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Socket level failure talking to a remote classifier. Retryable.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A filter cannot reach the requested per-application L2 impact.
struct CalibrationInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration key, value or command-line usage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numerical breakdown during training (non-finite loss).
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace distortbench
