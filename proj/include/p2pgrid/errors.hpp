#pragma once

#include <stdexcept>
#include <string>

namespace p2pgrid {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// topology
struct InvalidNode : Error { using Error::Error; };
struct SelfLoop : Error { using Error::Error; };
struct EpsilonOutOfRange : Error { using Error::Error; };
struct LastNode : Error { using Error::Error; };

// epidemic
struct NotConnected : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };

// grid model / dispatch
struct Infeasible : Error { using Error::Error; };
struct NoDroopResponse : Error { using Error::Error; };
struct NotDispatchable : Error { using Error::Error; };
struct NonPositiveVoltage : Error { using Error::Error; };

// sim
struct UnknownTarget : Error { using Error::Error; };

// scenario io / cli
struct ValidationFailed : Error { using Error::Error; };
struct SyntaxError : ValidationFailed { using ValidationFailed::ValidationFailed; };
struct SchemaViolation : ValidationFailed { using ValidationFailed::ValidationFailed; };
struct DanglingReference : ValidationFailed { using ValidationFailed::ValidationFailed; };
struct UnknownParameter : ValidationFailed { using ValidationFailed::ValidationFailed; };

}  // namespace p2pgrid
