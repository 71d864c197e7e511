#pragma once

#include <stdexcept>
#include <string>

namespace sveb {

/// Bad arguments: domain violations, malformed data, inconsistent config.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a usable answer.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The kernel-weighted design matrix of a local fit is singular.
class RankDeficient : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// A local fit has too little effective data (sum of weights < p + 1).
class InsufficientWeight : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

}  // namespace sveb
