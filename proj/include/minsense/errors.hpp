#pragma once

#include <stdexcept>
#include <string>

namespace minsense {

// Every failure the library raises derives from Error so callers can catch
// the family at once and still discriminate by type where it matters.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct SingularMatrix : Error {
  using Error::Error;
};

struct NumericalFailure : Error {
  using Error::Error;
};

struct EmptyPolytope : Error {
  using Error::Error;
};

struct TargetOutsideDomain : Error {
  using Error::Error;
};

struct NoSolution : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

/// No multiplier certifies transition k against obstacle j (1-based k, 0-based j).
struct InitInfeasible : Error {
  InitInfeasible(int k_, int j_)
      : Error("no feasible multiplier for transition " + std::to_string(k_) + " and obstacle " +
              std::to_string(j_)),
        k(k_),
        j(j_) {}
  int k;
  int j;
};

struct SubproblemInfeasible : Error {
  using Error::Error;
};

}  // namespace minsense
