#pragma once

// Builders that turn expression strings into the callable forms of
// game_core. Every builder validates names and index ranges at compile time
// and throws ParseError on violations.

#include "tactica/expression.hpp"
#include "tactica/game_core.hpp"

#include <string>
#include <vector>

namespace tactica::game {

/// Index extents the builders check expressions against.
struct Dims {
  std::size_t phi = 1;
  std::size_t u0 = 1;   // pure control of the slot (all members for coalitions)
  std::size_t eps = 1;
  std::size_t u = 1;    // all interactive controls, concatenated
  std::size_t lambda = 0;
  std::size_t omega = 0;
};

/// Pure control u0(t). Vocabulary: t.
SignalFn make_signal(const std::vector<std::string>& components);

/// Phi(phi, u; lambda, omega). Vocabulary: t, phi, u, lambda, omega.
DynamicsFn make_dynamics(const std::vector<std::string>& components, const Dims& dims);

/// Hidden epsilon form. Vocabulary: t, u0, phi, dphi, lambda.
EpsilonForm make_epsilon(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi = nullptr);

/// Forward coupling u(u0, phi, dphi; eps). Vocabulary: t, u0, phi, dphi, lambda, eps.
CouplingForm make_coupling(const std::vector<std::string>& components, const Dims& dims, bool* reads_dphi = nullptr);

/// Inverse coupling u0(u, phi, dphi; eps). Vocabulary: t, u, phi, dphi, lambda, eps.
CouplingForm make_inverse_coupling(const std::vector<std::string>& components, const Dims& dims,
                                   bool* reads_dphi = nullptr);

/// Invariant F(u, u0, phi, dphi, eps). Vocabulary: t, phi, dphi, u0, u, eps.
/// The derivative order is 1 when dphi is read.
InvariantConstraint make_invariant(std::string name, const std::string& text, const Dims& dims, double tolerance);

}  // namespace tactica::game
