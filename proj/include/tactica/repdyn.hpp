#pragma once

// Representative dynamics built from scalar systems (the commutative
// diagonal inverse problem) and window-wise representative dynamics whose
// algebra class is the comment.

#include "tactica/algebra.hpp"
#include "tactica/tactics.hpp"

#include <string>
#include <vector>

namespace tactica::algebra {

/// dx/dt = phi(x, u, t) with phi polynomial in x (degree <= 3). Names: x1..xd
/// (x for x1), u1.. (u for u1), t. Controls are expressions over t.
struct InverseProblem {
  std::vector<std::string> phi;
  std::vector<std::string> controls;
  Vector x0;
  double t0 = 0.0;
  double t1 = 1.0;
  double dt = 1e-3;
  Eigen::Index dimension = 2;  // n of the diagonal matrices
  Eigen::Index slot = 0;       // diagonal entry carrying x
  bool lift_constants = false; // constant terms become c<k> with C = value * I
};

/// One monomial of phi_i with its coefficient text over u and t.
struct InverseMonomial {
  std::size_t component = 0;
  std::vector<int> exponents;
  std::string coefficient;
  std::optional<std::size_t> control;   // index of a<k> carrying the coefficient
  std::optional<std::size_t> constant;  // index of c<k> when lifted
};

struct InverseReport {
  bool symbolic_match = false;
  double pointwise_deviation = 0.0;  // max |phi - f(x, a(u, x))| over probes
  double slot_deviation = 0.0;       // max |slot - scalar run| over the grid
  double self_convergence = 0.0;     // max |scalar(dt) - scalar(dt/2)| on the grid
};

struct InverseSolution {
  RepDynSpec spec;
  std::vector<InverseMonomial> monomials;
  std::vector<std::string> symbols;  // F texts, one per generator
  ControlSchedule a;
  RepDynTrace trace;
  std::vector<Vector> scalar_reference;
  InverseReport report;
};

/// ConfigError for a phi that is not polynomial in x (or above degree 3), or
/// a constant lift of a control-dependent constant term.
InverseSolution solve_inverse_problem(const InverseProblem& problem);

/// Dynamics of one algebra class: symbols over that class's generators.
struct ClassDynamics {
  std::string class_label;
  std::vector<NcPolynomial> F;
  ConstantLift constants;
};

/// New generator images as polynomials in the old generators. Without an
/// entry a transition between equal generator counts keeps the tuple.
struct Embedding {
  std::string from;
  std::string to;
  std::vector<NcPolynomial> images;
};

struct TacticalRepDynSpec {
  AlgebraClassRegistry registry;
  std::vector<ClassDynamics> dynamics;
  std::vector<Embedding> embeddings;
  MatrixTuple initial;
  std::string initial_class;
  Vector initial_eta;
  ProjectionSettings projection;
  ControlSchedule a;
  std::vector<double> grid;
  double dt = 1e-3;
};

struct ClassTransition {
  int window = 0;
  double time = 0.0;
  std::string from;
  std::string to;
  bool insolvable = false;
  double residual = 0.0;
};

struct TacticalRepDynRun {
  std::vector<double> t;
  std::vector<MatrixTuple> X;
  std::vector<double> residual;
  std::vector<std::string> labels;           // class per sample
  std::vector<tactics::CommentState> stream;  // (class, eta) after each window
  std::vector<ClassTransition> transitions;
};

/// Window by window under the current class. An insolvable step hands
/// (insolvable = 1, residual) to `delta`; a matching row moves (class, eta),
/// the last good tuple is embedded and integration resumes from the failed
/// step. Without a row the run stops with StrandedClassError. At every window
/// end the table is consulted again with insolvable = 0, omega = the largest
/// residual of the window and v = the mean of a over the window samples.
TacticalRepDynRun run_tactical_repdyn(const TacticalRepDynSpec& spec, const tactics::DialecticalObject& delta);

}  // namespace tactica::algebra
