#pragma once

// Dialogues over continuous intention fields, windowed functionals, the
// recurrence between window states, and partition detection from epsilon
// cell transitions.

#include "tactica/expression.hpp"
#include "tactica/game_core.hpp"
#include "tactica/game_expr.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tactica::verbal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One sample seen by a window integrand. `phi` carries the intention field
/// for dialogues and the game state for verbalized games.
struct WindowPoint {
  double t;
  const Vector& phi;
  const Vector& u0;
  const Vector& u;
  const Vector& eps;
};

enum class FunctionalKind { Mean, Integral, Endpoint, QuadraticMoment };

/// Window functional: a reduction of `integrand` over [t_{n-1}, t_n].
struct WindowFunctional {
  FunctionalKind kind = FunctionalKind::Mean;
  std::function<Vector(const WindowPoint&)> integrand;
};

/// Integrand from expressions over t, phi, u0, u and eps (the recorded,
/// player-concatenated traces; extents from `dims`).
WindowFunctional make_functional(FunctionalKind kind, const std::vector<std::string>& components,
                                 const game::Dims& dims);

/// Quadrature weights for samples `times` (composite Simpson, with a 3/8
/// tail for an odd interval count; trapezoid for one interval or a
/// non-uniform grid).
std::vector<double> window_weights(const std::vector<double>& times);

/// Applies a reduction to the sampled integrand values on one window.
Vector reduce(FunctionalKind kind, const std::vector<double>& times, const std::vector<Vector>& values);

/// Indices [first, last] of the trajectory samples covering [a, b]. The
/// endpoints must coincide with samples.
std::pair<std::size_t, std::size_t> window_span(const game::StateTrajectory& traj, double a, double b);

/// Evaluates `f` over samples [first, last] of `traj`.
Vector evaluate_functional(const WindowFunctional& f, const game::StateTrajectory& traj, std::size_t first,
                           std::size_t last);

struct IntentionField {
  std::size_t dim = 1;
  Vector initial;
  /// d xi / dt = Xi(xi, u) (u concatenated over players).
  std::function<Vector(double t, const Vector& xi, const Vector& u)> dynamics;
};

/// Summary handed to step maps and recurrences: the window bounds and its
/// samples.
struct WindowView {
  int index;
  double t_start;
  double t_end;
  const game::StateTrajectory* samples;
  std::size_t first;
  std::size_t last;
};

using StepMap = std::function<Vector(const Vector& phi_prev, const Vector& v, const WindowView& window)>;

struct DialogueResult {
  std::vector<Vector> phi;  // phi_0 .. phi_N
  std::vector<Vector> v;    // v_1 .. v_N
  game::StateTrajectory field;  // xi trace over the whole grid, chain recorded
  std::vector<double> residuals;  // |phi_n - step(phi_{n-1}, v_n)|_inf per window
  bool consistent = true;
  std::string diagnostic;
};

/// Integrates the intention field continuously across `t_grid` (players'
/// couplings read the field as their state), computes phi_n and v_n as the
/// declared window functionals, and checks them against `step_map`.
DialogueResult simulate_dialogue(const IntentionField& field, const std::vector<game::Player>& players,
                                 const StepMap& step_map, const WindowFunctional& state_functional,
                                 const WindowFunctional& control_functional, const std::vector<double>& t_grid,
                                 const Vector& phi0, double dt, double tolerance);

/// Sign-condition cells over the epsilon space with an admissible box.
class CellComplex {
 public:
  struct CellDecl {
    std::string label;
    std::vector<std::string> clauses;  // conjunction, e.g. {"eps[0] > 0"}
  };
  CellComplex(std::size_t dim, Vector lower, Vector upper, const std::vector<CellDecl>& cells);

  std::size_t dim() const { return dim_; }
  const std::string& label(std::size_t cell) const { return labels_[cell]; }
  std::size_t size() const { return labels_.size(); }
  bool in_box(const Vector& eps) const;
  /// Index of the unique cell containing `eps`. DomainError (tagged with
  /// `time`) when outside the box or not covered by exactly one cell.
  std::size_t locate(const Vector& eps, double time) const;

 private:
  std::size_t dim_;
  Vector lower_;
  Vector upper_;
  expr::SymbolTable symbols_;
  std::size_t eps_slot_;
  std::vector<std::string> labels_;
  std::vector<expr::Predicate> predicates_;
};

struct TimeSeries {
  std::vector<double> t;
  std::vector<Vector> values;
};

/// Times where the containing cell changes, refined by bisection on the
/// linear interpolant between bracketing samples.
std::vector<double> detect_partition(const TimeSeries& eps_trace, const CellComplex& complex);

/// Snaps transition times to the following sample and returns the window
/// grid t0 < ... < t1 on the sample lattice.
std::vector<double> partition_grid(const std::vector<double>& sample_times, const std::vector<double>& transitions);

struct WindowRecord {
  int index = 0;  // n, 1-based
  double t_start = 0.0;
  double t_end = 0.0;
  Vector omega;
  Vector v;
  std::string cell_label;
};

/// Window records of a recorded game on `grid`; the epsilon cell at each
/// window start is labelled when `complex` is given.
std::vector<WindowRecord> build_windows(const game::StateTrajectory& traj, const std::vector<double>& grid,
                                        const WindowFunctional& omega, const WindowFunctional& v,
                                        const CellComplex* complex = nullptr);

struct RecurrenceMap {
  enum class Family { Declared, FittedAffine };
  Family family = Family::Declared;
  std::function<Vector(const Vector& omega_prev, const Vector& v, const WindowRecord& window)> form;
  /// Fitted-affine: omega_n = coefficients * [omega_{n-1}; v_n; 1].
  Matrix coefficients;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  double residual_norm = 0.0;

  Vector apply(const Vector& omega_prev, const Vector& v, const WindowRecord& window) const;
};

struct RecurrenceReport {
  std::vector<double> residuals;  // one per consecutive pair
  double max_residual = 0.0;
  bool pass = true;
};

RecurrenceReport verify_recurrence(const std::vector<WindowRecord>& windows, const RecurrenceMap& map,
                                   double tolerance);

/// Least-squares affine recurrence; minimum-norm coefficients when the design
/// is rank deficient (flagged on the result).
RecurrenceMap fit_recurrence(const std::vector<WindowRecord>& windows);

}  // namespace tactica::verbal
