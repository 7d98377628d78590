#pragma once

// Differential interactive systems with epsilon-represented feedback
// couplings: forward integration, the associated ordinary game, coalition
// couplings and drift of declared invariants.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tactica::game {

using Vector = Eigen::VectorXd;

struct StateVector {
  Vector values;
  double time = 0.0;
};

/// Identifies one right-hand-side evaluation of the integrator: the step it
/// belongs to and the Runge-Kutta stage (0..3). The sample at the end time
/// is evaluated as stage 0 of step N.
struct StageTag {
  double t = 0.0;
  std::size_t step = 0;
  int stage = 0;
};

/// Arguments of a feedback coupling or epsilon form. `u0` is the pure control
/// of the slot (member controls concatenated for a coalition); for an
/// inverse-direction `known_form` it carries the interactive control instead.
/// `dphi` is only bound for derivative_order 1.
struct CouplingArgs {
  double t;
  const Vector& u0;
  const Vector& phi;
  const Vector* dphi;
  const Vector& lambda;
};

struct DynamicsArgs {
  double t;
  const Vector& phi;
  const Vector& u;  // slot controls concatenated in slot order
  const Vector& lambda;
  const Vector& omega;
};

using SignalFn = std::function<Vector(double)>;
using EpsilonForm = std::function<Vector(const CouplingArgs&)>;
using CouplingForm = std::function<Vector(const CouplingArgs&, const Vector& eps)>;
using DynamicsFn = std::function<Vector(const DynamicsArgs&)>;
using FreeEpsilonFn = std::function<Vector(const StageTag&)>;

struct PureControlPolicy {
  int player = 1;  // 1-based
  SignalFn signal;
  std::string description;
};

/// The hidden epsilon function of one control slot, or, once promoted to an
/// independent control of the associated ordinary game, a free policy.
struct EpsilonProcess {
  EpsilonForm form;
  FreeEpsilonFn free_policy;
  bool ground_truth = true;
  std::size_t dim = 1;

  bool is_free() const { return static_cast<bool>(free_policy); }
};

enum class Direction { Forward, Inverse };

struct FeedbackCoupling {
  CouplingForm known_form;
  /// Inverse direction only: the author-supplied closed-form solution for
  /// the interactive control, used during integration.
  CouplingForm solved_form;
  int derivative_order = 0;
  Direction direction = Direction::Forward;
};

struct Player {
  PureControlPolicy policy;
  FeedbackCoupling coupling;
  EpsilonProcess epsilon;
  std::size_t control_dim = 1;
};

/// Coalition of players (1-based member indices) sharing one interactive
/// control slot.
struct Coalition {
  std::vector<int> members;
  FeedbackCoupling coupling;
  EpsilonProcess epsilon;
  std::size_t control_dim = 1;
};

/// One recorded sample as seen by invariant functions.
struct SampleView {
  double t;
  const Vector& phi;
  const Vector& dphi;
  const Vector& u0;
  const Vector& u;
  const Vector& eps;
};

/// Time-independent quantity F_alpha of the indeterminate variant.
struct InvariantConstraint {
  std::string name;
  std::function<double(const SampleView&)> value;
  int derivative_order = 0;
  double tolerance = 1e-6;
};

struct InteractiveSystem {
  std::size_t state_dim = 1;
  Vector initial_state;
  DynamicsFn dynamics;
  std::vector<Player> players;
  std::vector<Coalition> coalitions;
  std::vector<InvariantConstraint> invariants;
  Vector lambda;  // parameter value when no slow control is supplied
  Vector omega;   // window tag available to the dynamics
};

/// External (or player/coalition owned) slow parameter lambda(t).
struct SlowControl {
  enum class Owner { External, Player, Coalition };
  using Continuous = std::function<Vector(double)>;
  /// (integration step index, value); the value holds from that step on.
  using Discrete = std::vector<std::pair<std::size_t, Vector>>;

  std::variant<Continuous, Discrete> schedule;
  Owner owner = Owner::External;
  std::vector<int> owner_members;

  Vector at(double t, std::size_t step) const;
};

/// Samples at t0, t0+dt, ..., t1 with every quantity of the evaluation chain.
struct StateTrajectory {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<double> t;
  std::vector<Vector> phi;
  std::vector<Vector> dphi;
  std::vector<Vector> u0;
  std::vector<Vector> eps;
  std::vector<Vector> u;
  std::vector<Vector> lambda;
  /// Epsilon of every stage evaluation, index step * 4 + stage, plus the
  /// final sample; what replay needs to reproduce a run bit for bit.
  std::vector<Vector> stage_eps;
  bool has_controls = true;

  std::size_t size() const { return t.size(); }
  StateVector state(std::size_t k) const { return {phi[k], t[k]}; }
};

struct InvariantDrift {
  std::string name;
  double max_drift = 0.0;
  bool violated = false;
};

/// Integrates the system with its per-player couplings (fixed-step RK4).
StateTrajectory simulate(const InteractiveSystem& system, const SlowControl* slow, double t0, double t1,
                         double dt);
StateTrajectory simulate(const InteractiveSystem& system, const SlowControl* slow, double t0, double t1,
                         double dt, const Vector& initial_state);

/// As simulate, with control slots filled by the coalition couplings.
StateTrajectory coalition_simulate(const InteractiveSystem& system, double t0, double t1, double dt);
StateTrajectory coalition_simulate(const InteractiveSystem& system, const SlowControl* slow, double t0,
                                   double t1, double dt, const Vector& initial_state);

/// Promotes every epsilon (player and coalition) to an independent control.
/// The promoted slots start unbound; bind them before simulating.
InteractiveSystem associated_ordinary_game(const InteractiveSystem& system);

/// Number of independent control slots: pure controls plus promoted epsilons.
std::size_t control_slot_count(const InteractiveSystem& system);

/// Binds the promoted epsilon of player `player` (1-based) to a time signal.
void bind_epsilon(InteractiveSystem& game, int player, SignalFn signal);
/// Binds every promoted player epsilon to replay the stage-level record of
/// `run`. The replaying simulation must use the same t0, dt and end time.
void replay_epsilon(InteractiveSystem& game, const StateTrajectory& run);

std::vector<InvariantDrift> check_indeterminate_invariants(const StateTrajectory& trajectory,
                                                           const std::vector<InvariantConstraint>& constraints);

/// Appends the samples of `part` to `into`; `skip_first` drops the first
/// sample when it repeats the last one of `into`. Stage records are not
/// carried over.
void append_samples(StateTrajectory& into, const StateTrajectory& part, bool skip_first);

/// Maximum absolute state difference between two trajectories on the same grid.
double max_state_deviation(const StateTrajectory& a, const StateTrajectory& b);

}  // namespace tactica::game
