#pragma once

// Comment streams over verbalized games. A comment is fed back as the slow
// parameter lambda of the next window; several games can exchange comments
// through interaction terms or a unified synthesis rule.

#include "tactica/expression.hpp"
#include "tactica/game_core.hpp"
#include "tactica/verbalization.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tactica::tactics {

using Vector = Eigen::VectorXd;

/// theta_n, optionally paired with a class label and auxiliary vector eta.
struct CommentState {
  int index = 0;
  Vector theta;
  std::string class_label;
  Vector eta;
  std::string delta_label;  // set when a dialectical transition fired
};

/// What a dialectical trigger may inspect besides eta, omega and v.
struct Diagnostics {
  bool insolvable = false;
  double residual = 0.0;
};

/// A dialectical object described by its concrete class transitions. Triggers
/// are conjunctions over eta, omega, v (vectors) and insolvable, residual
/// (scalars); eta updates are expressions over the same names.
class DialecticalObject {
 public:
  struct Transition {
    std::string from_class;
    expr::Predicate trigger;
    std::string trigger_text;
    std::string to_class;
    expr::VectorExpression eta_update;  // empty keeps eta
  };

  DialecticalObject(std::string label, std::vector<std::string> registry);

  const std::string& label() const { return label_; }
  const std::vector<std::string>& registry() const { return registry_; }
  const std::vector<Transition>& table() const { return table_; }

  /// Adds a row. Unknown class labels and a duplicate (from_class, trigger)
  /// key throw ConfigError; malformed expressions throw ParseError.
  void add(const std::string& from_class, const std::vector<std::string>& trigger, const std::string& to_class,
           const std::vector<std::string>& eta_update = {});

  /// First row whose class matches and whose trigger holds.
  const Transition* find(const std::string& current_class, const Vector& eta, const Vector& omega,
                         const Vector& v, const Diagnostics& diag) const;

  /// Applies the matching row (if any) to (class, eta). Returns true when a
  /// transition fired.
  bool apply(std::string& current_class, Vector& eta, const Vector& omega, const Vector& v,
             const Diagnostics& diag) const;

  static const expr::SymbolTable& symbols();

 private:
  std::string label_;
  std::vector<std::string> registry_;
  std::vector<Transition> table_;
};

using CommentUpdate = std::function<Vector(const Vector& theta_prev, const Vector& omega, const Vector& v)>;
using DialecticalUpdate = std::function<CommentState(const CommentState& prev, const DialecticalObject& delta,
                                                     const Vector& omega, const Vector& v)>;

struct CommentRule {
  CommentUpdate update;
  /// When set, used for every step of a run that carries a dialectical
  /// object. Without it the object's transition moves (class, eta) and
  /// `update` moves theta.
  DialecticalUpdate dialectical;
};

/// Dimensions the expression builders check against.
struct CommentDims {
  std::size_t theta = 1;
  std::size_t omega = 1;
  std::size_t v = 1;
};

/// Theta(theta, omega, v) from expression strings.
CommentUpdate make_comment_update(const std::vector<std::string>& components, const CommentDims& dims);

struct CommentedGame {
  game::InteractiveSystem system;  // lambda receives the comment
  verbal::WindowFunctional omega;
  verbal::WindowFunctional v;
  CommentRule rule;
  CommentState initial;  // theta_0 (and class, eta when used)
  std::vector<double> grid;
  double dt = 1e-2;
};

struct CommentedRun {
  game::StateTrajectory trajectory;
  std::vector<verbal::WindowRecord> windows;
  std::vector<CommentState> comments;  // theta_0 .. theta_N
};

/// Window by window: integrate with lambda = theta_{n-1}, compute omega_n and
/// v_n, then theta_n. ConfigError when theta does not fit the lambda slot.
CommentedRun run_commented_game(const CommentedGame& g, const DialecticalObject* dialect = nullptr);

/// Additive correction to theta_{j,n} from (own theta, other theta, omega, v).
struct InteractionTerm {
  std::function<Vector(const Vector& own, const Vector& other, const Vector& omega, const Vector& v)> form;

  static InteractionTerm zero();
  /// Vocabulary: theta (own), other, omega, v.
  static InteractionTerm compile(const std::vector<std::string>& components, const CommentDims& own,
                                 std::size_t other_theta);
};

/// Arguments of a synthesis form. Reading a game outside the form's mask
/// throws ConfigError.
class SynthesisArgs {
 public:
  SynthesisArgs(const std::vector<Vector>& theta, const std::vector<Vector>& omega, const std::vector<Vector>& v,
                const std::vector<std::size_t>& mask)
      : theta_(theta), omega_(omega), v_(v), mask_(mask) {}
  const Vector& theta(std::size_t game) const { return theta_[check(game)]; }
  const Vector& omega(std::size_t game) const { return omega_[check(game)]; }
  const Vector& v(std::size_t game) const { return v_[check(game)]; }
  std::size_t games() const { return theta_.size(); }

 private:
  std::size_t check(std::size_t game) const;
  const std::vector<Vector>& theta_;
  const std::vector<Vector>& omega_;
  const std::vector<Vector>& v_;
  const std::vector<std::size_t>& mask_;
};

using SynthesisForm = std::function<Vector(const SynthesisArgs&)>;

/// One form per game; masks list the (0-based) games each form reads.
struct SynthesisRule {
  std::vector<SynthesisForm> forms;
  std::vector<std::vector<std::size_t>> masks;
};

/// Synthesis form from expressions over theta<j>, omega<j>, v<j> (j 1-based
/// game number). Reading a game outside `mask` throws ConfigError.
SynthesisForm make_synthesis_form(const std::vector<std::string>& components, const std::vector<CommentDims>& games,
                                  const std::vector<std::size_t>& mask);

/// Steps every game on the shared grid with theta_{j,n} = forms[j](...).
std::vector<CommentedRun> tactical_synthesis(const std::vector<CommentedGame>& games, const SynthesisRule& rule);

/// theta_{j,n} = Theta_j(own) + term_{j,other}(...); the specialization of
/// synthesis to two games.
std::vector<CommentedRun> tactical_interaction(const CommentedGame& g1, const CommentedGame& g2,
                                               const InteractionTerm& term12, const InteractionTerm& term21);

/// The synthesis rule tactical_interaction runs.
SynthesisRule interaction_rule(const CommentedGame& g1, const CommentedGame& g2, const InteractionTerm& term12,
                               const InteractionTerm& term21);

struct Probe {
  std::vector<Vector> theta;
  std::vector<Vector> omega;
  std::vector<Vector> v;
};

/// Deterministic probe set: every combination of `levels` per coordinate
/// when there are at most `max_full` coordinates, otherwise `samples`
/// seeded pseudo-random draws from [min level, max level]. `extra` is
/// appended verbatim.
std::vector<Probe> probe_grid(const std::vector<CommentDims>& games, const std::vector<double>& levels,
                              std::vector<Probe> extra = {}, std::size_t max_full = 8, std::size_t samples = 4096);

struct ExtensionCheck {
  bool holds = true;
  double max_difference = 0.0;
  std::optional<Probe> witness;
};

/// Compares synth.forms[game] with `original` (fed the game's own triple) on
/// every probe; agreement within 1e-12 everywhere means an extension.
ExtensionCheck is_tactical_extension(const SynthesisRule& synth, std::size_t game, const CommentUpdate& original,
                                     const std::vector<Probe>& probes);

}  // namespace tactica::tactics
