#pragma once

// Internal: scenario sections turned into library objects.

#include "tactica/cli.hpp"
#include "tactica/errors.hpp"
#include "tactica/game_core.hpp"
#include "tactica/game_expr.hpp"
#include "tactica/prediction.hpp"
#include "tactica/repdyn.hpp"
#include "tactica/tactics.hpp"
#include "tactica/verbalization.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tactica::cli {

class Issues {
 public:
  void error(const std::string& path, const std::string& message) { errors.push_back(path + ": " + message); }
  void warning(const std::string& path, const std::string& message) { warnings.push_back(path + ": " + message); }

  /// Runs `f`, recording any library error against `path`. Returns false on
  /// error.
  template <typename F>
  bool guard(const std::string& path, F&& f);

  std::vector<std::string> errors;
  std::vector<std::string> warnings;
};

struct RunParams {
  double t0 = 0.0;
  double t1 = 1.0;
  double dt = 1e-2;
  double tolerance = 1e-9;
};

struct SystemPlan {
  game::InteractiveSystem system;
  game::Dims totals;  // phi, u0 (all players), u, eps (all players), lambda
  std::vector<std::string> player_names;
};

struct VerbalPlan {
  std::optional<verbal::CellComplex> complex;
  std::vector<double> grid;  // empty: from the detected partition
  verbal::WindowFunctional omega;
  verbal::WindowFunctional v;
  std::size_t omega_dim = 1;
  std::size_t v_dim = 1;
  enum class Recurrence { None, Fit, Declared } recurrence = Recurrence::None;
  std::size_t train = 0;
  double tolerance = 1e-6;
  verbal::RecurrenceMap declared;
};

struct TacticsPlan {
  tactics::CommentedGame game;
  std::optional<tactics::DialecticalObject> dialect;
};

struct PredictPlan {
  double horizon = 0.0;
  std::optional<game::InteractiveSystem> model;
  std::optional<predict::FeedbackFamily> family;
  std::optional<predict::FilterSpec> filter;
  std::size_t component = 0;
  std::optional<double> pipeline_horizon;
  std::vector<game::SignalFn> pipeline_epsilon;
};

struct RepDynPlan {
  algebra::TacticalRepDynSpec spec;
  std::optional<tactics::DialecticalObject> dialect;
  std::size_t tuple_stride = 1;
};

struct Expectation {
  std::string metric;
  std::optional<double> min;
  std::optional<double> max;
  std::optional<double> value;
  double tol = 0.0;
};

struct Plan {
  std::string name;
  RunParams run;
  std::optional<SystemPlan> system;
  std::optional<VerbalPlan> verbal;
  std::optional<TacticsPlan> tactics;
  std::optional<PredictPlan> predict;
  std::optional<RepDynPlan> repdyn;
  std::optional<algebra::InverseProblem> inverse;
  std::vector<Expectation> expect;
};

template <typename F>
bool Issues::guard(const std::string& path, F&& f) {
  try {
    f();
    return true;
  } catch (const ParseError& e) {
    error(path, std::string("expression error near '") + e.token() + "': " + e.what());
  } catch (const ValidationError& e) {
    for (const auto& i : e.issues()) error(path, i);
  } catch (const std::exception& e) {
    error(path, e.what());
  }
  return false;
}

/// Builds every section, collecting problems in `issues`.
Plan build_plan(const Json& doc, const Overrides& overrides, Issues& issues);

std::vector<Command> supported_commands(const Plan& plan);

}  // namespace tactica::cli
