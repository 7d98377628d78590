#pragma once

// A-posteriori analysis of recorded runs: predictions under assumed
// policies, the interactive reading of an ordinary game through prediction
// deviations, frequency-based separation of pure controls, and the combined
// long-term / short-term prognosis.

#include "tactica/game_core.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace tactica::predict {

using Vector = Eigen::VectorXd;

/// Controls and trajectory the predictor expects on (t0, t0 + horizon]. The
/// sample at t0 itself is kept at index 0.
struct Prediction {
  double t0 = 0.0;
  double horizon = 0.0;
  std::vector<double> t;
  std::vector<Vector> controls;  // predicted u (all slots), taken as pure controls
  std::vector<Vector> phi;
};

/// Integrates `model` (the system under the predictor's assumed policies)
/// from `state` at t0.
Prediction predict(const game::InteractiveSystem& model, const Vector& state, double t0, double horizon, double dt);

/// Replaces the pure-control signals of the players (1-based order kept).
game::InteractiveSystem with_policies(game::InteractiveSystem system, const std::vector<game::SignalFn>& signals);

/// One prediction from every `stride`-th sample of `run` whose horizon stays
/// inside the run.
std::vector<Prediction> rolling_predictions(const game::InteractiveSystem& model, const game::StateTrajectory& run,
                                            double horizon, std::size_t stride = 1);

/// One row of an induced coupling dataset. `u0` and `phi0` are predicted
/// values (from base time t - horizon), the rest is realized.
struct FeedbackRecord {
  double t = 0.0;
  Vector u;
  Vector u0;
  Vector phi;
  Vector phi0;
  Vector dphi;

  Vector deviation() const { return u - u0; }
};

/// Rows for every sample t of `run` with t - horizon at or after the run
/// start. DataError when no prediction has base time t - horizon.
std::vector<FeedbackRecord> interactivize_by_prediction(const game::StateTrajectory& run,
                                                        const std::vector<Prediction>& predictions, double horizon);

/// Residual expressions over t, u, u0, phi, phi0, dphi and coefficients c[k];
/// fitting drives the residuals to zero in the least-squares sense.
struct FeedbackFamily {
  std::vector<std::string> residual;
  std::size_t coefficients = 1;
  Vector initial;  // defaults to zeros
};

struct FeedbackEstimate {
  std::vector<std::string> family;
  Vector coefficients;
  double residual_norm = 0.0;
  int iterations = 0;
};

/// Gauss-Newton with a central-difference Jacobian.
FeedbackEstimate fit_feedback(const std::vector<FeedbackRecord>& records, const FeedbackFamily& family);

struct FilterSpec {
  enum class Kind { LowPass, Band };
  Kind kind = Kind::LowPass;
  double cutoff = 1.0;              // rad per time unit
  std::vector<double> frequencies;  // rad per time unit, Band only
};

/// Offline filter of a uniformly sampled trace: the trace is mirrored to
/// twice its length, transformed, masked and transformed back. ConfigError
/// for a cutoff or band frequency above Nyquist (pi / dt).
std::vector<double> filter_trace(const std::vector<double>& values, double dt, const FilterSpec& spec);

struct UnravelResult {
  std::vector<double> t;
  std::vector<double> u0;        // filtered control
  std::vector<double> residual;  // u - u0
  std::optional<FeedbackEstimate> estimate;
};

/// Filters control component `component` of `run` into u0 and fits
/// `family` (if given) on rows whose u0 and u carry that one component,
/// phi0 = phi.
UnravelResult unravel_by_filtering(const game::StateTrajectory& run, std::size_t component, const FilterSpec& spec,
                                   const FeedbackFamily* family = nullptr);

struct PrognosisRow {
  double t = 0.0;
  Vector long_term;
  std::optional<Vector> short_term;
  Vector blended;
  Vector truth;
};

struct PrognosisReport {
  double horizon = 0.0;
  std::vector<PrognosisRow> rows;
  double corrected_error = 0.0;    // RMS one-step error of short-term predictions
  double uncorrected_error = 0.0;  // same without the deviation offset
  double improvement = 0.0;        // uncorrected / corrected
};

/// Long-term prognosis in the associated ordinary game with the assumed
/// epsilon signals, short-term predictions restarted from the observed state
/// every `horizon` with the observed control deviation held over the
/// horizon; blended = short-term where present. horizon = 0 disables the
/// short-term stage.
PrognosisReport strategic_pipeline(const game::InteractiveSystem& system,
                                   const std::vector<game::SignalFn>& assumed_epsilon, double t0, double t1,
                                   double dt, double horizon);

}  // namespace tactica::predict
