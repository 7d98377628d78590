#pragma once

// Finitely presented algebras on complex matrix tuples: noncommutative
// polynomials, Weyl-ordered evaluation, relation residuals and constrained
// integration of representative dynamics.

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tactica::algebra {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kMaxGenerators = 4;
inline constexpr Eigen::Index kMaxDimension = 6;
inline constexpr std::size_t kMaxDegree = 3;

struct MatrixTuple {
  std::vector<Matrix> X;
  double t = 0.0;

  Eigen::Index dim() const { return X.empty() ? 0 : X.front().rows(); }
  std::size_t size() const { return X.size(); }
  /// ConfigError unless every matrix is square, of one dimension and finite.
  void validate() const;
};

/// One letter of a word: a generator x<k> or a lifted constant c<k>
/// (0-based indices in both cases).
struct Letter {
  enum class Kind { Generator, Constant };
  Kind kind = Kind::Generator;
  std::size_t index = 0;

  friend auto operator<=>(const Letter&, const Letter&) = default;
};

/// coefficient * prod(a[k] for k in controls) * word.
struct Term {
  Complex coefficient{1.0, 0.0};
  std::vector<std::size_t> controls;  // 0-based control coefficient indices, sorted
  std::vector<Letter> word;
};

/// Polynomial in noncommuting letters. Parsed from text over x1..xm
/// (generators), c1.. (lifted constants), a1.. (scalar control
/// coefficients) and the imaginary unit i; products are expanded in order.
struct NcPolynomial {
  std::vector<Term> terms;
  std::string source;

  static NcPolynomial parse(const std::string& text, std::size_t generators);
  static NcPolynomial zero() { return {}; }

  std::size_t degree() const;
  bool uses_controls() const;
  bool uses_constants() const;
  std::size_t max_control() const;  // count of a<k> needed
  std::size_t max_constant() const;
};

/// Lifted constants C_k, indexed like c<k+1>.
using ConstantLift = std::vector<Matrix>;

/// Ordinary (non-symmetrized) evaluation: products in word order.
Matrix evaluate_ordered(const NcPolynomial& p, const MatrixTuple& x, const Vector& a = {},
                        const ConstantLift& constants = {});

/// Weyl-ordered evaluation: each word is replaced by the average of its
/// products over all orderings of its letters.
Matrix weyl_eval(const NcPolynomial& p, const MatrixTuple& x, const Vector& a = {}, const ConstantLift& constants = {});

struct AlgebraPresentation {
  std::string label;
  std::size_t generators = 0;
  std::vector<NcPolynomial> relations;

  /// Relations may only use generators and complex numbers.
  static AlgebraPresentation make(std::string label, std::size_t generators, const std::vector<std::string>& relations);
  /// All commutators x_i x_j - x_j x_i.
  static AlgebraPresentation commutative(std::string label, std::size_t generators);
};

/// Max Frobenius norm of the relations evaluated with ordinary products.
double relation_residual(const AlgebraPresentation& pres, const MatrixTuple& x);
bool admissible_check(const AlgebraPresentation& pres, const MatrixTuple& x, double tol);

/// Named families of presentations.
class AlgebraClassRegistry {
 public:
  struct AlgebraClass {
    std::string label;
    std::vector<AlgebraPresentation> family;
  };

  void add(AlgebraClass c);
  const AlgebraClass& find(const std::string& label) const;
  bool contains(const std::string& label) const;
  /// The family member of `label` with `generators` generators.
  const AlgebraPresentation& member(const std::string& label, std::size_t generators) const;
  std::vector<std::string> labels() const;

 private:
  std::vector<AlgebraClass> classes_;
};

struct ProjectionSettings {
  double tolerance = 1e-9;
  int max_iterations = 50;
  /// Largest change of the stacked entries per Gauss-Newton iteration
  /// (infinity: unclipped).
  double step_clip = std::numeric_limits<double>::infinity();
};

struct ProjectionResult {
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

/// Gauss-Newton on the stacked relation residuals with every real and
/// imaginary entry of the tuple as unknowns (minimum-norm steps).
ProjectionResult project(const AlgebraPresentation& pres, MatrixTuple& x, const ProjectionSettings& settings);

/// a(t) for the control coefficients a1.. of the dynamics symbols.
using ControlSchedule = std::function<Vector(double)>;

struct RepDynSpec {
  std::vector<NcPolynomial> F;  // dX_k/dt = weyl(F[k])
  MatrixTuple initial;
  AlgebraPresentation presentation;
  ConstantLift constants;
  ProjectionSettings projection;

  /// ConfigError for inconsistent sizes, caps, or an initial tuple off the
  /// variety.
  void validate() const;
};

struct RepDynTrace {
  std::vector<double> t;
  std::vector<MatrixTuple> X;
  std::vector<double> residual;
  bool insolvable = false;
  double fail_time = 0.0;      // start of the step that failed
  double fail_residual = 0.0;  // residual after the failed projection
};

/// Fixed-step RK4 with a projection after every step. Stops at the first
/// failed projection and reports it on the trace instead of throwing.
RepDynTrace integrate_repdyn_until(const std::vector<NcPolynomial>& F, const AlgebraPresentation& pres,
                                   const ConstantLift& constants, const ProjectionSettings& settings,
                                   const ControlSchedule& a, const MatrixTuple& start, double t0, double t1, double dt);

/// As above, throwing InsolvableError(time, residual) on failure.
RepDynTrace integrate_repdyn(const RepDynSpec& spec, const ControlSchedule& a, double t0, double t1, double dt);

struct LabelInterval {
  double start = 0.0;
  double end = 0.0;
  bool closed_end = false;  // only the last interval
  std::string label;
};

/// Maximal [start, end) runs of equal labels; the last run is closed.
/// Equivalence is label equality. DataError for an empty label.
std::vector<LabelInterval> equivalence_partition(const std::vector<double>& t, const std::vector<std::string>& labels);

}  // namespace tactica::algebra
