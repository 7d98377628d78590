#include "tactica/algebra.hpp"

#include "tactica/errors.hpp"
#include "tactica/expression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tactica::algebra {

namespace {

using expr::Node;

struct ParsedName {
  char prefix = 0;
  std::size_t number = 0;  // 1-based
};

std::optional<ParsedName> split_name(const std::string& name) {
  if (name.size() < 2) return std::nullopt;
  const char p = name.front();
  if (p != 'x' && p != 'a' && p != 'c') return std::nullopt;
  std::size_t value = 0;
  for (std::size_t i = 1; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    value = value * 10 + static_cast<std::size_t>(name[i] - '0');
    if (value > 1000) return std::nullopt;
  }
  if (value == 0) return std::nullopt;
  return ParsedName{p, value};
}

using TermList = std::vector<Term>;

TermList multiply(const TermList& a, const TermList& b) {
  TermList out;
  out.reserve(a.size() * b.size());
  for (const auto& x : a) {
    for (const auto& y : b) {
      Term t;
      t.coefficient = x.coefficient * y.coefficient;
      t.controls = x.controls;
      t.controls.insert(t.controls.end(), y.controls.begin(), y.controls.end());
      std::sort(t.controls.begin(), t.controls.end());
      t.word = x.word;
      t.word.insert(t.word.end(), y.word.begin(), y.word.end());
      out.push_back(std::move(t));
    }
  }
  return out;
}

TermList scaled(TermList a, Complex s) {
  for (auto& t : a) t.coefficient *= s;
  return a;
}

// A pure number (no letters, no controls), if the list is one.
std::optional<Complex> as_number(const TermList& a) {
  Complex sum{0.0, 0.0};
  for (const auto& t : a) {
    if (!t.controls.empty() || !t.word.empty()) return std::nullopt;
    sum += t.coefficient;
  }
  return sum;
}

TermList build(const Node& n, std::size_t generators, const std::string& text) {
  auto fail = [&](const std::string& why) -> ConfigError {
    return ConfigError("polynomial '" + text + "': " + why);
  };
  switch (n.kind) {
    case Node::Kind::Number:
      return {Term{Complex(n.number, 0.0), {}, {}}};
    case Node::Kind::Variable: {
      if (n.index) throw fail("indexed name '" + n.name + "' is not a letter");
      if (n.name == "i") return {Term{Complex(0.0, 1.0), {}, {}}};
      const auto p = split_name(n.name);
      if (!p) throw fail("unknown name '" + n.name + "'");
      Term t;
      if (p->prefix == 'x') {
        if (p->number > generators) {
          throw fail("generator '" + n.name + "' outside x1..x" + std::to_string(generators));
        }
        t.word.push_back({Letter::Kind::Generator, p->number - 1});
      } else if (p->prefix == 'c') {
        t.word.push_back({Letter::Kind::Constant, p->number - 1});
      } else {
        t.controls.push_back(p->number - 1);
      }
      return {t};
    }
    case Node::Kind::Neg:
      return scaled(build(*n.children[0], generators, text), -1.0);
    case Node::Kind::Add:
    case Node::Kind::Sub: {
      auto a = build(*n.children[0], generators, text);
      auto b = build(*n.children[1], generators, text);
      if (n.kind == Node::Kind::Sub) b = scaled(std::move(b), -1.0);
      a.insert(a.end(), b.begin(), b.end());
      return a;
    }
    case Node::Kind::Mul:
      return multiply(build(*n.children[0], generators, text), build(*n.children[1], generators, text));
    case Node::Kind::Div: {
      const auto d = as_number(build(*n.children[1], generators, text));
      if (!d) throw fail("division only by a number");
      if (*d == Complex(0.0, 0.0)) throw fail("division by zero");
      return scaled(build(*n.children[0], generators, text), 1.0 / *d);
    }
    case Node::Kind::Pow: {
      const auto e = as_number(build(*n.children[1], generators, text));
      if (!e || e->imag() != 0.0 || e->real() < 0.0 || e->real() != std::floor(e->real()) || e->real() > 3.0) {
        throw fail("exponent must be an integer in 0..3");
      }
      const auto base = build(*n.children[0], generators, text);
      TermList out{Term{}};
      for (int k = 0; k < static_cast<int>(e->real()); ++k) out = multiply(out, base);
      return out;
    }
    case Node::Kind::Call:
      throw fail("functions are not polynomial");
  }
  throw fail("unsupported node");
}

// Merges equal (controls, word) pairs and drops zero coefficients.
TermList combine(TermList in) {
  TermList out;
  for (auto& t : in) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const Term& o) { return o.controls == t.controls && o.word == t.word; });
    if (it == out.end()) {
      out.push_back(std::move(t));
    } else {
      it->coefficient += t.coefficient;
    }
  }
  std::erase_if(out, [](const Term& t) { return t.coefficient == Complex(0.0, 0.0); });
  return out;
}

const Matrix& letter_matrix(const Letter& l, const MatrixTuple& x, const ConstantLift& constants) {
  if (l.kind == Letter::Kind::Generator) {
    if (l.index >= x.size()) throw ConfigError("generator x" + std::to_string(l.index + 1) + " missing from tuple");
    return x.X[l.index];
  }
  if (l.index >= constants.size()) throw ConfigError("constant c" + std::to_string(l.index + 1) + " is not lifted");
  return constants[l.index];
}

Complex scalar_factor(const Term& t, const Vector& a) {
  Complex s = t.coefficient;
  for (auto k : t.controls) {
    if (static_cast<Eigen::Index>(k) >= a.size()) {
      throw ConfigError("control coefficient a" + std::to_string(k + 1) + " has no value");
    }
    s *= a[static_cast<Eigen::Index>(k)];
  }
  return s;
}

Matrix word_product(const std::vector<Letter>& word, const MatrixTuple& x, const ConstantLift& constants,
                    Eigen::Index n) {
  Matrix p = Matrix::Identity(n, n);
  for (const auto& l : word) p = p * letter_matrix(l, x, constants);
  return p;
}

Eigen::Index ambient(const MatrixTuple& x, const ConstantLift& constants) {
  if (x.size() > 0) return x.dim();
  if (!constants.empty()) return constants.front().rows();
  throw ConfigError("cannot evaluate a polynomial without matrices");
}

}  // namespace

void MatrixTuple::validate() const {
  if (X.empty()) throw ConfigError("matrix tuple is empty");
  const auto n = X.front().rows();
  for (std::size_t k = 0; k < X.size(); ++k) {
    if (X[k].rows() != n || X[k].cols() != n) {
      throw ConfigError("matrix X" + std::to_string(k + 1) + " is not " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (!X[k].allFinite()) throw ConfigError("matrix X" + std::to_string(k + 1) + " has non-finite entries");
  }
}

NcPolynomial NcPolynomial::parse(const std::string& text, std::size_t generators) {
  const auto root = expr::parse(text);
  NcPolynomial p;
  p.source = text;
  p.terms = combine(build(*root, generators, text));
  if (p.degree() > kMaxDegree) {
    throw ConfigError("polynomial '" + text + "' has degree " + std::to_string(p.degree()) + " above " +
                      std::to_string(kMaxDegree));
  }
  return p;
}

std::size_t NcPolynomial::degree() const {
  std::size_t d = 0;
  for (const auto& t : terms) d = std::max(d, t.word.size());
  return d;
}

bool NcPolynomial::uses_controls() const {
  return std::any_of(terms.begin(), terms.end(), [](const Term& t) { return !t.controls.empty(); });
}

bool NcPolynomial::uses_constants() const { return max_constant() > 0; }

std::size_t NcPolynomial::max_control() const {
  std::size_t m = 0;
  for (const auto& t : terms)
    for (auto k : t.controls) m = std::max(m, k + 1);
  return m;
}

std::size_t NcPolynomial::max_constant() const {
  std::size_t m = 0;
  for (const auto& t : terms)
    for (const auto& l : t.word)
      if (l.kind == Letter::Kind::Constant) m = std::max(m, l.index + 1);
  return m;
}

Matrix evaluate_ordered(const NcPolynomial& p, const MatrixTuple& x, const Vector& a, const ConstantLift& constants) {
  const auto n = ambient(x, constants);
  Matrix out = Matrix::Zero(n, n);
  for (const auto& t : p.terms) out += scalar_factor(t, a) * word_product(t.word, x, constants, n);
  return out;
}

Matrix weyl_eval(const NcPolynomial& p, const MatrixTuple& x, const Vector& a, const ConstantLift& constants) {
  const auto n = ambient(x, constants);
  Matrix out = Matrix::Zero(n, n);
  for (const auto& t : p.terms) {
    auto word = t.word;
    std::sort(word.begin(), word.end());
    // Distinct orderings each occur equally often among all d! orderings.
    Matrix sum = Matrix::Zero(n, n);
    int count = 0;
    do {
      sum += word_product(word, x, constants, n);
      ++count;
    } while (std::next_permutation(word.begin(), word.end()));
    out += scalar_factor(t, a) * (sum / static_cast<double>(count));
  }
  return out;
}

AlgebraPresentation AlgebraPresentation::make(std::string label, std::size_t generators,
                                              const std::vector<std::string>& relations) {
  if (generators == 0 || generators > kMaxGenerators) {
    throw ConfigError("presentation '" + label + "' has " + std::to_string(generators) + " generators (1.." +
                      std::to_string(kMaxGenerators) + " allowed)");
  }
  AlgebraPresentation p;
  p.label = std::move(label);
  p.generators = generators;
  for (const auto& text : relations) {
    auto r = NcPolynomial::parse(text, generators);
    if (r.uses_controls() || r.uses_constants()) {
      throw ConfigError("relation '" + text + "' of '" + p.label + "' may only use generators and numbers");
    }
    p.relations.push_back(std::move(r));
  }
  return p;
}

AlgebraPresentation AlgebraPresentation::commutative(std::string label, std::size_t generators) {
  std::vector<std::string> rel;
  for (std::size_t i = 1; i <= generators; ++i) {
    for (std::size_t j = i + 1; j <= generators; ++j) {
      const auto xi = "x" + std::to_string(i);
      const auto xj = "x" + std::to_string(j);
      rel.push_back(xi + "*" + xj + " - " + xj + "*" + xi);
    }
  }
  return make(std::move(label), generators, rel);
}

double relation_residual(const AlgebraPresentation& pres, const MatrixTuple& x) {
  if (x.size() != pres.generators) {
    throw ConfigError("tuple has " + std::to_string(x.size()) + " matrices, presentation '" + pres.label +
                      "' has " + std::to_string(pres.generators) + " generators");
  }
  double r = 0.0;
  for (const auto& rel : pres.relations) r = std::max(r, evaluate_ordered(rel, x).norm());
  return r;
}

bool admissible_check(const AlgebraPresentation& pres, const MatrixTuple& x, double tol) {
  return relation_residual(pres, x) <= tol;
}

void AlgebraClassRegistry::add(AlgebraClass c) {
  if (c.family.empty()) throw ConfigError("algebra class '" + c.label + "' has an empty family");
  if (contains(c.label)) throw ConfigError("duplicate algebra class '" + c.label + "'");
  for (std::size_t i = 0; i < c.family.size(); ++i) {
    for (std::size_t j = i + 1; j < c.family.size(); ++j) {
      if (c.family[i].generators == c.family[j].generators) {
        throw ConfigError("algebra class '" + c.label + "' has two members with " +
                          std::to_string(c.family[i].generators) + " generators");
      }
    }
  }
  classes_.push_back(std::move(c));
}

bool AlgebraClassRegistry::contains(const std::string& label) const {
  return std::any_of(classes_.begin(), classes_.end(), [&](const AlgebraClass& c) { return c.label == label; });
}

const AlgebraClassRegistry::AlgebraClass& AlgebraClassRegistry::find(const std::string& label) const {
  for (const auto& c : classes_)
    if (c.label == label) return c;
  throw ConfigError("unknown algebra class '" + label + "'");
}

const AlgebraPresentation& AlgebraClassRegistry::member(const std::string& label, std::size_t generators) const {
  for (const auto& p : find(label).family)
    if (p.generators == generators) return p;
  throw ConfigError("algebra class '" + label + "' has no member with " + std::to_string(generators) +
                    " generators");
}

std::vector<std::string> AlgebraClassRegistry::labels() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) out.push_back(c.label);
  return out;
}

namespace {

// Stacked real and imaginary parts of every relation at x.
Eigen::VectorXd stacked_residual(const AlgebraPresentation& pres, const MatrixTuple& x) {
  const auto n = x.dim();
  const auto block = 2 * n * n;
  Eigen::VectorXd r(static_cast<Eigen::Index>(pres.relations.size()) * block);
  for (std::size_t k = 0; k < pres.relations.size(); ++k) {
    const Matrix v = evaluate_ordered(pres.relations[k], x);
    const auto base = static_cast<Eigen::Index>(k) * block;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        r[base + 2 * (i * n + j)] = v(i, j).real();
        r[base + 2 * (i * n + j) + 1] = v(i, j).imag();
      }
    }
  }
  return r;
}

// Column layout: generator g, entry (r, s), part p (0 real, 1 imaginary).
Eigen::MatrixXd relation_jacobian(const AlgebraPresentation& pres, const MatrixTuple& x) {
  const auto n = x.dim();
  const auto m = static_cast<Eigen::Index>(x.size());
  const auto block = 2 * n * n;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pres.relations.size()) * block, m * block);
  for (std::size_t k = 0; k < pres.relations.size(); ++k) {
    const auto row0 = static_cast<Eigen::Index>(k) * block;
    for (const auto& term : pres.relations[k].terms) {
      const auto& w = term.word;
      for (std::size_t pos = 0; pos < w.size(); ++pos) {
        const auto g = static_cast<Eigen::Index>(w[pos].index);
        Matrix P = Matrix::Identity(n, n);
        for (std::size_t q = 0; q < pos; ++q) P = P * x.X[w[q].index];
        Matrix S = Matrix::Identity(n, n);
        for (std::size_t q = pos + 1; q < w.size(); ++q) S = S * x.X[w[q].index];
        for (Eigen::Index r = 0; r < n; ++r) {
          for (Eigen::Index s = 0; s < n; ++s) {
            // d(P E_rs S)(i, j) = P(i, r) S(s, j)
            const Matrix D = term.coefficient * (P.col(r) * S.row(s));
            const auto col = g * block + 2 * (r * n + s);
            for (Eigen::Index i = 0; i < n; ++i) {
              for (Eigen::Index j = 0; j < n; ++j) {
                const auto row = row0 + 2 * (i * n + j);
                const Complex d = D(i, j);
                J(row, col) += d.real();
                J(row + 1, col) += d.imag();
                // i * d for the imaginary unknown
                J(row, col + 1) -= d.imag();
                J(row + 1, col + 1) += d.real();
              }
            }
          }
        }
      }
    }
  }
  return J;
}

void apply_step(MatrixTuple& x, const Eigen::VectorXd& step) {
  const auto n = x.dim();
  const auto block = 2 * n * n;
  for (std::size_t g = 0; g < x.size(); ++g) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index s = 0; s < n; ++s) {
        const auto col = static_cast<Eigen::Index>(g) * block + 2 * (r * n + s);
        x.X[g](r, s) += Complex(step[col], step[col + 1]);
      }
    }
  }
}

}  // namespace

ProjectionResult project(const AlgebraPresentation& pres, MatrixTuple& x, const ProjectionSettings& settings) {
  ProjectionResult out;
  out.residual = relation_residual(pres, x);
  while (out.residual > settings.tolerance) {
    if (out.iterations >= settings.max_iterations) return out;
    const Eigen::MatrixXd J = relation_jacobian(pres, x);
    const Eigen::VectorXd r = stacked_residual(pres, x);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(J);
    cod.setThreshold(1e-12);
    Eigen::VectorXd step = cod.solve(-r);
    const double largest = step.cwiseAbs().maxCoeff();
    if (largest > settings.step_clip) step *= settings.step_clip / largest;
    apply_step(x, step);
    ++out.iterations;
    if (!std::all_of(x.X.begin(), x.X.end(), [](const Matrix& m) { return m.allFinite(); })) return out;
    out.residual = relation_residual(pres, x);
  }
  out.converged = true;
  return out;
}

void RepDynSpec::validate() const {
  initial.validate();
  if (initial.dim() > kMaxDimension) {
    throw ConfigError("matrix dimension " + std::to_string(initial.dim()) + " above " + std::to_string(kMaxDimension));
  }
  if (presentation.generators != initial.size() || F.size() != initial.size()) {
    throw ConfigError("representative dynamics needs one symbol and one matrix per generator of '" +
                      presentation.label + "'");
  }
  if (initial.size() > kMaxGenerators) throw ConfigError("too many generators");
  for (const auto& f : F) {
    if (f.degree() > kMaxDegree) throw ConfigError("symbol '" + f.source + "' exceeds the degree cap");
    if (f.max_constant() > constants.size()) {
      throw ConfigError("symbol '" + f.source + "' uses a constant that is not lifted");
    }
  }
  for (std::size_t k = 0; k < constants.size(); ++k) {
    if (constants[k].rows() != initial.dim() || constants[k].cols() != initial.dim()) {
      throw ConfigError("lifted constant c" + std::to_string(k + 1) + " does not match the ambient dimension");
    }
  }
  const double r0 = relation_residual(presentation, initial);
  if (r0 > projection.tolerance) {
    std::ostringstream os;
    os << "initial tuple is not a representation of '" << presentation.label << "' (residual " << r0 << ")";
    throw ConfigError(os.str());
  }
}

namespace {

std::vector<Matrix> field(const std::vector<NcPolynomial>& F, const MatrixTuple& x, const Vector& a,
                          const ConstantLift& constants) {
  std::vector<Matrix> out;
  out.reserve(F.size());
  for (const auto& f : F) out.push_back(weyl_eval(f, x, a, constants));
  return out;
}

MatrixTuple shifted(const MatrixTuple& x, const std::vector<Matrix>& k, double h) {
  MatrixTuple y = x;
  for (std::size_t i = 0; i < y.X.size(); ++i) y.X[i] += h * k[i];
  return y;
}

std::size_t step_count(double t0, double t1, double dt) {
  if (!(dt > 0.0) || !(t1 >= t0)) throw ConfigError("repdyn interval needs t1 >= t0 and dt > 0");
  const double steps = (t1 - t0) / dt;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps)) {
    throw ConfigError("repdyn interval is not a whole number of steps");
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

RepDynTrace integrate_repdyn_until(const std::vector<NcPolynomial>& F, const AlgebraPresentation& pres,
                                   const ConstantLift& constants, const ProjectionSettings& settings,
                                   const ControlSchedule& a, const MatrixTuple& start, double t0, double t1,
                                   double dt) {
  const auto steps = step_count(t0, t1, dt);
  RepDynTrace trace;
  MatrixTuple x = start;
  x.t = t0;
  trace.t.push_back(t0);
  trace.X.push_back(x);
  trace.residual.push_back(relation_residual(pres, x));
  auto control = [&](double t) { return a ? a(t) : Vector(); };
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    const double tn = t0 + static_cast<double>(k + 1) * dt;
    const auto k1 = field(F, x, control(t), constants);
    const auto k2 = field(F, shifted(x, k1, dt / 2), control(t + dt / 2), constants);
    const auto k3 = field(F, shifted(x, k2, dt / 2), control(t + dt / 2), constants);
    const auto k4 = field(F, shifted(x, k3, dt), control(tn), constants);
    MatrixTuple next = x;
    for (std::size_t i = 0; i < next.X.size(); ++i) next.X[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    next.t = tn;
    if (!std::all_of(next.X.begin(), next.X.end(), [](const Matrix& m) { return m.allFinite(); })) {
      throw DivergenceError("representative dynamics diverged", t);
    }
    const auto proj = project(pres, next, settings);
    if (!proj.converged) {
      trace.insolvable = true;
      trace.fail_time = t;
      trace.fail_residual = proj.residual;
      return trace;
    }
    x = std::move(next);
    trace.t.push_back(tn);
    trace.X.push_back(x);
    trace.residual.push_back(proj.residual);
  }
  return trace;
}

RepDynTrace integrate_repdyn(const RepDynSpec& spec, const ControlSchedule& a, double t0, double t1, double dt) {
  spec.validate();
  auto trace =
      integrate_repdyn_until(spec.F, spec.presentation, spec.constants, spec.projection, a, spec.initial, t0, t1, dt);
  if (trace.insolvable) {
    std::ostringstream os;
    os << "insolvable in class '" << spec.presentation.label << "' at t=" << trace.fail_time << " (residual "
       << trace.fail_residual << ")";
    throw InsolvableError(os.str(), trace.fail_time, trace.fail_residual);
  }
  return trace;
}

std::vector<LabelInterval> equivalence_partition(const std::vector<double>& t, const std::vector<std::string>& labels) {
  if (t.size() != labels.size()) throw DataError("label trace and time grid differ in length");
  if (t.empty()) throw DataError("empty label trace");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw DataError("sample " + std::to_string(i) + " carries no class label");
  }
  std::vector<LabelInterval> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= t.size(); ++i) {
    if (i < t.size() && labels[i] == labels[begin]) continue;
    LabelInterval iv;
    iv.start = t[begin];
    iv.end = i < t.size() ? t[i] : t.back();
    iv.closed_end = i == t.size();
    iv.label = labels[begin];
    out.push_back(iv);
    begin = i;
  }
  return out;
}

}  // namespace tactica::algebra
