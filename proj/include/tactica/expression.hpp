#pragma once

// Closed-form scalar expressions used for signals, couplings, functionals,
// comment rules and predicates.
//
// Grammar:
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?
//   primary := number | name ['[' index ']'] | func '(' expr (',' expr)* ')' | '(' expr ')'
//   func    := sin | cos | exp | tanh | abs | min | max
//
// Which names are legal is decided by the SymbolTable the expression is
// compiled against; the base game vocabulary is t, phi[i], u0[i], eps[i] and
// lambda[i].

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tactica::expr {

enum class Func { Sin, Cos, Exp, Tanh, Abs, Min, Max };

/// Parsed syntax tree. Kept public so symbolic passes (polynomial expansion)
/// can walk it.
struct Node {
  enum class Kind { Number, Variable, Neg, Add, Sub, Mul, Div, Pow, Call };
  Kind kind = Kind::Number;
  double number = 0.0;
  std::size_t pos = 0;
  std::string name;
  std::optional<std::size_t> index;
  Func func = Func::Sin;
  std::vector<std::unique_ptr<Node>> children;
};

/// Parses `text` into a syntax tree. Throws ParseError naming the offending
/// token on malformed input.
std::unique_ptr<Node> parse(std::string_view text);

/// Names an expression may reference. Each symbol occupies one slot of an
/// Env; scalar symbols are used without an index, vector symbols with one.
class SymbolTable {
 public:
  /// `extent` bounds the index for vector symbols; 0 leaves it unchecked.
  std::size_t add_vector(std::string name, std::size_t extent = 0);
  std::size_t add_scalar(std::string name);

  std::optional<std::size_t> find(std::string_view name) const;
  bool is_scalar(std::size_t slot) const { return entries_[slot].scalar; }
  std::size_t extent(std::size_t slot) const { return entries_[slot].extent; }
  const std::string& name(std::size_t slot) const { return entries_[slot].name; }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::string name;
    bool scalar;
    std::size_t extent;
  };
  std::vector<Entry> entries_;
};

/// Variable bindings for evaluation, one span per SymbolTable slot.
class Env {
 public:
  explicit Env(std::size_t slots) : slots_(slots) {}
  Env& bind(std::size_t slot, std::span<const double> values) {
    slots_[slot] = values;
    return *this;
  }
  template <typename Derived>
  Env& bind(std::size_t slot, const Eigen::PlainObjectBase<Derived>& values) {
    slots_[slot] = std::span<const double>(values.data(), static_cast<std::size_t>(values.size()));
    return *this;
  }
  // Spans must not outlive their storage.
  template <typename Derived>
  Env& bind(std::size_t slot, const Eigen::PlainObjectBase<Derived>&& values) = delete;
  std::span<const double> operator[](std::size_t slot) const { return slots_[slot]; }
  std::size_t size() const { return slots_.size(); }

 private:
  std::vector<std::span<const double>> slots_;
};

/// A compiled expression: a flat stack program over Env slots.
class Expression {
 public:
  Expression() = default;

  /// Parses and resolves every name against `symbols`. Unknown names, a
  /// missing or superfluous index, and indices beyond a declared extent all
  /// throw ParseError.
  static Expression compile(std::string_view text, const SymbolTable& symbols);
  static Expression constant(double value);

  double eval(const Env& env) const;

  const std::string& source() const { return source_; }
  /// True when the expression reads slot `slot` at all.
  bool reads(std::size_t slot) const;
  /// Largest index read from `slot`, if any.
  std::optional<std::size_t> max_index(std::size_t slot) const;
  bool empty() const { return program_.empty(); }

 private:
  enum class Op { Const, Load, Neg, Add, Sub, Mul, Div, Pow, Call1, Call2 };
  struct Instr {
    Op op;
    double value = 0.0;
    std::size_t slot = 0;
    std::size_t index = 0;
    Func func = Func::Sin;
  };

  void emit(const Node& node, const SymbolTable& symbols);

  std::string source_;
  std::vector<Instr> program_;
  std::size_t max_depth_ = 0;
};

/// Component-wise vector of expressions sharing one symbol table.
class VectorExpression {
 public:
  VectorExpression() = default;
  static VectorExpression compile(const std::vector<std::string>& texts, const SymbolTable& symbols);
  Eigen::VectorXd eval(const Env& env) const;
  std::size_t size() const { return parts_.size(); }
  const Expression& operator[](std::size_t i) const { return parts_[i]; }
  bool reads(std::size_t slot) const;

 private:
  std::vector<Expression> parts_;
};

/// Comparison used in cell predicates and trigger conditions.
enum class Relation { Less, LessEqual, Greater, GreaterEqual, Equal };

/// `lhs rel rhs`, parsed from text such as "eps[0] >= 0".
class Inequality {
 public:
  static Inequality compile(std::string_view text, const SymbolTable& symbols);
  bool holds(const Env& env) const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  Expression lhs_;
  Expression rhs_;
  Relation relation_ = Relation::Equal;
};

/// Conjunction of inequalities; an empty conjunction always holds.
class Predicate {
 public:
  static Predicate compile(const std::vector<std::string>& clauses, const SymbolTable& symbols);
  bool holds(const Env& env) const;

 private:
  std::vector<Inequality> clauses_;
};

}  // namespace tactica::expr
