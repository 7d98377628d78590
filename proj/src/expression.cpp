#include "tactica/expression.hpp"

#include "tactica/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <unordered_map>

namespace tactica::expr {
namespace {

struct Token {
  enum class Kind { Number, Name, Op, End };
  Kind kind;
  std::string text;
  double number = 0.0;
  std::size_t pos = 0;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t j = i;
      while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
          j = k;
          while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        }
      }
      Token t{Token::Kind::Number, std::string(s.substr(i, j - i)), 0.0, i};
      const auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + j, t.number);
      if (ec != std::errc() || ptr != s.data() + j) {
        throw ParseError("malformed number '" + t.text + "'", t.text, i);
      }
      out.push_back(std::move(t));
      i = j;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      out.push_back({Token::Kind::Name, std::string(s.substr(i, j - i)), 0.0, i});
      i = j;
      continue;
    }
    if (std::string_view("+-*/^()[],").find(c) != std::string_view::npos) {
      out.push_back({Token::Kind::Op, std::string(1, c), 0.0, i});
      ++i;
      continue;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", std::string(1, c), i);
  }
  out.push_back({Token::Kind::End, "<end>", 0.0, s.size()});
  return out;
}

const std::unordered_map<std::string, std::pair<Func, int>>& functions() {
  static const std::unordered_map<std::string, std::pair<Func, int>> table{
      {"sin", {Func::Sin, 1}},   {"cos", {Func::Cos, 1}}, {"exp", {Func::Exp, 1}},
      {"tanh", {Func::Tanh, 1}}, {"abs", {Func::Abs, 1}}, {"min", {Func::Min, 2}},
      {"max", {Func::Max, 2}},
  };
  return table;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : tokens_(tokenize(text)) {}

  std::unique_ptr<Node> run() {
    auto node = expression();
    if (peek().kind != Token::Kind::End) fail("unexpected token");
    return node;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }
  bool accept(std::string_view op) {
    if (peek().kind == Token::Kind::Op && peek().text == op) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(std::string_view op) {
    if (!accept(op)) fail("expected '" + std::string(op) + "'");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    const Token& t = peek();
    throw ParseError(msg + " at '" + t.text + "' (position " + std::to_string(t.pos) + ")", t.text, t.pos);
  }

  static std::unique_ptr<Node> make(Node::Kind kind) {
    auto n = std::make_unique<Node>();
    n->kind = kind;
    return n;
  }
  static std::unique_ptr<Node> binary(Node::Kind kind, std::unique_ptr<Node> a, std::unique_ptr<Node> b) {
    auto n = make(kind);
    n->children.push_back(std::move(a));
    n->children.push_back(std::move(b));
    return n;
  }

  std::unique_ptr<Node> expression() {
    auto lhs = term();
    for (;;) {
      if (accept("+")) {
        lhs = binary(Node::Kind::Add, std::move(lhs), term());
      } else if (accept("-")) {
        lhs = binary(Node::Kind::Sub, std::move(lhs), term());
      } else {
        return lhs;
      }
    }
  }

  std::unique_ptr<Node> term() {
    auto lhs = unary();
    for (;;) {
      if (accept("*")) {
        lhs = binary(Node::Kind::Mul, std::move(lhs), unary());
      } else if (accept("/")) {
        lhs = binary(Node::Kind::Div, std::move(lhs), unary());
      } else {
        return lhs;
      }
    }
  }

  std::unique_ptr<Node> unary() {
    if (accept("-")) {
      auto n = make(Node::Kind::Neg);
      n->children.push_back(unary());
      return n;
    }
    if (accept("+")) return unary();
    return power();
  }

  std::unique_ptr<Node> power() {
    auto base = primary();
    if (accept("^")) return binary(Node::Kind::Pow, std::move(base), unary());
    return base;
  }

  std::unique_ptr<Node> primary() {
    const Token& t = peek();
    if (t.kind == Token::Kind::Number) {
      auto n = make(Node::Kind::Number);
      n->number = next().number;
      return n;
    }
    if (t.kind == Token::Kind::Name) {
      const auto fit = functions().find(t.text);
      if (fit != functions().end()) {
        next();
        expect("(");
        auto n = make(Node::Kind::Call);
        n->func = fit->second.first;
        n->name = t.text;
        n->children.push_back(expression());
        while (accept(",")) n->children.push_back(expression());
        if (static_cast<int>(n->children.size()) != fit->second.second) {
          fail("wrong argument count for '" + n->name + "'");
        }
        expect(")");
        return n;
      }
      auto n = make(Node::Kind::Variable);
      n->pos = t.pos;
      n->name = next().text;
      if (accept("[")) {
        const Token& idx = peek();
        if (idx.kind != Token::Kind::Number || idx.number < 0 || std::floor(idx.number) != idx.number) {
          fail("index must be a non-negative integer");
        }
        n->index = static_cast<std::size_t>(next().number);
        expect("]");
      }
      return n;
    }
    if (accept("(")) {
      auto n = expression();
      expect(")");
      return n;
    }
    fail("unexpected token");
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

double apply(Func f, double a) {
  switch (f) {
    case Func::Sin: return std::sin(a);
    case Func::Cos: return std::cos(a);
    case Func::Exp: return std::exp(a);
    case Func::Tanh: return std::tanh(a);
    case Func::Abs: return std::abs(a);
    default: break;
  }
  return a;
}

}  // namespace

std::unique_ptr<Node> parse(std::string_view text) { return Parser(text).run(); }

std::size_t SymbolTable::add_vector(std::string name, std::size_t extent) {
  entries_.push_back({std::move(name), false, extent});
  return entries_.size() - 1;
}

std::size_t SymbolTable::add_scalar(std::string name) {
  entries_.push_back({std::move(name), true, 1});
  return entries_.size() - 1;
}

std::optional<std::size_t> SymbolTable::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

Expression Expression::compile(std::string_view text, const SymbolTable& symbols) {
  Expression e;
  e.source_ = std::string(text);
  const auto tree = parse(text);
  e.emit(*tree, symbols);
  // Stack depth of a postfix program.
  std::size_t depth = 0;
  for (const auto& ins : e.program_) {
    switch (ins.op) {
      case Op::Const:
      case Op::Load: ++depth; break;
      case Op::Neg:
      case Op::Call1: break;
      default: --depth; break;
    }
    e.max_depth_ = std::max(e.max_depth_, depth);
  }
  return e;
}

Expression Expression::constant(double value) {
  Expression e;
  e.source_ = std::to_string(value);
  e.program_.push_back({Op::Const, value});
  e.max_depth_ = 1;
  return e;
}

void Expression::emit(const Node& node, const SymbolTable& symbols) {
  switch (node.kind) {
    case Node::Kind::Number:
      program_.push_back({Op::Const, node.number});
      return;
    case Node::Kind::Variable: {
      const auto slot = symbols.find(node.name);
      if (!slot) {
        throw ParseError("unknown identifier '" + node.name + "' at position " + std::to_string(node.pos) + " in '" + source_ + "'",
                         node.name, node.pos);
      }
      if (symbols.is_scalar(*slot) && node.index) {
        throw ParseError("'" + node.name + "' is a scalar and takes no index", node.name, node.pos);
      }
      if (!symbols.is_scalar(*slot) && !node.index) {
        throw ParseError("'" + node.name + "' requires an index", node.name, node.pos);
      }
      const std::size_t idx = node.index.value_or(0);
      const std::size_t extent = symbols.extent(*slot);
      if (extent != 0 && idx >= extent) {
        throw ParseError("index " + std::to_string(idx) + " out of range for '" + node.name + "' (size " +
                             std::to_string(extent) + ")",
                         node.name + "[" + std::to_string(idx) + "]", node.pos);
      }
      program_.push_back({Op::Load, 0.0, *slot, idx});
      return;
    }
    case Node::Kind::Neg:
      emit(*node.children[0], symbols);
      program_.push_back({Op::Neg});
      return;
    case Node::Kind::Call:
      for (const auto& c : node.children) emit(*c, symbols);
      program_.push_back({node.children.size() == 1 ? Op::Call1 : Op::Call2, 0.0, 0, 0, node.func});
      return;
    default:
      break;
  }
  emit(*node.children[0], symbols);
  emit(*node.children[1], symbols);
  Op op = Op::Add;
  switch (node.kind) {
    case Node::Kind::Add: op = Op::Add; break;
    case Node::Kind::Sub: op = Op::Sub; break;
    case Node::Kind::Mul: op = Op::Mul; break;
    case Node::Kind::Div: op = Op::Div; break;
    case Node::Kind::Pow: op = Op::Pow; break;
    default: break;
  }
  program_.push_back({op});
}

double Expression::eval(const Env& env) const {
  std::array<double, 64> fixed{};
  std::vector<double> heap;
  double* stack = fixed.data();
  if (max_depth_ > fixed.size()) {
    heap.resize(max_depth_);
    stack = heap.data();
  }
  std::size_t sp = 0;
  for (const auto& ins : program_) {
    switch (ins.op) {
      case Op::Const: stack[sp++] = ins.value; break;
      case Op::Load: {
        const auto values = env[ins.slot];
        if (ins.index >= values.size()) {
          throw DataError("expression '" + source_ + "' reads index " + std::to_string(ins.index) +
                          " beyond a bound vector of size " + std::to_string(values.size()));
        }
        stack[sp++] = values[ins.index];
        break;
      }
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add: --sp; stack[sp - 1] += stack[sp]; break;
      case Op::Sub: --sp; stack[sp - 1] -= stack[sp]; break;
      case Op::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
      case Op::Div: --sp; stack[sp - 1] /= stack[sp]; break;
      case Op::Pow: --sp; stack[sp - 1] = std::pow(stack[sp - 1], stack[sp]); break;
      case Op::Call1: stack[sp - 1] = apply(ins.func, stack[sp - 1]); break;
      case Op::Call2:
        --sp;
        stack[sp - 1] = ins.func == Func::Min ? std::min(stack[sp - 1], stack[sp]) : std::max(stack[sp - 1], stack[sp]);
        break;
    }
  }
  return sp == 1 ? stack[0] : 0.0;
}

bool Expression::reads(std::size_t slot) const {
  return std::any_of(program_.begin(), program_.end(),
                     [slot](const Instr& i) { return i.op == Op::Load && i.slot == slot; });
}

std::optional<std::size_t> Expression::max_index(std::size_t slot) const {
  std::optional<std::size_t> best;
  for (const auto& i : program_) {
    if (i.op == Op::Load && i.slot == slot) best = std::max(best.value_or(0), i.index);
  }
  return best;
}

VectorExpression VectorExpression::compile(const std::vector<std::string>& texts, const SymbolTable& symbols) {
  VectorExpression v;
  v.parts_.reserve(texts.size());
  for (const auto& t : texts) v.parts_.push_back(Expression::compile(t, symbols));
  return v;
}

Eigen::VectorXd VectorExpression::eval(const Env& env) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parts_.size()));
  for (std::size_t i = 0; i < parts_.size(); ++i) out[static_cast<Eigen::Index>(i)] = parts_[i].eval(env);
  return out;
}

bool VectorExpression::reads(std::size_t slot) const {
  return std::any_of(parts_.begin(), parts_.end(), [slot](const Expression& e) { return e.reads(slot); });
}

Inequality Inequality::compile(std::string_view text, const SymbolTable& symbols) {
  struct Candidate {
    std::string_view op;
    Relation rel;
  };
  static constexpr std::array<Candidate, 5> ops{{{"<=", Relation::LessEqual},
                                                 {">=", Relation::GreaterEqual},
                                                 {"==", Relation::Equal},
                                                 {"<", Relation::Less},
                                                 {">", Relation::Greater}}};
  for (const auto& c : ops) {
    const auto at = text.find(c.op);
    if (at == std::string_view::npos) continue;
    Inequality q;
    q.source_ = std::string(text);
    q.relation_ = c.rel;
    q.lhs_ = Expression::compile(text.substr(0, at), symbols);
    q.rhs_ = Expression::compile(text.substr(at + c.op.size()), symbols);
    return q;
  }
  throw ParseError("comparison operator missing in '" + std::string(text) + "'", std::string(text), 0);
}

bool Inequality::holds(const Env& env) const {
  const double a = lhs_.eval(env);
  const double b = rhs_.eval(env);
  switch (relation_) {
    case Relation::Less: return a < b;
    case Relation::LessEqual: return a <= b;
    case Relation::Greater: return a > b;
    case Relation::GreaterEqual: return a >= b;
    case Relation::Equal: return a == b;
  }
  return false;
}

Predicate Predicate::compile(const std::vector<std::string>& clauses, const SymbolTable& symbols) {
  Predicate p;
  for (const auto& c : clauses) p.clauses_.push_back(Inequality::compile(c, symbols));
  return p;
}

bool Predicate::holds(const Env& env) const {
  return std::all_of(clauses_.begin(), clauses_.end(), [&](const Inequality& q) { return q.holds(env); });
}

}  // namespace tactica::expr
