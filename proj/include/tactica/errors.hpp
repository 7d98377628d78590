#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tactica {

/// Scenario or call configuration is inconsistent (bad dimensions, unsupported
/// derivative order, mismatched grids, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value fell outside its declared admissible domain.
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Recorded data is missing or malformed for the requested analysis.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The integrated state stopped being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double last_valid_time)
      : std::runtime_error(what), last_valid_time_(last_valid_time) {}
  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

/// Constraint projection could not restore the relations of the current
/// algebra class.
class InsolvableError : public std::runtime_error {
 public:
  InsolvableError(const std::string& what, double time, double residual)
      : std::runtime_error(what), time_(time), residual_(residual) {}
  double time() const noexcept { return time_; }
  double residual() const noexcept { return residual_; }

 private:
  double time_;
  double residual_;
};

/// An insolvable signal arrived and the dialectical object offers no
/// transition out of the current class.
class StrandedClassError : public std::runtime_error {
 public:
  StrandedClassError(const std::string& what, std::string class_label, int window)
      : std::runtime_error(what), class_label_(std::move(class_label)), window_(window) {}
  const std::string& class_label() const noexcept { return class_label_; }
  int window() const noexcept { return window_; }

 private:
  std::string class_label_;
  int window_;
};

/// Expression text that does not conform to the grammar.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::string token, std::size_t position)
      : std::runtime_error(what), token_(std::move(token)), position_(position) {}
  const std::string& token() const noexcept { return token_; }
  std::size_t position() const noexcept { return position_; }

 private:
  std::string token_;
  std::size_t position_;
};

/// All problems found while validating a scenario, reported together.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = std::to_string(issues.size()) + " validation error(s)";
    for (const auto& i : issues) out += "\n  " + i;
    return out;
  }
  std::vector<std::string> issues_;
};

}  // namespace tactica
