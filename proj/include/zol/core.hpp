#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace zol {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Invalid configuration or violated precondition. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A diagnostic needs information the target does not provide (e.g. an exact
// gradient).
class DiagnosticUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two-point feedback reuses one noise draw for both evaluations of a
// finite-difference probe; one-point feedback draws independently.
enum class Feedback { TwoPoint, OnePoint };

std::string to_string(Feedback feedback);
Feedback parse_feedback(const std::string& name);

inline bool all_finite(const Vector& x) { return x.allFinite(); }

}  // namespace zol
