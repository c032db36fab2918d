#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace mutflow {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kMinBin = 1e-3;
inline constexpr double kMinDerivative = 1e-3;
// softplus(kDerivativeShift) + kMinDerivative == 1, so zero conditioner
// outputs give unit knot derivatives.
inline const double kDerivativeShift = std::log(std::expm1(1.0 - kMinDerivative));

// Monotone rational-quadratic spline on [0, 2pi] with K pieces.
struct SplineParams {
  std::vector<double> x;  // K+1 knots, x[0] = 0, x[K] = 2pi
  std::vector<double> y;  // K+1 knots, y[0] = 0, y[K] = 2pi
  std::vector<double> d;  // K+1 positive knot derivatives

  std::size_t pieces() const { return x.empty() ? 0 : x.size() - 1; }
  // Throws ContractError if any structural invariant fails.
  void validate() const;
};

// Conditioner layout: K width logits, K height logits, K+1 derivative raws.
inline constexpr std::size_t spline_raw_width(std::size_t k) { return 3 * k + 1; }

SplineParams build_spline(std::span<const double> raw, std::size_t k);
SplineParams identity_spline(std::size_t k);

struct SplineEval {
  double value = 0.0;
  double log_deriv = 0.0;
};

// Index of the piece containing x among the knots (last piece for the right end).
std::size_t find_bin(std::span<const double> knots, double x);

// ContractError for x outside [0, 2pi].
SplineEval spline_forward(const SplineParams& p, double x);
double spline_inverse(const SplineParams& p, double y);
// -log(2pi) + log f'(x)
double log_density(const SplineParams& p, double x);

}  // namespace mutflow
