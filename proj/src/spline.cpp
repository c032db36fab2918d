#include "mutflow/spline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mutflow/error.hpp"

namespace mutflow {

void SplineParams::validate() const {
  const std::size_t k = pieces();
  if (k == 0 || y.size() != k + 1 || d.size() != k + 1) throw ContractError("spline: inconsistent knot counts");
  if (x.front() != 0.0 || y.front() != 0.0 || x.back() != kTwoPi || y.back() != kTwoPi) {
    throw ContractError("spline: knots must span [0, 2pi]");
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (!(x[i] < x[i + 1]) || !(y[i] < y[i + 1])) throw ContractError("spline: knots must increase strictly");
  }
  for (double v : d) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError("spline: derivatives must be positive");
  }
}

namespace {

std::vector<double> knots_from_logits(std::span<const double> logits) {
  const std::size_t k = logits.size();
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += (e[i] = std::exp(logits[i] - mx));
  std::vector<double> knots(k + 1, 0.0);
  const double span = 1.0 - kMinBin * static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double w = kTwoPi * (kMinBin + span * (e[i] / z));
    knots[i + 1] = knots[i] + w;
  }
  knots[k] = kTwoPi;
  return knots;
}

double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

void check_domain(double v, const char* what) {
  if (!(v >= 0.0 && v <= kTwoPi)) {
    throw ContractError(std::string(what) + ": argument " + std::to_string(v) + " outside [0, 2pi]");
  }
}

}  // namespace

SplineParams build_spline(std::span<const double> raw, std::size_t k) {
  if (k == 0 || kMinBin * static_cast<double>(k) >= 1.0) throw ContractError("build_spline: bad piece count");
  if (raw.size() != spline_raw_width(k)) {
    throw ContractError("build_spline: expected " + std::to_string(spline_raw_width(k)) + " raw values, got " +
                        std::to_string(raw.size()));
  }
  SplineParams p;
  p.x = knots_from_logits(raw.subspan(0, k));
  p.y = knots_from_logits(raw.subspan(k, k));
  p.d.resize(k + 1);
  for (std::size_t i = 0; i <= k; ++i) p.d[i] = softplus(raw[2 * k + i] + kDerivativeShift) + kMinDerivative;
  return p;
}

SplineParams identity_spline(std::size_t k) {
  const std::vector<double> zeros(spline_raw_width(k), 0.0);
  return build_spline(zeros, k);
}

std::size_t find_bin(std::span<const double> knots, double x) {
  const std::size_t k = knots.size() - 1;
  const auto it = std::upper_bound(knots.begin(), knots.end(), x);
  const std::size_t idx = static_cast<std::size_t>(it - knots.begin());
  return std::clamp<std::size_t>(idx == 0 ? 0 : idx - 1, 0, k - 1);
}

SplineEval spline_forward(const SplineParams& p, double x) {
  check_domain(x, "spline_forward");
  const std::size_t b = find_bin(p.x, x);
  const double w = p.x[b + 1] - p.x[b];
  const double h = p.y[b + 1] - p.y[b];
  const double s = h / w;
  const double xi = (x - p.x[b]) / w;
  const double t = xi * (1.0 - xi);
  const double dk = p.d[b], dk1 = p.d[b + 1];
  const double den = s + (dk1 + dk - 2.0 * s) * t;
  SplineEval out;
  out.value = p.y[b] + h * (s * xi * xi + dk * t) / den;
  const double num = dk1 * xi * xi + 2.0 * s * t + dk * (1.0 - xi) * (1.0 - xi);
  out.log_deriv = 2.0 * std::log(s) + std::log(num) - 2.0 * std::log(den);
  return out;
}

double spline_inverse(const SplineParams& p, double y) {
  check_domain(y, "spline_inverse");
  const std::size_t b = find_bin(p.y, y);
  const double w = p.x[b + 1] - p.x[b];
  const double h = p.y[b + 1] - p.y[b];
  const double s = h / w;
  const double dk = p.d[b], dk1 = p.d[b + 1];
  const double dy = y - p.y[b];
  const double mix = dk1 + dk - 2.0 * s;
  const double a = h * (s - dk) + dy * mix;
  const double bq = h * dk - dy * mix;
  const double c = -s * dy;
  const double disc = std::max(bq * bq - 4.0 * a * c, 0.0);
  const double xi = (2.0 * c) / (-bq - std::sqrt(disc));
  return std::clamp(p.x[b] + xi * w, p.x[b], p.x[b + 1]);
}

double log_density(const SplineParams& p, double x) { return -std::log(kTwoPi) + spline_forward(p, x).log_deriv; }

}  // namespace mutflow
