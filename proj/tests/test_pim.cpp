#include <doctest.h>

#include <cmath>

#include "mutflow/error.hpp"
#include "mutflow/pim.hpp"
#include "support/fixtures.hpp"

using namespace mutflow;
using doctest::Approx;

namespace {

double loss_value(const Tensor& s, double tau) {
  Graph g;
  return contrastive_loss(g.constant(s), g.constant(Tensor({1}, tau))).value().item();
}

// Direct transcription of the three loss equations with explicit loops.
double loss_oracle(const Tensor& s, double tau) {
  const std::size_t n = s.dim(0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double zl = 0.0, zr = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      zl += std::exp(s.at(k, j) / tau);
      zr += std::exp(s.at(j, k) / tau);
    }
    const double lk_l = -(1.0 / static_cast<double>(n)) * std::log(std::exp(s.at(k, k) / tau) / zl);
    const double lk_r = -(1.0 / static_cast<double>(n)) * std::log(std::exp(s.at(k, k) / tau) / zr);
    total += lk_l + lk_r;
  }
  return 0.5 * total;
}

Tensor random_similarity(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor s({n, n});
  for (double& v : s.values()) v = u(rng);
  return s;
}

}  // namespace

TEST_SUITE("pim") {

TEST_CASE("global max pool") {
  Graph g;
  const Var h = g.constant(Tensor::from_rows({{1, 5}, {3, 2}, {9, 9}}));
  const std::vector<std::size_t> both{0, 1}, one{1}, swapped{1, 0};
  CHECK(global_pool(h, both).value() == Tensor::from_rows({{3, 5}}));
  CHECK(global_pool(h, one).value() == Tensor::from_rows({{3, 2}}));
  const Tensor a = global_pool(h, swapped).value();
  const Tensor b = global_pool(h, both).value();
  CHECK(a == b);
  CHECK_THROWS_AS(global_pool(h, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("cosine similarity values") {
  const std::vector<double> a{1, 1}, b{1, 0}, c{0, 2}, z{0, 0};
  CHECK(cosine_similarity(a, a) == Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(b, c) == 0.0);
  CHECK(cosine_similarity(a, b) == Approx(0.70710678118654752).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(a, z), NumericError);
  Graph g;
  const Var m = cosine_matrix(g.constant(Tensor::from_rows({{1, 1}, {0, 2}})),
                              g.constant(Tensor::from_rows({{1, 0}, {1, 1}})));
  CHECK(m.value().at(0, 0) == Approx(0.70710678118654752).epsilon(1e-15));
  CHECK(m.value().at(1, 0) == Approx(0.0));
  CHECK_THROWS_AS(cosine_matrix(g.constant(Tensor::from_rows({{0, 0}})), g.constant(Tensor::from_rows({{1, 0}}))),
                  NumericError);
}

TEST_CASE("closed forms") {
  CHECK(loss_value(Tensor::from_rows({{0.3}}), 0.07) == 0.0);
  const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  // Each of the four terms is (1/2) ln(1 + e^-1).
  const double expected = std::log1p(std::exp(-1.0));
  CHECK(std::abs(loss_value(eye, 1.0) - expected) < 1e-12);
  CHECK(std::abs(loss_value(eye, 1.0) - 0.3132617) < 1e-6);
  CHECK(loss_value(Tensor({2, 2}, 0.4), 1.0) == Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("matches the loop oracle on random batches") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 7);
    const Tensor s = random_similarity(n, rng);
    const double tau = 0.05 + 0.02 * t;
    CHECK(loss_value(s, tau) == Approx(loss_oracle(s, tau)).epsilon(1e-12));
  }
}

TEST_CASE("permutation and role-swap symmetry") {
  Rng rng(2);
  const Tensor s = random_similarity(5, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor p({5, 5}), st({5, 5});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      p.at(i, j) = s.at(perm[i], perm[j]);
      st.at(i, j) = s.at(j, i);
    }
  }
  CHECK(loss_value(p, 0.2) == Approx(loss_value(s, 0.2)).epsilon(1e-14));
  CHECK(loss_value(st, 0.2) == loss_value(s, 0.2));
}

TEST_CASE("loss falls monotonically to zero as the temperature shrinks") {
  Tensor s({4, 4}, 0.1);
  for (std::size_t k = 0; k < 4; ++k) s.at(k, k) = 0.6;
  double prev = loss_value(s, 1.0);
  for (double tau : {0.5, 0.2, 0.1, 0.05, 0.02, 0.01}) {
    const double v = loss_value(s, tau);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-9);
}

TEST_CASE("gradients match finite differences") {
  Rng rng(3);
  ParameterStore store;
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor a({4, 6}), b({4, 6});
  for (double& v : a.values()) v = u(rng);
  for (double& v : b.values()) v = u(rng);
  Parameter& pa = store.create("a", a);
  Parameter& pb = store.create("b", b);
  PimHead head(store);
  store.at("pim.tau").value[0] = 0.3;
  const double err = fixtures::gradcheck(store, {&pa, &pb, &store.at("pim.tau")}, [&](Graph& g) {
    return contrastive_loss(cosine_matrix(g.parameter(pa), g.parameter(pb)), head.tau(g));
  }, 1e-6, 24);
  CHECK(err < 1e-4);
}

TEST_CASE("temperature parameter") {
  ParameterStore store;
  PimHead head(store);
  CHECK(head.tau_value() == 0.07);
  store.at("pim.tau").value[0] = 5.0;
  head.clamp_tau();
  CHECK(head.tau_value() == 1.0);
  store.at("pim.tau").value[0] = -1.0;
  head.clamp_tau();
  CHECK(head.tau_value() == 1e-3);
}

TEST_CASE("matching accuracy") {
  CHECK(matching_accuracy(Tensor::from_rows({{1, 0}, {0, 1}})) == 1.0);
  CHECK(matching_accuracy(Tensor::from_rows({{0, 1}, {0, 1}})) == 0.5);
}

}  // TEST_SUITE
