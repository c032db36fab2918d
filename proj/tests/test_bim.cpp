#include <doctest.h>

#include <cmath>

#include "mutflow/bim.hpp"
#include "mutflow/encoder.hpp"
#include "mutflow/error.hpp"
#include "support/fixtures.hpp"

using namespace mutflow;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  }
  return m;
}

Mat linear(const Mat& x, const ParameterStore& s, const std::string& name, bool bias = true) {
  const Tensor& w = s.at(name + ".w").value;
  Mat out(x.size(), std::vector<double>(w.dim(1), 0.0));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < w.dim(1); ++o) {
      double acc = bias ? s.at(name + ".b").value[o] : 0.0;
      for (std::size_t i = 0; i < w.dim(0); ++i) acc += x[r][i] * w.at(i, o);
      out[r][o] = acc;
    }
  }
  return out;
}

Mat relu(Mat m) {
  for (auto& r : m)
    for (double& v : r) v = std::max(v, 0.0);
  return m;
}

Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Mat layer_norm(Mat m, const ParameterStore& s, const std::string& name) {
  const Tensor& gain = s.at(name + ".gain").value;
  const Tensor& shift = s.at(name + ".shift").value;
  for (auto& r : m) {
    double mean = 0.0, var = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = (r[k] - mean) / std::sqrt(var + 1e-5) * gain[k] + shift[k];
  }
  return m;
}

// relu(A_i + B_j) flattened over (i, j).
Mat outer(const Mat& a, const Mat& b) {
  Mat out;
  for (const auto& ra : a) {
    for (const auto& rb : b) {
      std::vector<double> row(ra.size());
      for (std::size_t k = 0; k < ra.size(); ++k) row[k] = std::max(ra[k] + rb[k], 0.0);
      out.push_back(row);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("bim") {

TEST_CASE("pair projection shape and sensitivity") {
  Rng rng(1);
  ParameterStore store;
  BimHead head(store, "bim", 8, PairHeadConfig{}, rng);
  Graph g;
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor h({4, 8});
  for (double& v : h.values()) v = u(rng);
  for (std::size_t k = 0; k < 8; ++k) h.at(1, k) = h.at(0, k);
  const std::vector<std::size_t> one_l{0}, one_r{2}, lig{0, 1}, rec{2, 3};
  CHECK(head.pair_project(g, g.constant(h), one_l, one_r).shape() == Shape{1, 32});
  const Tensor p = head.pair_project(g, g.constant(h), lig, rec).value();
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(p.at(0, k) == p.at(2, k));
    CHECK(p.at(1, k) == p.at(3, k));
  }
  Tensor h2 = h;
  h2.at(3, 5) += 0.5;
  CHECK(head.pair_project(g, g.constant(h2), lig, rec).value() != p);
  CHECK_THROWS_AS(head.pair_project(g, g.constant(h), std::vector<std::size_t>{}, rec), ContractError);
}

TEST_CASE("predictions are nonnegative with the map's shape") {
  Rng rng(2);
  ParameterStore store;
  EncoderConfig ec;
  ec.blocks = 1;
  ec.d_single = 16;
  ec.d_pair = 8;
  ec.heads = 2;
  ec.points = 2;
  Encoder enc(store, "enc", ec, rng);
  BimHead head(store, "bim", 16, PairHeadConfig{}, rng);
  for (int t = 0; t < 5; ++t) {
    const Complex c = fixtures::random_complex("x", 2 + t, 3, rng);
    Graph g;
    const Var d = head.predict(g, enc.encode(g, raw_features(c)), c.ligand, c.receptor);
    CHECK(d.shape() == ca_distance_map(c).shape());
    for (double v : d.value().values()) CHECK(v >= 0.0);
  }
}

TEST_CASE("zero attention reduces to the pair path") {
  Rng rng(3);
  ParameterStore store;
  PairHeadConfig cfg;
  cfg.layers = 1;
  cfg.zero_attention = true;
  BimHead head(store, "bim", 8, cfg, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor h({5, 8});
  for (double& v : h.values()) v = u(rng);
  const std::vector<std::size_t> lig{3, 4}, rec{0, 1, 2};
  Graph g;
  const Tensor pred = head.predict(g, g.constant(h), lig, rec).value();

  const Mat hm = to_mat(h);
  Mat hl, hr, x;
  for (std::size_t i : lig) hl.push_back(hm[i]);
  for (std::size_t i : rec) hr.push_back(hm[i]);
  x = hl;
  x.insert(x.end(), hr.begin(), hr.end());
  Mat pair = linear(outer(linear(hl, store, "bim.project.l"), linear(hr, store, "bim.project.r", false)), store,
                    "bim.project.out");
  const Mat x1 = layer_norm(x, store, "bim.layer0.norm1");
  const Mat ff = linear(relu(linear(x1, store, "bim.layer0.ff1")), store, "bim.layer0.ff2");
  const Mat x2 = layer_norm(add(x1, ff), store, "bim.layer0.norm2");
  const Mat xl(x2.begin(), x2.begin() + 2), xr(x2.begin() + 2, x2.end());
  pair = add(pair, linear(outer(linear(xl, store, "bim.layer0.pair_l"), linear(xr, store, "bim.layer0.pair_r", false)),
                          store, "bim.layer0.pair_update"));
  const Mat out = linear(pair, store, "bim.head");
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double z = out[i * 3 + j][0];
      const double expected = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      CHECK(std::abs(pred.at(i, j) - expected) < 1e-12);
    }
  }
  // The pair bias cannot matter when every logit is zero.
  for (double& v : store.at("bim.layer0.pair_bias.w").value.values()) v += 1.0;
  Graph g2;
  CHECK(max_abs_diff(head.predict(g2, g2.constant(h), lig, rec).value(), pred) < 1e-12);
}

TEST_CASE("distance loss values") {
  Graph g;
  const Var d = g.constant(Tensor::from_rows({{5, 0}, {0, 5}}));
  const Var dh = g.constant(Tensor::from_rows({{4, 1}, {1, 4}}));
  CHECK(bim_loss(d, d).value().item() == 0.0);
  CHECK(bim_loss(ops::add_scalar(d, 1.0), d).value().item() == 1.0);
  CHECK(bim_loss(dh, d).value().item() == 1.0);
  CHECK(bim_loss(dh, d).value().item() == bim_loss(d, dh).value().item());
  CHECK_THROWS_AS(bim_loss(d, g.constant(Tensor({2, 3}))), ContractError);
}

TEST_CASE("end-to-end gradient matches finite differences") {
  Rng rng(4);
  ParameterStore store;
  EncoderConfig ec;
  ec.blocks = 2;
  ec.d_single = 16;
  ec.d_pair = 8;
  ec.heads = 2;
  ec.points = 2;
  Encoder enc(store, "enc", ec, rng);
  PairHeadConfig pc;
  pc.width = 8;
  pc.heads = 2;
  BimHead head(store, "bim", 16, pc, rng);
  const Complex c = fixtures::random_complex("x", 2, 1, rng);
  const Complex unbound = random_unbound_transform(c, rng);
  const RawFeatures raw = raw_features(unbound);
  const Tensor target = ca_distance_map(c);
  std::vector<Parameter*> probe;
  for (const char* n : {"enc.embed.single.w", "enc.block1.q.w", "enc.block0.kp.w", "bim.project.l.w",
                        "bim.layer0.q.w", "bim.layer1.pair_bias.w", "bim.layer1.pair_update.w", "bim.head.w",
                        "bim.head.b"}) {
    probe.push_back(&store.at(n));
  }
  const double err = fixtures::gradcheck(store, probe, [&](Graph& g) {
    return bim_loss(head.predict(g, enc.encode(g, raw), unbound.ligand, unbound.receptor), g.constant(target));
  });
  CHECK(err < 1e-3);
}

}  // TEST_SUITE
