// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance [--only=N,...] [--expected-fail=N,...]
//
// Exit status is zero when every criterion outside --expected-fail passes and
// every listed one fails as declared; both directions of surprise are errors.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "mutflow/adam.hpp"
#include "mutflow/ddg.hpp"
#include "mutflow/error.hpp"
#include "mutflow/flow.hpp"
#include "mutflow/metrics.hpp"
#include "mutflow/ops.hpp"
#include "mutflow/pim.hpp"
#include "mutflow/spline.hpp"
#include "mutflow/workflows.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace mutflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records one sub-check; the criterion passes only if all of them do.
  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (detail.tellp() > 0) detail << "; ";
    detail << (ok ? "" : "[x] ") << what;
  }
};

std::string fmt(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::vector<double> random_raw(std::size_t k, Rng& rng, double sd = 1.5) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> raw(spline_raw_width(k));
  for (double& v : raw) v = n(rng);
  return raw;
}

Tensor random_rows(std::size_t m, std::size_t d, Rng& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t({m, d});
  for (double& v : t.values()) v = u(rng);
  return t;
}

EncoderConfig small_encoder() {
  EncoderConfig e;
  e.blocks = 1;
  e.d_single = 16;
  e.d_pair = 8;
  e.heads = 2;
  e.points = 2;
  return e;
}

// ------------------------------------------------------------------ 1

void spline_exactness(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  double worst_inv = 0.0, worst_fd = 0.0;
  int fd_checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 8;
    const SplineParams p = build_spline(random_raw(k, rng), k);
    const double x = u(rng);
    worst_inv = std::max(worst_inv, std::abs(spline_inverse(p, spline_forward(p, x).value) - x));
    const std::size_t b = find_bin(p.x, x);
    const double room = std::min(x - p.x[b], p.x[b + 1] - x);
    const double h = std::min({1e-4, 0.002 * (p.x[b + 1] - p.x[b]), 0.5 * room});
    if (h < 1e-7) continue;
    const auto f = [&](double v) { return spline_forward(p, v).value; };
    const double fd = (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
    const double analytic = std::exp(spline_forward(p, x).log_deriv);
    worst_fd = std::max(worst_fd, std::abs(analytic - fd) / analytic);
    ++fd_checked;
  }
  double worst_mass = 0.0;
  for (int t = 0; t < 50; ++t) {
    // Standard-normal raw parameters; at sd 1.5 the narrowest bins carry
    // density spikes that a 10k-point rule under-resolves (~1.6e-4).
    const SplineParams p = build_spline(random_raw(8, rng, 1.0), 8);
    const std::size_t n = 10000;
    const double step = kTwoPi / static_cast<double>(n - 1);
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = (i == 0 || i + 1 == n) ? 0.5 : 1.0;
      mass += w * std::exp(log_density(p, std::min(kTwoPi, static_cast<double>(i) * step)));
    }
    worst_mass = std::max(worst_mass, std::abs(mass * step - 1.0));
  }
  const double secs = seconds_since(t0);
  o.check(worst_inv < 1e-9, "max |inv(fwd(x))-x| = " + fmt(worst_inv) + " over 1000 pairs");
  o.check(worst_fd < 1e-6, "max FD rel err = " + fmt(worst_fd) + " over " + std::to_string(fd_checked) + " points");
  o.check(worst_mass < 1e-4, "max |trapezoid mass - 1| = " + fmt(worst_mass) + " over 50 splines");
  o.check(secs < 30.0, "runtime " + fmt(secs) + " s < 30 s");
}

// ------------------------------------------------------------------ 2

void identity_flow(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(102);
  ParameterStore store;
  CouplingFlow flow(store, "sim.flow", 16, FlowConfig{}, rng);
  std::uniform_real_distribution<double> u(0.0, kTwoPi);
  double worst = 0.0;
  for (std::size_t t = 1; t <= 4; ++t) {
    std::vector<std::vector<double>> chis(20, std::vector<double>(t));
    for (auto& row : chis)
      for (double& v : row) v = u(rng);
    Graph g;
    const Tensor lp =
        flow.log_density(g, g.constant(random_rows(20, 16, rng)), std::vector<AminoAcid>(20, AminoAcid::ARG), chis)
            .value();
    for (double v : lp.values()) worst = std::max(worst, std::abs(v / static_cast<double>(t) + std::log(kTwoPi)));
  }
  const std::vector<AminoAcid> chi1{AminoAcid::SER, AminoAcid::CYS, AminoAcid::THR, AminoAcid::VAL, AminoAcid::SER};
  const auto chain = fixtures::build_chain('A', 1, chi1, rng);
  Graph g;
  const double loss = flow.sim_loss(g, g.constant(random_rows(chain.size(), 16, rng)), chain).value().item();
  const double secs = seconds_since(t0);
  o.check(worst < 1e-12, "max |log p / t + ln 2pi| = " + fmt(worst));
  o.check(std::abs(loss - std::log(kTwoPi)) < 1e-12, "chi1 fixture sim_loss - ln 2pi = " + fmt(loss - std::log(kTwoPi)));
  o.check(secs < 5.0, "runtime " + fmt(secs) + " s < 5 s");
}

// ------------------------------------------------------------------ 3

void gradient_suite(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(103);
  {
    // Shallow: contrastive loss on a free similarity matrix and temperature.
    ParameterStore store;
    Parameter& s = store.create("s", random_rows(3, 3, rng));
    PimHead head(store);
    const double err = fixtures::gradcheck(store, {&s, &store.at("pim.tau")},
                                           [&](Graph& g) { return contrastive_loss(g.parameter(s), head.tau(g)); });
    o.check(err < 1e-4, "PIM shallow " + fmt(err));
  }
  {
    ParameterStore store;
    Encoder enc(store, "encoder.pimbim", small_encoder(), rng);
    PimHead head(store);
    const Complex a = fixtures::random_complex("a", 2, 1, rng), b = fixtures::random_complex("b", 2, 1, rng);
    const double err = fixtures::gradcheck(store, store.trainable(), [&](Graph& g) {
      std::vector<Var> l, r;
      for (const Complex* c : {&a, &b}) {
        const Var h = enc.encode(g, raw_features(*c));
        l.push_back(global_pool(h, c->ligand));
        r.push_back(global_pool(h, c->receptor));
      }
      return contrastive_loss(cosine_matrix(ops::concat(l, 0), ops::concat(r, 0)), head.tau(g));
    });
    o.check(err < 1e-3, "PIM through encoder " + fmt(err));
  }
  {
    ParameterStore store;
    Parameter& p = store.create("p", random_rows(2, 3, rng));
    const Tensor target = random_rows(2, 3, rng);
    const double err = fixtures::gradcheck(store, {&p}, [&](Graph& g) {
      return bim_loss(g.parameter(p), g.constant(target));
    });
    o.check(err < 1e-4, "BIM shallow " + fmt(err));
  }
  {
    ParameterStore store;
    Encoder enc(store, "encoder.pimbim", small_encoder(), rng);
    PairHeadConfig pc;
    pc.layers = 1;
    pc.width = 8;
    pc.heads = 2;
    BimHead bim(store, "bim", 16, pc, rng);
    const Complex c = fixtures::random_complex("c", 2, 1, rng);
    const Tensor target = ca_distance_map(c);
    const double err = fixtures::gradcheck(store, store.trainable(), [&](Graph& g) {
      const Var h = enc.encode(g, raw_features(c));
      return bim_loss(bim.predict(g, h, c.ligand, c.receptor), g.constant(target));
    });
    o.check(err < 1e-3, "BIM through encoder " + fmt(err));
  }
  {
    ParameterStore store;
    FlowConfig fc;
    fc.hidden = {16};
    fc.zero_init = false;
    Encoder enc(store, "encoder.sim", small_encoder(), rng);
    CouplingFlow flow(store, "sim.flow", 16, fc, rng);
    const auto chain = fixtures::build_chain('A', 1, {AminoAcid::LEU, AminoAcid::SER, AminoAcid::LYS}, rng);
    const double err = fixtures::gradcheck(store, store.trainable(), [&](Graph& g) {
      return flow.sim_loss(g, enc.encode(g, raw_features(chain)), chain);
    });
    o.check(err < 1e-3, "SIM through encoder " + fmt(err));
  }
  {
    ParameterStore store;
    Parameter& p = store.create("p", random_rows(4, 1, rng));
    const Tensor y = random_rows(4, 1, rng);
    const double err =
        fixtures::gradcheck(store, {&p}, [&](Graph& g) { return ddg_loss(g.parameter(p), g.constant(y)); });
    o.check(err < 1e-4, "ddG MSE shallow " + fmt(err));
  }
  {
    ParameterStore store;
    Encoder pimbim(store, "encoder.pimbim", small_encoder(), rng);
    Encoder sim(store, "encoder.sim", small_encoder(), rng);
    store.set_trainable("encoder.", false);
    DdgConfig dc;
    dc.encoder = small_encoder();
    dc.head_hidden = {16};
    DdgModel model(store, dc, rng, &pimbim, &sim);
    const Complex c = fixtures::random_complex("t", 2, 1, rng);
    const Residue& r = c.residues[1];
    const std::vector<Mutation> muts{
        {r.type, r.chain, r.seq, ' ', r.type == AminoAcid::TRP ? AminoAcid::ALA : AminoAcid::TRP}};
    const double err = fixtures::gradcheck(store, store.trainable(), [&](Graph& g) {
      return ddg_loss(model.predict_record(g, c, muts), g.constant(Tensor::from_rows({{0.7}})));
    });
    o.check(err < 1e-3, "ddG MSE full pipeline " + fmt(err));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 120.0, "runtime " + fmt(secs) + " s < 120 s");
}

// ------------------------------------------------------------------ 4

void contrastive_closed_forms(Outcome& o) {
  Graph g;
  const Var tau1 = g.constant(Tensor({1}, 1.0));
  const double n1 = contrastive_loss(g.constant(Tensor::from_rows({{0.42}})), tau1).value().item();
  const double n2 = contrastive_loss(g.constant(Tensor::from_rows({{1, 0}, {0, 1}})), tau1).value().item();
  Rng rng(104);
  bool symmetric = true;
  for (int t = 0; t < 100; ++t) {
    const Tensor s = random_rows(5, 5, rng);
    const Var tau = g.constant(Tensor({1}, 0.07 + 0.01 * t));
    const double a = contrastive_loss(g.constant(s), tau).value().item();
    const double b = contrastive_loss(ops::transpose(g.constant(s)), tau).value().item();
    symmetric = symmetric && a == b;
  }
  o.check(n1 == 0.0, "N=1 loss = " + fmt(n1 + 0.0));
  o.check(std::abs(n2 - 0.313255) <= 1e-6,
          "N=2 identity, tau=1: " + fmt(n2, 10) + " vs 0.313255 +- 1e-6 (|diff| = " + fmt(std::abs(n2 - 0.313255)) +
              "; ln(1+1/e) = " + fmt(std::log1p(std::exp(-1.0)), 10) + ", |loss - ln(1+1/e)| = " +
              fmt(std::abs(n2 - std::log1p(std::exp(-1.0)))) + ")");
  o.check(symmetric, "L(S) == L(S^T) exactly over 100 random 5x5 matrices");
}

// ------------------------------------------------------------------ 5

void encoder_invariance(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(105);
  ParameterStore store;
  Encoder enc(store, "encoder.pimbim", EncoderConfig{}, rng);
  const Complex c = fixtures::random_complex("inv", 10, 6, rng);
  Graph g0;
  const Tensor base = enc.encode(g0, raw_features(c)).value();
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    RigidTransform tr;
    tr.rotation = random_rotation(rng);
    tr.translation = random_in_ball(50.0, rng);
    Graph g;
    worst = std::max(worst, max_abs_diff(enc.encode(g, raw_features(transform_complex(c, tr))).value(), base));
  }
  const double secs = seconds_since(t0);
  o.check(worst < 1e-5, "6-block, d=128: max |shift| = " + fmt(worst) + " over 100 rigid motions");
  o.check(secs < 60.0, "runtime " + fmt(secs) + " s < 60 s");
}

// ------------------------------------------------------------------ 6

void metric_oracles(Outcome& o) {
  std::mt19937_64 rng(106);
  std::uniform_int_distribution<std::size_t> len(2, 60);
  std::normal_distribution<double> d(0.0, 2.0);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = trial % 2 ? d(rng) : std::round(d(rng));
      y[i] = trial % 3 ? d(rng) : std::round(d(rng));
    }
    const bool xc = std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end();
    const bool yc = std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end();
    if (!xc && !yc) {
      worst = std::max(worst, std::abs(pearson(x, y) - oracles::pearson(x, y)));
      worst = std::max(worst, std::abs(spearman(x, y) - oracles::spearman(x, y)));
    }
    const ErrorStats e = rmse_mae(x, y);
    worst = std::max(worst, std::abs(e.rmse - oracles::rmse(x, y)));
    worst = std::max(worst, std::abs(e.mae - oracles::mae(x, y)));
    bool pos = false, neg = false;
    for (double v : y) (v > 0 ? pos : neg) = true;
    if (pos && neg) worst = std::max(worst, std::abs(auroc(x, y) - oracles::auroc(x, y)));
    const std::size_t target = static_cast<std::size_t>(trial) % n;
    worst = std::max(worst, std::abs(ranking_ratio(x, std::vector<std::size_t>{target})[0] -
                                     oracles::ranking_ratio(x, target)));
    ++checked;
  }
  const std::vector<double> a{1, 2, 3}, b{1, 3, 2};
  const double p = pearson(a, b);
  const double au = auroc(std::vector<double>{0.9, 0.1, 0.4}, std::vector<double>{1, 1, -1});
  o.check(worst < 1e-10, "max deviation from brute-force oracles = " + fmt(worst) + " over " +
                             std::to_string(checked) + " vectors");
  o.check(p == 0.5, "pearson((1,2,3),(1,3,2)) = " + fmt(p, 17));
  o.check(au == 0.5, "auroc fixture = " + fmt(au, 17));
}

// ------------------------------------------------------------------ 7

void protocol_fidelity(Outcome& o) {
  const auto t0 = Clock::now();
  fixtures::TempDir tmp;
  Rng rng(107);
  std::map<std::string, Complex> lib;
  std::vector<MutationRecord> records;
  for (std::size_t i = 0; i < 12; ++i) {
    const Complex c = fixtures::random_complex("cx" + std::to_string(i), 8, 6, rng);
    lib[c.id] = c;
    // cx0 carries nine records, cx1 ten, the rest three.
    const std::size_t count = i == 0 ? 9 : i == 1 ? 10 : 3;
    for (auto& r : fixtures::random_records(c, count, rng, fixtures::planted_ddg)) records.push_back(r);
  }
  RunConfig cfg = fixtures::tiny_run_config(tmp.path);
  cfg.iterations = 30;
  const FinetuneResult r =
      finetune(cfg, records, [&](const std::string& id) -> const Complex& { return lib.at(id); }, std::nullopt);

  bool disjoint = true;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      for (const auto& id : r.folds.folds[a])
        if (std::find(r.folds.folds[b].begin(), r.folds.folds[b].end(), id) != r.folds.folds[b].end()) disjoint = false;
  std::set<std::string> covered;
  for (const auto& f : r.folds.folds) covered.insert(f.begin(), f.end());
  std::multiset<std::pair<std::string, std::string>> predicted, expected;
  for (const auto& p : r.predictions) predicted.insert({p.complex_id, p.mutations});
  for (const auto& rec : records) expected.insert({rec.complex_id, rec.mutation_string()});

  bool finite = true;
  for (const auto& p : r.predictions) finite = finite && std::isfinite(p.pred);

  const PerStructure ps = per_structure(r.predictions);
  std::vector<ScoredRecord> nine(r.predictions.begin(), r.predictions.end());
  std::erase_if(nine, [](const ScoredRecord& s) { return s.complex_id != "cx0"; });
  bool nine_excluded = false;
  try {
    per_structure(nine);
  } catch (const UndefinedMetric&) {
    nine_excluded = true;
  }
  const double secs = seconds_since(t0);
  o.check(disjoint && covered.size() == 12, "folds disjoint, cover 12 complexes (sizes " +
                                                std::to_string(r.folds.folds[0].size()) + "/" +
                                                std::to_string(r.folds.folds[1].size()) + "/" +
                                                std::to_string(r.folds.folds[2].size()) + ")");
  o.check(predicted == expected && finite, "each of " + std::to_string(records.size()) +
                                               " records predicted exactly once");
  o.check(nine_excluded, "9-record group alone -> no qualifying group");
  o.check(ps.groups == 1, "CV predictions: " + std::to_string(ps.groups) + " qualifying group (the 10-record complex)");
  o.check(secs < 120.0, "runtime " + fmt(secs) + " s < 120 s");
}

// ------------------------------------------------------------------ 8

// First step whose trailing mean of `window` values drops to `fraction` of the
// first value, or -1.
long first_reduction(const std::vector<double>& v, double fraction, std::size_t window) {
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    sum += v[i];
    if (i >= window) sum -= v[i - window];
    if (i + 1 >= window && sum / static_cast<double>(window) <= fraction * v.front()) return static_cast<long>(i);
  }
  return -1;
}

void learning_sanity(Outcome& o) {
  const auto t0 = Clock::now();
  fixtures::TempDir tmp;
  {
    Rng rng(108);
    std::vector<Complex> complexes;
    for (int i = 0; i < 6; ++i) complexes.push_back(fixtures::random_complex("s" + std::to_string(i), 8, 6, rng));
    RunConfig cfg = fixtures::tiny_run_config(tmp.path / "ppi");
    cfg.iterations = 500;
    cfg.batch = 6;
    cfg.validate_every = 100;
    cfg.objectives = parse_objectives("pim,bim");
    const auto r = pretrain_ppi(cfg, complexes);
    std::vector<double> pim, bim;
    for (const auto& e : r.log) {
      if (e["split"] != "train") continue;
      pim.push_back(e["losses"]["pim"]);
      bim.push_back(e["losses"]["bim"]);
    }
    const long sp = first_reduction(pim, 0.7, 20), sb = first_reduction(bim, 0.7, 20);
    o.check(sp >= 0, "(a) PIM " + fmt(pim.front()) + " -> 20-step mean <= 70% at step " + std::to_string(sp));
    o.check(sb >= 0, "(a) BIM " + fmt(bim.front()) + " -> 20-step mean <= 70% at step " + std::to_string(sb));
  }
  {
    Rng rng(109);
    ParameterStore store;
    FlowConfig fc;
    fc.hidden = {16};
    Encoder enc(store, "encoder.sim", small_encoder(), rng);
    CouplingFlow flow(store, "sim.flow", 16, fc, rng);
    const std::vector<std::vector<double>> chis{{}, {4.4}, {}};
    const auto chain = fixtures::build_chain('A', 1, {AminoAcid::GLY, AminoAcid::SER, AminoAcid::ALA}, rng, &chis);
    AdamState opt;
    opt.lr = 1e-3;
    const auto params = store.trainable();
    double loss = 0.0;
    std::size_t steps = 0;
    for (; steps < 500; ++steps) {
      store.zero_grad();
      Graph g;
      const Var l = flow.sim_loss(g, enc.encode(g, raw_features(chain)), chain);
      loss = l.value().item();
      if (loss < std::log(kTwoPi) - 0.5) break;
      g.backward(l);
      adam_step(opt, params);
    }
    o.check(loss < std::log(kTwoPi) - 0.5,
            "(b) SIM NLL " + fmt(loss, 6) + " < ln 2pi - 0.5 = " + fmt(std::log(kTwoPi) - 0.5, 6) + " after " +
                std::to_string(steps) + " steps");
  }
  {
    Rng rng(110);
    ParameterStore store;
    DdgConfig dc;
    dc.encoder = small_encoder();
    dc.use_pimbim = dc.use_sim = false;
    dc.head_hidden = {16};
    DdgModel model(store, dc, rng);
    std::vector<Complex> wild, mutant;
    std::vector<double> labels;
    std::normal_distribution<double> lab(0.0, 1.5);
    for (int i = 0; i < 20; ++i) {
      const Complex c = fixtures::random_complex("o" + std::to_string(i), 5, 4, rng);
      const auto rec = fixtures::random_records(c, 1, rng);
      wild.push_back(c);
      mutant.push_back(build_mutant(c, rec[0].mutations));
      labels.push_back(lab(rng));
    }
    AdamState opt;
    opt.lr = 3e-3;
    const auto params = store.trainable();
    double mse = 0.0;
    for (int step = 0; step < 2000; ++step) {
      store.zero_grad();
      Graph g;
      std::vector<Var> preds;
      for (std::size_t i = 0; i < wild.size(); ++i) preds.push_back(model.predict(g, wild[i], mutant[i]));
      const Var loss = ddg_loss(ops::concat(preds, 0), g.constant(Tensor({labels.size(), 1}, labels)));
      mse = loss.value().item();
      g.backward(loss);
      adam_step(opt, params);
    }
    o.check(std::sqrt(mse) < 0.1, "(c) training RMSE on 20 records " + fmt(std::sqrt(mse)) + " < 0.1");
  }
  {
    Rng rng(111);
    std::map<std::string, Complex> lib;
    std::vector<MutationRecord> records;
    std::normal_distribution<double> noise(0.0, 0.2);
    for (int i = 0; i < 15; ++i) {
      const Complex c = fixtures::random_complex("pl" + std::to_string(i), 8, 6, rng);
      lib[c.id] = c;
      for (auto& r : fixtures::random_records(
               c, 12, rng, [&](const Mutation& m) { return fixtures::planted_ddg(m) + noise(rng); }))
        records.push_back(r);
    }
    RunConfig cfg = fixtures::tiny_run_config(tmp.path / "planted");
    // The signal lives at the mutated residue; a tight crop keeps it from
    // being diluted by the max-pool over unrelated neighbours.
    cfg.iterations = 1500;
    cfg.batch = 8;
    cfg.validate_every = 50;
    cfg.ddg_crop = 4;
    cfg.encoder.d_single = 32;
    cfg.head_hidden = {32};
    const auto r =
        finetune(cfg, records, [&](const std::string& id) -> const Complex& { return lib.at(id); }, std::nullopt);
    const double p = r.report.subsets.front().pearson.value_or(0.0);
    o.check(p > 0.8, "(d) planted-signal CV Pearson " + fmt(p) + " > 0.8 (" + std::to_string(records.size()) +
                         " records, 15 complexes)");
  }
  const double secs = seconds_since(t0);
  o.check(secs < 600.0, "runtime " + fmt(secs) + " s < 600 s");
}

// ------------------------------------------------------------------ 9

void head_invariants(Outcome& o) {
  Rng rng(112);
  ParameterStore store;
  Encoder pimbim(store, "encoder.pimbim", EncoderConfig{}, rng);
  Encoder sim(store, "encoder.sim", EncoderConfig{}, rng);
  DdgModel model(store, DdgConfig{}, rng, &pimbim, &sim);
  bool zero = true, anti = true;
  double largest = 0.0;
  for (int t = 0; t < 5; ++t) {
    const Complex wt = fixtures::random_complex("h", 8, 6, rng);
    const auto rec = fixtures::random_records(wt, 1, rng);
    const Complex mt = build_mutant(wt, rec[0].mutations);
    Graph g;
    const double same = model.predict(g, wt, wt).value().item();
    const double ab = model.predict(g, wt, mt).value().item();
    const double ba = model.predict(g, mt, wt).value().item();
    zero = zero && same == 0.0;
    anti = anti && ab == -ba;
    largest = std::max(largest, std::abs(ab));
  }
  o.check(zero, "predict(c, c) == 0 exactly for 5 complexes");
  o.check(anti, "predict(A,B) == -predict(B,A) exactly (|pred| up to " + fmt(largest) + ")");
}

// ------------------------------------------------------------------ 10

void ablation_plumbing(Outcome& o) {
  fixtures::TempDir tmp;
  Rng rng(113);
  std::vector<Complex> complexes;
  std::map<std::string, Complex> lib;
  std::vector<MutationRecord> records;
  std::vector<SimChain> chains;
  for (int i = 0; i < 6; ++i) {
    const Complex c = fixtures::random_complex("ab" + std::to_string(i), 6, 4, rng);
    complexes.push_back(c);
    lib[c.id] = c;
    for (auto& r : fixtures::random_records(c, 3, rng, fixtures::planted_ddg)) records.push_back(r);
    std::vector<Residue> rec;
    for (std::size_t k : c.receptor) rec.push_back(c.residues[k]);
    chains.push_back({c.id + "_A", rec});
  }
  const std::vector<std::vector<std::size_t>> clusters{{0, 1}, {2}, {3, 4, 5}};
  std::size_t distinct_ok = 0;
  std::set<std::string> signatures;
  const std::vector<std::string> grid{"pim", "bim", "sim", "pim,bim", "pim,sim", "bim,sim", "pim,bim,sim"};
  for (const std::string& row : grid) {
    const Objectives obj = parse_objectives(row);
    RunConfig cfg = fixtures::tiny_run_config(tmp.path / row);
    cfg.iterations = 3;
    cfg.objectives = obj;
    std::set<std::string> terms;
    if (obj.pim || obj.bim) {
      const auto r = pretrain_ppi(cfg, complexes);
      cfg.pimbim_checkpoint = r.checkpoint;
      for (const auto& e : r.log)
        for (const auto& [k, v] : e["losses"].items())
          if (k != "total") terms.insert(k);
    }
    if (obj.sim) {
      RunConfig sc = cfg;
      sc.patch = 8;
      const auto r = pretrain_sim(sc, chains, clusters);
      cfg.sim_checkpoint = r.checkpoint;
      for (const auto& e : r.log)
        for (const auto& [k, v] : e["losses"].items()) terms.insert(k);
    }
    const auto ft =
        finetune(cfg, records, [&](const std::string& id) -> const Complex& { return lib.at(id); }, std::nullopt);
    const DdgBundle bundle(ft.checkpoints[0]);
    const auto meta = bundle.meta();
    std::set<std::string> want;
    if (obj.pim) want.insert("pim");
    if (obj.bim) want.insert("bim");
    if (obj.sim) want.insert("sim");
    const bool streams = meta["pimbim_encoder"].is_null() == !(obj.pim || obj.bim) &&
                         meta["sim_encoder"].is_null() == !obj.sim;
    if (terms == want && streams) ++distinct_ok;
    std::string sig;
    for (const auto& t : terms) sig += t + "+";
    signatures.insert(sig);
  }
  o.check(distinct_ok == grid.size(),
          std::to_string(distinct_ok) + "/" + std::to_string(grid.size()) +
              " configs log exactly their loss terms and fine-tune with matching streams");
  o.check(signatures.size() == grid.size(), std::to_string(signatures.size()) + " distinct loss-term signatures");
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Outcome&)> run;
};

std::set<int> parse_ids(const std::string& arg) {
  std::set<int> out;
  std::stringstream in(arg);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (!tok.empty()) out.insert(std::stoi(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, expected_fail;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--only=", 0) == 0) only = parse_ids(a.substr(7));
    else if (a.rfind("--expected-fail=", 0) == 0) expected_fail = parse_ids(a.substr(16));
    else {
      std::cerr << "usage: acceptance [--only=N,...] [--expected-fail=N,...]\n";
      return 2;
    }
  }
  const std::vector<Criterion> criteria{
      {1, "spline flow exactness", spline_exactness},
      {2, "identity flow values", identity_flow},
      {3, "gradient suite", gradient_suite},
      {4, "contrastive closed forms", contrastive_closed_forms},
      {5, "encoder rigid-motion invariance", encoder_invariance},
      {6, "metric oracles", metric_oracles},
      {7, "cross-validation protocol", protocol_fidelity},
      {8, "learning sanity", learning_sanity},
      {9, "prediction head invariants", head_invariants},
      {10, "ablation plumbing", ablation_plumbing},
  };
  int surprises = 0, passed = 0, run = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++run;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const bool expected = expected_fail.count(c.id) > 0;
    if (o.pass) ++passed;
    if (o.pass == expected) ++surprises;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << ")"
              << (expected && !o.pass ? " [declared]" : "") << ": " << o.detail.str() << " [" << fmt(seconds_since(t0))
              << " s]" << std::endl;
  }
  std::cout << passed << "/" << run << " criteria pass";
  if (!expected_fail.empty()) std::cout << "; declared failures checked: " << expected_fail.size();
  std::cout << std::endl;
  return surprises == 0 ? 0 : 1;
}
