#include "mutflow/ddg.hpp"

#include <algorithm>
#include <limits>

#include "mutflow/error.hpp"

namespace mutflow {

std::size_t find_site(const Complex& complex, const Mutation& m) {
  for (std::size_t i = 0; i < complex.residues.size(); ++i) {
    const Residue& r = complex.residues[i];
    if (r.chain == m.chain && r.seq == m.seq && r.icode == m.icode) return i;
  }
  throw DataError("mutation site " + m.token() + " not found in " + complex.id);
}

Complex build_mutant(const Complex& complex, std::span<const Mutation> mutations) {
  Complex out = complex;
  for (const Mutation& m : mutations) {
    Residue& r = out.residues[find_site(out, m)];
    if (r.type != m.wild) {
      throw DataError("wild-type mismatch at " + std::string(1, m.chain) + "/" + std::to_string(m.seq) +
                      (m.icode == ' ' ? "" : std::string(1, m.icode)) + ": structure has " +
                      std::string(three_letter(r.type)) + ", mutation " + m.token() + " expects " +
                      std::string(three_letter(m.wild)));
    }
    r.type = m.mutant;
    std::erase_if(r.atoms, [&](const Atom& a) {
      if (a.name == "N" || a.name == "CA" || a.name == "C" || a.name == "O") return false;
      return !(a.name == "CB" && m.mutant != AminoAcid::GLY);
    });
  }
  return out;
}

Complex crop_around_sites(const Complex& complex, std::span<const Mutation> mutations, std::size_t keep) {
  if (complex.residues.size() <= keep) return complex;
  std::vector<Vec3> sites;
  for (const Mutation& m : mutations) sites.push_back(complex.residues[find_site(complex, m)].ca());
  if (sites.empty()) throw ContractError("crop_around_sites: no mutation sites");
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < complex.residues.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& s : sites) best = std::min(best, distance(complex.residues[i].ca(), s));
    keyed.emplace_back(best, i);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> picked;
  for (std::size_t k = 0; k < keep; ++k) picked.push_back(keyed[k].second);
  std::sort(picked.begin(), picked.end());

  std::vector<bool> is_lig(complex.residues.size(), false);
  for (std::size_t i : complex.ligand) is_lig[i] = true;
  Complex out;
  out.id = complex.id;
  for (std::size_t i : picked) {
    (is_lig[i] ? out.ligand : out.receptor).push_back(out.residues.size());
    out.residues.push_back(complex.residues[i]);
  }
  return out;
}

DdgModel::DdgModel(ParameterStore& store, const DdgConfig& cfg, Rng& rng, const Encoder* pimbim, const Encoder* sim)
    : cfg_(cfg), encoder_(store, "encoder.ddg", cfg.encoder, rng), pimbim_(pimbim), sim_(sim) {
  const std::size_t d = cfg.encoder.d_single;
  if (cfg.use_pimbim && !pimbim) throw ContractError("ddg model: PIM/BIM stream enabled without an encoder");
  if (cfg.use_sim && !sim) throw ContractError("ddg model: SIM stream enabled without an encoder");
  if ((pimbim && pimbim->config().d_single != d) || (sim && sim->config().d_single != d)) {
    throw ContractError("ddg model: pre-trained encoder width differs from the fine-tune encoder");
  }
  fusion_ = nn::Linear(store, "ddg.fuse", 3 * d, d, rng);
  std::vector<std::size_t> widths{3 * d};
  widths.insert(widths.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
  widths.push_back(1);
  head_ = nn::Mlp(store, "ddg.head", widths, rng);
}

Var DdgModel::fuse(Graph& g, Var single, Var h_pimbim, Var h_sim) const {
  if (single.shape() != h_pimbim.shape() || single.shape() != h_sim.shape()) {
    throw ContractError("fuse: stream shapes differ: " + shape_string(single.shape()) + ", " +
                        shape_string(h_pimbim.shape()) + ", " + shape_string(h_sim.shape()));
  }
  return fusion_(g, ops::concat({single, h_pimbim, h_sim}, 1));
}

Var DdgModel::fuse(Graph& g, const RawFeatures& raw, const FeatureSet& features) const {
  const Shape shape = features.single.shape();
  const Var zeros = g.constant(Tensor(shape));
  const Var hp = cfg_.use_pimbim ? pimbim_->encode(g, raw) : zeros;
  const Var hs = cfg_.use_sim ? sim_->encode(g, raw) : zeros;
  return fuse(g, features.single, hp, hs);
}

StreamValues DdgModel::streams(const Complex& complex) const {
  const RawFeatures raw = raw_features(complex);
  const Tensor zeros({complex.size(), cfg_.encoder.d_single});
  StreamValues out{zeros, zeros};
  Graph g;
  if (cfg_.use_pimbim) out.pimbim = pimbim_->encode(g, raw).value();
  if (cfg_.use_sim) out.sim = sim_->encode(g, raw).value();
  return out;
}

Var DdgModel::global(Graph& g, const Complex& complex, const StreamValues* cached) const {
  const RawFeatures raw = raw_features(complex);
  const FeatureSet fs = encoder_.embed(g, raw);
  const Var fused = cached ? fuse(g, fs.single, g.constant(cached->pimbim), g.constant(cached->sim))
                           : fuse(g, raw, fs);
  const Var h = encoder_.run_blocks(g, fused, fs.pair, raw);
  return ops::max_axis(h, 0, true);
}

Var DdgModel::predict(Graph& g, const Complex& wild, const Complex& mutant, const StreamValues* wild_streams,
                      const StreamValues* mutant_streams) const {
  const Var hw = global(g, wild, wild_streams);
  const Var hm = global(g, mutant, mutant_streams);
  if (!cfg_.antisymmetric) return head_(g, ops::concat({hw, hm, ops::sub(hw, hm)}, 1));
  // Both orders in one batch; row-wise evaluation keeps the two rows exact mirrors.
  const Var rows = ops::concat({ops::concat({hw, hm, ops::sub(hw, hm)}, 1),
                                ops::concat({hm, hw, ops::sub(hm, hw)}, 1)}, 0);
  const Var out = head_(g, rows);
  return ops::sub(ops::slice(out, 0, 0, 1), ops::slice(out, 0, 1, 2));
}

Var DdgModel::predict_record(Graph& g, const Complex& wild, std::span<const Mutation> mutations) const {
  const Complex cropped = mutations.empty() ? wild : crop_around_sites(wild, mutations, cfg_.crop);
  return predict(g, cropped, build_mutant(cropped, mutations));
}

Var ddg_loss(Var predictions, Var labels) {
  if (predictions.value().size() == 0) throw ContractError("ddg_loss: empty batch");
  if (predictions.shape() != labels.shape()) throw ContractError("ddg_loss: prediction/label shape mismatch");
  return ops::squared_error(predictions, labels);
}

}  // namespace mutflow
