#include "mutflow/featurize.hpp"

#include <algorithm>
#include <cmath>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

bool bonded(const Residue& prev, const Residue& next) {
  if (prev.chain != next.chain) return false;
  const Vec3* c = prev.atom("C");
  const Vec3* n = next.atom("N");
  return c && n && distance(*c, *n) < 2.5;
}

void put_angle(Tensor& single, std::size_t row, std::size_t slot, const std::optional<double>& angle) {
  if (!angle) return;
  single.at(row, kDihedralOffset + 2 * slot) = std::sin(*angle);
  single.at(row, kDihedralOffset + 2 * slot + 1) = std::cos(*angle);
  single.at(row, kValidityOffset + slot) = 1.0;
}

std::optional<double> try_dihedral(Vec3 a, Vec3 b, Vec3 c, Vec3 d) {
  try {
    return dihedral(a, b, c, d);
  } catch (const GeometryError&) {
    return std::nullopt;
  }
}

}  // namespace

std::size_t offset_class(const Residue& i, const Residue& j) {
  if (i.chain != j.chain) return kCrossChainClass;
  const int d = std::clamp(j.seq - i.seq, -kOffsetClip, kOffsetClip);
  return static_cast<std::size_t>(d + kOffsetClip);
}

RawFeatures raw_features(std::span<const Residue> residues) {
  const std::size_t n = residues.size();
  if (n == 0) throw ContractError("raw_features: empty residue list");
  RawFeatures f;
  f.n = n;
  f.single = Tensor({n, kSingleRawWidth});
  f.rotations = Tensor({n, 9});
  f.translations = Tensor({n, 3});
  std::vector<RigidTransform> frames;
  frames.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Residue& r = residues[i];
    const RigidTransform fr = r.frame();
    frames.push_back(fr);
    for (std::size_t k = 0; k < 9; ++k) f.rotations.at(i, k) = fr.rotation.m[k];
    f.translations.at(i, 0) = fr.translation.x;
    f.translations.at(i, 1) = fr.translation.y;
    f.translations.at(i, 2) = fr.translation.z;

    f.single.at(i, index_of(r.type)) = 1.0;

    const Vec3 n_i = r.require("N"), ca_i = r.require("CA"), c_i = r.require("C");
    const bool has_prev = i > 0 && bonded(residues[i - 1], r);
    const bool has_next = i + 1 < n && bonded(r, residues[i + 1]);
    if (has_prev) {
      const Residue& p = residues[i - 1];
      put_angle(f.single, i, 0, try_dihedral(p.require("C"), n_i, ca_i, c_i));
      put_angle(f.single, i, 2, try_dihedral(p.require("CA"), p.require("C"), n_i, ca_i));
    }
    if (has_next) put_angle(f.single, i, 1, try_dihedral(n_i, ca_i, c_i, residues[i + 1].require("N")));

    static constexpr const char* kBackbone[4] = {"N", "CA", "C", "O"};
    for (std::size_t a = 0; a < 4; ++a) {
      const Vec3* p = r.atom(kBackbone[a]);
      if (!p) continue;
      const Vec3 local = fr.apply_inverse(*p);
      f.single.at(i, kLocalCoordOffset + 3 * a) = local.x;
      f.single.at(i, kLocalCoordOffset + 3 * a + 1) = local.y;
      f.single.at(i, kLocalCoordOffset + 3 * a + 2) = local.z;
    }
    // The frame origin is CA itself; store an exact zero.
    for (std::size_t k = 0; k < 3; ++k) f.single.at(i, kLocalCoordOffset + 3 + k) = 0.0;
  }

  f.type_pair.resize(n * n);
  f.offset.resize(n * n);
  f.partner = Tensor({n * n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = i * n + j;
      f.type_pair[k] = index_of(residues[i].type) * kNumAminoAcids + index_of(residues[j].type);
      f.offset[k] = offset_class(residues[i], residues[j]);
      const Vec3 local = i == j ? Vec3{} : frames[i].apply_inverse(frames[j].translation);
      f.partner.at(k, 0) = 0.1 * local.x;
      f.partner.at(k, 1) = 0.1 * local.y;
      f.partner.at(k, 2) = 0.1 * local.z;
    }
  }
  return f;
}

Featurizer::Featurizer(ParameterStore& store, const std::string& prefix, std::size_t d_single, std::size_t d_pair,
                       Rng& rng)
    : single_(store, prefix + ".single", kSingleRawWidth, d_single, rng),
      type_table_(&store.create(prefix + ".type_pair", nn::uniform_init({kTypePairClasses, d_pair}, 1, rng))),
      offset_table_(&store.create(prefix + ".offset", nn::uniform_init({kOffsetClasses, d_pair}, 1, rng))),
      partner_(store, prefix + ".partner", 3, d_pair, rng, false) {}

FeatureSet Featurizer::operator()(Graph& g, const RawFeatures& raw) const {
  FeatureSet fs;
  fs.single = single_(g, g.constant(raw.single));
  const Var types = ops::gather_rows(g.parameter(*type_table_), raw.type_pair);
  const Var offsets = ops::gather_rows(g.parameter(*offset_table_), raw.offset);
  fs.pair = ops::add(ops::add(types, offsets), partner_(g, g.constant(raw.partner)));
  return fs;
}

}  // namespace mutflow
