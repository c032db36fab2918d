#include "mutflow/residue.hpp"

#include <set>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

constexpr std::array<std::string_view, kNumAminoAcids> kThree = {
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL"};
constexpr std::array<char, kNumAminoAcids> kOne = {'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I',
                                                   'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y', 'V'};

using ChiDef = std::array<std::string_view, 4>;

struct ChiTable {
  std::size_t count;
  std::array<ChiDef, 4> defs;
};

const std::array<ChiTable, kNumAminoAcids>& chi_tables() {
  static const std::array<ChiTable, kNumAminoAcids> t = {{
      {0, {}},                                                                   // ALA
      {4, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD"},                   // ARG
            {"CB", "CG", "CD", "NE"}, {"CG", "CD", "NE", "CZ"}}}},
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "OD1"}, {}, {}}}},        // ASN
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "OD1"}, {}, {}}}},        // ASP
      {1, {{{"N", "CA", "CB", "SG"}, {}, {}, {}}}},                              // CYS
      {3, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD"}, {"CB", "CG", "CD", "OE1"}, {}}}},  // GLN
      {3, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD"}, {"CB", "CG", "CD", "OE1"}, {}}}},  // GLU
      {0, {}},                                                                   // GLY
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "ND1"}, {}, {}}}},        // HIS
      {2, {{{"N", "CA", "CB", "CG1"}, {"CA", "CB", "CG1", "CD1"}, {}, {}}}},      // ILE
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD1"}, {}, {}}}},        // LEU
      {4, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD"},                   // LYS
            {"CB", "CG", "CD", "CE"}, {"CG", "CD", "CE", "NZ"}}}},
      {3, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "SD"}, {"CB", "CG", "SD", "CE"}, {}}}},   // MET
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD1"}, {}, {}}}},        // PHE
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD"}, {}, {}}}},         // PRO
      {1, {{{"N", "CA", "CB", "OG"}, {}, {}, {}}}},                              // SER
      {1, {{{"N", "CA", "CB", "OG1"}, {}, {}, {}}}},                             // THR
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD1"}, {}, {}}}},        // TRP
      {2, {{{"N", "CA", "CB", "CG"}, {"CA", "CB", "CG", "CD1"}, {}, {}}}},        // TYR
      {1, {{{"N", "CA", "CB", "CG1"}, {}, {}, {}}}},                             // VAL
  }};
  return t;
}

}  // namespace

std::optional<AminoAcid> amino_acid_from_three(std::string_view code) {
  for (std::size_t i = 0; i < kNumAminoAcids; ++i) {
    if (kThree[i] == code) return static_cast<AminoAcid>(i);
  }
  return std::nullopt;
}

std::optional<AminoAcid> amino_acid_from_one(char code) {
  for (std::size_t i = 0; i < kNumAminoAcids; ++i) {
    if (kOne[i] == code) return static_cast<AminoAcid>(i);
  }
  return std::nullopt;
}

std::string_view three_letter(AminoAcid aa) { return kThree[index_of(aa)]; }
char one_letter(AminoAcid aa) { return kOne[index_of(aa)]; }
std::size_t chi_count(AminoAcid aa) { return chi_tables()[index_of(aa)].count; }

std::array<std::string_view, 4> chi_atoms(AminoAcid aa, std::size_t k) {
  const auto& t = chi_tables()[index_of(aa)];
  if (k >= t.count) throw ContractError("chi index out of range for " + std::string(three_letter(aa)));
  return t.defs[k];
}

const Vec3* Residue::atom(std::string_view name) const {
  for (const Atom& a : atoms) {
    if (a.name == name) return &a.pos;
  }
  return nullptr;
}

Vec3 Residue::require(std::string_view name) const {
  if (const Vec3* p = atom(name)) return *p;
  throw DataError("residue " + label() + " has no atom " + std::string(name));
}

RigidTransform Residue::frame() const { return build_frame(require("N"), require("CA"), require("C")); }

std::string Residue::label() const {
  std::string s(three_letter(type));
  s += ' ';
  s += chain;
  s += std::to_string(seq);
  if (icode != ' ') s += icode;
  return s;
}

ChiAngles sidechain_torsions(const Residue& res) {
  ChiAngles out;
  const std::size_t t = chi_count(res.type);
  for (std::size_t k = 0; k < t; ++k) {
    const auto names = chi_atoms(res.type, k);
    const Vec3* p[4];
    for (std::size_t a = 0; a < 4; ++a) p[a] = res.atom(names[a]);
    if (!p[0] || !p[1] || !p[2] || !p[3]) {
      out.complete = false;
      break;
    }
    try {
      out.values.push_back(dihedral(*p[0], *p[1], *p[2], *p[3]));
    } catch (const GeometryError&) {
      out.complete = false;
      break;
    }
  }
  return out;
}

void Complex::validate() const {
  if (receptor.empty() || ligand.empty()) throw ContractError("complex " + id + ": empty binder");
  std::set<std::size_t> seen;
  for (std::size_t i : receptor) {
    if (i >= residues.size()) throw ContractError("complex " + id + ": receptor index out of range");
    seen.insert(i);
  }
  for (std::size_t i : ligand) {
    if (i >= residues.size()) throw ContractError("complex " + id + ": ligand index out of range");
    if (!seen.insert(i).second) throw ContractError("complex " + id + ": binders overlap");
  }
  if (seen.size() != residues.size() || receptor.size() + ligand.size() != residues.size()) {
    throw ContractError("complex " + id + ": binders do not cover all residues exactly once");
  }
}

Tensor ca_distance_map(const Complex& complex) {
  if (complex.ligand.empty() || complex.receptor.empty()) {
    throw ContractError("ca_distance_map: complex " + complex.id + " has an empty binder");
  }
  Tensor d({complex.ligand.size(), complex.receptor.size()});
  std::vector<Vec3> rec;
  rec.reserve(complex.receptor.size());
  for (std::size_t j : complex.receptor) rec.push_back(complex.residues[j].ca());
  for (std::size_t i = 0; i < complex.ligand.size(); ++i) {
    const Vec3 a = complex.residues[complex.ligand[i]].ca();
    for (std::size_t j = 0; j < rec.size(); ++j) d.at(i, j) = distance(a, rec[j]);
  }
  return d;
}

Complex apply_ligand_transform(const Complex& complex, const RigidTransform& t) {
  Complex out = complex;
  for (std::size_t i : out.ligand) {
    for (Atom& a : out.residues[i].atoms) a.pos = t.apply(a.pos);
  }
  return out;
}

Complex transform_complex(const Complex& complex, const RigidTransform& t) {
  Complex out = complex;
  for (Residue& r : out.residues) {
    for (Atom& a : r.atoms) a.pos = t.apply(a.pos);
  }
  return out;
}

Vec3 ca_centroid(const Complex& complex, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("ca_centroid: empty index set");
  Vec3 c;
  for (std::size_t i : indices) c = c + complex.residues[i].ca();
  return (1.0 / static_cast<double>(indices.size())) * c;
}

RigidTransform sample_unbound_transform(const Complex& complex, Rng& rng, double radius) {
  const Vec3 centre = ca_centroid(complex, complex.ligand);
  const Mat3 r = random_rotation(rng);
  const Vec3 shift = random_in_ball(radius, rng);
  // x -> R (x - c) + c + shift
  return {r, centre + shift - r * centre};
}

Complex random_unbound_transform(const Complex& complex, Rng& rng) {
  return apply_ligand_transform(complex, sample_unbound_transform(complex, rng));
}

}  // namespace mutflow
