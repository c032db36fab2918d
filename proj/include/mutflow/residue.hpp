#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mutflow/geometry.hpp"

namespace mutflow {

inline constexpr std::size_t kNumAminoAcids = 20;
inline constexpr std::size_t kMaxChi = 4;

// Index order is alphabetical by three-letter code.
enum class AminoAcid : std::uint8_t {
  ALA, ARG, ASN, ASP, CYS, GLN, GLU, GLY, HIS, ILE,
  LEU, LYS, MET, PHE, PRO, SER, THR, TRP, TYR, VAL
};

std::optional<AminoAcid> amino_acid_from_three(std::string_view code);
std::optional<AminoAcid> amino_acid_from_one(char code);
std::string_view three_letter(AminoAcid aa);
char one_letter(AminoAcid aa);
inline std::size_t index_of(AminoAcid aa) { return static_cast<std::size_t>(aa); }

// Number of sidechain torsions chi1..chi4 defined for the residue type.
std::size_t chi_count(AminoAcid aa);
// Four atom names defining chi_(k+1) for the residue type.
std::array<std::string_view, 4> chi_atoms(AminoAcid aa, std::size_t k);

struct Atom {
  std::string name;
  Vec3 pos;
};

struct Residue {
  AminoAcid type = AminoAcid::GLY;
  char chain = 'A';
  int seq = 0;
  char icode = ' ';
  std::vector<Atom> atoms;

  const Vec3* atom(std::string_view name) const;
  // Throws DataError naming the residue when the atom is absent.
  Vec3 require(std::string_view name) const;
  Vec3 ca() const { return require("CA"); }
  RigidTransform frame() const;
  std::string label() const;
};

struct ChiAngles {
  std::vector<double> values;  // chi1..chit, each in [0, 2*pi)
  bool complete = true;        // false when a defining atom is missing
};

ChiAngles sidechain_torsions(const Residue& res);

// Two binders as disjoint index sets over one residue list.
struct Complex {
  std::string id;
  std::vector<Residue> residues;
  std::vector<std::size_t> receptor;
  std::vector<std::size_t> ligand;

  std::size_t size() const { return residues.size(); }
  // Throws ContractError unless receptor/ligand are non-empty, disjoint and
  // together cover every residue.
  void validate() const;
};

// Rows ligand residues, columns receptor residues, entries in Angstrom.
Tensor ca_distance_map(const Complex& complex);

// Applies the transform to every ligand atom; receptor residues are untouched.
Complex apply_ligand_transform(const Complex& complex, const RigidTransform& t);

// Random rigid motion for the ligand: a uniform rotation about the ligand
// centroid followed by a shift drawn uniformly from a ball of `radius` A.
RigidTransform sample_unbound_transform(const Complex& complex, Rng& rng, double radius = 10.0);

Complex random_unbound_transform(const Complex& complex, Rng& rng);

// Applies the transform to every atom of the complex.
Complex transform_complex(const Complex& complex, const RigidTransform& t);

Vec3 ca_centroid(const Complex& complex, std::span<const std::size_t> indices);

}  // namespace mutflow
