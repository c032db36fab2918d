#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mutflow/nn.hpp"
#include "mutflow/residue.hpp"

namespace mutflow {

// Raw single features per residue:
//   [0,20)  residue type one-hot
//   [20,26) sin/cos of phi, psi, omega (zeros when undefined)
//   [26,29) validity bits for phi, psi, omega
//   [29,41) N, CA, C, O in the residue frame (O zeros when absent)
inline constexpr std::size_t kSingleRawWidth = 41;
inline constexpr std::size_t kDihedralOffset = 20;
inline constexpr std::size_t kValidityOffset = 26;
inline constexpr std::size_t kLocalCoordOffset = 29;

inline constexpr int kOffsetClip = 32;
inline constexpr std::size_t kOffsetClasses = 2 * kOffsetClip + 2;  // 65 offsets and the cross-chain class
inline constexpr std::size_t kCrossChainClass = 2 * kOffsetClip + 1;
inline constexpr std::size_t kTypePairClasses = kNumAminoAcids * kNumAminoAcids;

// Relative-geometry features of a residue list. Pair entries are row-major
// over (i, j).
struct RawFeatures {
  std::size_t n = 0;
  Tensor single;                      // [n, 41]
  std::vector<std::size_t> type_pair;  // n*n classes, type_i * 20 + type_j
  std::vector<std::size_t> offset;     // n*n classes, see offset_class
  Tensor partner;                      // [n*n, 3] CA_j in frame i, scaled by 0.1
  Tensor rotations;                    // [n, 9] frame rotations, row-major
  Tensor translations;                 // [n, 3] frame origins (CA)
};

// Sequence separation class of residue j relative to i.
std::size_t offset_class(const Residue& i, const Residue& j);

// Neighbours for the backbone dihedrals are the adjacent list entries on the
// same chain whose peptide C-N distance is below 2.5 A.
RawFeatures raw_features(std::span<const Residue> residues);
inline RawFeatures raw_features(const Complex& c) { return raw_features(c.residues); }

// Embedded features on a graph.
struct FeatureSet {
  Var single;  // [n, d_single]
  Var pair;    // [n*n, d_pair]
};

// Linear embedding of the single features; table lookups for the pair
// classes plus a linear map of the partner coordinate.
class Featurizer {
 public:
  Featurizer() = default;
  Featurizer(ParameterStore& store, const std::string& prefix, std::size_t d_single, std::size_t d_pair,
             Rng& rng);

  FeatureSet operator()(Graph& g, const RawFeatures& raw) const;

 private:
  nn::Linear single_;
  Parameter* type_table_ = nullptr;
  Parameter* offset_table_ = nullptr;
  nn::Linear partner_;
};

}  // namespace mutflow
