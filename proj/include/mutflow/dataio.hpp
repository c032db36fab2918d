#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mutflow/residue.hpp"

namespace mutflow {

// Chain ids assigned to each binder. Empty on both sides means "first chain in
// the file is the receptor, every other chain the ligand".
struct ChainPartition {
  std::string receptor;
  std::string ligand;
};

// "1ABC_HL_A" -> stem "1ABC", receptor "HL", ligand "A". An id without the two
// suffixes yields an empty partition.
std::string structure_stem(std::string_view complex_id);
ChainPartition partition_from_id(std::string_view complex_id);

// ATOM records (first model only) grouped into residues in file order.
// Residues with an unknown name or without N/CA/C are skipped and reported in
// `warnings`. An unparseable coordinate throws DataError with the line number.
std::vector<Residue> parse_residues(std::string_view text, std::vector<std::string>* warnings = nullptr);

Complex parse_structure(std::string_view text, const std::string& id, const ChainPartition& partition,
                        std::vector<std::string>* warnings = nullptr);

std::string serialize_structure(std::span<const Residue> residues);

struct Mutation {
  AminoAcid wild = AminoAcid::ALA;
  char chain = 'A';
  int seq = 0;
  char icode = ' ';
  AminoAcid mutant = AminoAcid::ALA;

  // Wild type, chain, number, optional lowercase insertion code, mutant: "TH31W".
  std::string token() const;
  friend bool operator==(const Mutation&, const Mutation&) = default;
};

// nullopt with a reason when the token is malformed.
std::optional<Mutation> parse_mutation(std::string_view token, std::string* reason = nullptr);

struct MutationRecord {
  std::string complex_id;
  std::vector<Mutation> mutations;
  std::optional<double> ddg;

  std::string mutation_string() const;  // tokens joined by ';'
  bool single() const { return mutations.size() == 1; }
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct MutationTable {
  std::vector<MutationRecord> records;
  std::vector<RejectedRow> rejected;
};

// CSV with header `complex_id,mutations,ddg`; mutations are ';'-separated and
// an empty ddg marks an unlabelled row.
MutationTable parse_mutation_table(std::string_view text);

struct FoldSplit {
  std::array<std::vector<std::string>, 3> folds;
};

// Deals the distinct ids (sorted, then shuffled) round-robin into three folds.
FoldSplit split_three_folds(std::vector<std::string> complex_ids, Rng& rng);
// Throws DataError unless the folds are pairwise disjoint and cover `ids`.
void check_fold_split(const FoldSplit& split, const std::vector<std::string>& ids);
std::string fold_split_to_json(const FoldSplit& split);
FoldSplit fold_split_from_json(std::string_view text);

enum class CropMode { interface, uniform };

// At most `per_binder` residues of each binder. Interface mode keeps those
// nearest the partner's CA centroid (ties broken by a sub-milliangstrom
// random jitter); uniform mode samples without replacement. Residue order and
// binder labels are preserved.
Complex crop_interface(const Complex& complex, Rng& rng, CropMode mode = CropMode::interface,
                       std::size_t per_binder = 64);

// Contiguous window of min(size, length) positions at a random start.
std::vector<std::size_t> crop_patch(std::size_t length, Rng& rng, std::size_t size = 128);

// One cluster per non-empty line, members separated by whitespace.
std::vector<std::vector<std::string>> parse_clusters(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace mutflow
