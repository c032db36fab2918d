#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mutflow/dataio.hpp"
#include "mutflow/graph.hpp"
#include "mutflow/residue.hpp"
#include "mutflow/workflows.hpp"

namespace fixtures {

using namespace mutflow;

// Position of d given a, b, c with |cd| = bond, angle bcd and torsion abcd.
Vec3 place_atom(Vec3 a, Vec3 b, Vec3 c, double bond, double angle, double torsion);

std::vector<AminoAcid> random_types(std::size_t n, Rng& rng);

// Helical backbone with noisy phi/psi, O, CB and the atoms defining every chi.
// `chis` (optional) fixes the torsions of residue i; otherwise they are drawn
// around the staggered rotamer modes.
std::vector<Residue> build_chain(char chain, int first_seq, const std::vector<AminoAcid>& types, Rng& rng,
                                 const std::vector<std::vector<double>>* chis = nullptr);

// Receptor chain 'A' and ligand chain 'B' about 10 A apart.
Complex make_complex(const std::string& id, const std::vector<AminoAcid>& receptor,
                     const std::vector<AminoAcid>& ligand, Rng& rng);
Complex random_complex(const std::string& id, std::size_t n_rec, std::size_t n_lig, Rng& rng);

// Relative error |a - n| / max(|a|, |n|, 1e-8) between the analytic parameter
// gradient of `build` and central differences. Up to `per_param` entries of
// each parameter are probed.
double gradcheck(ParameterStore& store, const std::vector<Parameter*>& params,
                 const std::function<Var(Graph&)>& build, double eps = 1e-6, std::size_t per_param = 12,
                 unsigned seed = 7);

// Narrow model widths and a short schedule for end-to-end runs.
RunConfig tiny_run_config(const std::filesystem::path& output);

// Writes <dir>/<id>.pdb.
void write_complex(const std::filesystem::path& dir, const Complex& c);

// `count` distinct single-point substitutions at random positions of c, each
// labelled by `label` (unlabelled when it is empty).
std::vector<MutationRecord> random_records(const Complex& c, std::size_t count, Rng& rng,
                                           const std::function<double(const Mutation&)>& label = {});

std::string mutation_table_csv(const std::vector<MutationRecord>& records);

// Planted signal: a per-type scale difference between mutant and wild type.
double planted_ddg(const Mutation& m);

// Temporary directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixtures
