#include "fixtures.hpp"

#include <cmath>
#include <algorithm>
#include <atomic>
#include <numbers>
#include <set>
#include <unistd.h>

#include "mutflow/ops.hpp"

namespace fixtures {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

static Vec3 operator*(Vec3 a, double s) { return s * a; }

Vec3 place_atom(Vec3 a, Vec3 b, Vec3 c, double bond, double angle, double torsion) {
  const Vec3 bc = (c - b) * (1.0 / norm(c - b));
  Vec3 n = cross(b - a, bc);
  n = n * (1.0 / norm(n));
  const Vec3 m = cross(n, bc);
  const Vec3 d2{-bond * std::cos(angle), bond * std::sin(angle) * std::cos(torsion),
                bond * std::sin(angle) * std::sin(torsion)};
  return c + bc * d2.x + m * d2.y + n * d2.z;
}

std::vector<AminoAcid> random_types(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kNumAminoAcids) - 1);
  std::vector<AminoAcid> t(n);
  for (auto& a : t) a = static_cast<AminoAcid>(pick(rng));
  return t;
}

std::vector<Residue> build_chain(char chain, int first_seq, const std::vector<AminoAcid>& types, Rng& rng,
                                 const std::vector<std::vector<double>>* chis) {
  std::normal_distribution<double> noise(0.0, 8.0 * kDeg);
  std::uniform_int_distribution<int> mode(0, 2);
  std::vector<Residue> out;
  Vec3 n{0.0, 1.458 * std::cos(70 * kDeg), 1.458 * std::sin(70 * kDeg)};
  Vec3 ca{0.0, 0.0, 0.0};
  Vec3 c{1.525, 0.0, 0.0};
  for (std::size_t i = 0; i < types.size(); ++i) {
    if (i > 0) {
      const Residue& p = out.back();
      const Vec3 pn = p.require("N"), pca = p.require("CA"), pc = p.require("C");
      const double psi = (-45.0 * kDeg) + noise(rng);
      const double phi = (-60.0 * kDeg) + noise(rng);
      n = place_atom(pn, pca, pc, 1.329, 116.2 * kDeg, psi);
      ca = place_atom(pca, pc, n, 1.458, 121.7 * kDeg, std::numbers::pi);
      c = place_atom(pc, n, ca, 1.525, 111.2 * kDeg, phi);
      // Carbonyl oxygen of the previous residue lies in the peptide plane.
      out.back().atoms.push_back({"O", place_atom(n, pca, pc, 1.231, 120.5 * kDeg, std::numbers::pi)});
    }
    Residue r;
    r.type = types[i];
    r.chain = chain;
    r.seq = first_seq + static_cast<int>(i);
    r.atoms = {{"N", n}, {"CA", ca}, {"C", c}};
    if (types[i] != AminoAcid::GLY) {
      r.atoms.push_back({"CB", place_atom(c, n, ca, 1.53, 110.5 * kDeg, -122.5 * kDeg)});
      for (std::size_t k = 0; k < chi_count(types[i]); ++k) {
        const auto names = chi_atoms(types[i], k);
        const double chi = chis ? (*chis)[i].at(k) : (60.0 + 120.0 * mode(rng)) * kDeg + noise(rng);
        r.atoms.push_back({std::string(names[3]), place_atom(r.require(names[0]), r.require(names[1]),
                                                             r.require(names[2]), 1.52, 113.0 * kDeg, chi)});
      }
    }
    out.push_back(std::move(r));
  }
  // Terminal oxygen.
  Residue& last = out.back();
  last.atoms.push_back({"O", place_atom(last.require("N"), last.require("CA"), last.require("C"), 1.231,
                                        120.5 * kDeg, 0.0)});
  return out;
}

Complex make_complex(const std::string& id, const std::vector<AminoAcid>& receptor,
                     const std::vector<AminoAcid>& ligand, Rng& rng) {
  Complex c;
  c.id = id;
  for (Residue& r : build_chain('A', 1, receptor, rng)) {
    c.receptor.push_back(c.residues.size());
    c.residues.push_back(std::move(r));
  }
  std::vector<Residue> lig = build_chain('B', 1, ligand, rng);
  const Mat3 rot = random_rotation(rng);
  Vec3 centre{};
  for (const Residue& r : lig) centre = centre + r.ca();
  centre = centre * (1.0 / static_cast<double>(lig.size()));
  Vec3 rec_centre{};
  for (std::size_t i : c.receptor) rec_centre = rec_centre + c.residues[i].ca();
  rec_centre = rec_centre * (1.0 / static_cast<double>(c.receptor.size()));
  Vec3 dir = random_in_ball(1.0, rng);
  dir = dir * (1.0 / std::max(norm(dir), 1e-3));
  const Vec3 target = rec_centre + dir * 10.0;
  for (Residue& r : lig) {
    for (Atom& a : r.atoms) a.pos = rot * (a.pos - centre) + target;
    c.ligand.push_back(c.residues.size());
    c.residues.push_back(std::move(r));
  }
  return c;
}

Complex random_complex(const std::string& id, std::size_t n_rec, std::size_t n_lig, Rng& rng) {
  const auto rec = random_types(n_rec, rng);
  const auto lig = random_types(n_lig, rng);
  return make_complex(id, rec, lig, rng);
}

double gradcheck(ParameterStore& store, const std::vector<Parameter*>& params,
                 const std::function<Var(Graph&)>& build, double eps, std::size_t per_param, unsigned seed) {
  store.zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  Rng rng(seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (Parameter* p : params) {
    const std::size_t size = p->value.size();
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(size, per_param));
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      double up, down;
      {
        Graph g;
        up = build(g).value().item();
      }
      p->value[i] = orig - eps;
      {
        Graph g;
        down = build(g).value().item();
      }
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
}

RunConfig tiny_run_config(const std::filesystem::path& output) {
  RunConfig cfg;
  cfg.output = output;
  cfg.echo = false;
  cfg.iterations = 20;
  cfg.batch = 4;
  cfg.lr = 3e-3;
  cfg.validate_every = 10;
  cfg.threads = 1;
  cfg.encoder.blocks = 1;
  cfg.encoder.d_single = 16;
  cfg.encoder.d_pair = 8;
  cfg.encoder.heads = 2;
  cfg.encoder.points = 2;
  cfg.pair_head.layers = 1;
  cfg.pair_head.width = 8;
  cfg.pair_head.heads = 2;
  cfg.flow.hidden = {16};
  cfg.head_hidden = {16};
  return cfg;
}

void write_complex(const std::filesystem::path& dir, const Complex& c) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / (c.id + ".pdb"), serialize_structure(c.residues));
}

std::vector<MutationRecord> random_records(const Complex& c, std::size_t count, Rng& rng,
                                           const std::function<double(const Mutation&)>& label) {
  std::vector<MutationRecord> out;
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::uniform_int_distribution<std::size_t> site(0, c.size() - 1), aa(0, kNumAminoAcids - 1);
  while (out.size() < count) {
    const std::size_t i = site(rng);
    const std::size_t t = aa(rng);
    const Residue& r = c.residues[i];
    if (t == index_of(r.type) || !used.insert({i, t}).second) continue;
    const Mutation m{r.type, r.chain, r.seq, r.icode, static_cast<AminoAcid>(t)};
    MutationRecord rec{c.id, {m}, std::nullopt};
    if (label) rec.ddg = label(m);
    out.push_back(rec);
  }
  return out;
}

std::string mutation_table_csv(const std::vector<MutationRecord>& records) {
  std::string out = "complex_id,mutations,ddg\n";
  for (const auto& r : records) {
    out += r.complex_id + "," + r.mutation_string() + "," + (r.ddg ? format_double(*r.ddg) : "") + "\n";
  }
  return out;
}

double planted_ddg(const Mutation& m) {
  // Kyte-Doolittle hydropathy in enum order, scaled.
  static const double kd[kNumAminoAcids] = {1.8, -4.5, -3.5, -3.5, 2.5, -3.5, -3.5, -0.4, -3.2, 4.5,
                                            3.8, -3.9, 1.9, 2.8, -1.6, -0.8, -0.7, -0.9, -1.3, 4.2};
  return 0.4 * (kd[index_of(m.wild)] - kd[index_of(m.mutant)]);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path = std::filesystem::temp_directory_path() /
         ("mutflow_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path, ec);
}

}  // namespace fixtures
