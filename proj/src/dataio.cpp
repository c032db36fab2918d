#include "mutflow/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

std::string_view field(std::string_view line, std::size_t begin, std::size_t end) {
  if (begin >= line.size()) return {};
  return line.substr(begin, std::min(end, line.size()) - begin);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<int> to_int(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string structure_stem(std::string_view complex_id) {
  const auto parts = split(complex_id, '_');
  return std::string(parts.front());
}

ChainPartition partition_from_id(std::string_view complex_id) {
  const auto parts = split(complex_id, '_');
  if (parts.size() == 3 && !parts[1].empty() && !parts[2].empty()) {
    return {std::string(parts[1]), std::string(parts[2])};
  }
  return {};
}

std::vector<Residue> parse_residues(std::string_view text, std::vector<std::string>* warnings) {
  std::vector<Residue> residues;
  std::set<std::string> skipped;
  bool current_valid = false;
  std::string current_key;
  std::size_t atom_records = 0;
  std::size_t line_no = 0;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (line.starts_with("ENDMDL")) break;
    if (!line.starts_with("ATOM  ")) continue;
    ++atom_records;
    const std::string name(trim(field(line, 12, 16)));
    const char alt = line.size() > 16 ? line[16] : ' ';
    const std::string resname(trim(field(line, 17, 20)));
    const char chain = line.size() > 21 ? line[21] : ' ';
    const auto seq = to_int(field(line, 22, 26));
    const char icode = line.size() > 26 ? line[26] : ' ';
    if (!seq) throw DataError("line " + std::to_string(line_no) + ": bad residue number");
    const auto x = to_double(field(line, 30, 38));
    const auto y = to_double(field(line, 38, 46));
    const auto z = to_double(field(line, 46, 54));
    if (!x || !y || !z) throw DataError("line " + std::to_string(line_no) + ": unparseable coordinate");
    if (alt != ' ' && alt != 'A' && alt != '1') continue;

    const std::string key = std::string(1, chain) + ":" + std::to_string(*seq) + icode;
    if (key != current_key) {
      current_key = key;
      const auto aa = amino_acid_from_three(resname);
      current_valid = aa.has_value();
      if (!aa) {
        if (skipped.insert(key).second) warn("skipping unknown residue " + resname + " " + key);
        continue;
      }
      Residue r;
      r.type = *aa;
      r.chain = chain;
      r.seq = *seq;
      r.icode = icode;
      residues.push_back(std::move(r));
    }
    if (!current_valid) continue;
    Residue& r = residues.back();
    if (!r.atom(name)) r.atoms.push_back({name, {*x, *y, *z}});
  }
  if (atom_records == 0) throw DataError("structure has no ATOM records (empty complex)");

  std::vector<Residue> kept;
  kept.reserve(residues.size());
  for (Residue& r : residues) {
    if (!r.atom("N") || !r.atom("CA") || !r.atom("C")) {
      warn("skipping residue " + r.label() + " without complete backbone");
      continue;
    }
    try {
      (void)r.frame();
    } catch (const GeometryError&) {
      warn("skipping residue " + r.label() + " with degenerate backbone");
      continue;
    }
    kept.push_back(std::move(r));
  }
  return kept;
}

Complex parse_structure(std::string_view text, const std::string& id, const ChainPartition& partition,
                        std::vector<std::string>* warnings) {
  std::vector<Residue> residues = parse_residues(text, warnings);
  if (residues.empty()) throw DataError("structure " + id + " has no usable residues (empty complex)");
  std::string receptor = partition.receptor;
  std::string ligand = partition.ligand;
  if (receptor.empty() && ligand.empty()) receptor = std::string(1, residues.front().chain);

  Complex c;
  c.id = id;
  for (Residue& r : residues) {
    const bool in_r = receptor.find(r.chain) != std::string::npos;
    const bool in_l = ligand.empty() ? !in_r : ligand.find(r.chain) != std::string::npos;
    if (in_r && in_l) throw DataError("structure " + id + ": chain " + r.chain + " assigned to both binders");
    if (!in_r && !in_l) {
      if (warnings) warnings->push_back("dropping residue " + r.label() + " outside the chain partition");
      continue;
    }
    (in_r ? c.receptor : c.ligand).push_back(c.residues.size());
    c.residues.push_back(std::move(r));
  }
  if (c.receptor.empty() || c.ligand.empty()) {
    throw DataError("structure " + id + ": a binder has no residues under the chain partition");
  }
  return c;
}

std::string serialize_structure(std::span<const Residue> residues) {
  std::string out;
  int serial = 1;
  char buf[128];
  for (const Residue& r : residues) {
    for (const Atom& a : r.atoms) {
      // Names shorter than four characters start in column 14.
      std::string name = a.name.size() < 4 ? " " + a.name : a.name;
      std::snprintf(buf, sizeof buf, "ATOM  %5d %-4s %3s %c%4d%c   %8.3f%8.3f%8.3f%6.2f%6.2f          %2c\n",
                    serial++ % 100000, name.c_str(), std::string(three_letter(r.type)).c_str(), r.chain, r.seq,
                    r.icode, a.pos.x, a.pos.y, a.pos.z, 1.0, 0.0, a.name.front());
      out += buf;
    }
  }
  out += "END\n";
  return out;
}

std::string Mutation::token() const {
  std::string s;
  s += one_letter(wild);
  s += chain;
  s += std::to_string(seq);
  if (icode != ' ') s += icode;
  s += one_letter(mutant);
  return s;
}

std::optional<Mutation> parse_mutation(std::string_view token, std::string* reason) {
  static const std::regex re("^([A-Z])([A-Za-z0-9])(-?[0-9]+)([a-z]?)([A-Z])$");
  const std::string tok(trim(token));
  std::smatch m;
  auto fail = [&](const std::string& why) -> std::optional<Mutation> {
    if (reason) *reason = why;
    return std::nullopt;
  };
  if (!std::regex_match(tok, m, re)) return fail("malformed mutation token '" + tok + "'");
  const auto wild = amino_acid_from_one(m[1].str()[0]);
  const auto mutant = amino_acid_from_one(m[5].str()[0]);
  if (!wild) return fail("unknown wild-type amino acid in '" + tok + "'");
  if (!mutant) return fail("unknown mutant amino acid in '" + tok + "'");
  Mutation mu;
  mu.wild = *wild;
  mu.chain = m[2].str()[0];
  mu.seq = std::stoi(m[3].str());
  mu.icode = m[4].length() ? m[4].str()[0] : ' ';
  mu.mutant = *mutant;
  return mu;
}

std::string MutationRecord::mutation_string() const {
  std::string s;
  for (std::size_t i = 0; i < mutations.size(); ++i) {
    if (i) s += ';';
    s += mutations[i].token();
  }
  return s;
}

MutationTable parse_mutation_table(std::string_view text) {
  MutationTable table;
  const auto lines = split_lines(text);
  std::size_t first = 0;
  while (first < lines.size() && trim(lines[first]).empty()) ++first;
  if (first == lines.size()) throw DataError("mutation table is empty (missing header)");
  std::string_view header = lines[first];
  if (header.starts_with("\xEF\xBB\xBF")) header.remove_prefix(3);
  const auto cols = split(header, ',');
  if (cols.size() < 3 || trim(cols[0]) != "complex_id" || trim(cols[1]) != "mutations" || trim(cols[2]) != "ddg") {
    throw DataError("mutation table header must be 'complex_id,mutations,ddg'");
  }
  for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
    const std::string_view line = lines[ln];
    if (trim(line).empty()) continue;
    const std::size_t line_no = ln + 1;
    const auto parts = split(line, ',');
    if (parts.size() != 3) {
      table.rejected.push_back({line_no, "expected 3 fields, got " + std::to_string(parts.size())});
      continue;
    }
    MutationRecord rec;
    rec.complex_id = std::string(trim(parts[0]));
    if (rec.complex_id.empty()) {
      table.rejected.push_back({line_no, "empty complex_id"});
      continue;
    }
    std::string reason;
    bool ok = true;
    for (std::string_view tok : split(parts[1], ';')) {
      if (trim(tok).empty()) continue;
      auto mu = parse_mutation(tok, &reason);
      if (!mu) {
        ok = false;
        break;
      }
      rec.mutations.push_back(*mu);
    }
    if (ok && rec.mutations.empty()) {
      ok = false;
      reason = "no mutations";
    }
    if (ok && !trim(parts[2]).empty()) {
      rec.ddg = to_double(parts[2]);
      if (!rec.ddg) {
        ok = false;
        reason = "unparseable ddg '" + std::string(trim(parts[2])) + "'";
      }
    }
    if (!ok) {
      table.rejected.push_back({line_no, reason});
      continue;
    }
    table.records.push_back(std::move(rec));
  }
  return table;
}

FoldSplit split_three_folds(std::vector<std::string> complex_ids, Rng& rng) {
  std::sort(complex_ids.begin(), complex_ids.end());
  complex_ids.erase(std::unique(complex_ids.begin(), complex_ids.end()), complex_ids.end());
  if (complex_ids.size() < 3) {
    throw ContractError("split_three_folds: need at least 3 distinct complexes, got " +
                        std::to_string(complex_ids.size()));
  }
  std::shuffle(complex_ids.begin(), complex_ids.end(), rng);
  FoldSplit split;
  for (std::size_t i = 0; i < complex_ids.size(); ++i) split.folds[i % 3].push_back(complex_ids[i]);
  return split;
}

void check_fold_split(const FoldSplit& split, const std::vector<std::string>& ids) {
  std::map<std::string, int> owner;
  for (int f = 0; f < 3; ++f) {
    for (const auto& id : split.folds[f]) {
      auto [it, fresh] = owner.emplace(id, f);
      if (!fresh) throw DataError("complex " + id + " appears in more than one fold");
    }
  }
  const std::set<std::string> wanted(ids.begin(), ids.end());
  for (const auto& id : wanted) {
    if (!owner.count(id)) throw DataError("complex " + id + " is not assigned to any fold");
  }
  for (const auto& [id, f] : owner) {
    if (!wanted.count(id)) throw DataError("fold file lists unknown complex " + id);
  }
}

std::string fold_split_to_json(const FoldSplit& split) {
  nlohmann::json j;
  for (int f = 0; f < 3; ++f) j["fold" + std::to_string(f)] = split.folds[f];
  return j.dump(2) + "\n";
}

FoldSplit fold_split_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("fold file: ") + e.what());
  }
  FoldSplit split;
  for (int f = 0; f < 3; ++f) {
    const std::string key = "fold" + std::to_string(f);
    if (!j.contains(key) || !j[key].is_array()) throw DataError("fold file lacks array '" + key + "'");
    split.folds[f] = j[key].get<std::vector<std::string>>();
  }
  return split;
}

Complex crop_interface(const Complex& complex, Rng& rng, CropMode mode, std::size_t per_binder) {
  complex.validate();
  auto choose = [&](const std::vector<std::size_t>& own, const std::vector<std::size_t>& partner) {
    if (own.size() <= per_binder) return own;
    std::vector<std::size_t> picked;
    if (mode == CropMode::uniform) {
      std::sample(own.begin(), own.end(), std::back_inserter(picked), per_binder, rng);
      return picked;
    }
    const Vec3 centre = ca_centroid(complex, partner);
    std::uniform_real_distribution<double> jitter(0.0, 1e-4);
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(own.size());
    for (std::size_t i : own) keyed.emplace_back(distance(complex.residues[i].ca(), centre) + jitter(rng), i);
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(per_binder), keyed.end());
    for (std::size_t k = 0; k < per_binder; ++k) picked.push_back(keyed[k].second);
    std::sort(picked.begin(), picked.end());
    return picked;
  };
  const auto rec = choose(complex.receptor, complex.ligand);
  const auto lig = choose(complex.ligand, complex.receptor);

  std::vector<std::pair<std::size_t, bool>> keep;  // (original index, is_ligand)
  for (std::size_t i : rec) keep.emplace_back(i, false);
  for (std::size_t i : lig) keep.emplace_back(i, true);
  std::sort(keep.begin(), keep.end());

  Complex out;
  out.id = complex.id;
  for (auto [i, is_lig] : keep) {
    (is_lig ? out.ligand : out.receptor).push_back(out.residues.size());
    out.residues.push_back(complex.residues[i]);
  }
  return out;
}

std::vector<std::size_t> crop_patch(std::size_t length, Rng& rng, std::size_t size) {
  if (length == 0) throw ContractError("crop_patch: empty chain");
  const std::size_t len = std::min(length, size);
  std::uniform_int_distribution<std::size_t> start_dist(0, length - len);
  const std::size_t start = start_dist(rng);
  std::vector<std::size_t> window(len);
  std::iota(window.begin(), window.end(), start);
  return window;
}

std::vector<std::vector<std::string>> parse_clusters(std::string_view text) {
  std::vector<std::vector<std::string>> clusters;
  for (std::string_view line : split_lines(text)) {
    std::istringstream ss{std::string(line)};
    std::vector<std::string> members;
    for (std::string tok; ss >> tok;) members.push_back(tok);
    if (!members.empty()) clusters.push_back(std::move(members));
  }
  return clusters;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace mutflow
