#include "mutflow/workflows.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mutflow/error.hpp"
#include "mutflow/featurize.hpp"
#include "mutflow/ops.hpp"

namespace mutflow {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

std::string Objectives::to_string() const {
  std::vector<std::string> parts;
  if (pim) parts.push_back("pim");
  if (bim) parts.push_back("bim");
  if (sim) parts.push_back("sim");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

namespace {

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) throw ContractError("config: bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ContractError("config: bad boolean for " + key + ": '" + value + "'");
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const std::string& t : split_list(value)) out.push_back(parse_number<std::size_t>(key, t));
  return out;
}

CropMode parse_crop(const std::string& value) {
  if (value == "interface") return CropMode::interface;
  if (value == "uniform") return CropMode::uniform;
  throw ContractError("config: crop must be interface or uniform, got '" + value + "'");
}

ordered_json encoder_json(const EncoderConfig& e) {
  return {{"blocks", e.blocks}, {"d_single", e.d_single}, {"d_pair", e.d_pair}, {"heads", e.heads},
          {"points", e.points}};
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
  EncoderConfig e;
  e.blocks = j.at("blocks");
  e.d_single = j.at("d_single");
  e.d_pair = j.at("d_pair");
  e.heads = j.at("heads");
  e.points = j.at("points");
  return e;
}

}  // namespace

Objectives parse_objectives(std::string_view list) {
  Objectives o{false, false, false};
  for (const std::string& t : split_list(list)) {
    if (t == "pim") o.pim = true;
    else if (t == "bim") o.bim = true;
    else if (t == "sim") o.sim = true;
    else throw ContractError("unknown objective '" + t + "' (expected pim, bim, sim)");
  }
  if (!o.any()) throw ContractError("objective list is empty");
  return o;
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  RunConfig c;
  auto path = [&](const std::string& v) {
    fs::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ContractError("config: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string v = node.get_value<std::string>();
      const std::string k = section + "." + key;
      if (k == "data.structures") c.structures = path(v);
      else if (k == "data.clusters") c.clusters = path(v);
      else if (k == "data.mutations") c.mutations = path(v);
      else if (k == "data.folds") c.folds = path(v);
      else if (k == "data.predictions") c.predictions = path(v);
      else if (k == "data.targets") c.targets = v;
      else if (k == "checkpoint.pimbim") c.pimbim_checkpoint = path(v);
      else if (k == "checkpoint.sim") c.sim_checkpoint = path(v);
      else if (k == "checkpoint.model") c.model_checkpoint = path(v);
      else if (k == "output.dir") c.output = path(v);
      else if (k == "output.echo") c.echo = parse_bool(k, v);
      else if (k == "train.seed") c.seed = parse_number<std::uint64_t>(k, v);
      else if (k == "train.iterations") c.iterations = parse_number<std::size_t>(k, v);
      else if (k == "train.batch") c.batch = parse_number<std::size_t>(k, v);
      else if (k == "train.lr") c.lr = parse_number<double>(k, v);
      else if (k == "train.validate_every") c.validate_every = parse_number<std::size_t>(k, v);
      else if (k == "train.validation_fraction") c.validation_fraction = parse_number<double>(k, v);
      else if (k == "train.plateau_factor") c.plateau.factor = parse_number<double>(k, v);
      else if (k == "train.plateau_patience") c.plateau.patience = parse_number<std::size_t>(k, v);
      else if (k == "train.min_lr") c.plateau.min_lr = parse_number<double>(k, v);
      else if (k == "train.objectives") c.objectives = parse_objectives(v);
      else if (k == "train.crop") c.crop = parse_crop(v);
      else if (k == "train.clamp") c.clamp = parse_number<double>(k, v);
      else if (k == "train.antisymmetric") c.antisymmetric = parse_bool(k, v);
      else if (k == "train.unfreeze") c.unfreeze = parse_bool(k, v);
      else if (k == "train.threads") c.threads = parse_number<std::size_t>(k, v);
      else if (k == "model.blocks") c.encoder.blocks = parse_number<std::size_t>(k, v);
      else if (k == "model.d_single") c.encoder.d_single = parse_number<std::size_t>(k, v);
      else if (k == "model.d_pair") c.encoder.d_pair = parse_number<std::size_t>(k, v);
      else if (k == "model.heads") c.encoder.heads = parse_number<std::size_t>(k, v);
      else if (k == "model.points") c.encoder.points = parse_number<std::size_t>(k, v);
      else if (k == "model.pair_layers") c.pair_head.layers = parse_number<std::size_t>(k, v);
      else if (k == "model.pair_width") c.pair_head.width = parse_number<std::size_t>(k, v);
      else if (k == "model.pair_heads") c.pair_head.heads = parse_number<std::size_t>(k, v);
      else if (k == "model.flow_pieces") c.flow.pieces = parse_number<std::size_t>(k, v);
      else if (k == "model.flow_layers") c.flow.layers = parse_number<std::size_t>(k, v);
      else if (k == "model.flow_hidden") c.flow.hidden = parse_widths(k, v);
      else if (k == "model.head_hidden") c.head_hidden = parse_widths(k, v);
      else if (k == "model.interface_crop") c.interface_crop = parse_number<std::size_t>(k, v);
      else if (k == "model.patch") c.patch = parse_number<std::size_t>(k, v);
      else if (k == "model.ddg_crop") c.ddg_crop = parse_number<std::size_t>(k, v);
      else throw ContractError("config: unknown key " + k);
    }
  }
  c.encoder.validate();
  if (c.batch == 0) throw ContractError("config: batch must be positive");
  if (c.validate_every == 0) throw ContractError("config: validate_every must be positive");
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ContractError("config file not found: " + path.string());
  return parse_run_config(read_text_file(path), path.parent_path());
}

std::size_t thread_budget() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MUTFLOW_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ContractError(std::string("MUTFLOW_THREADS is not a positive integer: ") + env);
    }
  }
  return n;
}

// ---------------------------------------------------------------- logging, blobs

JsonLog::JsonLog(const fs::path& path, bool echo) : echo_(echo) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  file_.open(path, std::ios::trunc);
  if (!file_) throw DataError("cannot open log file " + path.string());
}

void JsonLog::write(const ordered_json& entry) {
  const std::string line = entry.dump();
  if (file_.is_open()) file_ << line << '\n' << std::flush;
  if (echo_) std::cout << line << '\n';
  entries_.push_back(entry);
}

Tensor text_blob(std::string_view text) {
  if (text.empty()) throw ContractError("text_blob: empty text");
  std::vector<double> v(text.begin(), text.end());
  for (double& x : v) x = static_cast<unsigned char>(static_cast<char>(x));
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::string blob_text(const Tensor& blob) {
  std::string out;
  out.reserve(blob.size());
  for (double v : blob.values()) out += static_cast<char>(static_cast<unsigned char>(v));
  return out;
}

namespace {

nlohmann::json checkpoint_meta(const TensorMap& blobs, const fs::path& path, const std::string& kind) {
  const auto it = blobs.find(kMetaBlob);
  if (it == blobs.end()) throw DataError("checkpoint " + path.string() + " carries no configuration");
  const auto meta = nlohmann::json::parse(blob_text(it->second));
  if (meta.value("kind", "") != kind) {
    throw DataError("checkpoint " + path.string() + " holds a '" + meta.value("kind", "?") + "' model, expected '" +
                    kind + "'");
  }
  return meta;
}

void save_with_meta(const ParameterStore& store, const ordered_json& meta, const fs::path& path) {
  TensorMap blobs = collect_parameters(store);
  blobs[kMetaBlob] = text_blob(meta.dump());
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_checkpoint(path, blobs);
}

// Indices split into (train, validation) by a seeded shuffle; the validation
// share is rounded and may be zero, in which case training data validates.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::size_t n, double fraction,
                                                                               Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n > 1 ? n - 1 : 0;
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// Cycles through a shuffled order, reshuffling at every epoch boundary.
class EpochSampler {
 public:
  EpochSampler(std::vector<std::size_t> items, Rng& rng) : items_(std::move(items)), rng_(rng) {
    if (items_.empty()) throw ContractError("sampler: nothing to sample");
    reshuffle();
  }
  // Returns true in `new_epoch` when the batch starts a fresh epoch.
  std::vector<std::size_t> next(std::size_t batch, bool* new_epoch = nullptr) {
    if (new_epoch) *new_epoch = false;
    batch = std::min(batch, items_.size());
    std::vector<std::size_t> out;
    std::set<std::size_t> used;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        reshuffle();
        if (new_epoch) *new_epoch = true;
      }
      const std::size_t item = order_[pos_++];
      if (used.insert(item).second) out.push_back(item);
    }
    return out;
  }
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_ = items_;
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
    ++epoch_;
  }
  std::vector<std::size_t> items_, order_;
  Rng& rng_;
  std::size_t pos_ = 0, epoch_ = 0;
};

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::size_t worker_count(const RunConfig& cfg) { return std::max<std::size_t>(1, std::min(cfg.threads, thread_budget())); }

}  // namespace

// ---------------------------------------------------------------- data sources

const Complex& StructureLibrary::get(const std::string& complex_id) {
  const auto it = cache_.find(complex_id);
  if (it != cache_.end()) return it->second;
  const fs::path file = dir_ / (structure_stem(complex_id) + ".pdb");
  if (!fs::exists(file)) throw DataError("structure file not found for " + complex_id + ": " + file.string());
  Complex c = parse_structure(read_text_file(file), complex_id, partition_from_id(complex_id));
  return cache_.emplace(complex_id, std::move(c)).first->second;
}

std::vector<Complex> load_complex_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("structure directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pdb") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Complex> out;
  for (const fs::path& f : files) {
    const std::string id = f.stem().string();
    out.push_back(parse_structure(read_text_file(f), id, partition_from_id(id)));
  }
  return out;
}

ClusterSampler::ClusterSampler(std::vector<std::vector<std::size_t>> clusters) : clusters_(std::move(clusters)) {
  std::erase_if(clusters_, [](const auto& c) { return c.empty(); });
  if (clusters_.empty()) throw DataError("no non-empty chain clusters");
}

std::size_t ClusterSampler::sample(Rng& rng) const {
  const auto& c = clusters_[std::uniform_int_distribution<std::size_t>(0, clusters_.size() - 1)(rng)];
  return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
}

// ---------------------------------------------------------------- PIM + BIM

namespace {

struct PpiLosses {
  std::optional<Var> pim, bim;
  Var total;
  double accuracy = 0.0;
};

struct PpiModel {
  Encoder encoder;
  std::optional<PimHead> pim;
  std::optional<BimHead> bim;

  PpiLosses losses(Graph& g, const std::vector<Complex>& batch, const RunConfig& cfg, Rng& rng) const {
    std::vector<Var> lig_pool, rec_pool, dist;
    for (const Complex& c : batch) {
      const Complex crop = crop_interface(c, rng, cfg.crop, cfg.interface_crop);
      Tensor target = ca_distance_map(crop);
      if (cfg.clamp) {
        for (double& v : target.values()) v = std::min(v, *cfg.clamp);
      }
      const Complex unbound = random_unbound_transform(crop, rng);
      const Var h = encoder.encode(g, raw_features(unbound));
      if (pim) {
        lig_pool.push_back(global_pool(h, crop.ligand));
        rec_pool.push_back(global_pool(h, crop.receptor));
      }
      if (bim) dist.push_back(bim_loss(bim->predict(g, h, crop.ligand, crop.receptor), g.constant(target)));
    }
    PpiLosses out;
    std::vector<Var> terms;
    if (pim) {
      const Var s = cosine_matrix(ops::concat(lig_pool, 0), ops::concat(rec_pool, 0));
      out.accuracy = matching_accuracy(s.value());
      out.pim = contrastive_loss(s, pim->tau(g));
      terms.push_back(*out.pim);
    }
    if (bim) {
      Var sum = dist[0];
      for (std::size_t i = 1; i < dist.size(); ++i) sum = ops::add(sum, dist[i]);
      out.bim = ops::scale(sum, 1.0 / static_cast<double>(dist.size()));
      terms.push_back(*out.bim);
    }
    out.total = terms.size() == 1 ? terms[0] : ops::add(terms[0], terms[1]);
    return out;
  }
};

ordered_json ppi_loss_json(const PpiLosses& l) {
  ordered_json j;
  if (l.pim) j["pim"] = l.pim->value().item();
  if (l.bim) j["bim"] = l.bim->value().item();
  j["total"] = l.total.value().item();
  return j;
}

Complex swap_roles(const Complex& c) {
  Complex out = c;
  std::swap(out.receptor, out.ligand);
  return out;
}

constexpr std::uint64_t kValidationSalt = 0x9e3779b97f4a7c15ULL;

}  // namespace

PretrainResult pretrain_ppi(const RunConfig& cfg, const std::vector<Complex>& complexes) {
  if (complexes.empty()) throw DataError("pretrain-ppi: empty dataset");
  if (!cfg.objectives.pim && !cfg.objectives.bim) throw ContractError("pretrain-ppi: enable pim and/or bim");
  for (const Complex& c : complexes) c.validate();

  Rng rng(cfg.seed);
  ParameterStore store;
  PpiModel model;
  model.encoder = Encoder(store, "encoder.pimbim", cfg.encoder, rng);
  if (cfg.objectives.pim) model.pim.emplace(store, "pim.tau");
  if (cfg.objectives.bim) model.bim.emplace(store, "bim", cfg.encoder.d_single, cfg.pair_head, rng);

  auto [train_idx, val_idx] = validation_split(complexes.size(), cfg.validation_fraction, rng);
  if (val_idx.empty()) val_idx = train_idx;
  std::vector<Complex> val;
  for (std::size_t i : val_idx) val.push_back(complexes[i]);

  JsonLog log(cfg.output / "pretrain-ppi.log.jsonl", cfg.echo);
  AdamState opt;
  opt.lr = cfg.lr;
  PlateauScheduler scheduler(cfg.plateau);
  EpochSampler sampler(train_idx, rng);
  std::vector<bool> flipped(complexes.size(), false);
  auto flip_roles = [&] {
    for (std::size_t i = 0; i < flipped.size(); ++i) flipped[i] = std::bernoulli_distribution(0.5)(rng);
  };
  flip_roles();

  const auto params = store.trainable();
  double best = std::numeric_limits<double>::infinity();
  auto best_values = store.snapshot();
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    bool new_epoch = false;
    const auto picks = sampler.next(cfg.batch, &new_epoch);
    if (new_epoch) flip_roles();
    std::vector<Complex> batch;
    for (std::size_t i : picks) batch.push_back(flipped[i] ? swap_roles(complexes[i]) : complexes[i]);

    store.zero_grad();
    Graph g;
    const PpiLosses l = model.losses(g, batch, cfg, rng);
    ordered_json entry{{"step", step}, {"split", "train"}, {"losses", ppi_loss_json(l)}, {"lr", opt.lr}};
    if (l.pim) entry["accuracy"] = l.accuracy;
    log.write(entry);
    if (!std::isfinite(l.total.value().item())) throw NumericError("pretrain-ppi: non-finite loss at step " + std::to_string(step));
    g.backward(l.total);
    adam_step(opt, params);
    if (model.pim) model.pim->clamp_tau();

    if ((step + 1) % cfg.validate_every == 0 || step + 1 == cfg.iterations) {
      Rng vrng(cfg.seed ^ kValidationSalt);
      Graph vg;
      const PpiLosses vl = model.losses(vg, val, cfg, vrng);
      const double v = vl.total.value().item();
      opt.lr = scheduler.update(opt.lr, v);
      log.write({{"step", step}, {"split", "validation"}, {"losses", ppi_loss_json(vl)}, {"lr", opt.lr}});
      if (v < best) {
        best = v;
        best_values = store.snapshot();
      }
    }
  }
  store.restore(best_values);

  ordered_json meta{{"kind", "pimbim"},
                    {"encoder", encoder_json(cfg.encoder)},
                    {"objectives", cfg.objectives.to_string()},
                    {"pair_head",
                     {{"layers", cfg.pair_head.layers},
                      {"width", cfg.pair_head.width},
                      {"heads", cfg.pair_head.heads},
                      {"initial_distance", cfg.pair_head.initial_distance}}}};
  PretrainResult result;
  result.checkpoint = cfg.output / "pimbim.ckpt";
  save_with_meta(store, meta, result.checkpoint);
  result.log = log.entries();
  result.best_validation = best;
  return result;
}

PretrainResult pretrain_ppi(const RunConfig& cfg) {
  if (cfg.structures.empty()) throw ContractError("pretrain-ppi: data.structures is not set");
  return pretrain_ppi(cfg, load_complex_directory(cfg.structures));
}

// ---------------------------------------------------------------- SIM

namespace {

struct SimModel {
  Encoder encoder;
  CouplingFlow flow;
};

std::vector<Residue> patch_of(const SimChain& chain, std::size_t patch, Rng& rng) {
  const auto window = crop_patch(chain.residues.size(), rng, patch);
  std::vector<Residue> out;
  for (std::size_t i : window) out.push_back(chain.residues[i]);
  return out;
}

double sim_validation(const SimModel& m, const std::vector<SimChain>& chains, std::size_t patch, std::uint64_t seed) {
  Rng rng(seed ^ kValidationSalt);
  double sum = 0.0;
  std::size_t n = 0;
  for (const SimChain& c : chains) {
    const auto residues = patch_of(c, patch, rng);
    if (count_torsion_residues(residues) == 0) continue;
    Graph g;
    const Var h = m.encoder.encode(g, raw_features(residues));
    sum += m.flow.sim_loss(g, h, residues).value().item();
    ++n;
  }
  if (n == 0) throw ContractError("sim validation: no chain patch has sidechain torsions");
  return sum / static_cast<double>(n);
}

SimModel sim_model_from_checkpoint(const fs::path& path, ParameterStore& store) {
  TensorMap blobs = read_checkpoint(path);
  const auto meta = checkpoint_meta(blobs, path, "sim");
  blobs.erase(kMetaBlob);
  FlowConfig flow;
  flow.pieces = meta.at("flow").at("pieces");
  flow.layers = meta.at("flow").at("layers");
  flow.hidden = meta.at("flow").at("hidden").get<std::vector<std::size_t>>();
  const EncoderConfig enc = encoder_from_json(meta.at("encoder"));
  Rng rng(0);
  SimModel m{Encoder(store, "encoder.sim", enc, rng), CouplingFlow(store, "sim.flow", enc.d_single, flow, rng)};
  load_parameters(store, blobs, "");
  return m;
}

}  // namespace

PretrainResult pretrain_sim(const RunConfig& cfg, const std::vector<SimChain>& chains,
                            const std::vector<std::vector<std::size_t>>& clusters) {
  if (chains.empty()) throw DataError("pretrain-sim: no chains");
  for (const auto& c : clusters)
    for (std::size_t i : c)
      if (i >= chains.size()) throw DataError("pretrain-sim: cluster member out of range");

  Rng rng(cfg.seed);
  ParameterStore store;
  SimModel model{Encoder(store, "encoder.sim", cfg.encoder, rng),
                 CouplingFlow(store, "sim.flow", cfg.encoder.d_single, cfg.flow, rng)};

  // Validation holds out whole clusters.
  auto [train_c, val_c] = validation_split(clusters.size(), cfg.validation_fraction, rng);
  std::vector<std::vector<std::size_t>> train_clusters;
  for (std::size_t i : train_c) train_clusters.push_back(clusters[i]);
  ClusterSampler sampler(train_clusters);
  std::vector<SimChain> val;
  for (std::size_t i : (val_c.empty() ? train_c : val_c))
    for (std::size_t m : clusters[i]) val.push_back(chains[m]);

  JsonLog log(cfg.output / "pretrain-sim.log.jsonl", cfg.echo);
  AdamState opt;
  opt.lr = cfg.lr;
  PlateauScheduler scheduler(cfg.plateau);
  const auto params = store.trainable();
  double best = std::numeric_limits<double>::infinity();
  auto best_values = store.snapshot();
  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    store.zero_grad();
    Graph g;
    std::vector<Var> losses;
    std::size_t attempts = 0;
    while (losses.size() < cfg.batch) {
      if (++attempts > 100 * cfg.batch) throw DataError("pretrain-sim: sampled patches carry no sidechain torsions");
      const auto residues = patch_of(chains[sampler.sample(rng)], cfg.patch, rng);
      if (count_torsion_residues(residues) == 0) continue;
      const Var h = model.encoder.encode(g, raw_features(residues));
      losses.push_back(model.flow.sim_loss(g, h, residues));
    }
    Var total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ops::add(total, losses[i]);
    total = ops::scale(total, 1.0 / static_cast<double>(losses.size()));
    const double v = total.value().item();
    log.write({{"step", step}, {"split", "train"}, {"losses", {{"sim", v}}}, {"lr", opt.lr}});
    if (!std::isfinite(v)) throw NumericError("pretrain-sim: non-finite loss at step " + std::to_string(step));
    g.backward(total);
    adam_step(opt, params);

    if ((step + 1) % cfg.validate_every == 0 || step + 1 == cfg.iterations) {
      const double vl = sim_validation(model, val, cfg.patch, cfg.seed);
      opt.lr = scheduler.update(opt.lr, vl);
      log.write({{"step", step}, {"split", "validation"}, {"losses", {{"sim", vl}}}, {"lr", opt.lr}});
      if (vl < best) {
        best = vl;
        best_values = store.snapshot();
      }
    }
  }
  store.restore(best_values);
  ordered_json meta{{"kind", "sim"},
                    {"encoder", encoder_json(cfg.encoder)},
                    {"flow", {{"pieces", cfg.flow.pieces}, {"layers", cfg.flow.layers}, {"hidden", cfg.flow.hidden}}}};
  PretrainResult result;
  result.checkpoint = cfg.output / "sim.ckpt";
  save_with_meta(store, meta, result.checkpoint);
  result.log = log.entries();
  result.best_validation = best;
  return result;
}

double sim_validation_loss(const fs::path& checkpoint, const std::vector<SimChain>& chains, std::size_t patch,
                           std::uint64_t seed) {
  ParameterStore store;
  const SimModel m = sim_model_from_checkpoint(checkpoint, store);
  return sim_validation(m, chains, patch, seed);
}

PretrainResult pretrain_sim(const RunConfig& cfg) {
  if (cfg.structures.empty() || cfg.clusters.empty()) {
    throw ContractError("pretrain-sim: data.structures and data.clusters must be set");
  }
  const auto groups = parse_clusters(read_text_file(cfg.clusters));
  if (groups.empty()) throw DataError("pretrain-sim: cluster file " + cfg.clusters.string() + " is empty");
  std::vector<SimChain> chains;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::vector<Residue>> files;
  std::vector<std::vector<std::size_t>> clusters;
  for (const auto& group : groups) {
    std::vector<std::size_t> members;
    for (const std::string& id : group) {
      if (!index.count(id)) {
        const std::string stem = structure_stem(id);
        const auto us = id.find('_');
        const std::string chain_ids = us == std::string::npos ? "" : id.substr(us + 1);
        if (!files.count(stem)) {
          const fs::path file = cfg.structures / (stem + ".pdb");
          if (!fs::exists(file)) throw DataError("structure file not found for chain " + id + ": " + file.string());
          files[stem] = parse_residues(read_text_file(file));
        }
        SimChain chain{id, {}};
        const auto& all = files[stem];
        const char want = chain_ids.empty() ? (all.empty() ? ' ' : all.front().chain) : chain_ids.front();
        for (const Residue& r : all)
          if (r.chain == want) chain.residues.push_back(r);
        if (chain.residues.empty()) throw DataError("chain " + id + " has no residues");
        index[id] = chains.size();
        chains.push_back(std::move(chain));
      }
      members.push_back(index[id]);
    }
    clusters.push_back(members);
  }
  return pretrain_sim(cfg, chains, clusters);
}

// ---------------------------------------------------------------- fine-tuning

DdgBundle::DdgBundle(const RunConfig& cfg, Rng& rng) : frozen_(!cfg.unfreeze) {
  std::optional<EncoderConfig> pimbim, sim;
  TensorMap pimbim_blobs, sim_blobs;
  if ((cfg.objectives.pim || cfg.objectives.bim) && !cfg.pimbim_checkpoint.empty()) {
    pimbim_blobs = read_checkpoint(cfg.pimbim_checkpoint);
    pimbim = encoder_from_json(checkpoint_meta(pimbim_blobs, cfg.pimbim_checkpoint, "pimbim").at("encoder"));
  }
  if (cfg.objectives.sim && !cfg.sim_checkpoint.empty()) {
    sim_blobs = read_checkpoint(cfg.sim_checkpoint);
    sim = encoder_from_json(checkpoint_meta(sim_blobs, cfg.sim_checkpoint, "sim").at("encoder"));
  }
  DdgConfig dc;
  dc.encoder = cfg.encoder;
  dc.use_pimbim = pimbim.has_value();
  dc.use_sim = sim.has_value();
  dc.antisymmetric = cfg.antisymmetric;
  dc.head_hidden = cfg.head_hidden;
  dc.crop = cfg.ddg_crop;
  build(dc, rng, pimbim, sim);
  if (pimbim) {
    load_parameters(store_, pimbim_blobs, "encoder.pimbim.");
    store_.set_trainable("encoder.pimbim.", cfg.unfreeze);
  }
  if (sim) {
    load_parameters(store_, sim_blobs, "encoder.sim.");
    store_.set_trainable("encoder.sim.", cfg.unfreeze);
  }
}

DdgBundle::DdgBundle(const fs::path& checkpoint) {
  TensorMap blobs = read_checkpoint(checkpoint);
  const auto meta = checkpoint_meta(blobs, checkpoint, "ddg");
  blobs.erase(kMetaBlob);
  DdgConfig dc;
  dc.encoder = encoder_from_json(meta.at("encoder"));
  std::optional<EncoderConfig> pimbim, sim;
  if (!meta.at("pimbim_encoder").is_null()) pimbim = encoder_from_json(meta.at("pimbim_encoder"));
  if (!meta.at("sim_encoder").is_null()) sim = encoder_from_json(meta.at("sim_encoder"));
  dc.use_pimbim = pimbim.has_value();
  dc.use_sim = sim.has_value();
  dc.antisymmetric = meta.at("antisymmetric");
  dc.head_hidden = meta.at("head_hidden").get<std::vector<std::size_t>>();
  dc.crop = meta.at("crop");
  Rng rng(0);
  build(dc, rng, pimbim, sim);
  load_parameters(store_, blobs, "");
  if (store_.items().size() != blobs.size()) {
    throw DataError("checkpoint " + checkpoint.string() + " does not match the model it describes");
  }
  frozen_ = true;
}

void DdgBundle::build(const DdgConfig& cfg, Rng& rng, const std::optional<EncoderConfig>& pimbim,
                      const std::optional<EncoderConfig>& sim) {
  if (pimbim) pimbim_ = std::make_unique<Encoder>(store_, "encoder.pimbim", *pimbim, rng);
  if (sim) sim_ = std::make_unique<Encoder>(store_, "encoder.sim", *sim, rng);
  model_ = std::make_unique<DdgModel>(store_, cfg, rng, pimbim_.get(), sim_.get());
}

ordered_json DdgBundle::meta() const {
  const DdgConfig& c = model_->config();
  return {{"kind", "ddg"},
          {"encoder", encoder_json(c.encoder)},
          {"pimbim_encoder", pimbim_ ? encoder_json(pimbim_->config()) : ordered_json()},
          {"sim_encoder", sim_ ? encoder_json(sim_->config()) : ordered_json()},
          {"antisymmetric", c.antisymmetric},
          {"head_hidden", c.head_hidden},
          {"crop", c.crop}};
}

void DdgBundle::save(const fs::path& path) const { save_with_meta(store_, meta(), path); }

std::vector<PreparedRecord> prepare_records(const DdgBundle& bundle, const std::vector<MutationRecord>& records,
                                            const std::function<const Complex&(const std::string&)>& structure,
                                            std::size_t crop, std::size_t threads) {
  std::vector<PreparedRecord> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const MutationRecord& r = records[i];
    if (r.mutations.empty()) throw DataError("record " + std::to_string(i) + " of " + r.complex_id + " has no mutations");
    out[i].index = i;
    out[i].record = r;
    out[i].wild = crop_around_sites(structure(r.complex_id), r.mutations, crop);
    out[i].mutant = build_mutant(out[i].wild, r.mutations);
  }
  if (bundle.streams_frozen()) {
    parallel_for(out.size(), threads, [&](std::size_t i) {
      out[i].wild_streams = bundle.model().streams(out[i].wild);
      out[i].mutant_streams = bundle.model().streams(out[i].mutant);
    });
  }
  return out;
}

namespace {

Var predict_prepared(Graph& g, const DdgModel& model, const PreparedRecord& r) {
  return model.predict(g, r.wild, r.mutant, r.wild_streams ? &*r.wild_streams : nullptr,
                       r.mutant_streams ? &*r.mutant_streams : nullptr);
}

ScoredRecord scored(const MutationRecord& r, double pred) {
  return ScoredRecord{r.complex_id, r.mutation_string(), r.mutations.size(), pred, r.ddg};
}

void write_reports(const fs::path& dir, std::span<const ScoredRecord> records, const EvalReport& report,
                   bool with_predictions) {
  fs::create_directories(dir);
  if (with_predictions) write_text_file(dir / "predictions.csv", predictions_csv(records));
  std::vector<ScoredRecord> labelled;
  for (const auto& r : records)
    if (r.truth) labelled.push_back(r);
  write_text_file(dir / "scatter.csv", scatter_csv(labelled));
  write_text_file(dir / "report.json", report.to_json());
}

}  // namespace

std::vector<double> predict_records(const DdgModel& model, std::span<const PreparedRecord> records,
                                    std::size_t threads) {
  std::vector<double> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) {
    Graph g;
    out[i] = predict_prepared(g, model, records[i]).value().item();
  });
  return out;
}

FinetuneResult finetune(const RunConfig& cfg, const std::vector<MutationRecord>& all_records,
                        const std::function<const Complex&(const std::string&)>& structure,
                        const std::optional<FoldSplit>& given_folds) {
  std::vector<MutationRecord> records;
  for (const auto& r : all_records)
    if (r.ddg) records.push_back(r);
  if (records.empty()) throw DataError("finetune: no labelled records");

  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.complex_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  Rng rng(cfg.seed);
  FinetuneResult result;
  result.folds = given_folds ? *given_folds : split_three_folds(ids, rng);
  check_fold_split(result.folds, ids);
  fs::create_directories(cfg.output);
  write_text_file(cfg.output / "folds.json", fold_split_to_json(result.folds));

  const std::size_t threads = worker_count(cfg);
  JsonLog log(cfg.output / "finetune.log.jsonl", cfg.echo);
  if (records.size() != all_records.size()) {
    log.write({{"warning", "unlabelled records skipped"}, {"count", all_records.size() - records.size()}});
  }

  std::vector<double> preds(records.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<PreparedRecord> prepared;
  for (std::size_t k = 0; k < 3; ++k) {
    Rng fold_rng(cfg.seed + 1000003ULL * (k + 1));
    DdgBundle bundle(cfg, fold_rng);
    // Frozen streams and crops do not depend on the fold: prepare once.
    if (prepared.empty() || !bundle.streams_frozen()) prepared = prepare_records(bundle, records, structure, cfg.ddg_crop, threads);

    const std::set<std::string> test_ids(result.folds.folds[k].begin(), result.folds.folds[k].end());
    std::vector<std::string> train_ids;
    for (std::size_t j = 0; j < 3; ++j)
      if (j != k) train_ids.insert(train_ids.end(), result.folds.folds[j].begin(), result.folds.folds[j].end());
    std::sort(train_ids.begin(), train_ids.end());
    auto [fit_pos, val_pos] = validation_split(train_ids.size(), cfg.validation_fraction, fold_rng);
    std::set<std::string> val_ids;
    for (std::size_t p : val_pos) val_ids.insert(train_ids[p]);

    std::vector<std::size_t> fit, val, test;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::string& id = records[i].complex_id;
      if (test_ids.count(id)) test.push_back(i);
      else if (val_ids.count(id)) val.push_back(i);
      else fit.push_back(i);
    }
    if (fit.empty()) throw DataError("finetune: fold " + std::to_string(k) + " leaves no training records");
    const std::vector<std::size_t>& check = val.empty() ? fit : val;

    const DdgModel& model = bundle.model();
    ParameterStore& store = bundle.store();
    const auto params = store.trainable();
    AdamState opt;
    opt.lr = cfg.lr;
    PlateauScheduler scheduler(cfg.plateau);
    EpochSampler sampler(fit, fold_rng);
    double best = std::numeric_limits<double>::infinity();
    auto best_values = store.snapshot();
    for (std::size_t step = 0; step < cfg.iterations; ++step) {
      const auto picks = sampler.next(cfg.batch);
      store.zero_grad();
      Graph g;
      std::vector<Var> out;
      Tensor labels({picks.size(), 1});
      for (std::size_t b = 0; b < picks.size(); ++b) {
        out.push_back(predict_prepared(g, model, prepared[picks[b]]));
        labels.at(b, 0) = *records[picks[b]].ddg;
      }
      const Var loss = ddg_loss(ops::concat(out, 0), g.constant(labels));
      const double v = loss.value().item();
      log.write({{"fold", k}, {"step", step}, {"split", "train"}, {"losses", {{"mse", v}}}, {"lr", opt.lr}});
      if (!std::isfinite(v)) throw NumericError("finetune: non-finite loss at step " + std::to_string(step));
      g.backward(loss);
      adam_step(opt, params);

      if ((step + 1) % cfg.validate_every == 0 || step + 1 == cfg.iterations) {
        std::vector<PreparedRecord> subset;
        for (std::size_t i : check) subset.push_back(prepared[i]);
        const auto p = predict_records(model, subset, threads);
        double mse = 0.0;
        for (std::size_t i = 0; i < check.size(); ++i) mse += std::pow(p[i] - *records[check[i]].ddg, 2);
        mse /= static_cast<double>(check.size());
        opt.lr = scheduler.update(opt.lr, mse);
        log.write({{"fold", k}, {"step", step}, {"split", "validation"}, {"losses", {{"mse", mse}}}, {"lr", opt.lr}});
        if (mse < best) {
          best = mse;
          best_values = store.snapshot();
        }
      }
    }
    store.restore(best_values);
    result.checkpoints[k] = cfg.output / ("fold" + std::to_string(k) + ".ckpt");
    bundle.save(result.checkpoints[k]);

    std::vector<PreparedRecord> subset;
    for (std::size_t i : test) subset.push_back(prepared[i]);
    const auto p = predict_records(model, subset, threads);
    for (std::size_t i = 0; i < test.size(); ++i) preds[test[i]] = p[i];
  }

  for (std::size_t i = 0; i < records.size(); ++i) result.predictions.push_back(scored(records[i], preds[i]));
  result.report = evaluate_records(result.predictions);
  write_reports(cfg.output, result.predictions, result.report, true);
  result.log = log.entries();
  return result;
}

namespace {

MutationTable load_table(const RunConfig& cfg, const char* command) {
  if (cfg.mutations.empty()) throw ContractError(std::string(command) + ": data.mutations is not set");
  MutationTable table = parse_mutation_table(read_text_file(cfg.mutations));
  for (const auto& r : table.rejected) {
    std::cerr << "warning: " << cfg.mutations.string() << " line " << r.line << ": " << r.reason << '\n';
  }
  if (table.records.empty()) throw DataError(std::string(command) + ": no usable records in " + cfg.mutations.string());
  return table;
}

std::vector<ScoredRecord> model_predictions(const RunConfig& cfg, const std::vector<MutationRecord>& records) {
  if (cfg.model_checkpoint.empty()) throw ContractError("checkpoint.model is not set");
  if (cfg.structures.empty()) throw ContractError("data.structures is not set");
  DdgBundle bundle(cfg.model_checkpoint);
  StructureLibrary library(cfg.structures);
  const auto lookup = [&](const std::string& id) -> const Complex& { return library.get(id); };
  const std::size_t threads = worker_count(cfg);
  const auto prepared = prepare_records(bundle, records, lookup, bundle.model().config().crop, threads);
  const auto preds = predict_records(bundle.model(), prepared, threads);
  std::vector<ScoredRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) out.push_back(scored(records[i], preds[i]));
  return out;
}

}  // namespace

FinetuneResult finetune(const RunConfig& cfg) {
  if (cfg.structures.empty()) throw ContractError("finetune: data.structures is not set");
  const MutationTable table = load_table(cfg, "finetune");
  std::optional<FoldSplit> folds;
  if (!cfg.folds.empty()) {
    if (!fs::exists(cfg.folds)) throw DataError("fold file not found: " + cfg.folds.string());
    folds = fold_split_from_json(read_text_file(cfg.folds));
  }
  StructureLibrary library(cfg.structures);
  return finetune(cfg, table.records, [&](const std::string& id) -> const Complex& { return library.get(id); }, folds);
}

EvalReport evaluate(const RunConfig& cfg) {
  std::vector<ScoredRecord> records;
  const bool from_model = cfg.predictions.empty();
  if (from_model) {
    records = model_predictions(cfg, load_table(cfg, "evaluate").records);
  } else {
    records = parse_predictions_csv(read_text_file(cfg.predictions));
  }
  if (records.empty()) throw DataError("evaluate: no records");
  std::vector<ScoredRecord> labelled;
  for (const auto& r : records)
    if (r.truth) labelled.push_back(r);
  const EvalReport report = evaluate_records(labelled);
  write_reports(cfg.output, records, report, from_model);
  return report;
}

std::vector<RankRow> rank_predictions(std::span<const ScoredRecord> records, std::span<const std::string> targets) {
  if (records.empty()) throw DataError("rank: no records");
  std::set<std::string> wanted(targets.begin(), targets.end());
  std::set<std::string> seen;
  std::vector<double> preds;
  for (const auto& r : records) {
    preds.push_back(r.pred);
    if (wanted.count(r.mutations)) seen.insert(r.mutations);
  }
  for (const std::string& t : wanted)
    if (!seen.count(t)) throw DataError("rank: target mutation " + t + " is not in the list");
  const auto ratios = ranking_ratio(preds, [&] {
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }());
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a] < preds[b]; });
  std::vector<RankRow> rows;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    rows.push_back({pos + 1, records[i], ratios[i], wanted.count(records[i].mutations) > 0});
  }
  return rows;
}

std::string ranking_csv(std::span<const RankRow> rows) {
  std::string out = "rank,complex_id,mutations,ddg_pred,ratio,target\n";
  for (const RankRow& r : rows) {
    out += std::to_string(r.rank) + "," + r.record.complex_id + "," + r.record.mutations + "," +
           format_double(r.record.pred) + "," + format_double(r.ratio) + "," + (r.target ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<RankRow> rank(const RunConfig& cfg) {
  const auto records = model_predictions(cfg, load_table(cfg, "rank").records);
  const auto targets = split_list(cfg.targets);
  const auto rows = rank_predictions(records, targets);
  fs::create_directories(cfg.output);
  write_text_file(cfg.output / "ranking.csv", ranking_csv(rows));
  return rows;
}

}  // namespace mutflow
