#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mutflow/adam.hpp"
#include "mutflow/bim.hpp"
#include "mutflow/checkpoint.hpp"
#include "mutflow/dataio.hpp"
#include "mutflow/ddg.hpp"
#include "mutflow/encoder.hpp"
#include "mutflow/flow.hpp"
#include "mutflow/metrics.hpp"
#include "mutflow/pim.hpp"

namespace mutflow {

struct Objectives {
  bool pim = true;
  bool bim = true;
  bool sim = true;

  bool any() const { return pim || bim || sim; }
  std::string to_string() const;  // "pim,bim,sim" order
};

// "pim,bim" -> {pim, bim}. ContractError on an unknown or empty list.
Objectives parse_objectives(std::string_view list);

struct RunConfig {
  // [data]
  std::filesystem::path structures;   // directory holding <stem>.pdb
  std::filesystem::path clusters;     // chain clusters for pretrain-sim
  std::filesystem::path mutations;    // complex_id,mutations,ddg
  std::filesystem::path folds;        // fold JSON; generated when absent
  std::filesystem::path predictions;  // evaluate an existing predictions CSV
  std::string targets;                // rank: mutation strings separated by spaces or commas

  // [checkpoint]
  std::filesystem::path pimbim_checkpoint;
  std::filesystem::path sim_checkpoint;
  std::filesystem::path model_checkpoint;

  // [output]
  std::filesystem::path output = "mutflow_out";
  bool echo = true;  // copy log lines to stdout

  // [train]
  std::uint64_t seed = 0;
  std::size_t iterations = 2000;
  std::size_t batch = 8;
  double lr = 1e-4;
  std::size_t validate_every = 100;
  double validation_fraction = 0.1;
  PlateauConfig plateau;
  Objectives objectives;
  CropMode crop = CropMode::interface;
  std::optional<double> clamp;  // cap on distance-map targets
  bool antisymmetric = true;
  bool unfreeze = false;
  std::size_t threads = 1;

  // [model]
  EncoderConfig encoder;
  PairHeadConfig pair_head;
  FlowConfig flow;
  std::vector<std::size_t> head_hidden = {128};
  std::size_t interface_crop = 64;
  std::size_t patch = 128;
  std::size_t ddg_crop = 128;
};

// INI document with [data], [checkpoint], [output], [train] and [model]
// sections. Relative paths resolve against the file's directory. Unknown
// keys are rejected.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Upper bound on worker threads: MUTFLOW_THREADS when set, otherwise the
// hardware concurrency.
std::size_t thread_budget();

// One JSON object per line, kept in memory and appended to a file.
class JsonLog {
 public:
  JsonLog() = default;
  JsonLog(const std::filesystem::path& path, bool echo);
  void write(const nlohmann::ordered_json& entry);
  const std::vector<nlohmann::ordered_json>& entries() const { return entries_; }

 private:
  std::ofstream file_;
  bool echo_ = false;
  std::vector<nlohmann::ordered_json> entries_;
};

// Checkpoint blobs carrying a JSON document as character codes.
Tensor text_blob(std::string_view text);
std::string blob_text(const Tensor& blob);
inline constexpr const char* kMetaBlob = "meta.config";

// Structures on disk, loaded on demand and cached by complex id.
class StructureLibrary {
 public:
  explicit StructureLibrary(std::filesystem::path dir) : dir_(std::move(dir)) {}
  // "1ABC_HL_A" reads <dir>/1ABC.pdb with receptor chains HL and ligand A.
  const Complex& get(const std::string& complex_id);

 private:
  std::filesystem::path dir_;
  std::map<std::string, Complex> cache_;
};

// Every .pdb file of a directory as a complex (first chain receptor), sorted by name.
std::vector<Complex> load_complex_directory(const std::filesystem::path& dir);

// Uniform over clusters, then uniform over the members of the chosen cluster.
class ClusterSampler {
 public:
  explicit ClusterSampler(std::vector<std::vector<std::size_t>> clusters);
  std::size_t sample(Rng& rng) const;
  std::size_t cluster_count() const { return clusters_.size(); }
  const std::vector<std::vector<std::size_t>>& clusters() const { return clusters_; }

 private:
  std::vector<std::vector<std::size_t>> clusters_;
};

struct SimChain {
  std::string id;
  std::vector<Residue> residues;
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::vector<nlohmann::ordered_json> log;
  double best_validation = 0.0;
};

// Joint PIM/BIM pre-training. Checkpoint: <output>/pimbim.ckpt.
PretrainResult pretrain_ppi(const RunConfig& cfg, const std::vector<Complex>& complexes);
PretrainResult pretrain_ppi(const RunConfig& cfg);

// SIM pre-training over chains grouped into clusters (indices into `chains`).
// Checkpoint: <output>/sim.ckpt.
PretrainResult pretrain_sim(const RunConfig& cfg, const std::vector<SimChain>& chains,
                            const std::vector<std::vector<std::size_t>>& clusters);
PretrainResult pretrain_sim(const RunConfig& cfg);

// Mean sim loss over validation chains for the encoder and flow stored in a
// checkpoint, with the deterministic patch choice used during training.
double sim_validation_loss(const std::filesystem::path& checkpoint, const std::vector<SimChain>& chains,
                           std::size_t patch, std::uint64_t seed);

// A fine-tune model with its own store, optionally carrying frozen streams.
class DdgBundle {
 public:
  // Fresh model from the run config; streams load from the configured
  // pre-training checkpoints when their objectives are enabled.
  DdgBundle(const RunConfig& cfg, Rng& rng);
  // Model restored from a fine-tune checkpoint.
  explicit DdgBundle(const std::filesystem::path& checkpoint);
  DdgBundle(const DdgBundle&) = delete;
  DdgBundle& operator=(const DdgBundle&) = delete;

  ParameterStore& store() { return store_; }
  const DdgModel& model() const { return *model_; }
  bool streams_frozen() const { return frozen_; }
  nlohmann::ordered_json meta() const;
  void save(const std::filesystem::path& path) const;

 private:
  void build(const DdgConfig& cfg, Rng& rng, const std::optional<EncoderConfig>& pimbim,
             const std::optional<EncoderConfig>& sim);

  ParameterStore store_;
  std::unique_ptr<Encoder> pimbim_, sim_;
  std::unique_ptr<DdgModel> model_;
  bool frozen_ = true;
};

// A record with its cropped wild type, mutant and (when frozen) cached streams.
struct PreparedRecord {
  std::size_t index = 0;  // row in the mutation table
  MutationRecord record;
  Complex wild;
  Complex mutant;
  std::optional<StreamValues> wild_streams, mutant_streams;
};

std::vector<PreparedRecord> prepare_records(const DdgBundle& bundle, const std::vector<MutationRecord>& records,
                                            const std::function<const Complex&(const std::string&)>& structure,
                                            std::size_t crop, std::size_t threads);

// Predictions in record order, computed on up to `threads` workers.
std::vector<double> predict_records(const DdgModel& model, std::span<const PreparedRecord> records,
                                    std::size_t threads);

struct FinetuneResult {
  FoldSplit folds;
  std::vector<ScoredRecord> predictions;  // table order, each record once
  EvalReport report;
  std::array<std::filesystem::path, 3> checkpoints;
  std::vector<nlohmann::ordered_json> log;
};

// Three-fold cross-validation: train on two folds (minus a validation slice
// of complexes), predict the third. Writes fold<k>.ckpt, folds.json,
// predictions.csv, scatter.csv and report.json under <output>.
FinetuneResult finetune(const RunConfig& cfg, const std::vector<MutationRecord>& records,
                        const std::function<const Complex&(const std::string&)>& structure,
                        const std::optional<FoldSplit>& folds);
FinetuneResult finetune(const RunConfig& cfg);

// Metrics over an existing predictions CSV, or over fresh predictions of the
// configured model (labels are only read for scoring). Writes report.json,
// scatter.csv and, for model runs, predictions.csv.
EvalReport evaluate(const RunConfig& cfg);

struct RankRow {
  std::size_t rank = 0;  // 1-based position after a stable ascending sort
  ScoredRecord record;
  double ratio = 0.0;  // average rank / total
  bool target = false;
};

// Ascending by prediction; equal predictions keep their input order. Every
// target must name a mutation string in the list (DataError otherwise).
std::vector<RankRow> rank_predictions(std::span<const ScoredRecord> records, std::span<const std::string> targets);
std::string ranking_csv(std::span<const RankRow> rows);

// Predicts every table row with the configured model and writes ranking.csv.
std::vector<RankRow> rank(const RunConfig& cfg);

}  // namespace mutflow
