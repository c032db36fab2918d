#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mutflow/error.hpp"
#include "mutflow/workflows.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch;
  std::optional<std::string> objectives;
  std::optional<std::string> crop;
  std::optional<double> clamp;
  std::optional<std::string> output;
  bool no_antisym = false;
  bool unfreeze = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--iters", o.iters, "Training iterations");
  cmd->add_option("--batch", o.batch, "Batch size");
  cmd->add_option("--objectives", o.objectives, "Comma list of pim, bim, sim");
  cmd->add_option("--crop", o.crop, "Interface crop mode")->check(CLI::IsMember({"interface", "uniform"}));
  cmd->add_option("--clamp", o.clamp, "Cap distance-map targets at D angstrom")->check(CLI::PositiveNumber);
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_flag("--no-antisym", o.no_antisym, "Plain prediction head without antisymmetrization");
  cmd->add_flag("--unfreeze", o.unfreeze, "Train the pre-trained encoders during fine-tuning");
  cmd->add_flag("--quiet", o.quiet, "Do not echo log lines");
}

mutflow::RunConfig resolve(const Overrides& o) {
  mutflow::RunConfig cfg = mutflow::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.iters) cfg.iterations = *o.iters;
  if (o.batch) {
    if (*o.batch == 0) throw mutflow::ContractError("--batch must be positive");
    cfg.batch = *o.batch;
  }
  if (o.objectives) cfg.objectives = mutflow::parse_objectives(*o.objectives);
  if (o.crop) cfg.crop = *o.crop == "uniform" ? mutflow::CropMode::uniform : mutflow::CropMode::interface;
  if (o.clamp) cfg.clamp = *o.clamp;
  if (o.output) cfg.output = *o.output;
  if (o.no_antisym) cfg.antisymmetric = false;
  if (o.unfreeze) cfg.unfreeze = true;
  if (o.quiet) cfg.echo = false;
  cfg.threads = mutflow::thread_budget();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mutflow: interface-aware pre-training and mutation effect (ddG) prediction"};
  app.require_subcommand(1);
  Overrides o;
  auto* ppi = app.add_subcommand("pretrain-ppi", "Contrastive matching + distance-map pre-training");
  auto* sim = app.add_subcommand("pretrain-sim", "Sidechain torsion density pre-training");
  auto* fine = app.add_subcommand("finetune", "ddG fine-tuning with three-fold cross-validation");
  auto* eval = app.add_subcommand("evaluate", "Metrics for a predictions CSV or a trained model");
  auto* rank = app.add_subcommand("rank", "Rank mutations by predicted ddG");
  for (auto* cmd : {ppi, sim, fine, eval, rank}) add_common(cmd, o);

  CLI11_PARSE(app, argc, argv);

  try {
    const mutflow::RunConfig cfg = resolve(o);
    if (ppi->parsed()) {
      const auto r = mutflow::pretrain_ppi(cfg);
      std::cerr << "checkpoint: " << r.checkpoint.string() << " (best validation " << r.best_validation << ")\n";
    } else if (sim->parsed()) {
      const auto r = mutflow::pretrain_sim(cfg);
      std::cerr << "checkpoint: " << r.checkpoint.string() << " (best validation " << r.best_validation << ")\n";
    } else if (fine->parsed()) {
      const auto r = mutflow::finetune(cfg);
      std::cout << r.report.to_json();
    } else if (eval->parsed()) {
      std::cout << mutflow::evaluate(cfg).to_json();
    } else if (rank->parsed()) {
      const auto rows = mutflow::rank(cfg);
      for (const auto& row : rows) {
        if (row.target) {
          std::cout << row.record.mutations << " rank " << row.rank << "/" << rows.size() << " ratio " << row.ratio
                    << "\n";
        }
      }
      std::cerr << "ranking: " << (cfg.output / "ranking.csv").string() << "\n";
    }
  } catch (const mutflow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
