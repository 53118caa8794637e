// Experiment driver: synthetic corpus generation, base-model pretraining,
// meta-training, evaluation, and the ablation grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpser/baselines.hpp"
#include "mpser/checkpoint.hpp"
#include "mpser/config.hpp"
#include "mpser/corpus.hpp"
#include "mpser/errors.hpp"
#include "mpser/meta.hpp"
#include "mpser/pipeline.hpp"
#include "mpser/reports.hpp"

namespace fs = std::filesystem;
using namespace mpser;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_override;
  std::string seed_override;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "experiment config file")->required();
  cmd->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
  cmd->add_option("--out", args.out_override, "override the output directory");
  cmd->add_option("--seed", args.seed_override, "override the experiment seed");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (!args.out_override.empty()) overrides.push_back("out_dir=" + args.out_override);
  if (!args.seed_override.empty()) overrides.push_back("seed=" + args.seed_override);
  return load_config(args.config_path, overrides);
}

void write_log(const std::string& path, const std::vector<TrainLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log '" + path + "'");
  out << "step\tloss\tval_loss\n";
  for (const TrainLogRow& row : log) {
    char line[96];
    if (std::isnan(row.val_loss)) {
      std::snprintf(line, sizeof line, "%zu\t%.12g\t-\n", row.step, row.outer_loss);
    } else {
      std::snprintf(line, sizeof line, "%zu\t%.12g\t%.12g\n", row.step, row.outer_loss,
                    row.val_loss);
    }
    out << line;
  }
}

int cmd_synth(const ExperimentConfig& cfg) {
  const Corpus corpus = generate_synthetic(preset_from(cfg), cfg.synth_samples, cfg.seed);
  fs::create_directories(cfg.out_dir);
  const std::string manifest = (fs::path(cfg.out_dir) / "synth_manifest.jsonl").string();
  const std::string store = (fs::path(cfg.out_dir) / "embeddings").string();
  write_manifest(manifest, corpus_records(corpus));
  write_embedding_store(store, corpus.store);
  std::cout << "wrote " << manifest << " (" << corpus_records(corpus).size() << " records)\n"
            << "wrote " << store << " (" << corpus.store.size() << " embeddings)\n"
            << "point the pipeline at them with: manifest = " << manifest
            << " / embeddings = " << store << "\n";
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);
  const PretrainResult result =
      pretrain_base(split.train, split.validation.examples(), pretrain_config_from(cfg, corpus));

  fs::create_directories(cfg.out_dir);
  Checkpoint ckpt = Checkpoint::from_model(result.params, nullptr);
  ckpt.config_digest = config_digest(cfg);
  ckpt.seed = cfg.seed;
  ckpt.step = result.best_epoch;
  const std::string path = (fs::path(cfg.out_dir) / "pretrain.mpck").string();
  save_checkpoint(path, ckpt);
  write_log((fs::path(cfg.out_dir) / "pretrain_log.tsv").string(), result.log);
  std::cout << "wrote " << path << " (best epoch " << result.best_epoch << ", val loss "
            << result.best_val_loss << ")\n";
  return 0;
}

int cmd_meta_train(const ExperimentConfig& cfg, const std::string& init_path) {
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);

  ModelParams init;
  if (cfg.ini) {
    if (init_path.empty()) {
      throw ConfigError("toggle 'ini' is on: --init <pretrain checkpoint> is required");
    }
    init = load_checkpoint(init_path).to_model();
  } else {
    Rng rng(cfg.seed ^ 0x5eedf00dULL);
    init = ModelParams::init(head_config_from(cfg, corpus), rng);
  }

  const MetaTrainResult result = meta_train(init, split.train, split.validation,
                                            meta_config_from(cfg));

  fs::create_directories(cfg.out_dir);
  Checkpoint ckpt = Checkpoint::from_model(result.params, &result.lslr);
  ckpt.config_digest = config_digest(cfg);
  ckpt.seed = cfg.seed;
  ckpt.step = result.best_step;
  const std::string path = (fs::path(cfg.out_dir) / "meta.mpck").string();
  save_checkpoint(path, ckpt);
  write_log((fs::path(cfg.out_dir) / "meta_log.tsv").string(), result.log);
  std::cout << "wrote " << path << " (best step " << result.best_step << ", val loss "
            << result.best_val_loss << ")\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& ckpt_path,
                 const std::string& init_path) {
  const Corpus corpus = corpus_from_config(cfg);
  const std::vector<std::string> methods = parse_methods(cfg.methods);

  MethodArtifacts provided;
  if (!init_path.empty()) provided.base = load_checkpoint(init_path).to_model();
  if (!ckpt_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    provided.meta_params = ckpt.to_model();
    if (ckpt.has_lslr()) provided.meta_lslr = ckpt.to_lslr();
  }

  std::vector<ReportRow> rows;
  if (!ckpt_path.empty() || !init_path.empty() || !cfg.test_annotator.empty()) {
    // single rotation; checkpoints belong to one train/test split
    const SplitResult split = split_from_config(cfg, corpus);
    const MethodArtifacts artifacts =
        prepare_artifacts(cfg, corpus, split, methods, std::move(provided));
    rows = evaluate_split(cfg, artifacts, split, methods);
  } else {
    rows = evaluate_rotations(cfg, corpus, methods);
  }

  fs::create_directories(cfg.out_dir);
  write_reports_jsonl((fs::path(cfg.out_dir) / "reports.jsonl").string(), rows);
  write_shot_sweep_tsv((fs::path(cfg.out_dir) / "shot_sweep.tsv").string(), rows);
  const std::string table = render_method_table(rows);
  std::ofstream((fs::path(cfg.out_dir) / "report_table.txt").string()) << table;
  std::cout << table;
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);
  const std::vector<AblationRow> rows = run_ablation(cfg, corpus, split);

  fs::create_directories(cfg.out_dir);
  const std::string table = render_ablation(rows);
  std::ofstream((fs::path(cfg.out_dir) / "ablation.txt").string()) << table;
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot listener-personalized SER experiments"};
  app.require_subcommand(1);

  CommonArgs synth_args, pretrain_args, meta_args, eval_args, ablate_args;
  std::string init_path, ckpt_path;

  add_common(app.add_subcommand("synth", "generate a synthetic corpus on disk"), synth_args);
  add_common(app.add_subcommand("pretrain", "train the base model on aggregated labels"),
             pretrain_args);
  CLI::App* meta_cmd = app.add_subcommand("meta-train", "meta-train from the base model");
  add_common(meta_cmd, meta_args);
  meta_cmd->add_option("--init", init_path, "pretrain checkpoint (required when ini = true)");
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "run the shot sweep over seeds");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", ckpt_path, "meta-trained checkpoint to evaluate");
  eval_cmd->add_option("--init", init_path, "pretrain checkpoint for the Entire-* baselines");
  add_common(app.add_subcommand("ablate", "run the toggle-grid ablation"), ablate_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth")) return cmd_synth(resolve_config(synth_args));
    if (app.got_subcommand("pretrain")) return cmd_pretrain(resolve_config(pretrain_args));
    if (app.got_subcommand("meta-train")) {
      return cmd_meta_train(resolve_config(meta_args), init_path);
    }
    if (app.got_subcommand("evaluate")) {
      return cmd_evaluate(resolve_config(eval_args), ckpt_path, init_path);
    }
    if (app.got_subcommand("ablate")) return cmd_ablate(resolve_config(ablate_args));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
