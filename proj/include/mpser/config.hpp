#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mpser {

/// Flat experiment configuration. File format: one `key = value` per line,
/// `#` comments; unknown keys are rejected. All defaults follow the reference
/// protocol where it pins them (K=32, Q=128, 50 test steps, 10 seeds, inner
/// rate 0.001, outer rate 0.00009, shot sweep 2..64).
struct ExperimentConfig {
  // data & bookkeeping
  std::string scenario = "seen";  // seen | unseen
  std::string upstream = "synthetic";
  std::string manifest;           // annotation manifest path ("" = synthesize)
  std::string embeddings;         // embedding store directory
  std::string out_dir = "out";
  std::string test_annotator;
  std::string val_annotator;

  // model head
  std::size_t hidden = 256;
  double cb_beta = 0.999;

  // meta-training
  std::size_t train_steps = 5;
  std::size_t test_steps = 50;
  std::size_t shots = 32;
  std::size_t query = 128;
  std::size_t meta_batch = 4;
  std::size_t outer_steps = 300;
  std::size_t val_interval = 25;
  double inner_rate = 0.001;
  double outer_rate = 0.00009;
  double first_order_fraction = 0.3;
  double weight_decay = 0.01;

  // ablation toggles
  bool ini = true;
  bool csmt = true;
  bool da = true;
  bool lslr = true;

  // base-model pretraining
  std::size_t pretrain_epochs = 40;
  std::size_t pretrain_batch = 64;
  double pretrain_rate = 0.001;

  // evaluation
  std::string methods = "meta";  // comma list; see cli docs
  std::vector<std::size_t> shot_sweep = {2, 4, 8, 16, 32, 64};
  std::size_t seeds = 10;
  double finetune_rate = 0.001;
  std::uint64_t seed = 1;

  // synthetic generator
  std::string synth_preset = "iemocap-ext";
  std::size_t synth_annotators = 10;
  std::size_t synth_samples = 600;
  double synth_agreement = 0.85;
  double synth_separation = 2.0;
};

/// Parses `key = value` text; throws ConfigError naming any unknown key or
/// unparseable value.
ExperimentConfig parse_config_text(const std::string& text);

/// File plus `--set key=value` overrides, applied in order.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

ExperimentConfig apply_overrides(ExperimentConfig cfg, const std::vector<std::string>& overrides);

/// Canonical `key=value` serialization (sorted keys) — the digest input.
std::string config_text(const ExperimentConfig& cfg);

/// FNV-1a over the canonical text; stamped into checkpoints and report rows.
std::uint64_t config_digest(const ExperimentConfig& cfg);

}  // namespace mpser
