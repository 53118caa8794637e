#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mpser/baselines.hpp"
#include "mpser/config.hpp"
#include "mpser/corpus.hpp"
#include "mpser/meta.hpp"
#include "mpser/reports.hpp"

namespace mpser {

// Config-to-module adapters. The head's layer/dim geometry comes from the
// data; hidden width and class count from the config and the fixed
// vocabulary.
HeadConfig head_config_from(const ExperimentConfig& cfg, const Corpus& corpus);
MetaConfig meta_config_from(const ExperimentConfig& cfg);
PretrainConfig pretrain_config_from(const ExperimentConfig& cfg, const Corpus& corpus);
SynthPreset preset_from(const ExperimentConfig& cfg);

/// Loads manifest + embedding store when paths are configured, otherwise
/// generates the synthetic corpus in memory.
Corpus corpus_from_config(const ExperimentConfig& cfg);

/// Applies the configured scenario's split protocol. Empty annotator fields
/// default to the last task (test) and the one before it (validation).
SplitResult split_from_config(const ExperimentConfig& cfg, const Corpus& corpus);

/// Per-method trained state. prepare_artifacts trains exactly what the
/// requested methods need and reuses anything already supplied.
struct MethodArtifacts {
  std::optional<ModelParams> base;         // pretrained on aggregated labels
  std::optional<ModelParams> linear_base;  // trunk trained with linear1 frozen
  std::optional<MultiHeadParams> multi;
  std::optional<ModelParams> meta_params;
  std::optional<LSLRTable> meta_lslr;
};

/// Known method names: meta, entire-few, entire-zero, linear-few, multi-few,
/// entire-sim, random.
std::vector<std::string> parse_methods(const std::string& csv);

MethodArtifacts prepare_artifacts(const ExperimentConfig& cfg, const Corpus& corpus,
                                  const SplitResult& split,
                                  const std::vector<std::string>& methods,
                                  MethodArtifacts provided = {});

/// Shot sweep x seeds over one rotation's test annotator. Episode seeds are
/// derived from (config seed, repetition) so every row is rerunnable and a
/// repetition shares its test set across the whole sweep.
std::vector<ReportRow> evaluate_split(const ExperimentConfig& cfg,
                                      const MethodArtifacts& artifacts,
                                      const SplitResult& split,
                                      const std::vector<std::string>& methods);

/// Rotates the held-out annotator over `rotations` (every annotator when
/// empty), retraining per rotation, and concatenates the rows.
std::vector<ReportRow> evaluate_rotations(const ExperimentConfig& cfg, const Corpus& corpus,
                                          const std::vector<std::string>& methods,
                                          const std::vector<std::string>& rotations = {});

std::uint64_t episode_seed(std::uint64_t config_seed, std::size_t rep);

// ---- ablation grid -----------------------------------------------------------

struct AblationRow {
  std::string label;
  bool ini = false, csmt = false, da = false, lslr = false;
  Metrics mean;
};

/// The six-row toggle grid (no enhancements; INI; INI+CSMT; INI+DA; INI+LSLR;
/// full stack), sharing one pretrained base across the INI rows.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const Corpus& corpus,
                                      const SplitResult& split);

std::string render_ablation(const std::vector<AblationRow>& rows);

}  // namespace mpser
