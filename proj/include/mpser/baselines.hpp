#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mpser/corpus.hpp"
#include "mpser/meta.hpp"
#include "mpser/metrics.hpp"
#include "mpser/model.hpp"

namespace mpser {

struct PretrainConfig {
  HeadConfig head;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  AdamWConfig opt{0.001, 0.9, 0.999, 1e-8, 0.01};
  double cb_beta = 0.999;
  std::uint64_t seed = 1;
  // per named-layer trainability; the restricted variant freezes linear1
  std::array<bool, kNamedLayers> trainable = {true, true, true};
};

struct PretrainResult {
  ModelParams params;  // lowest-validation-loss checkpoint
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<TrainLogRow> log;  // one row per epoch
};

/// Supervised training of the head on the union of all (utterance, annotator)
/// pairs — every annotation is one example — with class-balanced loss.
/// Checkpoint selection by lowest validation loss.
PretrainResult pretrain_base(const std::vector<AnnotatorTask>& tasks,
                             const std::vector<Example>& val, const PretrainConfig& cfg);

// ---- fine-tuning baselines --------------------------------------------------

struct FinetuneConfig {
  std::size_t steps = 50;
  double rate = 0.001;  // matches the meta inner-rate budget
  double cb_beta = 0.999;
  std::array<bool, kNamedLayers> trainable = {true, true, true};
};

/// Zero-shot evaluation of the base model (no adaptation).
EpisodeReport entire_zero(const ModelParams& base, const std::vector<Example>& few_test);

/// Fine-tunes all head parameters on the K samples with a fixed scalar rate,
/// then evaluates on the Q samples.
EpisodeReport entire_few(const ModelParams& base, const std::vector<Example>& few_train,
                         const std::vector<Example>& few_test, const FinetuneConfig& cfg);

/// Same budget, but only layer_weights and linear2 adapt (the Linear-Few
/// protocol; pair with a trunk pretrained under the same restriction).
EpisodeReport linear_few_adapt(const ModelParams& restricted_base,
                               const std::vector<Example>& few_train,
                               const std::vector<Example>& few_test, const FinetuneConfig& cfg);

// ---- multi-task baseline ------------------------------------------------------

/// Shared trunk (layer_weights + linear1) with one linear2 head per training
/// annotator.
struct MultiHeadParams {
  Tensor layer_weights;
  Tensor w1, b1;
  std::map<std::string, std::pair<Tensor, Tensor>> heads;  // annotator -> (w2, b2)
  HeadConfig head_config;

  /// Trunk plus the named head, copied into a standalone parameter set.
  ModelParams materialize(const std::string& annotator) const;
};

MultiHeadParams train_multi_head(const std::vector<AnnotatorTask>& tasks,
                                 const PretrainConfig& cfg);

/// Attaches a freshly initialized head for the unseen annotator and trains
/// only that head on the K samples.
EpisodeReport multi_few(const MultiHeadParams& base, const std::vector<Example>& few_train,
                        const std::vector<Example>& few_test, const FinetuneConfig& cfg,
                        std::uint64_t head_seed);

// ---- similarity baseline -------------------------------------------------------

/// Per-emotion centers averaged over the few-shot samples labeled with that
/// emotion; only emotions present in the few-shot set are covered.
struct PrototypeSet {
  std::vector<std::size_t> emotions;  // covered class indices, ascending
  std::vector<Tensor> centers;        // matching pooled-feature centers
  std::size_t classes = 0;
};

PrototypeSet build_prototypes(const ModelParams& base, const std::vector<Example>& few_train);

/// softmax over cosine similarities to the covered centers. A zero-norm
/// feature makes cosine undefined; such samples score uniform (logged once).
Tensor prototype_probs(const PrototypeSet& prototypes, const Tensor& feature);

EpisodeReport entire_sim(const ModelParams& base, const std::vector<Example>& few_train,
                         const std::vector<Example>& few_test);

// ---- random baseline -------------------------------------------------------------

/// Standard-normal logits per class per sample, softmax, 1/C threshold.
EpisodeReport random_baseline(const std::vector<Example>& few_test, std::size_t classes,
                              std::uint64_t seed);

}  // namespace mpser
