#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpser/autodiff.hpp"
#include "mpser/rng.hpp"
#include "mpser/tensor.hpp"

namespace mpser {

/// Layered time-series feature block for one utterance: L upstream layers,
/// T frames, D feature dims, stored as a {L, T, D} tensor.
struct EmbeddingSequence {
  std::string utt_id;
  std::size_t layers = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  Tensor values;

  /// Per-layer mean over frames, shape {L, D}. Layer mixing and mean pooling
  /// are both linear, so the head can pool first and mix the pooled rows.
  Tensor frame_means() const;
};

/// Multi-hot emotion judgment. Invariant: at least one positive entry.
struct LabelSet {
  std::vector<std::uint8_t> mask;

  LabelSet() = default;
  explicit LabelSet(std::size_t classes) : mask(classes, 0) {}
  static LabelSet single(std::size_t classes, std::size_t cls);

  std::size_t classes() const { return mask.size(); }
  bool positive(std::size_t c) const { return mask[c] != 0; }
  void set(std::size_t c) { mask[c] = 1; }
  std::size_t count() const;
  bool operator==(const LabelSet&) const = default;
};

struct HeadConfig {
  std::size_t layers = 2;    // L
  std::size_t dim = 32;      // D
  std::size_t hidden = 256;  // H
  std::size_t classes = 9;   // C
};

/// Downstream head parameters: softmax-mixed layer weights, then two linear
/// layers over the mean-pooled feature.
///
/// The named-layer order [layer_weights, linear1, linear2] is fixed; it
/// defines the layer axis of the LSLR rate table.
struct ModelParams {
  Tensor layer_weights;  // {L} pre-softmax mixing logits
  Tensor w1, b1;         // {D, H}, {H}
  Tensor w2, b2;         // {H, C}, {C}

  static ModelParams init(const HeadConfig& cfg, Rng& rng);
  static ModelParams zeros(const HeadConfig& cfg);

  HeadConfig config() const;
  std::size_t param_count() const;
  bool same_shape(const ModelParams& other) const;
  bool bitwise_equal(const ModelParams& other) const;
};

inline constexpr std::size_t kNamedLayers = 3;

/// Named-layer group of each parameter tensor, in ModelParams field order:
/// layer_weights -> 0, w1/b1 -> 1, w2/b2 -> 2.
inline constexpr std::size_t kParamGroup[5] = {0, 1, 1, 2, 2};

std::vector<Tensor*> param_tensors(ModelParams& p);
std::vector<const Tensor*> param_tensors(const ModelParams& p);

/// Effective-number class reweighting: raw w_c = (1-beta)/(1-beta^{n_c}),
/// normalized so the weights sum to the class count. Classes never seen in
/// the counted set are weighted as if seen once (raw weight exactly 1).
struct ClassBalanceWeights {
  double beta = 0.0;
  std::vector<std::size_t> counts;
  std::vector<double> weights;
};

ClassBalanceWeights make_class_weights(const std::vector<std::size_t>& counts, double beta);

/// One (utterance, judgment) pair inside a batch or episode. The embedding is
/// borrowed; episodes reference the corpus store.
struct Example {
  const EmbeddingSequence* x = nullptr;
  LabelSet y;
};

std::vector<std::size_t> label_counts(const std::vector<Example>& batch, std::size_t classes);

// ---- graph builders (shared by training, adaptation, and evaluation) ------

/// Leaves for one episode's differentiable view of the parameters.
struct ParamNodes {
  ad::NodePtr layer_weights, w1, b1, w2, b2;

  static ParamNodes leaves(const ModelParams& p);
  std::vector<ad::NodePtr> all() const { return {layer_weights, w1, b1, w2, b2}; }
  ModelParams values() const;
};

/// Batch data prepared once per episode: pooled frame means plus the
/// class-balance-folded soft targets w_c * t_bc.
struct PreparedBatch {
  std::vector<Tensor> frame_means;  // each {L, D}
  Tensor weighted_targets;          // {B, C}
  std::size_t size = 0;
};

PreparedBatch prepare_batch(const std::vector<Example>& batch, const ClassBalanceWeights& w);

/// Pooled, layer-mixed features for a batch, shape {B, D}.
ad::NodePtr pooled_rows(const ParamNodes& p, const std::vector<Tensor>& frame_means);

/// Log-probabilities {B, C} of the two-linear-layer head over pooled rows.
ad::NodePtr batch_log_probs(const ParamNodes& p, const std::vector<Tensor>& frame_means);

/// Class-balanced soft cross-entropy: mean_b of -sum_c w_c t_bc log p_bc.
ad::NodePtr batch_loss(const ParamNodes& p, const PreparedBatch& batch);

// ---- plain operations ------------------------------------------------------

/// softmax(linear2(relu(linear1(mean-pool(softmax(layer_weights) . layers))))).
Tensor predict(const ModelParams& params, const EmbeddingSequence& x);

/// Probability rows {B, C} for a whole evaluation set in one pass.
Tensor predict_batch(const ModelParams& params, const std::vector<Example>& batch);

double loss(const ModelParams& params, const std::vector<Example>& batch,
            const ClassBalanceWeights& w);

/// Positive iff p_c >= 1/C. Never empty: a probability vector's maximum is
/// at least 1/C.
LabelSet threshold_predictions(const Tensor& probs);

/// Mean-pooled, layer-weighted feature in front of linear1 (the similarity
/// baseline's embedding space), shape {D}.
Tensor pooled_feature(const ModelParams& params, const EmbeddingSequence& x);

}  // namespace mpser
