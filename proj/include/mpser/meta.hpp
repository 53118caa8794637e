#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mpser/autodiff.hpp"
#include "mpser/corpus.hpp"
#include "mpser/metrics.hpp"
#include "mpser/model.hpp"

namespace mpser {

/// Learnable per-layer per-step inner rates alpha_{l,s}, one row per named
/// layer. Rates may go negative under meta-updates (learned directions).
struct LSLRTable {
  Tensor rates;  // {kNamedLayers, steps}
  bool learnable = true;

  static LSLRTable uniform(std::size_t steps, double rate);

  std::size_t steps() const { return rates.extent(1); }

  /// Steps beyond the table reuse the final learned column.
  double rate(std::size_t layer, std::size_t step_0idx) const;

  bool bitwise_equal(const LSLRTable& other) const;
};

/// Derivative-annealing window: 1-indexed inner step s is first-order iff
/// s <= ceil(first_order_fraction * total_steps).
struct AnnealSchedule {
  double first_order_fraction = 0.3;
  std::size_t total_steps = 0;

  bool first_order(std::size_t step_1idx) const;
};

struct AdamWConfig {
  double lr = 0.00009;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay adaptive optimizer over a fixed tensor list.
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& cfg) : cfg_(cfg) {}

  /// decay_mask marks tensors that receive weight decay (rates do not).
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
            const std::vector<bool>& decay_mask);

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct MetaConfig {
  std::size_t train_steps = 5;   // inner steps per unroll during meta-training
  std::size_t test_steps = 50;   // adaptation steps at meta-test
  std::size_t shots = 32;        // K
  std::size_t query = 128;       // Q
  std::size_t meta_batch = 4;    // tasks per outer update
  std::size_t outer_steps = 300;
  std::size_t val_interval = 25;
  double inner_rate = 0.001;
  double first_order_fraction = 0.3;
  double class_balance_beta = 0.999;
  AdamWConfig outer;
  std::uint64_t seed = 1;
  bool use_csmt = true;  // off: split each episode into support/query halves
  bool use_da = true;    // off: every inner step is second-order
  bool use_lslr = true;  // off: rates stay fixed at inner_rate

  AnnealSchedule train_schedule() const {
    return {use_da ? first_order_fraction : 0.0, train_steps};
  }
};

// ---- differentiable unroll --------------------------------------------------

using LossBuilder = std::function<ad::NodePtr(const std::vector<ad::NodePtr>&)>;

/// Unrolls `steps` LSLR updates over an arbitrary parameter list, returning
/// nodes still connected to the initial parameters and the rate table:
///   p_k^(s) = p_k^(s-1) - alpha_{group(k), s} * grad_k L(p^(s-1))
/// First-order steps wrap the gradient factor in stop_gradient, so the outer
/// derivative treats the update as a constant shift (the rates still learn).
std::vector<ad::NodePtr> unroll_lslr(std::vector<ad::NodePtr> params,
                                     const std::vector<std::size_t>& groups,
                                     const ad::NodePtr& lslr_rates,
                                     const AnnealSchedule& schedule, std::size_t steps,
                                     const LossBuilder& inner_loss);

/// Annotator-specific parameters theta_i as a graph over theta and the rates.
struct AdaptedParams {
  ParamNodes adapted;
  ParamNodes theta;      // the initial-parameter leaves
  ad::NodePtr lslr;      // the rate-table leaf
  std::size_t steps = 0;
};

AdaptedParams inner_adapt(const ModelParams& theta, const std::vector<Example>& episode,
                          const LSLRTable& lslr, const AnnealSchedule& schedule,
                          std::size_t steps, double cb_beta);

// ---- meta-gradients ---------------------------------------------------------

/// One task's sampled set; combined-set training points inner and outer at
/// the same prepared batch.
struct TaskEpisode {
  PreparedBatch inner;
  PreparedBatch outer;
};

struct MetaGradients {
  ModelParams theta;  // d(mean outer loss)/d(theta), tensor-for-tensor
  Tensor lslr;        // {kNamedLayers, steps}
  double outer_loss = 0.0;
};

MetaGradients meta_gradient(const ModelParams& theta, const LSLRTable& lslr,
                            const std::vector<TaskEpisode>& tasks,
                            const AnnealSchedule& schedule, std::size_t steps);

/// Combined-set meta-gradient: every episode is both the adaptation set and
/// the outer-loss set (no support/query split).
MetaGradients meta_gradient_csmt(const ModelParams& theta, const LSLRTable& lslr,
                                 const std::vector<std::vector<Example>>& episodes,
                                 const AnnealSchedule& schedule, std::size_t steps,
                                 double cb_beta);

// ---- plain adaptation (meta-test and fine-tuning baselines) ------------------

struct AdaptOptions {
  std::size_t steps = 50;
  double cb_beta = 0.999;
  // per named-layer trainability: {layer_weights, linear1, linear2}
  std::array<bool, kNamedLayers> trainable = {true, true, true};
};

/// Non-differentiable LSLR updates on one batch; frozen groups stay bitwise
/// intact.
ModelParams adapt_params(const ModelParams& theta, const LSLRTable& rates,
                         const std::vector<Example>& support, const AdaptOptions& opt);

/// Threshold-and-score evaluation of fixed parameters on a sample set.
Metrics evaluate_params(const ModelParams& params, const std::vector<Example>& samples);

// ---- meta-training ----------------------------------------------------------

struct TrainLogRow {
  std::size_t step = 0;
  double outer_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN between validations
};

struct MetaTrainResult {
  ModelParams params;   // best-validation checkpoint
  LSLRTable lslr;
  std::vector<TrainLogRow> log;
  std::size_t best_step = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

/// Outer loop: sample meta_batch tasks, K examples each, one meta-gradient,
/// one AdamW step on theta (and the rates when LSLR is on). Every
/// val_interval steps the validation annotator is meta-tested and the
/// checkpoint with the lowest class-balanced loss is retained.
MetaTrainResult meta_train(const ModelParams& init, const std::vector<AnnotatorTask>& tasks,
                           const AnnotatorTask& val_task, const MetaConfig& cfg);

// ---- meta-testing -----------------------------------------------------------

/// Adapts a copy of (theta, rates) on the K few-shot samples with test_steps
/// plain updates, then scores maF1/miF1/UA on the Q samples. Inputs are not
/// mutated; the two sets must be disjoint.
EpisodeReport meta_test(const ModelParams& theta, const LSLRTable& lslr,
                        const std::vector<Example>& few_train,
                        const std::vector<Example>& few_test, const MetaConfig& cfg);

}  // namespace mpser
