#include "mpser/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "mpser/errors.hpp"
#include "mpser/rng.hpp"

namespace mpser {

namespace {

// Flattened training pool with frame means computed once.
struct Pool {
  std::vector<Example> examples;
  std::vector<Tensor> frame_means;
  ClassBalanceWeights weights;
};

Pool build_pool(const std::vector<AnnotatorTask>& tasks, std::size_t classes, double cb_beta) {
  Pool pool;
  for (const AnnotatorTask& t : tasks) {
    for (const TaskRecord& r : t.records) pool.examples.push_back({r.x, r.y});
  }
  if (pool.examples.empty()) throw ContractError("pretraining corpus is empty");
  pool.frame_means.reserve(pool.examples.size());
  for (const Example& e : pool.examples) pool.frame_means.push_back(e.x->frame_means());
  pool.weights = make_class_weights(label_counts(pool.examples, classes), cb_beta);
  return pool;
}

PreparedBatch gather_batch(const Pool& pool, const std::vector<std::size_t>& indices,
                           std::size_t classes) {
  PreparedBatch batch;
  batch.size = indices.size();
  batch.weighted_targets = Tensor({indices.size(), classes});
  batch.frame_means.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Example& e = pool.examples[indices[b]];
    batch.frame_means.push_back(pool.frame_means[indices[b]]);
    const double t = 1.0 / static_cast<double>(e.y.count());
    for (std::size_t c = 0; c < classes; ++c) {
      if (e.y.positive(c)) batch.weighted_targets.at(b, c) = pool.weights.weights[c] * t;
    }
  }
  return batch;
}

// One optimizer step on the masked subset of the parameter tensors.
void masked_step(AdamW& opt, ModelParams& params, const std::vector<ad::NodePtr>& grads,
                 const std::array<bool, kNamedLayers>& trainable) {
  std::vector<Tensor*> tensors;
  std::vector<const Tensor*> gradient_ptrs;
  auto all = param_tensors(params);
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (!trainable[kParamGroup[k]]) continue;
    tensors.push_back(all[k]);
    gradient_ptrs.push_back(&grads[k]->value());
  }
  opt.step(tensors, gradient_ptrs, std::vector<bool>(tensors.size(), true));
}

EpisodeReport report_from(const Metrics& m, std::size_t shots) {
  EpisodeReport r;
  r.maf1 = m.maf1;
  r.mif1 = m.mif1;
  r.ua = m.ua;
  r.shots = shots;
  return r;
}

}  // namespace

PretrainResult pretrain_base(const std::vector<AnnotatorTask>& tasks,
                             const std::vector<Example>& val, const PretrainConfig& cfg) {
  const std::size_t classes = cfg.head.classes;
  Pool pool = build_pool(tasks, classes, cfg.cb_beta);

  Rng rng(cfg.seed);
  ModelParams params = ModelParams::init(cfg.head, rng);
  AdamW opt(cfg.opt);

  ClassBalanceWeights val_weights;
  if (!val.empty()) {
    val_weights = make_class_weights(label_counts(val, classes), cfg.cb_beta);
  }

  PretrainResult result;
  result.params = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  const std::size_t n = pool.examples.size();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> perm = rng.permutation(n);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> indices(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                       perm.begin() + static_cast<std::ptrdiff_t>(end));
      PreparedBatch batch = gather_batch(pool, indices, classes);
      ParamNodes nodes = ParamNodes::leaves(params);
      ad::NodePtr loss_node = batch_loss(nodes, batch);
      auto grads = ad::gradient(loss_node, nodes.all());
      masked_step(opt, params, grads, cfg.trainable);
      epoch_loss += loss_node->value().item();
      ++batches;
    }

    TrainLogRow row;
    row.step = epoch;
    row.outer_loss = epoch_loss / static_cast<double>(batches);
    if (!val.empty()) {
      row.val_loss = loss(params, val, val_weights);
      if (row.val_loss < result.best_val_loss) {
        result.best_val_loss = row.val_loss;
        result.best_epoch = epoch;
        result.params = params;
      }
    } else {
      result.params = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(row);
  }
  return result;
}

EpisodeReport entire_zero(const ModelParams& base, const std::vector<Example>& few_test) {
  return report_from(evaluate_params(base, few_test), 0);
}

EpisodeReport entire_few(const ModelParams& base, const std::vector<Example>& few_train,
                         const std::vector<Example>& few_test, const FinetuneConfig& cfg) {
  AdaptOptions opt;
  opt.steps = cfg.steps;
  opt.cb_beta = cfg.cb_beta;
  opt.trainable = cfg.trainable;
  const ModelParams adapted =
      adapt_params(base, LSLRTable::uniform(1, cfg.rate), few_train, opt);
  return report_from(evaluate_params(adapted, few_test), few_train.size());
}

EpisodeReport linear_few_adapt(const ModelParams& restricted_base,
                               const std::vector<Example>& few_train,
                               const std::vector<Example>& few_test, const FinetuneConfig& cfg) {
  FinetuneConfig restricted = cfg;
  restricted.trainable = {true, false, true};
  return entire_few(restricted_base, few_train, few_test, restricted);
}

ModelParams MultiHeadParams::materialize(const std::string& annotator) const {
  auto it = heads.find(annotator);
  if (it == heads.end()) throw ContractError("no head for annotator '" + annotator + "'");
  ModelParams p;
  p.layer_weights = layer_weights;
  p.w1 = w1;
  p.b1 = b1;
  p.w2 = it->second.first;
  p.b2 = it->second.second;
  return p;
}

MultiHeadParams train_multi_head(const std::vector<AnnotatorTask>& tasks,
                                 const PretrainConfig& cfg) {
  if (tasks.empty()) throw ContractError("multi-head training needs at least one task");
  const std::size_t classes = cfg.head.classes;

  Rng rng(cfg.seed);
  ModelParams init = ModelParams::init(cfg.head, rng);
  MultiHeadParams params;
  params.head_config = cfg.head;
  params.layer_weights = init.layer_weights;
  params.w1 = init.w1;
  params.b1 = init.b1;
  params.heads.emplace(tasks[0].annotator_id, std::pair{init.w2, init.b2});
  for (std::size_t t = 1; t < tasks.size(); ++t) {
    ModelParams head_init = ModelParams::init(cfg.head, rng);
    params.heads.emplace(tasks[t].annotator_id, std::pair{head_init.w2, head_init.b2});
  }

  // one trunk optimizer plus one per head; state is per-tensor, so this is
  // numerically identical to a single optimizer over all tensors
  AdamW trunk_opt(cfg.opt);
  std::map<std::string, AdamW> head_opts;
  for (const AnnotatorTask& t : tasks) head_opts.emplace(t.annotator_id, AdamW(cfg.opt));

  struct TaskPool {
    const AnnotatorTask* task;
    Pool pool;
  };
  std::vector<TaskPool> pools;
  for (const AnnotatorTask& t : tasks) {
    pools.push_back({&t, build_pool({t}, classes, cfg.cb_beta)});
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> task_order = rng.permutation(tasks.size());
    for (std::size_t ti : task_order) {
      TaskPool& tp = pools[ti];
      const std::size_t n = tp.pool.examples.size();
      const std::vector<std::size_t> perm = rng.permutation(n);
      auto& [w2, b2] = params.heads.at(tp.task->annotator_id);
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t end = std::min(n, start + cfg.batch_size);
        std::vector<std::size_t> indices(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                         perm.begin() + static_cast<std::ptrdiff_t>(end));
        PreparedBatch batch = gather_batch(tp.pool, indices, classes);

        ModelParams current;
        current.layer_weights = params.layer_weights;
        current.w1 = params.w1;
        current.b1 = params.b1;
        current.w2 = w2;
        current.b2 = b2;
        ParamNodes nodes = ParamNodes::leaves(current);
        auto grads = ad::gradient(batch_loss(nodes, batch), nodes.all());

        trunk_opt.step({&params.layer_weights, &params.w1, &params.b1},
                       {&grads[0]->value(), &grads[1]->value(), &grads[2]->value()},
                       {true, true, true});
        head_opts.at(tp.task->annotator_id)
            .step({&w2, &b2}, {&grads[3]->value(), &grads[4]->value()}, {true, true});
      }
    }
  }
  return params;
}

EpisodeReport multi_few(const MultiHeadParams& base, const std::vector<Example>& few_train,
                        const std::vector<Example>& few_test, const FinetuneConfig& cfg,
                        std::uint64_t head_seed) {
  Rng rng(head_seed);
  ModelParams fresh = ModelParams::init(base.head_config, rng);
  ModelParams params;
  params.layer_weights = base.layer_weights;
  params.w1 = base.w1;
  params.b1 = base.b1;
  params.w2 = fresh.w2;
  params.b2 = fresh.b2;

  FinetuneConfig head_only = cfg;
  head_only.trainable = {false, false, true};
  return entire_few(params, few_train, few_test, head_only);
}

PrototypeSet build_prototypes(const ModelParams& base, const std::vector<Example>& few_train) {
  if (few_train.empty()) throw ContractError("prototype set needs at least one sample");
  const std::size_t classes = base.b2.numel();
  const std::size_t dim = base.w1.extent(0);

  std::vector<Tensor> sums(classes, Tensor::zeros({dim}));
  std::vector<std::size_t> counts(classes, 0);
  for (const Example& e : few_train) {
    const Tensor f = pooled_feature(base, *e.x);
    for (std::size_t c = 0; c < classes; ++c) {
      if (!e.y.positive(c)) continue;
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += f[d];
      ++counts[c];
    }
  }

  PrototypeSet set;
  set.classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    Tensor center({dim});
    for (std::size_t d = 0; d < dim; ++d) {
      center[d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    set.emotions.push_back(c);
    set.centers.push_back(std::move(center));
  }
  return set;
}

namespace {

double norm(const Tensor& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

}  // namespace

Tensor prototype_probs(const PrototypeSet& prototypes, const Tensor& feature) {
  const std::size_t covered = prototypes.emotions.size();
  if (covered == 0) throw ContractError("prototype set covers no emotions");
  Tensor probs({covered});

  const double fnorm = norm(feature);
  if (fnorm == 0.0) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "[entire-sim] zero-norm feature; scoring uniform\n";
      warned = true;
    }
    for (std::size_t i = 0; i < covered; ++i) probs[i] = 1.0 / static_cast<double>(covered);
    return probs;
  }

  std::vector<double> sims(covered, 0.0);
  double max_sim = -2.0;
  for (std::size_t i = 0; i < covered; ++i) {
    const Tensor& c = prototypes.centers[i];
    const double cnorm = norm(c);
    if (cnorm > 0.0) {
      double dot = 0.0;
      for (std::size_t d = 0; d < c.numel(); ++d) dot += c[d] * feature[d];
      sims[i] = dot / (cnorm * fnorm);
    }
    max_sim = std::max(max_sim, sims[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < covered; ++i) {
    probs[i] = std::exp(sims[i] - max_sim);
    total += probs[i];
  }
  for (std::size_t i = 0; i < covered; ++i) probs[i] /= total;
  return probs;
}

EpisodeReport entire_sim(const ModelParams& base, const std::vector<Example>& few_train,
                         const std::vector<Example>& few_test) {
  if (few_test.empty()) throw ContractError("entire_sim: empty test set");
  const PrototypeSet prototypes = build_prototypes(base, few_train);
  const std::size_t classes = base.b2.numel();

  std::vector<LabelSet> preds, gold;
  for (const Example& e : few_test) {
    const Tensor probs = prototype_probs(prototypes, pooled_feature(base, *e.x));
    const LabelSet covered_pred = threshold_predictions(probs);
    LabelSet pred(classes);
    for (std::size_t i = 0; i < prototypes.emotions.size(); ++i) {
      if (covered_pred.positive(i)) pred.set(prototypes.emotions[i]);
    }
    preds.push_back(std::move(pred));
    gold.push_back(e.y);
  }
  return report_from(score(preds, gold), few_train.size());
}

EpisodeReport random_baseline(const std::vector<Example>& few_test, std::size_t classes,
                              std::uint64_t seed) {
  if (few_test.empty()) throw ContractError("random_baseline: empty test set");
  Rng rng(seed);
  std::vector<LabelSet> preds, gold;
  for (const Example& e : few_test) {
    Tensor logits({classes});
    for (std::size_t c = 0; c < classes; ++c) logits[c] = rng.normal();
    double mx = logits[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, logits[c]);
    Tensor probs({classes});
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp(logits[c] - mx);
      total += probs[c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[c] /= total;
    preds.push_back(threshold_predictions(probs));
    gold.push_back(e.y);
  }
  return report_from(score(preds, gold), 0);
}

}  // namespace mpser
