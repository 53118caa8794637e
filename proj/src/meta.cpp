#include "mpser/meta.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "mpser/errors.hpp"
#include "mpser/rng.hpp"

namespace mpser {

LSLRTable LSLRTable::uniform(std::size_t steps, double rate) {
  if (steps == 0) throw ContractError("LSLR table needs at least one step column");
  LSLRTable t;
  t.rates = Tensor::full({kNamedLayers, steps}, rate);
  return t;
}

double LSLRTable::rate(std::size_t layer, std::size_t step_0idx) const {
  return rates.at(layer, std::min(step_0idx, steps() - 1));
}

bool LSLRTable::bitwise_equal(const LSLRTable& other) const {
  return rates.shape() == other.rates.shape() && rates.data() == other.rates.data();
}

bool AnnealSchedule::first_order(std::size_t step_1idx) const {
  const double raw = first_order_fraction * static_cast<double>(total_steps);
  const auto cutoff = static_cast<std::size_t>(std::max(0.0, std::ceil(raw - 1e-9)));
  return step_1idx <= cutoff;
}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                 const std::vector<bool>& decay_mask) {
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(Tensor::zeros(p->shape()));
      v_.emplace_back(Tensor::zeros(p->shape()));
    }
  }
  if (params.size() != m_.size() || grads.size() != params.size()) {
    throw ContractError("optimizer state does not match parameter list");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      double update = mhat / (std::sqrt(vhat) + cfg_.eps);
      if (decay_mask[k]) update += cfg_.weight_decay * p[i];
      p[i] -= cfg_.lr * update;
    }
  }
}

std::vector<ad::NodePtr> unroll_lslr(std::vector<ad::NodePtr> params,
                                     const std::vector<std::size_t>& groups,
                                     const ad::NodePtr& lslr_rates,
                                     const AnnealSchedule& schedule, std::size_t steps,
                                     const LossBuilder& inner_loss) {
  if (params.size() != groups.size()) {
    throw ContractError("unroll_lslr: one group index per parameter tensor");
  }
  const std::size_t table_steps = lslr_rates->value().extent(1);
  for (std::size_t s = 1; s <= steps; ++s) {
    ad::NodePtr loss = inner_loss(params);
    std::vector<ad::NodePtr> grads = ad::gradient(loss, params);
    const std::size_t col = std::min(s - 1, table_steps - 1);
    const bool first_order = schedule.first_order(s);
    for (std::size_t k = 0; k < params.size(); ++k) {
      ad::NodePtr g = first_order ? ad::stop_gradient(grads[k]) : grads[k];
      ad::NodePtr rate = ad::slice_elem(lslr_rates, groups[k] * table_steps + col);
      params[k] = ad::sub(params[k], ad::mul(g, rate));
    }
  }
  return params;
}

namespace {

const std::vector<std::size_t> kGroupVec(kParamGroup, kParamGroup + 5);

ParamNodes to_param_nodes(const std::vector<ad::NodePtr>& v) {
  return ParamNodes{v[0], v[1], v[2], v[3], v[4]};
}

std::vector<ad::NodePtr> adapt_nodes(const ParamNodes& theta, const ad::NodePtr& lslr_leaf,
                                     const PreparedBatch& episode,
                                     const AnnealSchedule& schedule, std::size_t steps) {
  return unroll_lslr(theta.all(), kGroupVec, lslr_leaf, schedule, steps,
                     [&episode](const std::vector<ad::NodePtr>& p) {
                       return batch_loss(to_param_nodes(p), episode);
                     });
}

}  // namespace

AdaptedParams inner_adapt(const ModelParams& theta, const std::vector<Example>& episode,
                          const LSLRTable& lslr, const AnnealSchedule& schedule,
                          std::size_t steps, double cb_beta) {
  if (episode.empty()) throw ContractError("inner_adapt: empty episode");
  if (steps == 0) throw ContractError("inner_adapt: steps must be >= 1");
  const std::size_t classes = theta.b2.numel();
  PreparedBatch batch =
      prepare_batch(episode, make_class_weights(label_counts(episode, classes), cb_beta));

  AdaptedParams out;
  out.theta = ParamNodes::leaves(theta);
  out.lslr = ad::leaf(lslr.rates);
  out.steps = steps;
  out.adapted = to_param_nodes(adapt_nodes(out.theta, out.lslr, batch, schedule, steps));
  return out;
}

MetaGradients meta_gradient(const ModelParams& theta, const LSLRTable& lslr,
                            const std::vector<TaskEpisode>& tasks,
                            const AnnealSchedule& schedule, std::size_t steps) {
  if (tasks.empty()) throw ContractError("meta_gradient: empty task list");

  MetaGradients out;
  out.theta = ModelParams::zeros(theta.config());
  out.lslr = Tensor::zeros(lslr.rates.shape());

  const double inv = 1.0 / static_cast<double>(tasks.size());
  for (const TaskEpisode& task : tasks) {
    ParamNodes leaves = ParamNodes::leaves(theta);
    ad::NodePtr lslr_leaf = ad::leaf(lslr.rates);
    std::vector<ad::NodePtr> adapted =
        adapt_nodes(leaves, lslr_leaf, task.inner, schedule, steps);
    ad::NodePtr outer = batch_loss(to_param_nodes(adapted), task.outer);

    std::vector<ad::NodePtr> wrt = leaves.all();
    wrt.push_back(lslr_leaf);
    std::vector<ad::NodePtr> grads = ad::gradient(outer, wrt);

    auto acc = param_tensors(out.theta);
    for (std::size_t k = 0; k < acc.size(); ++k) {
      const Tensor& g = grads[k]->value();
      for (std::size_t i = 0; i < acc[k]->numel(); ++i) (*acc[k])[i] += inv * g[i];
    }
    const Tensor& gl = grads.back()->value();
    for (std::size_t i = 0; i < out.lslr.numel(); ++i) out.lslr[i] += inv * gl[i];
    out.outer_loss += inv * outer->value().item();
  }
  return out;
}

MetaGradients meta_gradient_csmt(const ModelParams& theta, const LSLRTable& lslr,
                                 const std::vector<std::vector<Example>>& episodes,
                                 const AnnealSchedule& schedule, std::size_t steps,
                                 double cb_beta) {
  if (episodes.empty()) throw ContractError("meta_gradient_csmt: empty task list");
  const std::size_t classes = theta.b2.numel();
  std::vector<TaskEpisode> tasks;
  tasks.reserve(episodes.size());
  for (const auto& episode : episodes) {
    PreparedBatch batch =
        prepare_batch(episode, make_class_weights(label_counts(episode, classes), cb_beta));
    tasks.push_back({batch, batch});
  }
  return meta_gradient(theta, lslr, tasks, schedule, steps);
}

ModelParams adapt_params(const ModelParams& theta, const LSLRTable& rates,
                         const std::vector<Example>& support, const AdaptOptions& opt) {
  if (support.empty()) throw ContractError("adapt_params: empty support set");
  const std::size_t classes = theta.b2.numel();
  PreparedBatch batch =
      prepare_batch(support, make_class_weights(label_counts(support, classes), opt.cb_beta));

  ModelParams cur = theta;
  for (std::size_t s = 0; s < opt.steps; ++s) {
    ParamNodes nodes = ParamNodes::leaves(cur);
    std::vector<ad::NodePtr> grads = ad::gradient(batch_loss(nodes, batch), nodes.all());
    auto tensors = param_tensors(cur);
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const std::size_t group = kParamGroup[k];
      if (!opt.trainable[group]) continue;
      const double rate = rates.rate(group, s);
      const Tensor& g = grads[k]->value();
      for (std::size_t i = 0; i < tensors[k]->numel(); ++i) (*tensors[k])[i] -= rate * g[i];
    }
  }
  return cur;
}

Metrics evaluate_params(const ModelParams& params, const std::vector<Example>& samples) {
  if (samples.empty()) throw ContractError("evaluate_params: empty sample set");
  const Tensor probs = predict_batch(params, samples);
  const std::size_t classes = probs.extent(1);
  std::vector<LabelSet> preds, gold;
  preds.reserve(samples.size());
  gold.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor row({classes});
    for (std::size_t c = 0; c < classes; ++c) row[c] = probs.at(i, c);
    preds.push_back(threshold_predictions(row));
    gold.push_back(samples[i].y);
  }
  const Metrics m = score(preds, gold);
  return m;
}

MetaTrainResult meta_train(const ModelParams& init, const std::vector<AnnotatorTask>& tasks,
                           const AnnotatorTask& val_task, const MetaConfig& cfg) {
  if (tasks.empty()) throw ContractError("meta_train: no training tasks");
  Rng rng(cfg.seed);

  ModelParams theta = init;
  LSLRTable lslr = LSLRTable::uniform(cfg.train_steps, cfg.inner_rate);
  AdamW opt(cfg.outer);
  const AnnealSchedule schedule = cfg.train_schedule();

  // fixed validation episode; model selection runs the meta-test protocol on
  // the validation annotator
  const FewShotSplit val = sample_episode(val_task, cfg.shots, cfg.query, cfg.seed);
  const std::size_t classes = theta.b2.numel();
  const ClassBalanceWeights val_weights =
      make_class_weights(label_counts(val.test, classes), cfg.class_balance_beta);

  std::vector<std::vector<Example>> task_examples;
  task_examples.reserve(tasks.size());
  bool warned_short = false;
  for (const AnnotatorTask& t : tasks) task_examples.push_back(t.examples());

  MetaTrainResult result;
  result.params = theta;
  result.lslr = lslr;

  auto validate = [&](std::size_t step) {
    AdaptOptions adapt_opt;
    adapt_opt.steps = cfg.test_steps;
    adapt_opt.cb_beta = cfg.class_balance_beta;
    const ModelParams adapted = adapt_params(theta, lslr, val.train, adapt_opt);
    const double val_loss = loss(adapted, val.test, val_weights);
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_step = step;
      result.params = theta;
      result.lslr = lslr;
    }
    return val_loss;
  };

  for (std::size_t step = 1; step <= cfg.outer_steps; ++step) {
    // sample meta_batch distinct tasks (all of them when fewer exist)
    std::vector<std::size_t> order = rng.permutation(tasks.size());
    const std::size_t batch_tasks = std::min(cfg.meta_batch, tasks.size());

    std::vector<TaskEpisode> episodes;
    episodes.reserve(batch_tasks);
    for (std::size_t b = 0; b < batch_tasks; ++b) {
      const std::vector<Example>& pool = task_examples[order[b]];
      std::vector<Example> sampled;
      sampled.reserve(cfg.shots);
      if (pool.size() >= cfg.shots) {
        std::vector<std::size_t> perm = rng.permutation(pool.size());
        for (std::size_t i = 0; i < cfg.shots; ++i) sampled.push_back(pool[perm[i]]);
      } else {
        if (!warned_short) {
          std::cerr << "[meta] annotator '" << tasks[order[b]].annotator_id << "' has "
                    << pool.size() << " < K=" << cfg.shots
                    << " examples; sampling with replacement\n";
          warned_short = true;
        }
        for (std::size_t i = 0; i < cfg.shots; ++i) sampled.push_back(pool[rng.index(pool.size())]);
      }

      if (cfg.use_csmt || sampled.size() < 2) {
        PreparedBatch batch = prepare_batch(
            sampled, make_class_weights(label_counts(sampled, classes), cfg.class_balance_beta));
        episodes.push_back({batch, batch});
      } else {
        // traditional support/query split of the same sampled budget
        const std::size_t half = sampled.size() / 2;
        std::vector<Example> support(sampled.begin(), sampled.begin() + half);
        std::vector<Example> query(sampled.begin() + half, sampled.end());
        episodes.push_back(
            {prepare_batch(support, make_class_weights(label_counts(support, classes),
                                                       cfg.class_balance_beta)),
             prepare_batch(query, make_class_weights(label_counts(query, classes),
                                                     cfg.class_balance_beta))});
      }
    }

    MetaGradients grads = meta_gradient(theta, lslr, episodes, schedule, cfg.train_steps);

    std::vector<Tensor*> params = param_tensors(theta);
    std::vector<const Tensor*> gradient_ptrs =
        param_tensors(static_cast<const ModelParams&>(grads.theta));
    std::vector<bool> decay(params.size(), true);
    if (cfg.use_lslr) {
      params.push_back(&lslr.rates);
      gradient_ptrs.push_back(&grads.lslr);
      decay.push_back(false);  // decaying rates would shrink adaptation itself
    }
    opt.step(params, gradient_ptrs, decay);

    TrainLogRow row;
    row.step = step;
    row.outer_loss = grads.outer_loss;
    if (step % cfg.val_interval == 0 || step == cfg.outer_steps) {
      row.val_loss = validate(step);
    }
    result.log.push_back(row);
  }
  if (cfg.outer_steps == 0) validate(0);
  return result;
}

EpisodeReport meta_test(const ModelParams& theta, const LSLRTable& lslr,
                        const std::vector<Example>& few_train,
                        const std::vector<Example>& few_test, const MetaConfig& cfg) {
  std::set<std::string> train_ids;
  for (const Example& e : few_train) train_ids.insert(e.x->utt_id);
  for (const Example& e : few_test) {
    if (train_ids.count(e.x->utt_id)) {
      throw ContractError("meta_test: utterance '" + e.x->utt_id +
                          "' appears in both few-shot sets");
    }
  }

  ModelParams adapted = theta;
  if (cfg.test_steps > 0) {
    AdaptOptions opt;
    opt.steps = cfg.test_steps;
    opt.cb_beta = cfg.class_balance_beta;
    adapted = adapt_params(theta, lslr, few_train, opt);
  }

  const Metrics m = evaluate_params(adapted, few_test);
  EpisodeReport report;
  report.maf1 = m.maf1;
  report.mif1 = m.mif1;
  report.ua = m.ua;
  report.shots = few_train.size();
  return report;
}

}  // namespace mpser
