#include "mpser/model.hpp"

#include <algorithm>
#include <cmath>

#include "mpser/errors.hpp"

namespace mpser {

Tensor EmbeddingSequence::frame_means() const {
  Tensor m({layers, dim});
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t t = 0; t < frames; ++t) {
      const double* row = values.data().data() + (l * frames + t) * dim;
      double* dst = m.data().data() + l * dim;
      for (std::size_t d = 0; d < dim; ++d) dst[d] += row[d];
    }
    double* dst = m.data().data() + l * dim;
    for (std::size_t d = 0; d < dim; ++d) dst[d] /= static_cast<double>(frames);
  }
  return m;
}

LabelSet LabelSet::single(std::size_t classes, std::size_t cls) {
  LabelSet y(classes);
  y.set(cls);
  return y;
}

std::size_t LabelSet::count() const {
  std::size_t n = 0;
  for (std::uint8_t b : mask) n += b != 0;
  return n;
}

ModelParams ModelParams::init(const HeadConfig& cfg, Rng& rng) {
  ModelParams p = zeros(cfg);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  for (double& v : p.w1.data()) v = rng.normal(0.0, s1);
  for (double& v : p.w2.data()) v = rng.normal(0.0, s2);
  return p;
}

ModelParams ModelParams::zeros(const HeadConfig& cfg) {
  ModelParams p;
  p.layer_weights = Tensor::zeros({cfg.layers});
  p.w1 = Tensor::zeros({cfg.dim, cfg.hidden});
  p.b1 = Tensor::zeros({cfg.hidden});
  p.w2 = Tensor::zeros({cfg.hidden, cfg.classes});
  p.b2 = Tensor::zeros({cfg.classes});
  return p;
}

HeadConfig ModelParams::config() const {
  return HeadConfig{layer_weights.numel(), w1.extent(0), w1.extent(1), w2.extent(1)};
}

std::size_t ModelParams::param_count() const {
  return layer_weights.numel() + w1.numel() + b1.numel() + w2.numel() + b2.numel();
}

bool ModelParams::same_shape(const ModelParams& other) const {
  return layer_weights.same_shape(other.layer_weights) && w1.same_shape(other.w1) &&
         b1.same_shape(other.b1) && w2.same_shape(other.w2) && b2.same_shape(other.b2);
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
  if (!same_shape(other)) return false;
  auto a = param_tensors(*this), b = param_tensors(other);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->data() != b[i]->data()) return false;
  }
  return true;
}

std::vector<Tensor*> param_tensors(ModelParams& p) {
  return {&p.layer_weights, &p.w1, &p.b1, &p.w2, &p.b2};
}

std::vector<const Tensor*> param_tensors(const ModelParams& p) {
  return {&p.layer_weights, &p.w1, &p.b1, &p.w2, &p.b2};
}

ClassBalanceWeights make_class_weights(const std::vector<std::size_t>& counts, double beta) {
  if (beta < 0.0 || beta >= 1.0) {
    throw ContractError("class-balance beta must be in [0, 1), got " + std::to_string(beta));
  }
  ClassBalanceWeights w;
  w.beta = beta;
  w.counts = counts;
  w.weights.resize(counts.size());
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const std::size_t n = counts[c] == 0 ? 1 : counts[c];
    const double raw =
        beta == 0.0 ? 1.0 : (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n)));
    w.weights[c] = raw;
    total += raw;
  }
  const double target = static_cast<double>(counts.size());
  for (double& v : w.weights) v *= target / total;
  return w;
}

std::vector<std::size_t> label_counts(const std::vector<Example>& batch, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const Example& e : batch) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (e.y.positive(c)) ++counts[c];
    }
  }
  return counts;
}

ParamNodes ParamNodes::leaves(const ModelParams& p) {
  return ParamNodes{ad::leaf(p.layer_weights), ad::leaf(p.w1), ad::leaf(p.b1), ad::leaf(p.w2),
                    ad::leaf(p.b2)};
}

ModelParams ParamNodes::values() const {
  ModelParams p;
  p.layer_weights = layer_weights->value();
  p.w1 = w1->value();
  p.b1 = b1->value();
  p.w2 = w2->value();
  p.b2 = b2->value();
  return p;
}

PreparedBatch prepare_batch(const std::vector<Example>& batch, const ClassBalanceWeights& w) {
  if (batch.empty()) throw ContractError("empty batch");
  const std::size_t classes = w.weights.size();
  PreparedBatch out;
  out.size = batch.size();
  out.frame_means.reserve(batch.size());
  out.weighted_targets = Tensor({batch.size(), classes});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.frame_means.push_back(batch[b].x->frame_means());
    const std::size_t positives = batch[b].y.count();
    if (positives == 0) throw ContractError("label set with no positive entry");
    const double t = 1.0 / static_cast<double>(positives);
    for (std::size_t c = 0; c < classes; ++c) {
      if (batch[b].y.positive(c)) out.weighted_targets.at(b, c) = w.weights[c] * t;
    }
  }
  return out;
}

ad::NodePtr pooled_rows(const ParamNodes& p, const std::vector<Tensor>& frame_means) {
  const std::size_t layers = p.layer_weights->value().numel();
  ad::NodePtr mix = ad::softmax(ad::reshape(p.layer_weights, {1, layers}), 1);
  std::vector<ad::NodePtr> rows;
  rows.reserve(frame_means.size());
  for (const Tensor& m : frame_means) {
    if (m.extent(0) != layers) {
      throw ShapeError("embedding has " + std::to_string(m.extent(0)) +
                       " layers, head expects " + std::to_string(layers));
    }
    rows.push_back(ad::matmul(mix, ad::constant(m)));
  }
  return ad::stack_rows(rows);
}

ad::NodePtr batch_log_probs(const ParamNodes& p, const std::vector<Tensor>& frame_means) {
  const std::size_t b = frame_means.size();
  const std::size_t hidden = p.b1->value().numel();
  const std::size_t classes = p.b2->value().numel();
  ad::NodePtr x = pooled_rows(p, frame_means);
  ad::NodePtr h = ad::relu(ad::add(
      ad::matmul(x, p.w1), ad::broadcast_axis(ad::reshape(p.b1, {1, hidden}), 0, b)));
  ad::NodePtr logits = ad::add(
      ad::matmul(h, p.w2), ad::broadcast_axis(ad::reshape(p.b2, {1, classes}), 0, b));
  return ad::log_softmax(logits, 1);
}

ad::NodePtr batch_loss(const ParamNodes& p, const PreparedBatch& batch) {
  ad::NodePtr lp = batch_log_probs(p, batch.frame_means);
  ad::NodePtr weighted = ad::mul(lp, ad::constant(batch.weighted_targets));
  return ad::scale(ad::sum(weighted), -1.0 / static_cast<double>(batch.size));
}

Tensor predict(const ModelParams& params, const EmbeddingSequence& x) {
  if (x.dim != params.w1.extent(0)) {
    throw ShapeError("embedding dim " + std::to_string(x.dim) + " does not match head input " +
                     std::to_string(params.w1.extent(0)));
  }
  ParamNodes p = ParamNodes::leaves(params);
  std::vector<Tensor> means = {x.frame_means()};
  Tensor lp = ad::forward(ad::exp(batch_log_probs(p, means)));
  return Tensor({lp.numel()}, lp.data());
}

Tensor predict_batch(const ModelParams& params, const std::vector<Example>& batch) {
  if (batch.empty()) throw ContractError("empty batch");
  ParamNodes p = ParamNodes::leaves(params);
  std::vector<Tensor> means;
  means.reserve(batch.size());
  for (const Example& e : batch) means.push_back(e.x->frame_means());
  return ad::forward(ad::exp(batch_log_probs(p, means)));
}

double loss(const ModelParams& params, const std::vector<Example>& batch,
            const ClassBalanceWeights& w) {
  ParamNodes p = ParamNodes::leaves(params);
  return ad::forward(batch_loss(p, prepare_batch(batch, w))).item();
}

LabelSet threshold_predictions(const Tensor& probs) {
  const std::size_t classes = probs.numel();
  const double threshold = 1.0 / static_cast<double>(classes);
  LabelSet y(classes);
  std::size_t best = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (probs[c] >= threshold) y.set(c);
    if (probs[c] > probs[best]) best = c;
  }
  if (y.count() == 0) y.set(best);  // unreachable for exact arithmetic
  return y;
}

Tensor pooled_feature(const ModelParams& params, const EmbeddingSequence& x) {
  const Tensor means = x.frame_means();  // {L, D}
  const std::size_t layers = x.layers, dim = x.dim;

  // softmax over the mixing logits
  std::vector<double> mix(layers);
  double maxw = params.layer_weights[0];
  for (std::size_t l = 1; l < layers; ++l) maxw = std::max(maxw, params.layer_weights[l]);
  double total = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    mix[l] = std::exp(params.layer_weights[l] - maxw);
    total += mix[l];
  }

  Tensor f({dim});
  for (std::size_t l = 0; l < layers; ++l) {
    const double wl = mix[l] / total;
    for (std::size_t d = 0; d < dim; ++d) f[d] += wl * means[l * dim + d];
  }
  return f;
}

}  // namespace mpser
