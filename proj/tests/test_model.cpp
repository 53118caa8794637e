#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "mpser/errors.hpp"
#include "mpser/model.hpp"
#include "mpser/rng.hpp"
#include "test_util.hpp"

using namespace mpser;
using mpser::testing::fd_gradient;
using mpser::testing::max_rel_err;
using mpser::testing::random_embedding;
using mpser::testing::random_labels;
using mpser::testing::random_params;

namespace {

// Straight-line forward pass in the literal layer order (mix, pool, linear1,
// relu, linear2, softmax); independent of the graph path it checks.
std::vector<double> reference_predict(const ModelParams& p, const EmbeddingSequence& x) {
  const std::size_t L = x.layers, T = x.frames, D = x.dim;
  const std::size_t H = p.b1.numel(), C = p.b2.numel();

  std::vector<double> mix(L);
  double mx = p.layer_weights[0];
  for (std::size_t l = 1; l < L; ++l) mx = std::max(mx, p.layer_weights[l]);
  double ms = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    mix[l] = std::exp(p.layer_weights[l] - mx);
    ms += mix[l];
  }
  for (double& v : mix) v /= ms;

  // weighted sum over layers, then mean over frames
  std::vector<double> pooled(D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      double v = 0.0;
      for (std::size_t l = 0; l < L; ++l) v += mix[l] * x.values[(l * T + t) * D + d];
      pooled[d] += v;
    }
  }
  for (double& v : pooled) v /= static_cast<double>(T);

  std::vector<double> h(H);
  for (std::size_t j = 0; j < H; ++j) {
    double acc = p.b1[j];
    for (std::size_t d = 0; d < D; ++d) acc += pooled[d] * p.w1.at(d, j);
    h[j] = acc > 0.0 ? acc : 0.0;
  }
  std::vector<double> logits(C);
  for (std::size_t c = 0; c < C; ++c) {
    double acc = p.b2[c];
    for (std::size_t j = 0; j < H; ++j) acc += h[j] * p.w2.at(j, c);
    logits[c] = acc;
  }
  double lm = logits[0];
  for (double v : logits) lm = std::max(lm, v);
  double ls = 0.0;
  std::vector<double> probs(C);
  for (std::size_t c = 0; c < C; ++c) {
    probs[c] = std::exp(logits[c] - lm);
    ls += probs[c];
  }
  for (double& v : probs) v /= ls;
  return probs;
}

}  // namespace

TEST_CASE("predict: zero parameters give the uniform distribution") {
  Rng rng(1);
  HeadConfig cfg{2, 6, 5, 9};
  ModelParams p = ModelParams::zeros(cfg);
  EmbeddingSequence x = random_embedding(rng, cfg.layers, 4, cfg.dim);
  Tensor probs = predict(p, x);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    CHECK(probs[c] == doctest::Approx(1.0 / 9.0).epsilon(1e-14));
  }
}

TEST_CASE("predict: single layer and frame reduces to a plain MLP") {
  Rng rng(2);
  HeadConfig cfg{1, 7, 6, 4};
  ModelParams p = random_params(cfg, rng);
  EmbeddingSequence x = random_embedding(rng, 1, 1, cfg.dim);

  Tensor probs = predict(p, x);
  // mixing and pooling are identities here; reference sees the raw frame
  auto ref = reference_predict(p, x);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    CHECK(probs[c] == doctest::Approx(ref[c]).epsilon(1e-13));
  }
}

TEST_CASE("predict: matches the straight-line reference on random instances") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    HeadConfig cfg{1 + rng.index(3), 2 + rng.index(8), 3 + rng.index(6), 2 + rng.index(8)};
    ModelParams p = random_params(cfg, rng);
    EmbeddingSequence x = random_embedding(rng, cfg.layers, 1 + rng.index(6), cfg.dim);
    Tensor probs = predict(p, x);
    auto ref = reference_predict(p, x);
    REQUIRE(probs.numel() == ref.size());
    double sum = 0.0;
    for (std::size_t c = 0; c < ref.size(); ++c) {
      CHECK(std::fabs(probs[c] - ref[c]) <= 1e-12);
      CHECK(probs[c] > 0.0);
      CHECK(probs[c] < 1.0);
      sum += probs[c];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("predict: dimension mismatch raises a shape error") {
  Rng rng(4);
  HeadConfig cfg{2, 8, 4, 3};
  ModelParams p = random_params(cfg, rng);
  EmbeddingSequence x = random_embedding(rng, 2, 3, cfg.dim + 1);
  CHECK_THROWS_AS(predict(p, x), ShapeError);
}

TEST_CASE("class weights: frozen scalar oracle and limits") {
  // counts {10, 100}, beta 0.99, normalized to sum 2 (40-digit evaluation)
  auto w = make_class_weights({10, 100}, 0.99);
  CHECK(w.weights[0] == doctest::Approx(1.7378842808161673).epsilon(1e-12));
  CHECK(w.weights[1] == doctest::Approx(0.26211571918383267).epsilon(1e-12));

  // beta = 0 collapses to unweighted
  auto w0 = make_class_weights({5, 17, 1}, 0.0);
  for (double v : w0.weights) CHECK(v == 1.0);

  // equal counts give equal weights; permutation permutes weights
  auto we = make_class_weights({7, 7, 7}, 0.999);
  CHECK(we.weights[0] == we.weights[1]);
  CHECK(we.weights[1] == we.weights[2]);
  auto wa = make_class_weights({3, 50, 9}, 0.9);
  auto wb = make_class_weights({50, 9, 3}, 0.9);
  CHECK(wa.weights[0] == doctest::Approx(wb.weights[2]).epsilon(1e-15));
  CHECK(wa.weights[1] == doctest::Approx(wb.weights[0]).epsilon(1e-15));

  // all weights positive even for unseen classes
  auto wz = make_class_weights({0, 12, 0}, 0.99);
  for (double v : wz.weights) CHECK(v > 0.0);
}

TEST_CASE("loss: uniform prediction of a single label costs log C") {
  Rng rng(5);
  HeadConfig cfg{2, 6, 5, 9};
  ModelParams p = ModelParams::zeros(cfg);  // uniform prediction
  EmbeddingSequence x = random_embedding(rng, cfg.layers, 4, cfg.dim);
  std::vector<Example> batch = {{&x, LabelSet::single(9, 3)}};
  auto w = make_class_weights(std::vector<std::size_t>(9, 1), 0.0);
  CHECK(loss(p, batch, w) == doctest::Approx(2.1972245773362194).epsilon(1e-13));
}

TEST_CASE("loss: empty batch violates the contract") {
  HeadConfig cfg{2, 6, 5, 9};
  ModelParams p = ModelParams::zeros(cfg);
  auto w = make_class_weights(std::vector<std::size_t>(9, 1), 0.0);
  CHECK_THROWS_AS(loss(p, {}, w), ContractError);
}

TEST_CASE("loss: gradient matches finite differences on a random head") {
  Rng rng(6);
  HeadConfig cfg{2, 8, 8, 9};
  ModelParams p = random_params(cfg, rng);

  std::vector<EmbeddingSequence> xs;
  for (int i = 0; i < 6; ++i) xs.push_back(random_embedding(rng, cfg.layers, 4, cfg.dim));
  std::vector<Example> batch;
  for (auto& x : xs) batch.push_back({&x, random_labels(rng, cfg.classes)});
  auto w = make_class_weights(label_counts(batch, cfg.classes), 0.999);
  PreparedBatch prepared = prepare_batch(batch, w);

  ParamNodes nodes = ParamNodes::leaves(p);
  auto grads = ad::gradient(batch_loss(nodes, prepared), nodes.all());

  std::vector<Tensor> at;
  for (const Tensor* t : param_tensors(p)) at.push_back(*t);
  auto rebuild = [&](const std::vector<Tensor>& vals) {
    ModelParams q;
    q.layer_weights = vals[0];
    q.w1 = vals[1];
    q.b1 = vals[2];
    q.w2 = vals[3];
    q.b2 = vals[4];
    ParamNodes n = ParamNodes::leaves(q);
    return ad::forward(batch_loss(n, prepared)).item();
  };
  auto fd = fd_gradient(rebuild, at);
  for (std::size_t t = 0; t < at.size(); ++t) {
    CHECK(max_rel_err(grads[t]->value(), fd[t]) <= 1e-5);
  }
}

TEST_CASE("loss: decreases under a small gradient step") {
  Rng rng(7);
  HeadConfig cfg{2, 8, 6, 9};
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = random_params(cfg, rng);
    std::vector<EmbeddingSequence> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(random_embedding(rng, cfg.layers, 3, cfg.dim));
    std::vector<Example> batch;
    for (auto& x : xs) batch.push_back({&x, random_labels(rng, cfg.classes)});
    auto w = make_class_weights(label_counts(batch, cfg.classes), 0.999);
    PreparedBatch prepared = prepare_batch(batch, w);

    ParamNodes nodes = ParamNodes::leaves(p);
    const double before = ad::forward(batch_loss(nodes, prepared)).item();
    auto grads = ad::gradient(batch_loss(nodes, prepared), nodes.all());

    auto tensors = param_tensors(p);
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      for (std::size_t i = 0; i < tensors[t]->numel(); ++i) {
        (*tensors[t])[i] -= 1e-4 * grads[t]->value()[i];
      }
    }
    ParamNodes after_nodes = ParamNodes::leaves(p);
    const double after = ad::forward(batch_loss(after_nodes, prepared)).item();
    CHECK(after < before);
  }
}

TEST_CASE("threshold: boundary, one-hot, and the worked nine-class case") {
  Tensor uniform({9}, std::vector<double>(9, 1.0 / 9.0));
  CHECK(threshold_predictions(uniform).count() == 9);

  Tensor onehot({9});
  onehot[3] = 1.0;
  LabelSet y = threshold_predictions(onehot);
  CHECK(y.count() == 1);
  CHECK(y.positive(3));

  Tensor p({9}, {0.5, 0.2, 0.1, 0.05, 0.05, 0.04, 0.03, 0.02, 0.01});
  LabelSet z = threshold_predictions(p);
  CHECK(z.count() == 2);
  CHECK(z.positive(0));
  CHECK(z.positive(1));
}

TEST_CASE("threshold: never empty on random softmax vectors") {
  Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t C = 2 + rng.index(10);
    std::vector<double> logits(C);
    for (double& v : logits) v = rng.normal(0.0, 3.0);
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0.0;
    Tensor probs({C});
    for (std::size_t c = 0; c < C; ++c) {
      probs[c] = std::exp(logits[c] - mx);
      s += probs[c];
    }
    for (std::size_t c = 0; c < C; ++c) probs[c] /= s;
    CHECK(threshold_predictions(probs).count() >= 1);
  }
}
