// Python bindings for the pipeline-level operations: synthetic corpus
// generation, pretraining, meta-training, evaluation, the ablation grid, and
// the scoring primitives.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>
#include <sstream>

#include "mpser/baselines.hpp"
#include "mpser/checkpoint.hpp"
#include "mpser/config.hpp"
#include "mpser/corpus.hpp"
#include "mpser/errors.hpp"
#include "mpser/meta.hpp"
#include "mpser/pipeline.hpp"
#include "mpser/reports.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace mpser;

namespace {

ExperimentConfig config_from_dict(const py::dict& d) {
  std::vector<std::string> overrides;
  for (const auto& item : d) {
    const std::string key = py::cast<std::string>(item.first);
    std::string value;
    if (py::isinstance<py::bool_>(item.second)) {
      value = py::cast<bool>(item.second) ? "true" : "false";
    } else {
      value = py::cast<std::string>(py::str(item.second));
    }
    overrides.push_back(key + "=" + value);
  }
  return apply_overrides(ExperimentConfig{}, overrides);
}

LabelSet labels_from_indices(const std::vector<std::size_t>& on, std::size_t classes) {
  LabelSet y(classes);
  for (std::size_t c : on) {
    if (c >= classes) throw ContractError("label index " + std::to_string(c) + " out of range");
    y.set(c);
  }
  return y;
}

std::vector<std::size_t> indices_from_labels(const LabelSet& y) {
  std::vector<std::size_t> on;
  for (std::size_t c = 0; c < y.classes(); ++c) {
    if (y.positive(c)) on.push_back(c);
  }
  return on;
}

// Opaque handle over trained parameters (plus the rate table after
// meta-training).
struct ModelHandle {
  ModelParams params;
  std::optional<LSLRTable> lslr;
  std::uint64_t digest = 0;
  std::uint64_t seed = 0;

  void save(const std::string& path) const {
    Checkpoint ckpt = Checkpoint::from_model(params, lslr ? &*lslr : nullptr);
    ckpt.config_digest = digest;
    ckpt.seed = seed;
    save_checkpoint(path, ckpt);
  }

  static ModelHandle load(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    ModelHandle h;
    h.params = ckpt.to_model();
    if (ckpt.has_lslr()) h.lslr = ckpt.to_lslr();
    h.digest = ckpt.config_digest;
    h.seed = ckpt.seed;
    return h;
  }
};

py::dict row_to_dict(const ReportRow& r) {
  py::dict d;
  d["method"] = r.method;
  d["annotator"] = r.episode.annotator;
  d["scenario"] = r.episode.scenario;
  d["seed"] = r.episode.seed;
  d["shots"] = r.episode.shots;
  d["maF1"] = r.episode.maf1;
  d["miF1"] = r.episode.mif1;
  d["UA"] = r.episode.ua;
  d["config_digest"] = r.digest;
  return d;
}

py::tuple synth(const py::dict& config, const std::string& out_dir) {
  const ExperimentConfig cfg = config_from_dict(config);
  const Corpus corpus = generate_synthetic(preset_from(cfg), cfg.synth_samples, cfg.seed);
  fs::create_directories(out_dir);
  const std::string manifest = (fs::path(out_dir) / "synth_manifest.jsonl").string();
  const std::string store = (fs::path(out_dir) / "embeddings").string();
  write_manifest(manifest, corpus_records(corpus));
  write_embedding_store(store, corpus.store);
  return py::make_tuple(manifest, store);
}

ModelHandle pretrain(const py::dict& config) {
  const ExperimentConfig cfg = config_from_dict(config);
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);
  ModelHandle h;
  h.params =
      pretrain_base(split.train, split.validation.examples(), pretrain_config_from(cfg, corpus))
          .params;
  h.digest = config_digest(cfg);
  h.seed = cfg.seed;
  return h;
}

ModelHandle meta_train_py(const py::dict& config, const ModelHandle* init) {
  const ExperimentConfig cfg = config_from_dict(config);
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);

  ModelParams start;
  if (cfg.ini) {
    if (init == nullptr) {
      throw ContractError("toggle 'ini' is on: pass the pretrained model as init");
    }
    start = init->params;
  } else {
    Rng rng(cfg.seed ^ 0x5eedf00dULL);
    start = ModelParams::init(head_config_from(cfg, corpus), rng);
  }
  const MetaTrainResult result =
      meta_train(start, split.train, split.validation, meta_config_from(cfg));

  ModelHandle h;
  h.params = result.params;
  h.lslr = result.lslr;
  h.digest = config_digest(cfg);
  h.seed = cfg.seed;
  return h;
}

std::vector<py::dict> evaluate(const py::dict& config, const ModelHandle* meta_model,
                               const ModelHandle* base_model) {
  const ExperimentConfig cfg = config_from_dict(config);
  const Corpus corpus = corpus_from_config(cfg);
  const std::vector<std::string> methods = parse_methods(cfg.methods);

  MethodArtifacts provided;
  if (base_model != nullptr) provided.base = base_model->params;
  if (meta_model != nullptr) {
    provided.meta_params = meta_model->params;
    if (meta_model->lslr) provided.meta_lslr = *meta_model->lslr;
  }

  const SplitResult split = split_from_config(cfg, corpus);
  const MethodArtifacts artifacts =
      prepare_artifacts(cfg, corpus, split, methods, std::move(provided));
  const std::vector<ReportRow> rows = evaluate_split(cfg, artifacts, split, methods);

  std::vector<py::dict> out;
  out.reserve(rows.size());
  for (const ReportRow& r : rows) out.push_back(row_to_dict(r));
  return out;
}

std::vector<py::dict> ablate(const py::dict& config) {
  const ExperimentConfig cfg = config_from_dict(config);
  const Corpus corpus = corpus_from_config(cfg);
  const SplitResult split = split_from_config(cfg, corpus);
  std::vector<py::dict> out;
  for (const AblationRow& r : run_ablation(cfg, corpus, split)) {
    py::dict d;
    d["label"] = r.label;
    d["ini"] = r.ini;
    d["csmt"] = r.csmt;
    d["da"] = r.da;
    d["lslr"] = r.lslr;
    d["maF1"] = r.mean.maf1;
    d["miF1"] = r.mean.mif1;
    d["UA"] = r.mean.ua;
    out.push_back(std::move(d));
  }
  return out;
}

py::dict score_py(const std::vector<std::vector<std::size_t>>& preds,
                  const std::vector<std::vector<std::size_t>>& gold, std::size_t classes) {
  std::vector<LabelSet> p, g;
  for (const auto& on : preds) p.push_back(labels_from_indices(on, classes));
  for (const auto& on : gold) g.push_back(labels_from_indices(on, classes));
  const Metrics m = score(p, g);
  py::dict d;
  d["maF1"] = m.maf1;
  d["miF1"] = m.mif1;
  d["UA"] = m.ua;
  return d;
}

std::vector<std::size_t> threshold_py(const std::vector<double>& probs) {
  return indices_from_labels(threshold_predictions(Tensor({probs.size()}, probs)));
}

std::vector<double> class_weights_py(const std::vector<std::size_t>& counts, double beta) {
  return make_class_weights(counts, beta).weights;
}

}  // namespace

PYBIND11_MODULE(_mpser, m) {
  m.doc() = "few-shot listener-personalized SER toolkit";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ContractError>(m, "ContractError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<ModelHandle>(m, "Model")
      .def_static("load", &ModelHandle::load, py::arg("path"))
      .def("save", &ModelHandle::save, py::arg("path"))
      .def_property_readonly("has_rates",
                             [](const ModelHandle& h) { return h.lslr.has_value(); })
      .def_property_readonly("config_digest",
                             [](const ModelHandle& h) { return h.digest; });

  m.def("synth", &synth, py::arg("config"), py::arg("out_dir"),
        "generate a synthetic corpus; returns (manifest_path, embedding_dir)");
  m.def("pretrain", &pretrain, py::arg("config"),
        "train the base model on aggregated labels");
  m.def("meta_train", &meta_train_py, py::arg("config"), py::arg("init") = nullptr,
        "meta-train; init is the pretrained model when the ini toggle is on");
  m.def("evaluate", &evaluate, py::arg("config"), py::arg("meta_model") = nullptr,
        py::arg("base_model") = nullptr,
        "run the configured methods over the shot sweep and seeds");
  m.def("ablate", &ablate, py::arg("config"), "run the toggle-grid ablation");
  m.def("score", &score_py, py::arg("preds"), py::arg("gold"), py::arg("classes") = 9,
        "multi-label maF1/miF1/UA over label-index lists");
  m.def("threshold", &threshold_py, py::arg("probs"),
        "positive class indices under the 1/C rule");
  m.def("class_weights", &class_weights_py, py::arg("counts"), py::arg("beta") = 0.999,
        "normalized effective-number class weights");
  m.def("emotion_names", [] {
    std::vector<std::string> names(kEmotionNames.begin(), kEmotionNames.end());
    return names;
  });
}
