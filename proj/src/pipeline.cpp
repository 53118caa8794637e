#include "mpser/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mpser/errors.hpp"
#include "mpser/rng.hpp"

namespace mpser {

HeadConfig head_config_from(const ExperimentConfig& cfg, const Corpus& corpus) {
  if (corpus.store.empty()) throw ContractError("corpus has no embeddings");
  const EmbeddingSequence& probe = corpus.store.begin()->second;
  return HeadConfig{probe.layers, probe.dim, cfg.hidden, kNumEmotions};
}

MetaConfig meta_config_from(const ExperimentConfig& cfg) {
  MetaConfig mc;
  mc.train_steps = cfg.train_steps;
  mc.test_steps = cfg.test_steps;
  mc.shots = cfg.shots;
  mc.query = cfg.query;
  mc.meta_batch = cfg.meta_batch;
  mc.outer_steps = cfg.outer_steps;
  mc.val_interval = cfg.val_interval;
  mc.inner_rate = cfg.inner_rate;
  mc.first_order_fraction = cfg.first_order_fraction;
  mc.class_balance_beta = cfg.cb_beta;
  mc.outer.lr = cfg.outer_rate;
  mc.outer.weight_decay = cfg.weight_decay;
  mc.seed = cfg.seed;
  mc.use_csmt = cfg.csmt;
  mc.use_da = cfg.da;
  mc.use_lslr = cfg.lslr;
  return mc;
}

PretrainConfig pretrain_config_from(const ExperimentConfig& cfg, const Corpus& corpus) {
  PretrainConfig pc;
  pc.head = head_config_from(cfg, corpus);
  pc.epochs = cfg.pretrain_epochs;
  pc.batch_size = cfg.pretrain_batch;
  pc.opt.lr = cfg.pretrain_rate;
  pc.opt.weight_decay = cfg.weight_decay;
  pc.cb_beta = cfg.cb_beta;
  pc.seed = cfg.seed;
  return pc;
}

SynthPreset preset_from(const ExperimentConfig& cfg) {
  if (cfg.synth_preset != "iemocap-ext") {
    throw ConfigError("config key 'synth_preset': unknown preset '" + cfg.synth_preset + "'");
  }
  SynthPreset preset = SynthPreset::iemocap_ext(cfg.synth_annotators, cfg.synth_agreement);
  preset.separation = cfg.synth_separation;
  return preset;
}

Corpus corpus_from_config(const ExperimentConfig& cfg) {
  if (!cfg.manifest.empty()) {
    if (cfg.embeddings.empty()) {
      throw ConfigError("config key 'embeddings': required when 'manifest' is set");
    }
    Corpus corpus;
    corpus.store = load_embedding_store(cfg.embeddings);
    const auto records = read_manifest(cfg.manifest);
    corpus.tasks = load_manifest(records, corpus.store, cfg.shots + cfg.query);
    return corpus;
  }
  return generate_synthetic(preset_from(cfg), cfg.synth_samples, cfg.seed);
}

SplitResult split_from_config(const ExperimentConfig& cfg, const Corpus& corpus) {
  if (corpus.tasks.size() < 3) {
    throw ContractError("need at least 3 annotator tasks (train/validation/test)");
  }
  std::string test = cfg.test_annotator;
  std::string val = cfg.val_annotator;
  if (test.empty()) test = corpus.tasks.back().annotator_id;
  if (val.empty()) {
    for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
      const std::size_t j = corpus.tasks.size() - 1 - i;
      if (corpus.tasks[j].annotator_id != test) {
        val = corpus.tasks[j].annotator_id;
        break;
      }
    }
  }
  return cfg.scenario == "unseen" ? split_unseen(corpus.tasks, test, val)
                                  : split_seen(corpus.tasks, test, val);
}

std::vector<std::string> parse_methods(const std::string& csv) {
  static const std::vector<std::string> known = {
      "meta", "entire-few", "entire-zero", "linear-few", "multi-few", "entire-sim", "random"};
  std::vector<std::string> methods;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const auto b = item.find_last_not_of(" \t");
    item = item.substr(a, b - a + 1);
    if (std::find(known.begin(), known.end(), item) == known.end()) {
      throw ConfigError("unknown method '" + item + "'");
    }
    if (std::find(methods.begin(), methods.end(), item) == methods.end()) {
      methods.push_back(item);
    }
  }
  if (methods.empty()) throw ConfigError("config key 'methods': no methods selected");
  return methods;
}

std::uint64_t episode_seed(std::uint64_t config_seed, std::size_t rep) {
  std::uint64_t x = config_seed;
  for (std::uint64_t v : {static_cast<std::uint64_t>(rep)}) {
    x += 0x9e3779b97f4a7c15ULL + v;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
  }
  return x;
}

MethodArtifacts prepare_artifacts(const ExperimentConfig& cfg, const Corpus& corpus,
                                  const SplitResult& split,
                                  const std::vector<std::string>& methods,
                                  MethodArtifacts provided) {
  MethodArtifacts art = std::move(provided);
  const auto wants = [&methods](const char* m) {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
  };

  const bool needs_base = wants("entire-few") || wants("entire-zero") || wants("entire-sim") ||
                          (wants("meta") && cfg.ini && !art.meta_params.has_value());
  if (needs_base && !art.base.has_value()) {
    art.base =
        pretrain_base(split.train, split.validation.examples(), pretrain_config_from(cfg, corpus))
            .params;
  }

  if (wants("linear-few") && !art.linear_base.has_value()) {
    PretrainConfig pc = pretrain_config_from(cfg, corpus);
    pc.trainable = {true, false, true};
    art.linear_base = pretrain_base(split.train, split.validation.examples(), pc).params;
  }

  if (wants("multi-few") && !art.multi.has_value()) {
    art.multi = train_multi_head(split.train, pretrain_config_from(cfg, corpus));
  }

  if (wants("meta") && !art.meta_params.has_value()) {
    const MetaConfig mc = meta_config_from(cfg);
    ModelParams init;
    if (cfg.ini) {
      init = *art.base;
    } else {
      Rng rng(cfg.seed ^ 0x5eedf00dULL);
      init = ModelParams::init(head_config_from(cfg, corpus), rng);
    }
    MetaTrainResult result = meta_train(init, split.train, split.validation, mc);
    art.meta_params = result.params;
    art.meta_lslr = result.lslr;
  }
  if (wants("meta") && !art.meta_lslr.has_value()) {
    art.meta_lslr = LSLRTable::uniform(cfg.train_steps, cfg.inner_rate);
  }
  return art;
}

std::vector<ReportRow> evaluate_split(const ExperimentConfig& cfg,
                                      const MethodArtifacts& artifacts,
                                      const SplitResult& split,
                                      const std::vector<std::string>& methods) {
  const std::uint64_t digest = config_digest(cfg);
  const MetaConfig mc = meta_config_from(cfg);

  FinetuneConfig ft;
  ft.steps = cfg.test_steps;
  ft.rate = cfg.finetune_rate;
  ft.cb_beta = cfg.cb_beta;

  std::vector<ReportRow> rows;
  for (const std::string& method : methods) {
    for (std::size_t shots : cfg.shot_sweep) {
      for (std::size_t rep = 0; rep < cfg.seeds; ++rep) {
        const std::uint64_t seed = episode_seed(cfg.seed, rep);
        const FewShotSplit episode = sample_episode(split.test, shots, cfg.query, seed);

        EpisodeReport report;
        if (method == "meta") {
          report = meta_test(*artifacts.meta_params, *artifacts.meta_lslr, episode.train,
                             episode.test, mc);
        } else if (method == "entire-few") {
          report = entire_few(*artifacts.base, episode.train, episode.test, ft);
        } else if (method == "entire-zero") {
          report = entire_zero(*artifacts.base, episode.test);
          report.shots = shots;
        } else if (method == "linear-few") {
          report = linear_few_adapt(*artifacts.linear_base, episode.train, episode.test, ft);
        } else if (method == "multi-few") {
          report = multi_few(*artifacts.multi, episode.train, episode.test, ft, seed ^ 0xbeefULL);
        } else if (method == "entire-sim") {
          report = entire_sim(*artifacts.base, episode.train, episode.test);
        } else {
          report = random_baseline(episode.test, kNumEmotions, seed);
          report.shots = shots;
        }
        report.seed = seed;
        report.annotator = split.test.annotator_id;
        report.scenario = cfg.scenario;
        rows.push_back({method, report, digest});
      }
    }
  }
  return rows;
}

std::vector<ReportRow> evaluate_rotations(const ExperimentConfig& cfg, const Corpus& corpus,
                                          const std::vector<std::string>& methods,
                                          const std::vector<std::string>& rotations) {
  std::vector<std::string> tests = rotations;
  if (tests.empty()) {
    if (!cfg.test_annotator.empty()) {
      tests.push_back(cfg.test_annotator);
    } else {
      for (const AnnotatorTask& t : corpus.tasks) tests.push_back(t.annotator_id);
    }
  }

  std::vector<ReportRow> rows;
  for (const std::string& test : tests) {
    ExperimentConfig rotated = cfg;
    rotated.test_annotator = test;
    if (rotated.val_annotator.empty() || rotated.val_annotator == test) {
      // validation rotates to the next annotator in task order
      for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
        if (corpus.tasks[i].annotator_id == test) {
          rotated.val_annotator = corpus.tasks[(i + 1) % corpus.tasks.size()].annotator_id;
          break;
        }
      }
    }
    const SplitResult split = split_from_config(rotated, corpus);
    const MethodArtifacts artifacts = prepare_artifacts(rotated, corpus, split, methods);
    std::vector<ReportRow> part = evaluate_split(rotated, artifacts, split, methods);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const Corpus& corpus,
                                      const SplitResult& split) {
  struct Row {
    const char* label;
    bool ini, csmt, da, lslr;
  };
  static const Row grid[] = {
      {"none", false, false, false, false}, {"ini", true, false, false, false},
      {"ini+csmt", true, true, false, false}, {"ini+da", true, false, true, false},
      {"ini+lslr", true, false, false, true}, {"full", true, true, true, true},
  };

  // one base model shared by every INI row
  MethodArtifacts shared;
  shared.base =
      pretrain_base(split.train, split.validation.examples(), pretrain_config_from(cfg, corpus))
          .params;

  std::vector<AblationRow> rows;
  for (const Row& r : grid) {
    ExperimentConfig variant = cfg;
    variant.ini = r.ini;
    variant.csmt = r.csmt;
    variant.da = r.da;
    variant.lslr = r.lslr;
    variant.shot_sweep = {cfg.shots};

    MethodArtifacts provided;
    if (r.ini) provided.base = shared.base;
    const MethodArtifacts artifacts =
        prepare_artifacts(variant, corpus, split, {"meta"}, std::move(provided));
    const std::vector<ReportRow> reports = evaluate_split(variant, artifacts, split, {"meta"});

    std::vector<EpisodeReport> episodes;
    episodes.reserve(reports.size());
    for (const ReportRow& rr : reports) episodes.push_back(rr.episode);

    AblationRow out;
    out.label = r.label;
    out.ini = r.ini;
    out.csmt = r.csmt;
    out.da = r.da;
    out.lslr = r.lslr;
    out.mean = aggregate(episodes).back().mean;
    rows.push_back(std::move(out));
  }
  return rows;
}

std::string render_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "INI  CSMT DA   LSLR   maF1   miF1     UA\n";
  for (const AblationRow& r : rows) {
    char line[96];
    std::snprintf(line, sizeof line, "%-4s %-4s %-4s %-4s  %5.1f  %5.1f  %5.1f\n",
                  r.ini ? "x" : "-", r.csmt ? "x" : "-", r.da ? "x" : "-", r.lslr ? "x" : "-",
                  100.0 * r.mean.maf1, 100.0 * r.mean.mif1, 100.0 * r.mean.ua);
    out += line;
  }
  return out;
}

}  // namespace mpser
