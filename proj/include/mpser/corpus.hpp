#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpser/model.hpp"

namespace mpser {

/// Fixed 9-emotion vocabulary; the name <-> class-index mapping is part of
/// the manifest format contract.
inline constexpr std::array<const char*, 9> kEmotionNames = {
    "frustrated", "angry", "sad", "disgust", "excited", "fear", "neutral", "surprise", "happy"};
inline constexpr std::size_t kNumEmotions = 9;

std::size_t emotion_index(const std::string& name);
const char* emotion_name(std::size_t index);

/// One annotator's judgment of one utterance.
struct AnnotationRecord {
  std::string utt_id;
  std::string annotator_id;
  int session = 1;  // 1..5
  LabelSet labels;  // over kNumEmotions, at least one positive

  bool operator==(const AnnotationRecord&) const = default;
};

/// Utterance id -> embedding; node-based map so tasks can hold stable
/// pointers into it.
using EmbeddingStore = std::map<std::string, EmbeddingSequence>;

struct TaskRecord {
  const EmbeddingSequence* x = nullptr;
  LabelSet y;
  int session = 1;
};

/// All of one annotator's labeled data (the personalization task T_i).
struct AnnotatorTask {
  std::string annotator_id;
  std::vector<TaskRecord> records;

  std::vector<Example> examples() const;
};

/// Embedding store plus the tasks referencing it; keep them together so the
/// pointers stay valid.
struct Corpus {
  EmbeddingStore store;
  std::vector<AnnotatorTask> tasks;

  const AnnotatorTask& task(const std::string& annotator_id) const;
};

// ---- manifest & embedding-store formats -----------------------------------

// Manifest: line-delimited JSON records with normative field names
//   {"utt_id": ..., "annotator_id": ..., "session": 1..5, "labels": [names]}
std::vector<AnnotationRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<AnnotationRecord>& records);

// Embedding blob: magic "MPSE", u16 version, u32 L/T/D (little-endian), then
// L*T*D little-endian f32 values in (layer, frame, dim) order. The store is a
// directory holding one <utt_id>.mpse per utterance.
void write_embedding(const std::string& path, const EmbeddingSequence& seq);
EmbeddingSequence read_embedding(const std::string& path);
void write_embedding_store(const std::string& dir, const EmbeddingStore& store);
EmbeddingStore load_embedding_store(const std::string& dir);

/// Joins annotations against the store (missing embeddings are a hard error
/// listing the offending ids), groups by annotator, drops annotators with
/// fewer than min_records records (logged).
std::vector<AnnotatorTask> load_manifest(const std::vector<AnnotationRecord>& records,
                                         const EmbeddingStore& store,
                                         std::size_t min_records = 0);

// ---- split protocols -------------------------------------------------------

struct SplitResult {
  std::vector<AnnotatorTask> train;
  AnnotatorTask validation;
  AnnotatorTask test;
};

/// Annotator partition: the held-out annotator's entire task is the test
/// task; utterances may recur across splits (their labels do not).
SplitResult split_seen(const std::vector<AnnotatorTask>& tasks, const std::string& test_annotator,
                       const std::string& val_annotator);

/// Session partition on top of the annotator split: training and validation
/// restricted to sessions 1-4, test to session 5. Utterance-id disjointness
/// between train and test is asserted, not assumed.
SplitResult split_unseen(const std::vector<AnnotatorTask>& tasks,
                         const std::string& test_annotator, const std::string& val_annotator);

// ---- episode sampling ------------------------------------------------------

struct FewShotSplit {
  std::vector<Example> train;  // K adaptation samples
  std::vector<Example> test;   // Q evaluation samples
  std::uint64_t seed = 0;
};

/// Uniform sampling without replacement; deterministic in the seed. Requires
/// |task| >= K + Q and reports the shortfall otherwise.
FewShotSplit sample_episode(const AnnotatorTask& task, std::size_t shots, std::size_t query,
                            std::uint64_t seed);

// ---- synthetic generator ---------------------------------------------------

/// Generator preset: per-annotator target label marginals plus the confusion
/// matrix p(label | latent) realizing them, and the class-conditional
/// embedding geometry.
struct SynthPreset {
  std::vector<std::string> annotators;
  std::vector<std::vector<double>> marginals;  // per annotator, percent rows
  std::vector<std::vector<double>> confusion;  // per annotator, 9x9 row-major
  std::vector<double> latent_dist;             // latent emotion distribution
  std::size_t layers = 2;
  std::size_t frames = 8;
  std::size_t dim = 32;
  double separation = 2.0;  // between-class mean distance, in within-class sd
  double second_label_prob = 0.05;

  void validate() const;

  /// Annotator rows seeded from the external-evaluator distribution table,
  /// cycled when more than five annotators are requested. Confusion rows use
  /// a max-diagonal coupling that reproduces each row exactly; agreement is
  /// the fraction of labels routed through it rather than drawn independently
  /// from the annotator's marginal.
  static SynthPreset iemocap_ext(std::size_t annotator_count, double agreement = 0.85);

  /// Identity confusion for every annotator: labels equal the latent class.
  static SynthPreset identity(std::size_t annotator_count);
};

/// Draws one latent emotion per utterance, emits its class-conditional
/// Gaussian embedding, and labels it per annotator via the confusion rows.
/// Every annotator labels every utterance; sessions rotate 1..5. Embedding
/// values are rounded to f32 so in-memory and on-disk corpora match exactly.
Corpus generate_synthetic(const SynthPreset& preset, std::size_t samples_per_annotator,
                          std::uint64_t seed);

std::vector<AnnotationRecord> corpus_records(const Corpus& corpus);

}  // namespace mpser
