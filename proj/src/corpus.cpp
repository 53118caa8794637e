#include "mpser/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mpser/errors.hpp"
#include "mpser/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mpser {

std::size_t emotion_index(const std::string& name) {
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    if (name == kEmotionNames[i]) return i;
  }
  throw IoError("unknown emotion name '" + name + "'");
}

const char* emotion_name(std::size_t index) { return kEmotionNames.at(index); }

std::vector<Example> AnnotatorTask::examples() const {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const TaskRecord& r : records) out.push_back({r.x, r.y});
  return out;
}

const AnnotatorTask& Corpus::task(const std::string& annotator_id) const {
  for (const AnnotatorTask& t : tasks) {
    if (t.annotator_id == annotator_id) return t;
  }
  throw ContractError("unknown annotator id '" + annotator_id + "'");
}

// ---- manifest ---------------------------------------------------------------

std::vector<AnnotationRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  std::vector<AnnotationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      AnnotationRecord r;
      r.utt_id = j.at("utt_id").get<std::string>();
      r.annotator_id = j.at("annotator_id").get<std::string>();
      r.session = j.at("session").get<int>();
      r.labels = LabelSet(kNumEmotions);
      for (const auto& name : j.at("labels")) {
        r.labels.set(emotion_index(name.get<std::string>()));
      }
      if (r.session < 1 || r.session > 5) {
        throw IoError("session " + std::to_string(r.session) + " outside 1..5");
      }
      if (r.labels.count() == 0) throw IoError("empty label list");
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError("manifest '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError("manifest '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  for (const AnnotationRecord& r : records) {
    json j;
    j["utt_id"] = r.utt_id;
    j["annotator_id"] = r.annotator_id;
    j["session"] = r.session;
    json labels = json::array();
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      if (r.labels.positive(c)) labels.push_back(kEmotionNames[c]);
    }
    j["labels"] = labels;
    out << j.dump() << "\n";
  }
}

// ---- embedding store --------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'P', 'S', 'E'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void write_embedding(const std::string& path, const EmbeddingSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding '" + path + "'");
  out.write(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(seq.layers));
  put_u32(out, static_cast<std::uint32_t>(seq.frames));
  put_u32(out, static_cast<std::uint32_t>(seq.dim));
  for (double v : seq.values.data()) put_f32(out, static_cast<float>(v));
}

EmbeddingSequence read_embedding(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("'" + path + "' is not an MPSE embedding file");
  }
  const std::uint16_t version = get_u16(in);
  if (version != kVersion) {
    throw IoError("'" + path + "' has unsupported MPSE version " + std::to_string(version));
  }
  EmbeddingSequence seq;
  seq.layers = get_u32(in);
  seq.frames = get_u32(in);
  seq.dim = get_u32(in);
  if (seq.layers == 0 || seq.frames == 0 || seq.dim == 0) {
    throw IoError("'" + path + "' has a zero extent");
  }
  seq.utt_id = fs::path(path).stem().string();
  seq.values = Tensor({seq.layers, seq.frames, seq.dim});
  for (double& v : seq.values.data()) v = static_cast<double>(get_f32(in));
  if (!in) throw IoError("'" + path + "' truncated");
  return seq;
}

void write_embedding_store(const std::string& dir, const EmbeddingStore& store) {
  fs::create_directories(dir);
  for (const auto& [id, seq] : store) {
    write_embedding((fs::path(dir) / (id + ".mpse")).string(), seq);
  }
}

EmbeddingStore load_embedding_store(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("embedding store '" + dir + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".mpse") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  EmbeddingStore store;
  for (const fs::path& p : paths) {
    EmbeddingSequence seq = read_embedding(p.string());
    store.emplace(seq.utt_id, std::move(seq));
  }
  return store;
}

std::vector<AnnotatorTask> load_manifest(const std::vector<AnnotationRecord>& records,
                                         const EmbeddingStore& store, std::size_t min_records) {
  std::vector<std::string> missing;
  std::map<std::string, std::vector<TaskRecord>> by_annotator;
  for (const AnnotationRecord& r : records) {
    auto it = store.find(r.utt_id);
    if (it == store.end()) {
      missing.push_back(r.utt_id);
      continue;
    }
    by_annotator[r.annotator_id].push_back({&it->second, r.labels, r.session});
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) {
      if (i) ids += ", ";
      ids += missing[i];
    }
    if (missing.size() > 10) ids += ", ...";
    throw IoError("manifest references " + std::to_string(missing.size()) +
                  " utterances with no embedding: " + ids);
  }

  std::vector<AnnotatorTask> tasks;
  for (auto& [annotator, recs] : by_annotator) {
    if (recs.size() < min_records) {
      std::cerr << "[corpus] excluding annotator '" << annotator << "' with " << recs.size()
                << " records (minimum " << min_records << ")\n";
      continue;
    }
    tasks.push_back({annotator, std::move(recs)});
  }
  return tasks;
}

// ---- splits -----------------------------------------------------------------

namespace {

const AnnotatorTask& find_task(const std::vector<AnnotatorTask>& tasks, const std::string& id) {
  for (const AnnotatorTask& t : tasks) {
    if (t.annotator_id == id) return t;
  }
  throw ContractError("unknown annotator id '" + id + "'");
}

AnnotatorTask restrict_sessions(const AnnotatorTask& task, int lo, int hi) {
  AnnotatorTask out;
  out.annotator_id = task.annotator_id;
  for (const TaskRecord& r : task.records) {
    if (r.session >= lo && r.session <= hi) out.records.push_back(r);
  }
  return out;
}

}  // namespace

SplitResult split_seen(const std::vector<AnnotatorTask>& tasks, const std::string& test_annotator,
                       const std::string& val_annotator) {
  if (test_annotator == val_annotator) {
    throw ContractError("test and validation annotator must differ");
  }
  SplitResult out;
  out.test = find_task(tasks, test_annotator);
  out.validation = find_task(tasks, val_annotator);
  for (const AnnotatorTask& t : tasks) {
    if (t.annotator_id != test_annotator && t.annotator_id != val_annotator) {
      out.train.push_back(t);
    }
  }
  return out;
}

SplitResult split_unseen(const std::vector<AnnotatorTask>& tasks,
                         const std::string& test_annotator, const std::string& val_annotator) {
  if (test_annotator == val_annotator) {
    throw ContractError("test and validation annotator must differ");
  }
  SplitResult out;
  out.test = restrict_sessions(find_task(tasks, test_annotator), 5, 5);
  out.validation = restrict_sessions(find_task(tasks, val_annotator), 1, 4);
  for (const AnnotatorTask& t : tasks) {
    if (t.annotator_id == test_annotator || t.annotator_id == val_annotator) continue;
    AnnotatorTask restricted = restrict_sessions(t, 1, 4);
    if (!restricted.records.empty()) out.train.push_back(std::move(restricted));
  }

  std::set<std::string> train_utts;
  for (const AnnotatorTask& t : out.train) {
    for (const TaskRecord& r : t.records) train_utts.insert(r.x->utt_id);
  }
  for (const TaskRecord& r : out.test.records) {
    if (train_utts.count(r.x->utt_id)) {
      throw ContractError("utterance '" + r.x->utt_id +
                          "' appears in both train and test of the unseen split");
    }
  }
  return out;
}

// ---- episode sampling --------------------------------------------------------

FewShotSplit sample_episode(const AnnotatorTask& task, std::size_t shots, std::size_t query,
                            std::uint64_t seed) {
  if (task.records.size() < shots + query) {
    throw ContractError("annotator '" + task.annotator_id + "' has " +
                        std::to_string(task.records.size()) + " records, needs " +
                        std::to_string(shots + query) + " (K=" + std::to_string(shots) +
                        " + Q=" + std::to_string(query) + ")");
  }
  Rng rng(seed);
  const std::vector<std::size_t> perm = rng.permutation(task.records.size());
  FewShotSplit split;
  split.seed = seed;
  // train from the front, test from the back: at a fixed seed the test set is
  // identical for every shot count and train sets nest as K grows, so shot
  // sweeps compare paired episodes
  for (std::size_t i = 0; i < shots; ++i) {
    const TaskRecord& r = task.records[perm[i]];
    split.train.push_back({r.x, r.y});
  }
  for (std::size_t i = 0; i < query; ++i) {
    const TaskRecord& r = task.records[perm[perm.size() - query + i]];
    split.test.push_back({r.x, r.y});
  }
  return split;
}

// ---- synthetic generator -------------------------------------------------------

namespace {

// External-evaluator annotation distributions (percent, emotion order as in
// kEmotionNames) used to seed synthetic annotator profiles.
const std::vector<std::vector<double>> kExternalRaterRows = {
    {38.16, 13.21, 12.73, 0.13, 24.07, 1.68, 5.02, 0.20, 4.79},
    {12.12, 22.83, 17.53, 0.38, 7.01, 0.45, 17.35, 2.85, 19.48},
    {24.66, 9.57, 8.98, 0.08, 11.53, 0.48, 36.78, 1.679, 6.24},
    {16.45, 11.46, 4.07, 5.73, 0.55, 6.10, 48.43, 1.48, 5.73},
    {30.61, 9.87, 9.37, 1.01, 16.21, 1.51, 13.09, 4.43, 13.90},
};

std::vector<double> normalized(const std::vector<double>& row) {
  double total = 0.0;
  for (double v : row) total += v;
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] / total;
  return out;
}

}  // namespace

void SynthPreset::validate() const {
  const std::size_t a = annotators.size();
  if (a == 0) throw ContractError("synthetic preset has no annotators");
  if (marginals.size() != a || confusion.size() != a) {
    throw ContractError("synthetic preset row counts do not match annotator count");
  }
  if (latent_dist.size() != kNumEmotions) {
    throw ContractError("latent distribution must cover all 9 emotions");
  }
  for (const auto& row : marginals) {
    double total = 0.0;
    for (double v : row) total += v;
    if (row.size() != kNumEmotions || std::fabs(total - 100.0) > 0.5) {
      throw ContractError("marginal rows must sum to 100% within rounding");
    }
  }
  for (const auto& c : confusion) {
    if (c.size() != kNumEmotions * kNumEmotions) {
      throw ContractError("confusion matrices must be 9x9");
    }
    for (std::size_t r = 0; r < kNumEmotions; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < kNumEmotions; ++j) total += c[r * kNumEmotions + j];
      if (total <= 0.0) {
        throw ContractError("degenerate confusion row " + std::to_string(r));
      }
      if (std::fabs(total - 1.0) > 1e-9) {
        throw ContractError("confusion rows must sum to 1");
      }
    }
  }
}

SynthPreset SynthPreset::iemocap_ext(std::size_t annotator_count, double agreement) {
  if (agreement < 0.0 || agreement > 1.0) {
    throw ContractError("agreement must be in [0, 1]");
  }
  SynthPreset p;

  std::vector<double> latent(kNumEmotions, 0.0);
  for (const auto& row : kExternalRaterRows) {
    const auto n = normalized(row);
    for (std::size_t c = 0; c < kNumEmotions; ++c) latent[c] += n[c];
  }
  for (double& v : latent) v /= static_cast<double>(kExternalRaterRows.size());
  p.latent_dist = latent;

  for (std::size_t a = 0; a < annotator_count; ++a) {
    const auto& row = kExternalRaterRows[a % kExternalRaterRows.size()];
    p.annotators.push_back("a" + std::string(a < 10 ? "0" : "") + std::to_string(a));
    p.marginals.push_back(row);

    // Max-diagonal coupling from the latent distribution to the annotator's
    // marginal: min(latent, marginal) stays on the diagonal, surplus latent
    // mass is relabeled toward deficit classes. This reproduces the marginal
    // exactly while keeping each label as faithful to the latent emotion as
    // the two distributions allow. Blending with an independent draw from
    // the marginal (weight 1-agreement) adds label noise without moving the
    // marginal.
    const auto m = normalized(row);
    std::vector<double> keep(kNumEmotions), surplus(kNumEmotions), deficit(kNumEmotions);
    double deficit_total = 0.0;
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      keep[c] = std::min(latent[c], m[c]);
      surplus[c] = latent[c] - keep[c];
      deficit[c] = m[c] - keep[c];
      deficit_total += deficit[c];
    }

    std::vector<double> conf(kNumEmotions * kNumEmotions);
    for (std::size_t r = 0; r < kNumEmotions; ++r) {
      for (std::size_t c = 0; c < kNumEmotions; ++c) {
        double coupled = r == c ? keep[r] / latent[r] : 0.0;
        if (deficit_total > 0.0) {
          coupled += (surplus[r] / latent[r]) * (deficit[c] / deficit_total);
        }
        conf[r * kNumEmotions + c] = agreement * coupled + (1.0 - agreement) * m[c];
      }
    }
    p.confusion.push_back(std::move(conf));
  }
  p.validate();
  return p;
}

SynthPreset SynthPreset::identity(std::size_t annotator_count) {
  SynthPreset p = iemocap_ext(annotator_count, 0.85);
  for (auto& conf : p.confusion) {
    std::fill(conf.begin(), conf.end(), 0.0);
    for (std::size_t c = 0; c < kNumEmotions; ++c) conf[c * kNumEmotions + c] = 1.0;
  }
  // labels now reproduce the latent draw exactly
  for (auto& row : p.marginals) {
    for (std::size_t c = 0; c < kNumEmotions; ++c) row[c] = p.latent_dist[c] * 100.0;
  }
  p.second_label_prob = 0.0;
  p.validate();
  return p;
}

Corpus generate_synthetic(const SynthPreset& preset, std::size_t samples_per_annotator,
                          std::uint64_t seed) {
  preset.validate();
  Rng rng(seed);
  const std::size_t layers = preset.layers, frames = preset.frames, dim = preset.dim;
  const double mean_scale = preset.separation / std::sqrt(2.0 * static_cast<double>(dim));

  // class-conditional means per layer
  std::vector<Tensor> means(layers, Tensor({kNumEmotions, dim}));
  for (auto& m : means) {
    for (double& v : m.data()) v = rng.normal(0.0, mean_scale);
  }

  Corpus corpus;
  std::vector<std::size_t> latent(samples_per_annotator);
  for (std::size_t u = 0; u < samples_per_annotator; ++u) {
    const std::size_t cls = rng.categorical(preset.latent_dist);
    latent[u] = cls;

    std::string id = std::to_string(u);
    id.insert(0, 6 - std::min<std::size_t>(6, id.size()), '0');
    id = "synth-" + id;

    EmbeddingSequence seq;
    seq.utt_id = id;
    seq.layers = layers;
    seq.frames = frames;
    seq.dim = dim;
    seq.values = Tensor({layers, frames, dim});
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t d = 0; d < dim; ++d) {
          const double v = means[l][cls * dim + d] + rng.normal();
          seq.values[(l * frames + t) * dim + d] = static_cast<double>(static_cast<float>(v));
        }
      }
    }
    corpus.store.emplace(id, std::move(seq));
  }

  for (std::size_t a = 0; a < preset.annotators.size(); ++a) {
    AnnotatorTask task;
    task.annotator_id = preset.annotators[a];
    const auto& conf = preset.confusion[a];
    std::size_t u = 0;
    for (const auto& [id, seq] : corpus.store) {
      const std::size_t cls = latent[u];
      std::vector<double> row(conf.begin() + static_cast<std::ptrdiff_t>(cls * kNumEmotions),
                              conf.begin() + static_cast<std::ptrdiff_t>((cls + 1) * kNumEmotions));
      LabelSet y(kNumEmotions);
      y.set(rng.categorical(row));
      if (preset.second_label_prob > 0.0 && rng.uniform() < preset.second_label_prob) {
        y.set(rng.categorical(row));
      }
      task.records.push_back({&seq, y, static_cast<int>(1 + u % 5)});
      ++u;
    }
    corpus.tasks.push_back(std::move(task));
  }
  std::sort(corpus.tasks.begin(), corpus.tasks.end(),
            [](const AnnotatorTask& a, const AnnotatorTask& b) {
              return a.annotator_id < b.annotator_id;
            });
  return corpus;
}

std::vector<AnnotationRecord> corpus_records(const Corpus& corpus) {
  std::vector<AnnotationRecord> records;
  for (const AnnotatorTask& t : corpus.tasks) {
    for (const TaskRecord& r : t.records) {
      records.push_back({r.x->utt_id, t.annotator_id, r.session, r.y});
    }
  }
  return records;
}

}  // namespace mpser
