#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mpser/corpus.hpp"
#include "mpser/errors.hpp"
#include "mpser/rng.hpp"
#include "test_util.hpp"

using namespace mpser;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("mpser_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("embedding file: round-trips through the MPSE format") {
  Rng rng(31);
  auto dir = temp_dir("emb");
  EmbeddingSequence seq = mpser::testing::random_embedding(rng, 3, 5, 7, "utt-1");
  // stored values are f32; write f32-representable data so equality is exact
  for (double& v : seq.values.data()) v = static_cast<double>(static_cast<float>(v));

  const std::string path = (dir / "utt-1.mpse").string();
  write_embedding(path, seq);
  EmbeddingSequence back = read_embedding(path);
  CHECK(back.utt_id == "utt-1");
  CHECK(back.layers == 3);
  CHECK(back.frames == 5);
  CHECK(back.dim == 7);
  CHECK(back.values.data() == seq.values.data());
}

TEST_CASE("embedding file: bad magic and truncation are rejected") {
  auto dir = temp_dir("badmagic");
  const std::string path = (dir / "x.mpse").string();
  std::ofstream(path) << "not an embedding";
  CHECK_THROWS_AS(read_embedding(path), IoError);
}

TEST_CASE("manifest: round-trips to identical records") {
  auto dir = temp_dir("manifest");
  std::vector<AnnotationRecord> records;
  AnnotationRecord a{"u1", "ann1", 2, LabelSet::single(9, 0)};
  AnnotationRecord b{"u2", "ann2", 5, LabelSet(9)};
  b.labels.set(3);
  b.labels.set(8);
  records.push_back(a);
  records.push_back(b);

  const std::string path = (dir / "manifest.jsonl").string();
  write_manifest(path, records);
  auto back = read_manifest(path);
  CHECK(back == records);
}

TEST_CASE("manifest: empty file gives an empty task list") {
  auto dir = temp_dir("empty");
  const std::string path = (dir / "manifest.jsonl").string();
  std::ofstream(path).close();
  auto records = read_manifest(path);
  CHECK(records.empty());
  EmbeddingStore store;
  CHECK(load_manifest(records, store).empty());
}

TEST_CASE("manifest: malformed line names the line number") {
  auto dir = temp_dir("malformed");
  const std::string path = (dir / "manifest.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"utt_id": "u1", "annotator_id": "a", "session": 1, "labels": ["sad"]})" << "\n";
    out << "{ not json\n";
  }
  CHECK_THROWS_WITH_AS(read_manifest(path), doctest::Contains("line 2"), IoError);
}

TEST_CASE("manifest: unknown emotion and bad session are rejected") {
  auto dir = temp_dir("vocab");
  const std::string path = (dir / "manifest.jsonl").string();
  std::ofstream(path) << R"({"utt_id": "u", "annotator_id": "a", "session": 1, "labels": ["other"]})"
                      << "\n";
  CHECK_THROWS_AS(read_manifest(path), IoError);

  std::ofstream(path) << R"({"utt_id": "u", "annotator_id": "a", "session": 6, "labels": ["sad"]})"
                      << "\n";
  CHECK_THROWS_AS(read_manifest(path), IoError);
}

TEST_CASE("load_manifest: missing embeddings are a hard error listing ids") {
  Rng rng(32);
  EmbeddingStore store;
  store.emplace("u1", mpser::testing::random_embedding(rng, 2, 3, 4, "u1"));
  std::vector<AnnotationRecord> records = {
      {"u1", "a", 1, LabelSet::single(9, 2)},
      {"u-missing", "a", 1, LabelSet::single(9, 2)},
  };
  CHECK_THROWS_WITH_AS(load_manifest(records, store), doctest::Contains("u-missing"), IoError);
}

TEST_CASE("load_manifest: shared utterances appear in both annotators' tasks") {
  Rng rng(33);
  EmbeddingStore store;
  store.emplace("u1", mpser::testing::random_embedding(rng, 2, 3, 4, "u1"));
  std::vector<AnnotationRecord> records = {
      {"u1", "a", 1, LabelSet::single(9, 2)},
      {"u1", "b", 1, LabelSet::single(9, 7)},
  };
  auto tasks = load_manifest(records, store);
  REQUIRE(tasks.size() == 2);
  CHECK(tasks[0].records[0].x == tasks[1].records[0].x);
  CHECK(tasks[0].records[0].y != tasks[1].records[0].y);
}

TEST_CASE("load_manifest: annotators below the record threshold are dropped") {
  Rng rng(34);
  EmbeddingStore store;
  for (int i = 0; i < 4; ++i) {
    std::string id = "u" + std::to_string(i);
    store.emplace(id, mpser::testing::random_embedding(rng, 2, 3, 4, id));
  }
  std::vector<AnnotationRecord> records;
  for (int i = 0; i < 4; ++i) {
    records.push_back({"u" + std::to_string(i), "big", 1, LabelSet::single(9, 0)});
  }
  records.push_back({"u0", "small", 1, LabelSet::single(9, 0)});
  auto tasks = load_manifest(records, store, 2);
  REQUIRE(tasks.size() == 1);
  CHECK(tasks[0].annotator_id == "big");
}

TEST_CASE("split_seen: held-out annotator never leaks into training") {
  Corpus c = generate_synthetic(SynthPreset::iemocap_ext(11), 40, 5);
  auto split = split_seen(c.tasks, "a03", "a07");
  CHECK(split.train.size() == 9);
  CHECK(split.test.annotator_id == "a03");
  CHECK(split.validation.annotator_id == "a07");
  for (const auto& t : split.train) {
    CHECK(t.annotator_id != "a03");
    CHECK(t.annotator_id != "a07");
  }
  CHECK_THROWS_AS(split_seen(c.tasks, "a01", "a01"), ContractError);
  CHECK_THROWS_AS(split_seen(c.tasks, "nope", "a01"), ContractError);
}

TEST_CASE("split_unseen: train and test utterances are disjoint") {
  Corpus c = generate_synthetic(SynthPreset::iemocap_ext(6), 60, 6);
  auto split = split_unseen(c.tasks, "a02", "a04");

  std::set<std::string> train_utts;
  for (const auto& t : split.train) {
    for (const auto& r : t.records) {
      CHECK(r.session <= 4);
      train_utts.insert(r.x->utt_id);
    }
  }
  CHECK(!split.test.records.empty());
  for (const auto& r : split.test.records) {
    CHECK(r.session == 5);
    CHECK(train_utts.count(r.x->utt_id) == 0);
  }
  for (const auto& r : split.validation.records) CHECK(r.session <= 4);

  // the session restriction shrinks the data relative to the seen split
  auto seen = split_seen(c.tasks, "a02", "a04");
  CHECK(split.test.records.size() < seen.test.records.size());
}

TEST_CASE("sample_episode: deterministic, disjoint, partition at exact size") {
  Corpus c = generate_synthetic(SynthPreset::iemocap_ext(2), 50, 7);
  const AnnotatorTask& task = c.tasks[0];

  auto s1 = sample_episode(task, 8, 16, 99);
  auto s2 = sample_episode(task, 8, 16, 99);
  REQUIRE(s1.train.size() == 8);
  REQUIRE(s1.test.size() == 16);
  for (std::size_t i = 0; i < s1.train.size(); ++i) CHECK(s1.train[i].x == s2.train[i].x);
  for (std::size_t i = 0; i < s1.test.size(); ++i) CHECK(s1.test[i].x == s2.test[i].x);

  std::set<const EmbeddingSequence*> train_set;
  for (const auto& e : s1.train) train_set.insert(e.x);
  for (const auto& e : s1.test) CHECK(train_set.count(e.x) == 0);

  // K + Q = |task| partitions the task
  auto part = sample_episode(task, 20, 30, 1);
  std::set<const EmbeddingSequence*> all;
  for (const auto& e : part.train) all.insert(e.x);
  for (const auto& e : part.test) all.insert(e.x);
  CHECK(all.size() == 50);

  CHECK_THROWS_WITH_AS(sample_episode(task, 40, 20, 1), doctest::Contains("needs 60"),
                       ContractError);
}

TEST_CASE("sample_episode: overlap across seeds matches the hypergeometric mean") {
  Corpus c = generate_synthetic(SynthPreset::iemocap_ext(1), 200, 8);
  const AnnotatorTask& task = c.tasks[0];
  const std::size_t K = 32;

  std::vector<std::set<const EmbeddingSequence*>> draws;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = sample_episode(task, K, 0, seed);
    std::set<const EmbeddingSequence*> ids;
    for (const auto& e : s.train) ids.insert(e.x);
    draws.push_back(std::move(ids));
  }
  double mean_overlap = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    for (std::size_t j = i + 1; j < draws.size(); ++j) {
      std::size_t overlap = 0;
      for (const auto* id : draws[i]) overlap += draws[j].count(id);
      mean_overlap += static_cast<double>(overlap);
      ++pairs;
    }
  }
  mean_overlap /= static_cast<double>(pairs);
  const double expected = static_cast<double>(K * K) / 200.0;  // 5.12
  CHECK(mean_overlap > expected - 2.5);
  CHECK(mean_overlap < expected + 2.5);
}

TEST_CASE("generate_synthetic: identity confusion copies the latent label") {
  Corpus c = generate_synthetic(SynthPreset::identity(3), 100, 11);
  REQUIRE(c.tasks.size() == 3);
  for (std::size_t u = 0; u < 100; ++u) {
    const auto& y0 = c.tasks[0].records[u].y;
    CHECK(y0.count() == 1);
    CHECK(y0 == c.tasks[1].records[u].y);
    CHECK(y0 == c.tasks[2].records[u].y);
  }
}

TEST_CASE("generate_synthetic: marginals converge to the preset row") {
  // preset row C-E1: frustration 38.16%, anger 13.21%, ...
  SynthPreset preset = SynthPreset::iemocap_ext(5);
  Corpus c = generate_synthetic(preset, 10000, 12);
  const AnnotatorTask& task = c.task("a00");

  std::vector<double> freq(kNumEmotions, 0.0);
  double total = 0.0;
  for (const auto& r : task.records) {
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
      if (r.y.positive(e)) {
        freq[e] += 1.0;
        total += 1.0;
      }
    }
  }
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    const double pct = 100.0 * freq[e] / total;
    CHECK(std::fabs(pct - preset.marginals[0][e]) <= 2.0);
  }
}

TEST_CASE("generate_synthetic: pure function of (preset, count, seed)") {
  SynthPreset preset = SynthPreset::iemocap_ext(4);
  Corpus a = generate_synthetic(preset, 60, 21);
  Corpus b = generate_synthetic(preset, 60, 21);
  CHECK(corpus_records(a) == corpus_records(b));
  for (const auto& [id, seq] : a.store) {
    CHECK(seq.values.data() == b.store.at(id).values.data());
  }
}

TEST_CASE("generate_synthetic: degenerate confusion row rejected") {
  SynthPreset preset = SynthPreset::iemocap_ext(2);
  std::fill(preset.confusion[0].begin(), preset.confusion[0].begin() + 9, 0.0);
  CHECK_THROWS_AS(generate_synthetic(preset, 10, 1), ContractError);
}

TEST_CASE("synthetic corpus: files round-trip through store + manifest") {
  auto dir = temp_dir("roundtrip");
  Corpus c = generate_synthetic(SynthPreset::iemocap_ext(3), 30, 13);

  write_embedding_store((dir / "emb").string(), c.store);
  write_manifest((dir / "manifest.jsonl").string(), corpus_records(c));

  EmbeddingStore store = load_embedding_store((dir / "emb").string());
  auto records = read_manifest((dir / "manifest.jsonl").string());
  CHECK(records == corpus_records(c));

  auto tasks = load_manifest(records, store);
  REQUIRE(tasks.size() == 3);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    REQUIRE(tasks[t].records.size() == c.tasks[t].records.size());
    for (std::size_t i = 0; i < tasks[t].records.size(); ++i) {
      // generated values are f32-rounded, so disk round-trip is exact
      CHECK(tasks[t].records[i].x->values.data() == c.tasks[t].records[i].x->values.data());
      CHECK(tasks[t].records[i].y == c.tasks[t].records[i].y);
    }
  }
}
