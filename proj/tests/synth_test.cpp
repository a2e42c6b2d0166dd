#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "attnsup/analyze.hpp"
#include "attnsup/corpus.hpp"
#include "attnsup/explain.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/synth.hpp"

using namespace attnsup;

namespace {

bool is_marker(const std::string& w) { return w.rfind("mark", 0) == 0; }

nli_label marker_class(const std::string& w) {
  if (w.rfind("marke", 0) == 0) return nli_label::entailment;
  if (w.rfind("markn", 0) == 0) return nli_label::neutral;
  if (w.rfind("markc", 0) == 0) return nli_label::contradiction;
  throw std::invalid_argument("not a marker: " + w);
}

synthetic_spec small_spec() {
  synthetic_spec spec;
  spec.train_count = 200;
  spec.dev_count = 50;
  spec.test_count = 50;
  spec.ood_count = 50;
  spec.seed = 42;
  return spec;
}

}  // namespace

TEST_CASE("splits have the exact requested sizes", "[synth]") {
  const synthetic_corpus corpus = generate_synthetic(small_spec());
  REQUIRE(corpus.train.size() == 200);
  REQUIRE(corpus.dev.size() == 50);
  REQUIRE(corpus.test.size() == 50);
  REQUIRE(corpus.ood.size() == 50);
}

TEST_CASE("every example is labeled by the marker after the cue", "[synth]") {
  const synthetic_spec spec = small_spec();
  const synthetic_corpus corpus = generate_synthetic(spec);
  for (const std::vector<nli_example>* split : {&corpus.train, &corpus.dev, &corpus.test, &corpus.ood}) {
    for (const nli_example& ex : *split) {
      // Exactly one cue, followed by a marker of the label class.
      const long cues = std::count(ex.premise_words.begin(), ex.premise_words.end(), synthetic_spec::cue_token);
      REQUIRE(cues == 1);
      const size_t cue_at = static_cast<size_t>(
          std::find(ex.premise_words.begin(), ex.premise_words.end(), synthetic_spec::cue_token) -
          ex.premise_words.begin());
      REQUIRE(cue_at + 1 < ex.premise_words.size());
      const std::string& decisive = ex.premise_words[cue_at + 1];
      REQUIRE(is_marker(decisive));
      REQUIRE(marker_class(decisive) == ex.label);

      // The premise plants one marker of every class: a premise bag alone
      // cannot reveal the label.
      int per_class[3] = {0, 0, 0};
      for (const std::string& w : ex.premise_words)
        if (is_marker(w)) ++per_class[static_cast<int>(marker_class(w))];
      REQUIRE(per_class[0] == 1);
      REQUIRE(per_class[1] == 1);
      REQUIRE(per_class[2] == 1);

      // Premise markers come from the premise surface pool, the hypothesis
      // marker from the disjoint hypothesis pool.
      for (const std::string& w : ex.premise_words)
        if (is_marker(w)) REQUIRE(std::stoi(w.substr(5)) < spec.markers_per_class);

      // Gold highlights point at the decisive premise marker and the
      // hypothesis marker.
      REQUIRE(ex.premise_highlights == std::vector<int>{static_cast<int>(cue_at) + 1});
      REQUIRE(ex.hypothesis_highlights.size() == 1);
      const std::string& hyp_word = ex.hypothesis_words[static_cast<size_t>(ex.hypothesis_highlights[0])];
      REQUIRE(is_marker(hyp_word));
      REQUIRE(std::stoi(hyp_word.substr(5)) >= spec.markers_per_class);
      long hyp_markers = 0;
      for (const std::string& w : ex.hypothesis_words) hyp_markers += is_marker(w);
      REQUIRE(hyp_markers == 1);

      // The free-text explanation names both marker surfaces.
      REQUIRE(ex.freetext_explanations.size() == 1);
      REQUIRE(ex.freetext_explanations[0].find(decisive) != std::string::npos);
      REQUIRE(ex.freetext_explanations[0].find(hyp_word) != std::string::npos);

      // Sentence lengths respect the configured ranges.
      const int premise_len = static_cast<int>(ex.premise_words.size());
      REQUIRE(premise_len >= spec.premise_fillers_min + 4);
      REQUIRE(premise_len <= spec.premise_fillers_max + 4);
      const int hyp_len = static_cast<int>(ex.hypothesis_words.size());
      REQUIRE(hyp_len >= spec.hypothesis_fillers_min + 1);
      REQUIRE(hyp_len <= spec.hypothesis_fillers_max + 1);
    }
  }
}

TEST_CASE("hypothesis marker lies at roughly the configured noise rate", "[synth]") {
  synthetic_spec spec = small_spec();
  spec.train_count = 2000;
  const synthetic_corpus corpus = generate_synthetic(spec);
  int lies = 0;
  for (const nli_example& ex : corpus.train) {
    const std::string& hyp_word = ex.hypothesis_words[static_cast<size_t>(ex.hypothesis_highlights[0])];
    lies += marker_class(hyp_word) != ex.label;
  }
  const double rate = static_cast<double>(lies) / 2000.0;
  REQUIRE(rate > 0.10);
  REQUIRE(rate < 0.20);

  SECTION("zero noise makes the hypothesis marker a perfect echo") {
    spec.noise_rate = 0.0;
    spec.train_count = 300;
    const synthetic_corpus clean = generate_synthetic(spec);
    for (const nli_example& ex : clean.train) {
      const std::string& hyp_word = ex.hypothesis_words[static_cast<size_t>(ex.hypothesis_highlights[0])];
      REQUIRE(marker_class(hyp_word) == ex.label);
    }
  }
}

TEST_CASE("labels cover all three classes", "[synth]") {
  const synthetic_corpus corpus = generate_synthetic(small_spec());
  int counts[3] = {0, 0, 0};
  for (const nli_example& ex : corpus.train) ++counts[static_cast<int>(ex.label)];
  for (int c = 0; c < 3; ++c) REQUIRE(counts[c] > 200 / 6);
}

TEST_CASE("the OOD split shares markers but uses disjoint fillers", "[synth]") {
  const synthetic_corpus corpus = generate_synthetic(small_spec());
  const auto filler_set = [](const std::vector<nli_example>& split) {
    std::set<std::string> fillers;
    for (const nli_example& ex : split)
      for (const std::vector<std::string>* words : {&ex.premise_words, &ex.hypothesis_words})
        for (const std::string& w : *words)
          if (!is_marker(w) && w != synthetic_spec::cue_token) fillers.insert(w);
    return fillers;
  };
  const std::set<std::string> in_dist = filler_set(corpus.train);
  const std::set<std::string> ood = filler_set(corpus.ood);
  for (const std::string& w : ood) REQUIRE(in_dist.count(w) == 0);

  bool ood_has_markers = false;
  for (const nli_example& ex : corpus.ood)
    for (const std::string& w : ex.premise_words) ood_has_markers = ood_has_markers || is_marker(w);
  REQUIRE(ood_has_markers);
}

TEST_CASE("identical seeds reproduce the corpus byte for byte", "[synth]") {
  const synthetic_corpus a = generate_synthetic(small_spec());
  const synthetic_corpus b = generate_synthetic(small_spec());
  REQUIRE(dataset_to_jsonl(a.train) == dataset_to_jsonl(b.train));
  REQUIRE(dataset_to_jsonl(a.ood) == dataset_to_jsonl(b.ood));
  REQUIRE(a.category_lines == b.category_lines);

  synthetic_spec other = small_spec();
  other.seed = 43;
  const synthetic_corpus c = generate_synthetic(other);
  REQUIRE(dataset_to_jsonl(a.train) != dataset_to_jsonl(c.train));
}

TEST_CASE("generated JSONL round-trips through the dataset loader", "[synth]") {
  const synthetic_corpus corpus = generate_synthetic(small_spec());
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "attnsup_synth_roundtrip.jsonl";
  atomic_write_file(path, dataset_to_jsonl(corpus.dev));
  const std::vector<nli_example> loaded = load_dataset(path);
  std::filesystem::remove(path);

  REQUIRE(loaded.size() == corpus.dev.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    REQUIRE(loaded[i].premise_words == corpus.dev[i].premise_words);
    REQUIRE(loaded[i].hypothesis_words == corpus.dev[i].hypothesis_words);
    REQUIRE(loaded[i].label == corpus.dev[i].label);
    REQUIRE(loaded[i].freetext_explanations == corpus.dev[i].freetext_explanations);
    REQUIRE(loaded[i].premise_highlights == corpus.dev[i].premise_highlights);
    REQUIRE(loaded[i].hypothesis_highlights == corpus.dev[i].hypothesis_highlights);
  }
}

TEST_CASE("every pair fits the generator's required n_max without truncation", "[synth]") {
  const synthetic_spec spec = small_spec();
  const synthetic_corpus corpus = generate_synthetic(spec);
  std::vector<nli_example> all = corpus.train;
  all.insert(all.end(), corpus.ood.begin(), corpus.ood.end());
  const vocabulary vocab = vocabulary::build(all, 1);
  for (const nli_example& ex : all) {
    const encoded_sequence seq = encode_pair(ex, vocab, spec.required_n_max());
    REQUIRE_FALSE(seq.truncated);
  }
}

TEST_CASE("the category table maps markers to NOUN and covers every filler", "[synth]") {
  const synthetic_spec spec = small_spec();
  const synthetic_corpus corpus = generate_synthetic(spec);
  const category_lexicon lex = category_lexicon::from_lines(corpus.category_lines);
  REQUIRE(lex.category_of("marke0") == "NOUN");
  REQUIRE(lex.category_of("marke1") == "NOUN");  // hypothesis pool
  REQUIRE(lex.category_of("markn0") == "NOUN");
  REQUIRE(lex.category_of("markc0") == "NOUN");
  REQUIRE(lex.category_of(synthetic_spec::cue_token) == "DET");
  // Every filler word gets an explicit entry (the rotation includes OTHER).
  for (int i = 0; i < spec.filler_vocab; ++i) REQUIRE(lex.word_to_category.count(spec.filler(false, i)) == 1);
  for (int i = 0; i < spec.ood_filler_vocab; ++i) REQUIRE(lex.word_to_category.count(spec.filler(true, i)) == 1);
  REQUIRE(lex.category_of(spec.filler(false, 0)) == "VERB");
  REQUIRE(lex.category_of(spec.filler(false, 1)) == "ADJ");
}

TEST_CASE("spec validation rejects bad parameters", "[synth]") {
  synthetic_spec spec = small_spec();
  spec.noise_rate = 1.0;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.noise_rate = -0.1;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.markers_per_class = 0;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.premise_fillers_min = 8;
  spec.premise_fillers_max = 6;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.train_count = -1;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
  spec = small_spec();
  spec.filler_vocab = 0;
  REQUIRE_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
}

TEST_CASE("highlight-derived targets land on the planted markers", "[synth]") {
  const synthetic_spec spec = small_spec();
  const synthetic_corpus corpus = generate_synthetic(spec);
  const vocabulary vocab = vocabulary::build(corpus.train, 1);
  const stopword_lexicon stopwords;  // markers are never stop-words
  const nli_example& ex = corpus.train.front();
  const encoded_sequence seq = encode_pair(ex, vocab, spec.required_n_max());
  const target_distribution d = make_target(ex, seq, target_mode::highlights, stopwords);
  REQUIRE_FALSE(d.empty_flag);
  const int premise_pos = seq.premise_positions[static_cast<size_t>(ex.premise_highlights[0])];
  const int hyp_pos = seq.hypothesis_positions[static_cast<size_t>(ex.hypothesis_highlights[0])];
  REQUIRE(d.values[static_cast<size_t>(premise_pos)] == Catch::Approx(0.5));
  REQUIRE(d.values[static_cast<size_t>(hyp_pos)] == Catch::Approx(0.5));
}
