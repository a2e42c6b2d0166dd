#pragma once
// Synthetic planted-rationale corpus generator. Each example is a 3-class
// premise/hypothesis pair whose label is a deterministic function of planted
// class-marker tokens:
//
//   - the premise contains one marker of EVERY class, so a bag of premise
//     words is uninformative; the label is the class of the single marker
//     that immediately follows the unique "cue" token,
//   - the hypothesis contains one marker that matches the label with
//     probability (1 - noise_rate) and otherwise names a different class;
//     hypothesis markers draw from a surface pool disjoint from the premise
//     markers, so a model can learn that premise-pool markers are perfectly
//     reliable while the hypothesis pool is only (1 - noise_rate) reliable,
//   - gold highlights mark the decisive premise marker and the hypothesis
//     marker, and the free-text explanation names both surfaces.
//
// The out-of-distribution split reuses the same markers and cue but draws
// its filler words from a disjoint vocabulary, isolating whether a model
// relies on the marker mechanism or on filler statistics.

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnsup/corpus.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/rng.hpp"

namespace attnsup {

struct synthetic_spec {
  int train_count = 2000;
  int dev_count = 500;
  int test_count = 500;
  int ood_count = 500;
  int filler_vocab = 60;      // in-distribution filler word count
  int ood_filler_vocab = 60;  // disjoint filler word count for the OOD split
  int premise_fillers_min = 6;
  int premise_fillers_max = 10;
  int hypothesis_fillers_min = 2;
  int hypothesis_fillers_max = 4;
  int markers_per_class = 1;
  double noise_rate = 0.15;  // probability the hypothesis marker lies
  std::uint64_t seed = 1;

  void validate() const {
    if (train_count < 0 || dev_count < 0 || test_count < 0 || ood_count < 0)
      throw std::invalid_argument("synthetic_spec: split counts must be non-negative");
    if (filler_vocab < 1 || ood_filler_vocab < 1)
      throw std::invalid_argument("synthetic_spec: filler vocabularies must be non-empty");
    if (premise_fillers_min < 1 || premise_fillers_min > premise_fillers_max)
      throw std::invalid_argument("synthetic_spec: invalid premise filler range");
    if (hypothesis_fillers_min < 1 || hypothesis_fillers_min > hypothesis_fillers_max)
      throw std::invalid_argument("synthetic_spec: invalid hypothesis filler range");
    if (markers_per_class < 1) throw std::invalid_argument("synthetic_spec: markers_per_class must be >= 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0))
      throw std::invalid_argument("synthetic_spec: noise_rate must be in [0, 1)");
  }

  // Class marker surfaces: marke#, markn#, markc# — disjoint across classes
  // by construction, and purely alphanumeric so the tokenizer keeps each
  // marker as a single token. Each class owns 2*markers_per_class surfaces:
  // indices [0, markers_per_class) plant in premises, the rest in
  // hypotheses, keeping the two pools disjoint.
  std::string marker(nli_label cls, int index) const {
    static const char* prefixes[3] = {"marke", "markn", "markc"};
    return std::string(prefixes[static_cast<int>(cls)]) + std::to_string(index);
  }

  int premise_marker_index(rng& r) const { return r.rand_index(markers_per_class); }
  int hypothesis_marker_index(rng& r) const { return markers_per_class + r.rand_index(markers_per_class); }

  std::string filler(bool ood, int index) const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%s%02d", ood ? "ood" : "fill", index);
    return buf;
  }

  static constexpr const char* cue_token = "cue";

  // Smallest n_max that fits every generated pair without truncation:
  // [CLS] + premise (fillers + cue + 3 markers) + [SEP] + hypothesis
  // (fillers + marker) + [SEP].
  int required_n_max() const { return 1 + (premise_fillers_max + 4) + 1 + (hypothesis_fillers_max + 1) + 1; }
};

struct synthetic_corpus {
  std::vector<nli_example> train, dev, test, ood;
  std::vector<std::string> category_lines;  // "word<TAB>CATEGORY"
};

namespace detail {

inline nli_example synthesize_example(const synthetic_spec& spec, rng& r, bool ood) {
  const auto cls_of = [](int i) { return static_cast<nli_label>(i); };
  nli_example ex;
  ex.label = cls_of(r.rand_index(3));
  const std::string true_marker = spec.marker(ex.label, spec.premise_marker_index(r));

  // Premise: fillers, then one marker of each non-label class at random
  // positions, then the [cue, true marker] block — inserted last so nothing
  // can split it or slip between cue and marker.
  const int filler_count =
      spec.premise_fillers_min + r.rand_index(spec.premise_fillers_max - spec.premise_fillers_min + 1);
  for (int i = 0; i < filler_count; ++i)
    ex.premise_words.push_back(spec.filler(ood, r.rand_index(ood ? spec.ood_filler_vocab : spec.filler_vocab)));
  for (int c = 0; c < 3; ++c) {
    if (cls_of(c) == ex.label) continue;
    const std::string distractor = spec.marker(cls_of(c), spec.premise_marker_index(r));
    ex.premise_words.insert(ex.premise_words.begin() + r.rand_index(static_cast<int>(ex.premise_words.size()) + 1),
                            distractor);
  }
  const int block_at = r.rand_index(static_cast<int>(ex.premise_words.size()) + 1);
  ex.premise_words.insert(ex.premise_words.begin() + block_at, {synthetic_spec::cue_token, true_marker});
  ex.premise_highlights = {block_at + 1};

  // Hypothesis: fillers plus one marker that echoes the label unless the
  // noise coin flips it to one of the other two classes.
  const int hyp_fillers =
      spec.hypothesis_fillers_min + r.rand_index(spec.hypothesis_fillers_max - spec.hypothesis_fillers_min + 1);
  for (int i = 0; i < hyp_fillers; ++i)
    ex.hypothesis_words.push_back(spec.filler(ood, r.rand_index(ood ? spec.ood_filler_vocab : spec.filler_vocab)));
  nli_label hyp_class = ex.label;
  if (r.bernoulli(spec.noise_rate))
    hyp_class = cls_of((static_cast<int>(ex.label) + 1 + r.rand_index(2)) % 3);
  const std::string hyp_marker = spec.marker(hyp_class, spec.hypothesis_marker_index(r));
  const int hyp_at = r.rand_index(static_cast<int>(ex.hypothesis_words.size()) + 1);
  ex.hypothesis_words.insert(ex.hypothesis_words.begin() + hyp_at, hyp_marker);
  ex.hypothesis_highlights = {hyp_at};

  // Names exactly the two marker surfaces; every other explanation word is
  // absent from the sentences, so the free-text mask lands on the markers.
  ex.freetext_explanations = {"the marker " + true_marker + " sets the relation and " + hyp_marker + " echoes it"};
  return ex;
}

}  // namespace detail

inline synthetic_corpus generate_synthetic(const synthetic_spec& spec) {
  spec.validate();
  synthetic_corpus corpus;
  rng r(spec.seed);
  const auto fill = [&](std::vector<nli_example>& split, int count, bool ood) {
    split.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) split.push_back(detail::synthesize_example(spec, r, ood));
  };
  fill(corpus.train, spec.train_count, false);
  fill(corpus.dev, spec.dev_count, false);
  fill(corpus.test, spec.test_count, false);
  fill(corpus.ood, spec.ood_count, true);

  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 2 * spec.markers_per_class; ++i)
      corpus.category_lines.push_back(spec.marker(static_cast<nli_label>(c), i) + "\tNOUN");
  corpus.category_lines.push_back(std::string(synthetic_spec::cue_token) + "\tDET");
  static const char* rotation[4] = {"VERB", "ADJ", "DET", "OTHER"};
  for (int i = 0; i < spec.filler_vocab; ++i)
    corpus.category_lines.push_back(spec.filler(false, i) + "\t" + rotation[i % 4]);
  for (int i = 0; i < spec.ood_filler_vocab; ++i)
    corpus.category_lines.push_back(spec.filler(true, i) + "\t" + rotation[i % 4]);
  return corpus;
}

// Serialize examples in the JSONL shape the dataset loader reads back.
inline std::string dataset_to_jsonl(const std::vector<nli_example>& examples) {
  std::string out;
  for (const nli_example& ex : examples) {
    nlohmann::json j;
    j["premise"] = join(ex.premise_words, " ");
    j["hypothesis"] = join(ex.hypothesis_words, " ");
    j["label"] = label_name(ex.label);
    j["explanations"] = ex.freetext_explanations;
    j["premise_highlights"] = ex.premise_highlights;
    j["hypothesis_highlights"] = ex.hypothesis_highlights;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace attnsup
