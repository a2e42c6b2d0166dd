#pragma once

// Turns explanation annotations into supervision targets for attention:
// binary masks over sequence positions (free-text word matching or annotator
// highlights), their normalization into distributions, the combined mode with
// its hypothesis-only fallback, and the segment-local shuffled baseline.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "attnsup/corpus.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/rng.hpp"

namespace attnsup {

struct stopword_lexicon {
  std::unordered_set<std::string> words;

  bool contains(const std::string& w) const { return words.count(w) > 0; }
  bool empty() const { return words.empty(); }

  // File format: one lowercased token per line; '#' lines are comments.
  static stopword_lexicon load(const std::filesystem::path& path) {
    stopword_lexicon lex;
    for (const std::string& line : read_lines(path)) {
      if (line.empty() || line[0] == '#') continue;
      lex.words.insert(line);
    }
    return lex;
  }
};

enum class mask_source { freetext, highlight };

struct explanation_mask {
  std::vector<double> values;  // length = valid_length, entries in {0,1}
  mask_source source = mask_source::freetext;

  double sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

struct target_distribution {
  std::vector<double> values;  // length = valid_length, non-negative
  bool empty_flag = true;      // true iff no supervision signal (all zeros)

  int length() const { return static_cast<int>(values.size()); }
};

// Positions whose word appears in the union of the free-text explanations and
// is not a stop-word get e=1; special tokens stay 0. No explanations (or only
// stop-word matches) yield an all-zero mask.
inline explanation_mask extract_freetext_mask(const nli_example& ex, const encoded_sequence& seq,
                                              const stopword_lexicon& stopwords) {
  std::unordered_set<std::string> mentioned;
  for (const std::string& explanation : ex.freetext_explanations)
    for (const std::string& w : tokenize(explanation))
      if (!stopwords.contains(w)) mentioned.insert(w);

  explanation_mask mask;
  mask.source = mask_source::freetext;
  mask.values.assign(seq.valid_length, 0.0);
  for (int i = 0; i < seq.valid_length; ++i) {
    const token& t = seq.tokens[i];
    if (is_special(t.segment)) continue;
    if (mentioned.count(t.surface)) mask.values[i] = 1.0;
  }
  return mask;
}

// Highlighted word indices map through the sequence's word->position tables.
// Stop-words are NOT excluded here: a highlighted stop-word is selected.
// Words dropped by truncation have no position and are skipped.
inline explanation_mask extract_highlight_mask(const nli_example& ex, const encoded_sequence& seq) {
  explanation_mask mask;
  mask.source = mask_source::highlight;
  mask.values.assign(seq.valid_length, 0.0);
  for (int w : ex.premise_highlights) {
    if (w < 0 || w >= static_cast<int>(seq.premise_positions.size()))
      throw std::out_of_range("extract_highlight_mask: premise highlight index " + std::to_string(w) + " outside word list");
    const int pos = seq.premise_positions[w];
    if (pos >= 0) mask.values[pos] = 1.0;
  }
  for (int w : ex.hypothesis_highlights) {
    if (w < 0 || w >= static_cast<int>(seq.hypothesis_positions.size()))
      throw std::out_of_range("extract_highlight_mask: hypothesis highlight index " + std::to_string(w) + " outside word list");
    const int pos = seq.hypothesis_positions[w];
    if (pos >= 0) mask.values[pos] = 1.0;
  }
  return mask;
}

// d_i = e_i / sum_k e_k; an all-zero mask yields the empty distribution.
inline target_distribution normalize_mask(const explanation_mask& mask) {
  target_distribution d;
  d.values.assign(mask.values.size(), 0.0);
  const double total = mask.sum();
  if (total <= 0.0) {
    d.empty_flag = true;
    return d;
  }
  d.empty_flag = false;
  for (size_t i = 0; i < mask.values.size(); ++i) d.values[i] = mask.values[i] / total;
  return d;
}

// Combination rule for the free-text and highlight targets:
//   - highlight support confined to HYPOTHESIS positions while the free-text
//     target is non-empty -> the free-text target alone (hypothesis-only
//     highlights would teach the model to ignore the premise);
//   - exactly one input empty -> the other;
//   - both empty -> empty;
//   - otherwise elementwise mean (two unit-sum vectors average to unit sum).
inline target_distribution combine_targets(const target_distribution& d_free,
                                           const target_distribution& d_high,
                                           const encoded_sequence& seq) {
  if (d_free.values.size() != d_high.values.size())
    throw std::invalid_argument("combine_targets: length mismatch " + std::to_string(d_free.values.size()) + " vs " + std::to_string(d_high.values.size()));
  if (!d_high.empty_flag && !d_free.empty_flag) {
    bool hypothesis_only = true;
    for (size_t i = 0; i < d_high.values.size(); ++i) {
      if (d_high.values[i] > 0.0 &&
          seq.tokens[i].segment != segment_kind::hypothesis) {
        hypothesis_only = false;
        break;
      }
    }
    if (hypothesis_only) return d_free;
  }
  if (d_free.empty_flag && d_high.empty_flag) return d_free;
  if (d_free.empty_flag) return d_high;
  if (d_high.empty_flag) return d_free;
  target_distribution out;
  out.empty_flag = false;
  out.values.assign(d_free.values.size(), 0.0);
  for (size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = 0.5 * (d_free.values[i] + d_high.values[i]);
  return out;
}

// Randomized control: permute target values among PREMISE positions and,
// independently, among HYPOTHESIS positions. Special-token values stay put,
// so the result is still a distribution over the same segments.
inline target_distribution shuffle_target(const target_distribution& d, const encoded_sequence& seq,
                                          uint64_t seed) {
  if (static_cast<int>(d.values.size()) != seq.valid_length)
    throw std::invalid_argument("shuffle_target: target not aligned to sequence");
  target_distribution out = d;
  if (d.empty_flag) return out;
  rng r(seed);
  for (segment_kind seg : {segment_kind::premise, segment_kind::hypothesis}) {
    const std::vector<int> positions = seq.positions_of(seg);
    const std::vector<int> perm = r.permutation(static_cast<int>(positions.size()));
    for (size_t k = 0; k < positions.size(); ++k)
      out.values[positions[k]] = d.values[positions[perm[k]]];
  }
  return out;
}

enum class target_mode { none, freetext, highlights, combined, shuffled };

inline const char* target_mode_name(target_mode m) {
  switch (m) {
    case target_mode::none: return "none";
    case target_mode::freetext: return "freetext";
    case target_mode::highlights: return "highlights";
    case target_mode::combined: return "combined";
    case target_mode::shuffled: return "shuffled";
  }
  return "?";
}

inline target_mode parse_target_mode(const std::string& s) {
  if (s == "none") return target_mode::none;
  if (s == "freetext") return target_mode::freetext;
  if (s == "highlights") return target_mode::highlights;
  if (s == "combined") return target_mode::combined;
  if (s == "shuffled") return target_mode::shuffled;
  throw std::invalid_argument("unknown target mode '" + s + "'");
}

// One-stop construction of the supervision target for an example. The
// shuffled mode permutes the combined target (the strongest configuration is
// the one worth controlling); its permutation is seeded per example.
inline target_distribution make_target(const nli_example& ex, const encoded_sequence& seq,
                                       target_mode mode, const stopword_lexicon& stopwords,
                                       uint64_t shuffle_seed = 0) {
  switch (mode) {
    case target_mode::none: {
      target_distribution d;
      d.values.assign(seq.valid_length, 0.0);
      d.empty_flag = true;
      return d;
    }
    case target_mode::freetext:
      return normalize_mask(extract_freetext_mask(ex, seq, stopwords));
    case target_mode::highlights:
      return normalize_mask(extract_highlight_mask(ex, seq));
    case target_mode::combined:
      return combine_targets(normalize_mask(extract_freetext_mask(ex, seq, stopwords)),
                             normalize_mask(extract_highlight_mask(ex, seq)), seq);
    case target_mode::shuffled:
      return shuffle_target(make_target(ex, seq, target_mode::combined, stopwords), seq,
                            shuffle_seed);
  }
  throw std::logic_error("make_target: unhandled mode");
}

}  // namespace attnsup
