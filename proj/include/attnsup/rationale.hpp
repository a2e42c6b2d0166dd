#pragma once
// Token-level rationale extraction: score positions by the attention the
// model assigns to them, threshold the scores into binary rationale
// predictions, and compare those predictions against gold token highlights
// with micro-averaged precision / recall / F1, separately for the premise
// and the hypothesis.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnsup/corpus.hpp"
#include "attnsup/encoder.hpp"
#include "attnsup/explain.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/supervise.hpp"

namespace attnsup {

// Heads whose [CLS] attention rows are averaged into token scores: the
// supervised set when one is configured, otherwise every head (the sensible
// default when scoring an unsupervised model).
inline std::vector<int> scoring_heads(const supervision_config& sup, const encoder_config& enc) {
  if (enc.variant == model_variant::extra_layer) return {};  // single pooling row, no head set
  if (!sup.supervised_heads.empty()) {
    for (int h : sup.supervised_heads)
      if (h < 0 || h >= enc.num_heads)
        throw std::out_of_range("scoring head " + std::to_string(h) + " out of range for " +
                                std::to_string(enc.num_heads) + " heads");
    return sup.supervised_heads;
  }
  std::vector<int> all(enc.num_heads);
  for (int h = 0; h < enc.num_heads; ++h) all[h] = h;
  return all;
}

// Per-position rationale scores for one sequence: the mean of the scoring
// heads' [CLS] attention rows at the supervised layer (the pooling row for
// the extra-layer variant). Length == valid_length; sums to 1 because each
// contributing row does.
inline std::vector<double> score_positions(const attention_record& att,
                                           const supervision_config& sup,
                                           const encoder_config& enc) {
  if (enc.variant == model_variant::extra_layer) return att.extra_row;
  const int layer = sup.resolve_layer(enc);
  const std::vector<int> heads = scoring_heads(sup, enc);
  std::vector<double> scores(static_cast<size_t>(att.valid_length), 0.0);
  for (int h : heads) {
    const std::vector<double>& row = att.row(layer, h);
    for (int i = 0; i < att.valid_length; ++i) scores[i] += row[i];
  }
  for (double& s : scores) s /= static_cast<double>(heads.size());
  return scores;
}

struct rationale_prediction {
  std::vector<double> scores;  // length valid_length
  std::vector<int> predictions;  // 0/1 per position; special tokens are always 0
  double threshold = 0.0;
};

// prediction_i = 1 iff score_i >= threshold, except that special tokens
// ([CLS]/[SEP]/[PAD]) are never predicted as rationale tokens.
inline rationale_prediction predict_rationale(const std::vector<double>& scores,
                                              const encoded_sequence& seq, double threshold) {
  if (scores.size() != static_cast<size_t>(seq.valid_length))
    throw std::invalid_argument("score vector length " + std::to_string(scores.size()) +
                                " does not match valid length " + std::to_string(seq.valid_length));
  rationale_prediction pred;
  pred.scores = scores;
  pred.threshold = threshold;
  pred.predictions.assign(scores.size(), 0);
  for (int i = 0; i < seq.valid_length; ++i)
    if (!is_special(seq.segment_at(i)) && scores[static_cast<size_t>(i)] >= threshold)
      pred.predictions[static_cast<size_t>(i)] = 1;
  return pred;
}

struct segment_prf {
  double precision = 0.0;  // 0 when there are no predicted positives
  double recall = 0.0;     // 0 when there are no gold positives
  double f1 = 0.0;         // harmonic mean; 0 when precision and recall are both 0
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long support = 0;  // gold positive count (tp + fn)
};

struct token_prf {
  segment_prf premise;
  segment_prf hypothesis;
};

inline void finalize_prf(segment_prf& s) {
  s.support = s.tp + s.fn;
  s.precision = (s.tp + s.fp) > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = (s.tp + s.fn) > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
}

// One example prepared for rationale evaluation: its encoding, per-position
// scores, and the gold highlight indicator (1 on highlighted word positions).
struct scored_example {
  encoded_sequence seq;
  std::vector<double> scores;
  std::vector<char> gold;
};

inline std::vector<scored_example> score_examples(const encoder_params& params,
                                                  const vocabulary& vocab,
                                                  const std::vector<nli_example>& examples,
                                                  const supervision_config& sup) {
  std::vector<scored_example> out;
  out.reserve(examples.size());
  for (const nli_example& ex : examples) {
    scored_example se;
    se.seq = encode_pair(ex, vocab, params.config.n_max);
    const forward_result fwd = forward(se.seq, params);
    se.scores = score_positions(fwd.attention, sup, params.config);
    const explanation_mask gold_mask = extract_highlight_mask(ex, se.seq);
    se.gold.assign(gold_mask.values.size(), 0);
    for (size_t i = 0; i < gold_mask.values.size(); ++i) se.gold[i] = gold_mask.values[i] > 0.0 ? 1 : 0;
    out.push_back(std::move(se));
  }
  return out;
}

// Pooled (micro-averaged) confusion counts over all word positions of all
// examples, split by segment. Gold labels come from token highlights only.
inline token_prf prf_at_threshold(const std::vector<scored_example>& scored, double threshold) {
  token_prf result;
  for (const scored_example& se : scored) {
    const rationale_prediction pred = predict_rationale(se.scores, se.seq, threshold);
    for (int i = 0; i < se.seq.valid_length; ++i) {
      const segment_kind seg = se.seq.segment_at(i);
      if (seg != segment_kind::premise && seg != segment_kind::hypothesis) continue;
      segment_prf& s = seg == segment_kind::premise ? result.premise : result.hypothesis;
      const bool gold = se.gold[static_cast<size_t>(i)] != 0;
      const bool predicted = pred.predictions[static_cast<size_t>(i)] != 0;
      if (gold && predicted) ++s.tp;
      else if (!gold && predicted) ++s.fp;
      else if (gold && !predicted) ++s.fn;
    }
  }
  finalize_prf(result.premise);
  finalize_prf(result.hypothesis);
  return result;
}

inline token_prf evaluate_rationales(const encoder_params& params, const vocabulary& vocab,
                                     const std::vector<nli_example>& examples, double threshold,
                                     const supervision_config& sup) {
  return prf_at_threshold(score_examples(params, vocab, examples, sup), threshold);
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 40; ++k) grid.push_back(0.005 * k);
  return grid;
}

// Pick the threshold maximizing the mean of premise F1 and hypothesis F1 on
// the given (dev) examples. Ties keep the lower threshold. It is an error to
// tune against a set that contains no gold highlights at all.
inline double tune_threshold(const std::vector<scored_example>& scored,
                             std::vector<double> grid = default_threshold_grid()) {
  if (grid.empty()) throw std::invalid_argument("threshold grid is empty");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  bool any_gold = false;
  for (const scored_example& se : scored)
    for (char g : se.gold) any_gold = any_gold || g != 0;
  if (!any_gold)
    throw std::invalid_argument("cannot tune rationale threshold: no gold highlights in the tuning set");

  double best_threshold = grid.front();
  double best_score = -1.0;
  for (double t : grid) {
    const token_prf prf = prf_at_threshold(scored, t);
    const double score = 0.5 * (prf.premise.f1 + prf.hypothesis.f1);
    if (score > best_score) {  // strict >: ties keep the lower threshold
      best_score = score;
      best_threshold = t;
    }
  }
  return best_threshold;
}

inline double tune_threshold(const encoder_params& params, const vocabulary& vocab,
                             const std::vector<nli_example>& examples, const supervision_config& sup,
                             const std::vector<double>& grid = default_threshold_grid()) {
  return tune_threshold(score_examples(params, vocab, examples, sup), grid);
}

// One JSON object per example: surfaces, scores, binary predictions, and the
// gold highlight indicator, all aligned by position over the valid length.
inline std::string rationale_dump_jsonl(const std::vector<scored_example>& scored, double threshold) {
  std::string out;
  for (size_t n = 0; n < scored.size(); ++n) {
    const scored_example& se = scored[n];
    const rationale_prediction pred = predict_rationale(se.scores, se.seq, threshold);
    nlohmann::json j;
    j["index"] = n;
    nlohmann::json tokens = nlohmann::json::array();
    for (int i = 0; i < se.seq.valid_length; ++i) tokens.push_back(se.seq.tokens[static_cast<size_t>(i)].surface);
    j["tokens"] = std::move(tokens);
    nlohmann::json scores = nlohmann::json::array();
    for (double s : se.scores) scores.push_back(s);
    j["scores"] = std::move(scores);
    j["predictions"] = pred.predictions;
    nlohmann::json gold = nlohmann::json::array();
    for (char g : se.gold) gold.push_back(static_cast<int>(g));
    j["gold"] = std::move(gold);
    j["threshold"] = threshold;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace attnsup
