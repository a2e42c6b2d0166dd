#pragma once
// Attention analytics over trained models: where does [CLS] attention land?
// Aggregates attention mass by input segment and by word category, tabulates
// each example's most-attended word, and renders per-example attention
// heatmaps as self-contained HTML.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnsup/corpus.hpp"
#include "attnsup/encoder.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/rationale.hpp"
#include "attnsup/supervise.hpp"

namespace attnsup {

// Word -> category table ("word<TAB>CATEGORY" lines; '#' starts a comment
// line). Lookups are case-sensitive against lowercased token surfaces;
// unmapped words fall into "OTHER".
struct category_lexicon {
  std::unordered_map<std::string, std::string> word_to_category;

  static category_lexicon from_lines(const std::vector<std::string>& lines, const std::string& origin = "lexicon") {
    category_lexicon lex;
    for (size_t n = 0; n < lines.size(); ++n) {
      const std::string& line = lines[n];
      if (line.empty() || line[0] == '#') continue;
      const size_t tab = line.find('\t');
      if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
        throw std::invalid_argument(origin + ": line " + std::to_string(n + 1) +
                                    ": expected 'word<TAB>CATEGORY', got '" + line + "'");
      lex.word_to_category[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return lex;
  }

  static category_lexicon load(const std::filesystem::path& path) {
    return from_lines(read_lines(path), path.string());
  }

  std::string category_of(const std::string& word) const {
    const auto it = word_to_category.find(word);
    return it == word_to_category.end() ? std::string("OTHER") : it->second;
  }
};

// One example's [CLS] attention rows (one per selected head) at one layer.
struct example_attention {
  encoded_sequence seq;
  std::vector<std::vector<double>> rows;  // each length seq.valid_length, sums to 1
};

// Forward every example and keep the [CLS] rows of the selected heads at the
// given layer. An empty head list selects all heads.
inline std::vector<example_attention> collect_attention(const encoder_params& params, const vocabulary& vocab,
                                                        const std::vector<nli_example>& examples, int layer,
                                                        std::vector<int> heads = {}) {
  const encoder_config& cfg = params.config;
  if (layer < 0 || layer >= cfg.num_layers)
    throw std::out_of_range("collect_attention: layer " + std::to_string(layer) + " out of range for " +
                            std::to_string(cfg.num_layers) + " layers");
  if (heads.empty())
    for (int h = 0; h < cfg.num_heads; ++h) heads.push_back(h);
  for (int h : heads)
    if (h < 0 || h >= cfg.num_heads)
      throw std::out_of_range("collect_attention: head " + std::to_string(h) + " out of range for " +
                              std::to_string(cfg.num_heads) + " heads");
  std::vector<example_attention> out;
  out.reserve(examples.size());
  for (const nli_example& ex : examples) {
    example_attention ea;
    ea.seq = encode_pair(ex, vocab, cfg.n_max);
    const forward_result fwd = forward(ea.seq, params);
    for (int h : heads) ea.rows.push_back(fwd.attention.row(layer, h));
    out.push_back(std::move(ea));
  }
  return out;
}

// Mean attention mass per input segment over all (example, head) pairs.
// The fractions partition unity because every contributing row does.
inline std::map<segment_kind, double> segment_mass(const std::vector<example_attention>& attention) {
  if (attention.empty()) throw std::invalid_argument("segment_mass: no examples");
  std::map<segment_kind, double> mass = {{segment_kind::cls, 0.0},
                                         {segment_kind::premise, 0.0},
                                         {segment_kind::sep1, 0.0},
                                         {segment_kind::hypothesis, 0.0},
                                         {segment_kind::sep2, 0.0}};
  size_t rows = 0;
  for (const example_attention& ea : attention) {
    for (const std::vector<double>& row : ea.rows) {
      for (int i = 0; i < ea.seq.valid_length; ++i) mass[ea.seq.segment_at(i)] += row[static_cast<size_t>(i)];
      ++rows;
    }
  }
  for (auto& [seg, v] : mass) v /= static_cast<double>(rows);
  return mass;
}

inline std::map<segment_kind, double> segment_mass(const encoder_params& params, const vocabulary& vocab,
                                                   const std::vector<nli_example>& examples, int layer,
                                                   const std::vector<int>& heads = {}) {
  return segment_mass(collect_attention(params, vocab, examples, layer, heads));
}

// Mean attention mass pooled by the attended word's category. Special tokens
// report under their own surface ("[CLS]" / "[SEP]"); unmapped words pool
// into "OTHER".
inline std::map<std::string, double> category_mass(const std::vector<example_attention>& attention,
                                                   const category_lexicon& lexicon) {
  if (attention.empty()) throw std::invalid_argument("category_mass: no examples");
  std::map<std::string, double> mass;
  size_t rows = 0;
  for (const example_attention& ea : attention) {
    for (const std::vector<double>& row : ea.rows) {
      for (int i = 0; i < ea.seq.valid_length; ++i) {
        const token& tok = ea.seq.tokens[static_cast<size_t>(i)];
        const std::string key = is_special(tok.segment) ? tok.surface : lexicon.category_of(tok.surface);
        mass[key] += row[static_cast<size_t>(i)];
      }
      ++rows;
    }
  }
  for (auto& [cat, v] : mass) v /= static_cast<double>(rows);
  return mass;
}

inline std::map<std::string, double> category_mass(const encoder_params& params, const vocabulary& vocab,
                                                   const std::vector<nli_example>& examples,
                                                   const category_lexicon& lexicon, int layer,
                                                   const std::vector<int>& heads = {}) {
  return category_mass(collect_attention(params, vocab, examples, layer, heads), lexicon);
}

// For each example, the argmax-attention non-special position of the
// head-mean row (ties break toward the earlier position); word frequencies
// tabulated as percentages, sorted by percentage descending then word.
inline std::vector<std::pair<std::string, double>> most_attended(const std::vector<example_attention>& attention) {
  if (attention.empty()) throw std::invalid_argument("most_attended: no examples");
  std::map<std::string, int> counts;
  for (const example_attention& ea : attention) {
    int best = -1;
    double best_score = -1.0;
    for (int i = 0; i < ea.seq.valid_length; ++i) {
      if (is_special(ea.seq.segment_at(i))) continue;
      double mean = 0.0;
      for (const std::vector<double>& row : ea.rows) mean += row[static_cast<size_t>(i)];
      mean /= static_cast<double>(ea.rows.size());
      if (mean > best_score) {  // strict >: ties keep the earlier position
        best_score = mean;
        best = i;
      }
    }
    if (best >= 0) ++counts[ea.seq.tokens[static_cast<size_t>(best)].surface];
  }
  std::vector<std::pair<std::string, double>> table(counts.begin(), counts.end());
  std::vector<std::pair<std::string, double>> out;
  out.reserve(table.size());
  for (const auto& [word, count] : table)
    out.emplace_back(word, 100.0 * count / static_cast<double>(attention.size()));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

inline std::vector<std::pair<std::string, double>> most_attended(const encoder_params& params,
                                                                 const vocabulary& vocab,
                                                                 const std::vector<nli_example>& examples,
                                                                 int layer, const std::vector<int>& heads = {}) {
  return most_attended(collect_attention(params, vocab, examples, layer, heads));
}

// ---------------------------------------------------------------------------
// Heatmap export
// ---------------------------------------------------------------------------

inline std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace detail {

inline std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

// One token strip: every non-PAD token once, shaded by its score relative to
// the strip's maximum. A zero score renders with background intensity 0.
inline std::string render_token_strip(const encoded_sequence& seq, const std::vector<double>& scores) {
  if (scores.size() != static_cast<size_t>(seq.valid_length))
    throw std::invalid_argument("render_token_strip: scores length " + std::to_string(scores.size()) +
                                " does not match valid length " + std::to_string(seq.valid_length));
  double max_score = 0.0;
  for (double s : scores) max_score = std::max(max_score, s);
  std::string html = "<p class=\"strip\">";
  for (int i = 0; i < seq.valid_length; ++i) {
    const double score = scores[static_cast<size_t>(i)];
    const double intensity = max_score > 0.0 ? score / max_score : 0.0;
    html += "<span class=\"tok\" data-score=\"" + detail::fixed4(score) + "\" title=\"" +
            detail::fixed4(score) + "\" style=\"background-color:rgba(204,61,61," +
            detail::fixed4(intensity) + ")\">" + html_escape(seq.tokens[static_cast<size_t>(i)].surface) +
            "</span> ";
  }
  html += "</p>\n";
  return html;
}

// One model to visualize: a label plus the parameters and the supervision
// view (which heads/layer to average) used for scoring.
struct heatmap_view {
  std::string label;
  const encoder_params* params = nullptr;
  supervision_config sup;
};

// Self-contained HTML page showing each view's attention over the same
// example, side by side when more than one checkpoint is given.
inline std::string render_heatmap_html(const std::vector<heatmap_view>& views, const nli_example& ex,
                                       const vocabulary& vocab) {
  if (views.empty()) throw std::invalid_argument("render_heatmap_html: no views");
  std::string html;
  html += "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Attention heatmap</title>\n";
  html += "<style>\n";
  html += "body { font-family: sans-serif; margin: 2rem; }\n";
  html += ".views { display: flex; flex-wrap: wrap; gap: 2rem; }\n";
  html += ".view { max-width: 40rem; }\n";
  html += ".tok { padding: 0.15rem 0.3rem; border-radius: 0.25rem; line-height: 2; }\n";
  html += "</style>\n</head>\n<body>\n<h1>Attention heatmap</h1>\n<div class=\"views\">\n";
  for (const heatmap_view& view : views) {
    if (view.params == nullptr) throw std::invalid_argument("render_heatmap_html: view without parameters");
    const encoded_sequence seq = encode_pair(ex, vocab, view.params->config.n_max);
    const forward_result fwd = forward(seq, *view.params);
    const std::vector<double> scores = score_positions(fwd.attention, view.sup, view.params->config);
    html += "<div class=\"view\">\n<h2>" + html_escape(view.label) + "</h2>\n";
    html += render_token_strip(seq, scores);
    html += "</div>\n";
  }
  html += "</div>\n</body>\n</html>\n";
  return html;
}

inline void export_heatmap(const std::vector<heatmap_view>& views, const nli_example& ex,
                           const vocabulary& vocab, const std::filesystem::path& path) {
  atomic_write_file(path, render_heatmap_html(views, ex, vocab));
}

}  // namespace attnsup
