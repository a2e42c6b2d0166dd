#pragma once

// Dataset ingestion for premise/hypothesis classification with explanation
// annotations: word-level tokenization, vocabulary construction, and encoding
// into fixed-length sequences laid out as
//   [CLS] premise words [SEP] hypothesis words [SEP] [PAD]...
// Valid (non-PAD) positions always form a prefix; PAD only trails.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "attnsup/ioutil.hpp"
#include "attnsup/rng.hpp"

namespace attnsup {

enum class segment_kind { cls, premise, sep1, hypothesis, sep2, pad };

inline bool is_special(segment_kind s) {
  return s == segment_kind::cls || s == segment_kind::sep1 || s == segment_kind::sep2 ||
         s == segment_kind::pad;
}

inline const char* segment_name(segment_kind s) {
  switch (s) {
    case segment_kind::cls: return "CLS";
    case segment_kind::premise: return "PREMISE";
    case segment_kind::sep1: return "SEP1";
    case segment_kind::hypothesis: return "HYPOTHESIS";
    case segment_kind::sep2: return "SEP2";
    case segment_kind::pad: return "PAD";
  }
  return "?";
}

enum class nli_label { entailment = 0, neutral = 1, contradiction = 2 };

inline const char* label_name(nli_label l) {
  switch (l) {
    case nli_label::entailment: return "entailment";
    case nli_label::neutral: return "neutral";
    case nli_label::contradiction: return "contradiction";
  }
  return "?";
}

inline nli_label parse_label(const std::string& s) {
  if (s == "entailment") return nli_label::entailment;
  if (s == "neutral") return nli_label::neutral;
  if (s == "contradiction") return nli_label::contradiction;
  throw std::invalid_argument("unknown label '" + s + "'");
}

constexpr int num_labels = 3;

// Lowercasing word tokenizer: alphanumeric runs (apostrophes and bytes above
// ASCII included) form words, every other non-space character is its own
// punctuation token.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (const char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (uc >= 0x80 || std::isalnum(uc) || ch == '\'') {
      cur += static_cast<char>(uc >= 0x80 ? uc : std::tolower(uc));
    } else if (std::isspace(uc)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

struct nli_example {
  std::vector<std::string> premise_words;
  std::vector<std::string> hypothesis_words;
  nli_label label = nli_label::entailment;
  std::vector<std::string> freetext_explanations;
  std::vector<int> premise_highlights;    // sorted, unique word indices
  std::vector<int> hypothesis_highlights; // sorted, unique word indices
};

class vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int cls_id = 2;
  static constexpr int sep_id = 3;
  static constexpr int first_word_id = 4;

  vocabulary() { init_reserved(); }

  // Words with corpus frequency >= min_freq get ids, ordered by frequency
  // descending then lexicographic, starting after the reserved ids.
  static vocabulary build(const std::vector<nli_example>& examples, int min_freq) {
    if (min_freq < 1) throw std::invalid_argument("vocabulary::build: min_freq must be >= 1");
    std::map<std::string, long long> freq;
    for (const nli_example& ex : examples) {
      for (const std::string& w : ex.premise_words) ++freq[w];
      for (const std::string& w : ex.hypothesis_words) ++freq[w];
    }
    std::vector<std::pair<std::string, long long>> kept;
    for (const auto& [w, f] : freq)
      if (f >= min_freq) kept.emplace_back(w, f);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    vocabulary v;
    for (const auto& [w, f] : kept) {
      v.word_to_id_[w] = static_cast<int>(v.id_to_word_.size());
      v.id_to_word_.push_back(w);
    }
    return v;
  }

  int id_of(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? unk_id : it->second;
  }

  bool contains(const std::string& word) const { return word_to_id_.count(word) > 0; }
  const std::string& word_of(int id) const { return id_to_word_.at(id); }
  int size() const { return static_cast<int>(id_to_word_.size()); }

  // One "word<TAB>id" line per id, in id order (reserved ids included).
  void save(const std::filesystem::path& path) const {
    std::string out;
    for (int id = 0; id < size(); ++id)
      out += id_to_word_[id] + "\t" + std::to_string(id) + "\n";
    atomic_write_file(path, out);
  }

  static vocabulary load(const std::filesystem::path& path) {
    vocabulary v;
    v.word_to_id_.clear();
    v.id_to_word_.clear();
    const std::vector<std::string> lines = read_lines(path);
    for (size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const size_t tab = lines[i].find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("vocabulary file " + path.string() + " line " + std::to_string(i + 1) + ": expected word<TAB>id");
      const std::string word = lines[i].substr(0, tab);
      const int id = std::stoi(lines[i].substr(tab + 1));
      if (id != static_cast<int>(v.id_to_word_.size()))
        throw std::runtime_error("vocabulary file " + path.string() + " line " + std::to_string(i + 1) + ": ids must be dense and in order");
      v.id_to_word_.push_back(word);
      if (id >= first_word_id) v.word_to_id_[word] = id;
    }
    if (v.size() < first_word_id)
      throw std::runtime_error("vocabulary file " + path.string() + ": missing reserved ids");
    return v;
  }

 private:
  void init_reserved() {
    id_to_word_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  }

  std::unordered_map<std::string, int> word_to_id_;
  std::vector<std::string> id_to_word_;
};

struct token {
  std::string surface;   // lowercased original word, kept even when the id is UNK
  int position = 0;
  segment_kind segment = segment_kind::pad;
};

struct encoded_sequence {
  std::vector<int> token_ids;  // length n_max
  std::vector<token> tokens;   // length n_max
  int valid_length = 0;        // count of non-PAD positions, specials included
  bool truncated = false;
  // word index -> sequence position; -1 for words dropped by truncation
  std::vector<int> premise_positions;
  std::vector<int> hypothesis_positions;

  int n_max() const { return static_cast<int>(token_ids.size()); }
  segment_kind segment_at(int pos) const { return tokens.at(pos).segment; }

  std::vector<int> positions_of(segment_kind s) const {
    std::vector<int> out;
    for (int i = 0; i < valid_length; ++i)
      if (tokens[i].segment == s) out.push_back(i);
    return out;
  }
};

inline encoded_sequence encode_pair(const nli_example& ex, const vocabulary& vocab, int n_max) {
  if (n_max < 3)
    throw std::invalid_argument("encode_pair: n_max must fit [CLS] and two [SEP] tokens");
  int keep_p = static_cast<int>(ex.premise_words.size());
  int keep_h = static_cast<int>(ex.hypothesis_words.size());
  int over = 3 + keep_p + keep_h - n_max;
  bool truncated = false;
  if (over > 0) {
    const int drop_h = std::min(keep_h, over);
    keep_h -= drop_h;
    over -= drop_h;
    truncated = true;
  }
  if (over > 0) keep_p -= over;  // hypothesis exhausted; premise loses the rest

  encoded_sequence seq;
  seq.token_ids.assign(n_max, vocabulary::pad_id);
  seq.tokens.assign(n_max, token{});
  seq.truncated = truncated;
  seq.premise_positions.assign(ex.premise_words.size(), -1);
  seq.hypothesis_positions.assign(ex.hypothesis_words.size(), -1);

  int pos = 0;
  auto put = [&](const std::string& surface, int id, segment_kind s) {
    seq.tokens[pos] = token{surface, pos, s};
    seq.token_ids[pos] = id;
    ++pos;
  };
  put("[CLS]", vocabulary::cls_id, segment_kind::cls);
  for (int w = 0; w < keep_p; ++w) {
    seq.premise_positions[w] = pos;
    put(ex.premise_words[w], vocab.id_of(ex.premise_words[w]), segment_kind::premise);
  }
  put("[SEP]", vocabulary::sep_id, segment_kind::sep1);
  for (int w = 0; w < keep_h; ++w) {
    seq.hypothesis_positions[w] = pos;
    put(ex.hypothesis_words[w], vocab.id_of(ex.hypothesis_words[w]), segment_kind::hypothesis);
  }
  put("[SEP]", vocabulary::sep_id, segment_kind::sep2);
  seq.valid_length = pos;
  for (int i = pos; i < n_max; ++i) seq.tokens[i] = token{"[PAD]", i, segment_kind::pad};
  return seq;
}

// Recover (premise words, hypothesis words) from token surfaces.
inline std::pair<std::vector<std::string>, std::vector<std::string>> decode(const encoded_sequence& seq) {
  std::vector<std::string> premise, hypothesis;
  for (int i = 0; i < seq.valid_length; ++i) {
    if (seq.tokens[i].segment == segment_kind::premise) premise.push_back(seq.tokens[i].surface);
    else if (seq.tokens[i].segment == segment_kind::hypothesis) hypothesis.push_back(seq.tokens[i].surface);
  }
  return {premise, hypothesis};
}

enum class dataset_format { jsonl, tsv };

namespace detail {

inline std::vector<int> clean_highlights(std::vector<int> idx, size_t word_count,
                                         const char* field, size_t line_no) {
  for (int v : idx) {
    if (v < 0 || static_cast<size_t>(v) >= word_count)
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + field + " index " + std::to_string(v) + " outside word list of size " + std::to_string(word_count));
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

inline nli_example example_from_json(const nlohmann::json& j, size_t line_no) {
  auto require_string = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j.at(key).is_string())
      throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  nli_example ex;
  ex.premise_words = tokenize(require_string("premise"));
  ex.hypothesis_words = tokenize(require_string("hypothesis"));
  try {
    ex.label = parse_label(require_string("label"));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (j.contains("explanations")) {
    if (!j.at("explanations").is_array())
      throw std::runtime_error("line " + std::to_string(line_no) + ": field 'explanations' must be an array of strings");
    for (const auto& e : j.at("explanations")) {
      if (!e.is_string())
        throw std::runtime_error("line " + std::to_string(line_no) + ": field 'explanations' must be an array of strings");
      ex.freetext_explanations.push_back(e.get<std::string>());
    }
  }
  auto read_highlights = [&](const char* key) -> std::vector<int> {
    if (!j.contains(key)) return {};
    if (!j.at(key).is_array())
      throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + std::string(key) + "' must be an array of integers");
    std::vector<int> out;
    for (const auto& v : j.at(key)) {
      if (!v.is_number_integer())
        throw std::runtime_error("line " + std::to_string(line_no) + ": field '" + std::string(key) + "' must be an array of integers");
      out.push_back(v.get<int>());
    }
    return out;
  };
  ex.premise_highlights = clean_highlights(read_highlights("premise_highlights"),
                                           ex.premise_words.size(), "premise_highlights", line_no);
  ex.hypothesis_highlights = clean_highlights(read_highlights("hypothesis_highlights"),
                                              ex.hypothesis_words.size(), "hypothesis_highlights", line_no);
  return ex;
}

inline std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

inline std::vector<int> parse_int_list(const std::string& s, const char* field, size_t line_no) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const std::string& part : split_on(s, ',')) {
    try {
      size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": " + field + " entry '" + part + "' is not an integer");
    }
  }
  return out;
}

// TSV columns mirror the JSONL keys in order:
// premise, hypothesis, label, explanations ('|'-joined), premise_highlights
// (comma-joined), hypothesis_highlights (comma-joined); the last three may be
// omitted.
inline nli_example example_from_tsv(const std::string& line, size_t line_no) {
  const std::vector<std::string> cols = split_on(line, '\t');
  if (cols.size() < 3 || cols.size() > 6)
    throw std::runtime_error("line " + std::to_string(line_no) + ": expected 3-6 tab-separated columns, got " + std::to_string(cols.size()));
  nli_example ex;
  ex.premise_words = tokenize(cols[0]);
  ex.hypothesis_words = tokenize(cols[1]);
  try {
    ex.label = parse_label(cols[2]);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (cols.size() > 3 && !cols[3].empty())
    for (const std::string& e : split_on(cols[3], '|')) ex.freetext_explanations.push_back(e);
  if (cols.size() > 4)
    ex.premise_highlights = clean_highlights(parse_int_list(cols[4], "premise_highlights", line_no),
                                             ex.premise_words.size(), "premise_highlights", line_no);
  if (cols.size() > 5)
    ex.hypothesis_highlights = clean_highlights(parse_int_list(cols[5], "hypothesis_highlights", line_no),
                                                ex.hypothesis_words.size(), "hypothesis_highlights", line_no);
  return ex;
}

}  // namespace detail

inline std::vector<nli_example> load_dataset(const std::filesystem::path& path, dataset_format format) {
  const std::vector<std::string> lines = read_lines(path);
  std::vector<nli_example> out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const size_t line_no = i + 1;
    try {
      if (format == dataset_format::jsonl) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::parse_error& e) {
          throw std::runtime_error("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        out.push_back(detail::example_from_json(j, line_no));
      } else {
        out.push_back(detail::example_from_tsv(lines[i], line_no));
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path.string() + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<nli_example> load_dataset(const std::filesystem::path& path) {
  const dataset_format f = path.extension() == ".tsv" ? dataset_format::tsv : dataset_format::jsonl;
  return load_dataset(path, f);
}

// Deterministic index split (e.g. train/dev/test) by fractions summing to <= 1;
// the remainder joins the last part.
inline std::vector<std::vector<int>> split_indices(int count, const std::vector<double>& fractions,
                                                   uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split_indices: negative fraction");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw std::invalid_argument("split_indices: fractions exceed 1");
  rng r(seed);
  std::vector<int> order = r.permutation(count);
  std::vector<std::vector<int>> parts(fractions.size());
  size_t next = 0;
  for (size_t p = 0; p + 1 < fractions.size(); ++p) {
    const auto take = static_cast<size_t>(fractions[p] * count + 0.5);
    for (size_t k = 0; k < take && next < order.size(); ++k) parts[p].push_back(order[next++]);
  }
  if (!parts.empty())
    while (next < order.size()) parts.back().push_back(order[next++]);
  for (auto& part : parts) std::sort(part.begin(), part.end());
  return parts;
}

}  // namespace attnsup
