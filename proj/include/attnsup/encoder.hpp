#pragma once

// Miniature transformer encoder for premise/hypothesis classification.
//   - multi-head self-attention with per-head [CLS] attention rows exposed
//     for supervision and analysis,
//   - post-norm residual blocks, tanh FFN, learned position embeddings,
//   - a linear classifier on the final [CLS] hidden state,
//   - an alternative head: a small scoring network over final hidden states
//     whose normalized weights pool them into a representation c that feeds
//     its own linear classifier (the "extra attention layer" variant).
//
// All computation runs on the valid (non-PAD) prefix of the sequence. PAD
// strictly trails, so this is exactly equivalent to masking PAD scores with
// -inf before the softmax: PAD positions get exactly zero attention and can
// never influence logits.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "attnsup/autodiff.hpp"
#include "attnsup/corpus.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/matrix.hpp"
#include "attnsup/rng.hpp"

namespace attnsup {

enum class model_variant { existing_attention, extra_layer };

inline const char* variant_name(model_variant v) {
  return v == model_variant::existing_attention ? "existing_attention" : "extra_layer";
}

inline model_variant parse_variant(const std::string& s) {
  if (s == "existing_attention") return model_variant::existing_attention;
  if (s == "extra_layer") return model_variant::extra_layer;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct encoder_config {
  int num_layers = 2;
  int num_heads = 4;
  int d_model = 64;
  int ffn_dim = 128;
  int n_max = 32;
  int vocab_size = 0;
  int extra_hidden = 64;  // scoring-network width, extra_layer variant only
  model_variant variant = model_variant::existing_attention;

  int d_k() const { return d_model / num_heads; }

  void validate() const {
    if (num_layers < 1) throw std::invalid_argument("encoder_config: num_layers must be >= 1");
    if (num_heads < 1) throw std::invalid_argument("encoder_config: num_heads must be >= 1");
    if (d_model % num_heads != 0)
      throw std::invalid_argument("encoder_config: d_model must be divisible by num_heads");
    if (ffn_dim < 1 || n_max < 3 || extra_hidden < 1)
      throw std::invalid_argument("encoder_config: dimensions must be positive");
    if (vocab_size < vocabulary::first_word_id)
      throw std::invalid_argument("encoder_config: vocab_size must cover the reserved ids");
  }
};

struct layer_params {
  std::vector<matrix> wq, wk, wv;  // per head, d_model x d_k
  std::vector<matrix> bq, bk, bv;  // per head, 1 x d_k
  std::vector<matrix> wo;          // per head, d_k x d_model (outputs summed)
  matrix bo;                       // 1 x d_model
  matrix ln1_g, ln1_b;
  matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  matrix ln2_g, ln2_b;
};

struct encoder_params {
  encoder_config config;
  matrix token_embed;  // vocab_size x d_model
  matrix pos_embed;    // n_max x d_model
  matrix embed_ln_g, embed_ln_b;
  std::vector<layer_params> layers;
  matrix cls_w, cls_b;  // d_model x 3, 1 x 3
  // extra_layer variant only (0x0 otherwise):
  matrix extra_w1, extra_b1;      // extra_hidden x d_model, 1 x extra_hidden
  matrix extra_w2, extra_b2;      // 1 x extra_hidden, 1 x 1
  matrix extra_cls_w, extra_cls_b;

  template <typename F>
  void for_each(F&& fn) {
    const_cast<const encoder_params*>(this)->for_each(
        [&](const std::string& name, const matrix& m) { fn(name, const_cast<matrix&>(m)); });
  }

  // Canonical (name, matrix) enumeration: drives leafing onto the tape,
  // optimizer state layout, and checkpoint serialization.
  template <typename F>
  void for_each(F&& fn) const {
    fn("token_embed", token_embed);
    fn("pos_embed", pos_embed);
    fn("embed_ln_g", embed_ln_g);
    fn("embed_ln_b", embed_ln_b);
    for (size_t l = 0; l < layers.size(); ++l) {
      const layer_params& lp = layers[l];
      const std::string prefix = "layer" + std::to_string(l) + ".";
      for (size_t h = 0; h < lp.wq.size(); ++h) {
        const std::string hp = prefix + "head" + std::to_string(h) + ".";
        fn(hp + "wq", lp.wq[h]);
        fn(hp + "wk", lp.wk[h]);
        fn(hp + "wv", lp.wv[h]);
        fn(hp + "bq", lp.bq[h]);
        fn(hp + "bk", lp.bk[h]);
        fn(hp + "bv", lp.bv[h]);
        fn(hp + "wo", lp.wo[h]);
      }
      fn(prefix + "bo", lp.bo);
      fn(prefix + "ln1_g", lp.ln1_g);
      fn(prefix + "ln1_b", lp.ln1_b);
      fn(prefix + "ffn_w1", lp.ffn_w1);
      fn(prefix + "ffn_b1", lp.ffn_b1);
      fn(prefix + "ffn_w2", lp.ffn_w2);
      fn(prefix + "ffn_b2", lp.ffn_b2);
      fn(prefix + "ln2_g", lp.ln2_g);
      fn(prefix + "ln2_b", lp.ln2_b);
    }
    fn("cls_w", cls_w);
    fn("cls_b", cls_b);
    if (config.variant == model_variant::extra_layer) {
      fn("extra_w1", extra_w1);
      fn("extra_b1", extra_b1);
      fn("extra_w2", extra_w2);
      fn("extra_b2", extra_b2);
      fn("extra_cls_w", extra_cls_w);
      fn("extra_cls_b", extra_cls_b);
    }
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const matrix& m) { ok = ok && m.all_finite(); });
    return ok;
  }

  // Zero every parameter of one attention head. A fully zeroed head produces
  // uniform attention, contributes nothing to the residual stream, and —
  // because every gradient path through it is multiplied by one of its own
  // zero weight matrices — receives exactly zero gradient, so plain
  // first-order training never revives it.
  void ablate_head(int layer, int head) {
    layer_params& lp = layers.at(layer);
    lp.wq.at(head).fill(0.0);
    lp.wk.at(head).fill(0.0);
    lp.wv.at(head).fill(0.0);
    lp.bq.at(head).fill(0.0);
    lp.bk.at(head).fill(0.0);
    lp.bv.at(head).fill(0.0);
    lp.wo.at(head).fill(0.0);
  }
};

inline encoder_params init_params(const encoder_config& cfg, uint64_t seed, double init_scale = 0.02) {
  cfg.validate();
  rng r(seed);
  auto randn = [&](int rows, int cols) {
    matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = init_scale * r.normal();
    return m;
  };
  encoder_params p;
  p.config = cfg;
  p.token_embed = randn(cfg.vocab_size, cfg.d_model);
  p.pos_embed = randn(cfg.n_max, cfg.d_model);
  p.embed_ln_g = matrix(1, cfg.d_model, 1.0);
  p.embed_ln_b = matrix(1, cfg.d_model, 0.0);
  p.layers.resize(cfg.num_layers);
  for (layer_params& lp : p.layers) {
    for (int h = 0; h < cfg.num_heads; ++h) {
      lp.wq.push_back(randn(cfg.d_model, cfg.d_k()));
      lp.wk.push_back(randn(cfg.d_model, cfg.d_k()));
      lp.wv.push_back(randn(cfg.d_model, cfg.d_k()));
      lp.bq.emplace_back(1, cfg.d_k(), 0.0);
      lp.bk.emplace_back(1, cfg.d_k(), 0.0);
      lp.bv.emplace_back(1, cfg.d_k(), 0.0);
      lp.wo.push_back(randn(cfg.d_k(), cfg.d_model));
    }
    lp.bo = matrix(1, cfg.d_model, 0.0);
    lp.ln1_g = matrix(1, cfg.d_model, 1.0);
    lp.ln1_b = matrix(1, cfg.d_model, 0.0);
    lp.ffn_w1 = randn(cfg.d_model, cfg.ffn_dim);
    lp.ffn_b1 = matrix(1, cfg.ffn_dim, 0.0);
    lp.ffn_w2 = randn(cfg.ffn_dim, cfg.d_model);
    lp.ffn_b2 = matrix(1, cfg.d_model, 0.0);
    lp.ln2_g = matrix(1, cfg.d_model, 1.0);
    lp.ln2_b = matrix(1, cfg.d_model, 0.0);
  }
  p.cls_w = randn(cfg.d_model, num_labels);
  p.cls_b = matrix(1, num_labels, 0.0);
  if (cfg.variant == model_variant::extra_layer) {
    p.extra_w1 = randn(cfg.extra_hidden, cfg.d_model);
    p.extra_b1 = matrix(1, cfg.extra_hidden, 0.0);
    p.extra_w2 = randn(1, cfg.extra_hidden);
    p.extra_b2 = matrix(1, 1, 0.0);
    p.extra_cls_w = randn(cfg.d_model, num_labels);
    p.extra_cls_b = matrix(1, num_labels, 0.0);
  }
  return p;
}

// Tape node ids of the parameters, addressed by the parameter matrix itself.
struct leafed_params {
  std::unordered_map<const matrix*, int> ids;
  int operator()(const matrix& m) const { return ids.at(&m); }
};

inline leafed_params leaf_params(tape& t, const encoder_params& p) {
  leafed_params lp;
  p.for_each([&](const std::string&, const matrix& m) { lp.ids[&m] = t.leaf(m); });
  return lp;
}

// Node ids of the per-example forward graph that losses and records hang off.
struct forward_nodes {
  int logits = -1;  // 1 x 3
  std::vector<std::vector<int>> cls_attention;  // [layer][head] -> 1 x valid_length
  int extra_attention = -1;                     // 1 x valid_length (extra_layer)
  int final_hidden = -1;                        // valid_length x d_model
};

inline forward_nodes build_forward(tape& t, const encoder_params& p, const leafed_params& lp,
                                   const encoded_sequence& seq) {
  const encoder_config& cfg = p.config;
  if (seq.n_max() != cfg.n_max)
    throw std::invalid_argument("build_forward: sequence n_max " + std::to_string(seq.n_max()) + " != config n_max " + std::to_string(cfg.n_max));
  const int n = seq.valid_length;
  std::vector<int> ids(seq.token_ids.begin(), seq.token_ids.begin() + n);
  for (int id : ids)
    if (id >= cfg.vocab_size)
      throw std::invalid_argument("build_forward: token id " + std::to_string(id) + " outside vocab of size " + std::to_string(cfg.vocab_size));
  std::vector<int> positions(n);
  for (int i = 0; i < n; ++i) positions[i] = i;

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));
  forward_nodes out;

  int x = t.add(t.embedding_rows(lp(p.token_embed), ids),
                t.embedding_rows(lp(p.pos_embed), positions));
  x = t.layer_norm(x, lp(p.embed_ln_g), lp(p.embed_ln_b));

  for (int l = 0; l < cfg.num_layers; ++l) {
    const layer_params& L = p.layers[l];
    std::vector<int> head_rows;
    std::vector<int> head_outputs;
    for (int h = 0; h < cfg.num_heads; ++h) {
      const int q = t.add_row_broadcast(t.matmul(x, lp(L.wq[h])), lp(L.bq[h]));
      const int k = t.add_row_broadcast(t.matmul(x, lp(L.wk[h])), lp(L.bk[h]));
      const int v = t.add_row_broadcast(t.matmul(x, lp(L.wv[h])), lp(L.bv[h]));
      const int attn = t.row_softmax(t.scale(t.matmul_nt(q, k), inv_sqrt_dk));
      head_rows.push_back(t.slice_rows(attn, 0, 1));
      head_outputs.push_back(t.matmul(t.matmul(attn, v), lp(L.wo[h])));
    }
    out.cls_attention.push_back(head_rows);
    int attn_out = head_outputs[0];
    for (size_t h = 1; h < head_outputs.size(); ++h) attn_out = t.add(attn_out, head_outputs[h]);
    attn_out = t.add_row_broadcast(attn_out, lp(L.bo));
    x = t.layer_norm(t.add(x, attn_out), lp(L.ln1_g), lp(L.ln1_b));
    const int ffn = t.add_row_broadcast(
        t.matmul(t.tanh_(t.add_row_broadcast(t.matmul(x, lp(L.ffn_w1)), lp(L.ffn_b1))), lp(L.ffn_w2)),
        lp(L.ffn_b2));
    x = t.layer_norm(t.add(x, ffn), lp(L.ln2_g), lp(L.ln2_b));
  }
  out.final_hidden = x;

  if (cfg.variant == model_variant::extra_layer) {
    // scores_i = sigmoid(w2 . tanh(W1 h_i + b1) + b2), normalized over the
    // valid positions; c = sum_i a_i h_i feeds the variant's own classifier.
    const int hidden = t.tanh_(t.add_row_broadcast(t.matmul_nt(x, lp(p.extra_w1)), lp(p.extra_b1)));
    const int raw = t.sigmoid(t.add_scalar_broadcast(t.matmul_nt(lp(p.extra_w2), hidden), lp(p.extra_b2)));
    out.extra_attention = t.normalize_rows(raw);
    const int c = t.matmul(out.extra_attention, x);
    out.logits = t.add(t.matmul(c, lp(p.extra_cls_w)), lp(p.extra_cls_b));
  } else {
    const int cls_hidden = t.slice_rows(x, 0, 1);
    out.logits = t.add(t.matmul(cls_hidden, lp(p.cls_w)), lp(p.cls_b));
  }
  return out;
}

// Recorded per-example attention: one [CLS] row per (layer, head), plus the
// pooling weights of the extra_layer variant when applicable. Rows cover the
// valid positions; PAD positions carry exactly zero (see padded_row).
struct attention_record {
  int valid_length = 0;
  std::vector<std::vector<std::vector<double>>> cls_rows;  // [layer][head][position]
  std::vector<double> extra_row;

  const std::vector<double>& row(int layer, int head) const { return cls_rows.at(layer).at(head); }

  std::vector<double> padded_row(int layer, int head, int n_max) const {
    std::vector<double> out(n_max, 0.0);
    const std::vector<double>& r = row(layer, head);
    std::copy(r.begin(), r.end(), out.begin());
    return out;
  }
};

struct forward_result {
  std::vector<double> logits;  // length 3
  attention_record attention;
  matrix final_hidden;  // valid_length x d_model
};

inline forward_result forward(const encoded_sequence& seq, const encoder_params& p) {
  tape t;
  const leafed_params lp = leaf_params(t, p);
  const forward_nodes nodes = build_forward(t, p, lp, seq);
  forward_result res;
  res.logits = t.value(nodes.logits).row(0);
  res.attention.valid_length = seq.valid_length;
  for (const auto& layer_rows : nodes.cls_attention) {
    std::vector<std::vector<double>> heads;
    for (int id : layer_rows) heads.push_back(t.value(id).row(0));
    res.attention.cls_rows.push_back(std::move(heads));
  }
  if (nodes.extra_attention >= 0) res.attention.extra_row = t.value(nodes.extra_attention).row(0);
  res.final_hidden = t.value(nodes.final_hidden);
  return res;
}

inline int argmax_class(const std::vector<double>& logits) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(logits.size()); ++j)
    if (logits[j] > logits[best]) best = j;  // strict: ties keep the lower index
  return best;
}

inline nli_label predict(const encoded_sequence& seq, const encoder_params& p) {
  return static_cast<nli_label>(argmax_class(forward(seq, p).logits));
}

// ---- checkpoint serialization (JSON, versioned) ----

inline nlohmann::json config_to_json(const encoder_config& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads}, {"d_model", c.d_model},
          {"ffn_dim", c.ffn_dim},       {"n_max", c.n_max},         {"vocab_size", c.vocab_size},
          {"extra_hidden", c.extra_hidden}, {"variant", variant_name(c.variant)}};
}

inline encoder_config config_from_json(const nlohmann::json& j) {
  encoder_config c;
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.n_max = j.at("n_max").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.extra_hidden = j.value("extra_hidden", c.d_model);
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

// `extra` entries (e.g. a config hash) are merged into the top-level object;
// load_checkpoint ignores keys it does not know.
inline void save_checkpoint(const encoder_params& p, const std::filesystem::path& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  if (extra.is_object())
    for (const auto& [key, value] : extra.items()) j[key] = value;
  j["format_version"] = 1;
  j["config"] = config_to_json(p.config);
  nlohmann::json params = nlohmann::json::object();
  p.for_each([&](const std::string& name, const matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int jc = 0; jc < m.cols(); ++jc) row.push_back(m(i, jc));
      rows.push_back(std::move(row));
    }
    params[name] = std::move(rows);
  });
  j["params"] = std::move(params);
  atomic_write_file(path, j.dump());
}

inline encoder_params load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (!j.contains("format_version") || j.at("format_version").get<int>() != 1)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported format version");
  const encoder_config cfg = config_from_json(j.at("config"));
  encoder_params p = init_params(cfg, 0);
  const nlohmann::json& params = j.at("params");
  p.for_each([&](const std::string& name, matrix& m) {
    if (!params.contains(name))
      throw std::runtime_error("checkpoint " + path.string() + ": missing parameter '" + name + "'");
    const nlohmann::json& rows = params.at(name);
    if (static_cast<int>(rows.size()) != m.rows())
      throw std::runtime_error("checkpoint " + path.string() + ": parameter '" + name + "' row count mismatch");
    for (int i = 0; i < m.rows(); ++i) {
      const nlohmann::json& row = rows.at(i);
      if (static_cast<int>(row.size()) != m.cols())
        throw std::runtime_error("checkpoint " + path.string() + ": parameter '" + name + "' column count mismatch");
      for (int jc = 0; jc < m.cols(); ++jc) m(i, jc) = row.at(jc).get<double>();
    }
  });
  if (!p.all_finite()) throw std::runtime_error("checkpoint " + path.string() + ": non-finite parameter");
  return p;
}

}  // namespace attnsup
