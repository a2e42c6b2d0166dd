#pragma once

// Training with attention supervision: the auxiliary attention losses (MSE
// and KL against explanation-derived targets), the combined objective, the
// mini-batch training loop with early stopping, the lambda sweep, and the
// greedy head-selection procedure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnsup/autodiff.hpp"
#include "attnsup/corpus.hpp"
#include "attnsup/encoder.hpp"
#include "attnsup/explain.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/rng.hpp"

namespace attnsup {

enum class loss_kind { mse, kl };

inline const char* loss_kind_name(loss_kind k) { return k == loss_kind::mse ? "mse" : "kl"; }

inline loss_kind parse_loss_kind(const std::string& s) {
  if (s == "mse") return loss_kind::mse;
  if (s == "kl") return loss_kind::kl;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

struct supervision_config {
  double lambda = 1.0;
  std::vector<int> supervised_heads;  // head indices within the supervised layer
  loss_kind loss = loss_kind::mse;
  target_mode mode = target_mode::none;
  int supervised_layer = -1;  // -1 = final layer
  uint64_t shuffle_seed = 0;  // base seed for the shuffled target mode

  int resolve_layer(const encoder_config& enc) const {
    const int layer = supervised_layer < 0 ? enc.num_layers - 1 : supervised_layer;
    if (layer < 0 || layer >= enc.num_layers)
      throw std::invalid_argument("supervision_config: layer " + std::to_string(layer) + " outside model with " + std::to_string(enc.num_layers) + " layers");
    return layer;
  }

  void validate(const encoder_config& enc) const {
    if (lambda < 0.0) throw std::invalid_argument("supervision_config: lambda must be >= 0");
    resolve_layer(enc);
    if (mode != target_mode::none) {
      if (enc.variant == model_variant::existing_attention && supervised_heads.empty())
        throw std::invalid_argument("supervision_config: supervised head set must be non-empty");
      for (int h : supervised_heads)
        if (h < 0 || h >= enc.num_heads)
          throw std::invalid_argument("supervision_config: head index " + std::to_string(h) + " outside " + std::to_string(enc.num_heads) + " heads");
    }
  }
};

struct train_config {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience = 3;  // early-stop after this many epochs without dev improvement
  uint64_t seed = 0;
  // (layer, head) pairs zeroed right after initialization. A zeroed head
  // receives zero gradient through every path, so it stays dead for the whole
  // run — the hook used to isolate a designated head's value path.
  std::vector<std::pair<int, int>> ablate_heads;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || learning_rate <= 0.0 || patience < 1)
      throw std::invalid_argument("train_config: epochs >= 0, batch_size/patience >= 1, learning_rate > 0 required");
  }
};

// Auxiliary attention loss for one example, as a tape node:
//   MSE: (lambda/H) * sum_{h in S} sum_i (a_{h,i} - d_i)^2
//   KL:  (lambda/H) * sum_{h in S} KL(d || a_h)
// where H = |S|. Returns a constant zero node when there is no supervision
// signal (empty target or mode none), so the total loss is exactly the
// classification loss in that case.
inline int attention_loss(tape& t, const forward_nodes& nodes, const target_distribution& d,
                          const supervision_config& cfg, const encoder_config& enc) {
  if (cfg.mode == target_mode::none || d.empty_flag) return t.constant(matrix(1, 1, 0.0));

  std::vector<int> rows;
  if (enc.variant == model_variant::extra_layer) {
    rows.push_back(nodes.extra_attention);
  } else {
    const int layer = cfg.resolve_layer(enc);
    for (int h : cfg.supervised_heads) rows.push_back(nodes.cls_attention.at(layer).at(h));
  }
  if (rows.empty()) throw std::invalid_argument("attention_loss: no supervised attention rows");
  const int stacked = rows.size() == 1 ? rows[0] : t.concat_rows(rows);
  const int num_heads = static_cast<int>(rows.size());
  const int n = t.value(stacked).cols();
  if (n != d.length())
    throw std::invalid_argument("attention_loss: target length " + std::to_string(d.length()) + " does not match attention row length " + std::to_string(n));

  matrix target(num_heads, n);
  for (int h = 0; h < num_heads; ++h)
    for (int i = 0; i < n; ++i) target(h, i) = d.values[i];

  int loss;
  if (cfg.loss == loss_kind::mse) {
    loss = t.sum_all(t.square(t.sub(stacked, t.constant(target))));
  } else {
    loss = t.kl_vs_target(stacked, target);
  }
  return t.scale(loss, cfg.lambda / num_heads);
}

// Classification loss plus the attention term for one example.
inline int total_loss(tape& t, const forward_nodes& nodes, nli_label gold,
                      const target_distribution& d, const supervision_config& cfg,
                      const encoder_config& enc) {
  const int nli = t.softmax_cross_entropy(nodes.logits, {static_cast<int>(gold)});
  return t.add(nli, attention_loss(t, nodes, d, cfg, enc));
}

struct epoch_metrics {
  int epoch = 0;
  double train_loss = 0.0;            // mean total loss per batch
  double train_nli_loss = 0.0;        // mean classification term
  double train_attention_loss = 0.0;  // mean attention term
  double dev_accuracy = 0.0;
};

struct run_report {
  encoder_config enc;
  supervision_config sup;
  train_config tr;
  std::vector<epoch_metrics> epochs;
  double best_dev_accuracy = 0.0;
  int best_epoch = -1;
  bool stopped_early = false;
  std::map<std::string, double> final_metrics;  // named evaluation results

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"]["encoder"] = config_to_json(enc);
    j["config"]["supervision"] = {
        {"lambda", sup.lambda},
        {"supervised_heads", sup.supervised_heads},
        {"loss", loss_kind_name(sup.loss)},
        {"target_mode", target_mode_name(sup.mode)},
        {"supervised_layer", sup.supervised_layer},
        {"shuffle_seed", sup.shuffle_seed},
    };
    j["config"]["train"] = {
        {"epochs", tr.epochs},       {"batch_size", tr.batch_size},
        {"learning_rate", tr.learning_rate}, {"adam_beta1", tr.adam_beta1},
        {"adam_beta2", tr.adam_beta2},       {"adam_eps", tr.adam_eps},
        {"patience", tr.patience},   {"seed", tr.seed},
        {"ablate_heads", tr.ablate_heads},
    };
    j["seed"] = tr.seed;
    nlohmann::json eps = nlohmann::json::array();
    for (const epoch_metrics& e : epochs)
      eps.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_nli_loss", e.train_nli_loss},
                     {"train_attention_loss", e.train_attention_loss},
                     {"dev_accuracy", e.dev_accuracy}});
    j["epochs"] = std::move(eps);
    j["best_dev_accuracy"] = best_dev_accuracy;
    j["best_epoch"] = best_epoch;
    j["stopped_early"] = stopped_early;
    j["final_metrics"] = final_metrics;
    return j;
  }
};

struct dataset_splits {
  std::vector<nli_example> train;
  std::vector<nli_example> dev;
  std::vector<nli_example> test;
};

// Per-example shuffle seed for the shuffled target mode: derived from the
// base seed and the example's index so reruns are reproducible.
inline uint64_t example_shuffle_seed(uint64_t base, size_t index) {
  uint64_t z = base ^ (0x9e3779b97f4a7c15ull * (index + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double accuracy(const std::vector<nli_example>& examples, const encoder_params& params,
                       const vocabulary& vocab) {
  if (examples.empty()) return 0.0;
  int correct = 0;
  for (const nli_example& ex : examples) {
    const encoded_sequence seq = encode_pair(ex, vocab, params.config.n_max);
    if (predict(seq, params) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

class adam_optimizer {
 public:
  adam_optimizer(const train_config& cfg, const encoder_params& params) : cfg_(cfg) {
    params.for_each([&](const std::string&, const matrix& m) {
      m_.emplace_back(m.rows(), m.cols());
      v_.emplace_back(m.rows(), m.cols());
    });
  }

  void step(encoder_params& params, const std::vector<matrix>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    size_t k = 0;
    params.for_each([&](const std::string&, matrix& p) {
      const matrix& g = grads[k];
      matrix& m = m_[k];
      matrix& v = v_[k];
      for (int i = 0; i < p.rows(); ++i) {
        for (int j = 0; j < p.cols(); ++j) {
          m(i, j) = cfg_.adam_beta1 * m(i, j) + (1.0 - cfg_.adam_beta1) * g(i, j);
          v(i, j) = cfg_.adam_beta2 * v(i, j) + (1.0 - cfg_.adam_beta2) * g(i, j) * g(i, j);
          p(i, j) -= cfg_.learning_rate * (m(i, j) / bc1) / (std::sqrt(v(i, j) / bc2) + cfg_.adam_eps);
        }
      }
      ++k;
    });
  }

 private:
  train_config cfg_;
  std::vector<matrix> m_, v_;
  long long t_ = 0;
};

struct train_result {
  encoder_params params;  // best-dev checkpoint
  run_report report;
  vocabulary vocab;
};

// Mini-batch training on the combined objective. Deterministic given the
// seed: initialization, batch order, and shuffled targets all derive from it.
// The vocabulary is built from the training split only. Returns the
// checkpoint with the best dev accuracy (early stopping with patience).
inline train_result train(const dataset_splits& splits, encoder_config enc_cfg,
                          const supervision_config& sup_cfg, const train_config& tr_cfg,
                          const stopword_lexicon& stopwords, int vocab_min_freq = 1) {
  tr_cfg.validate();
  if (splits.train.empty()) throw std::invalid_argument("train: empty training split");

  train_result result;
  result.vocab = vocabulary::build(splits.train, vocab_min_freq);
  enc_cfg.vocab_size = result.vocab.size();
  enc_cfg.validate();
  sup_cfg.validate(enc_cfg);

  supervision_config sup = sup_cfg;
  if (sup.mode == target_mode::shuffled && sup.shuffle_seed == 0)
    sup.shuffle_seed = tr_cfg.seed + 1;

  // Precompute encodings and supervision targets once; they are fixed per run.
  std::vector<encoded_sequence> train_seqs;
  std::vector<target_distribution> train_targets;
  train_seqs.reserve(splits.train.size());
  train_targets.reserve(splits.train.size());
  for (size_t i = 0; i < splits.train.size(); ++i) {
    train_seqs.push_back(encode_pair(splits.train[i], result.vocab, enc_cfg.n_max));
    train_targets.push_back(make_target(splits.train[i], train_seqs.back(), sup.mode, stopwords,
                                        example_shuffle_seed(sup.shuffle_seed, i)));
  }

  rng r(tr_cfg.seed);
  encoder_params params = init_params(enc_cfg, r.next_u64());
  for (const auto& [layer, head] : tr_cfg.ablate_heads) {
    if (layer < 0 || layer >= enc_cfg.num_layers || head < 0 || head >= enc_cfg.num_heads)
      throw std::invalid_argument("train: ablated head (" + std::to_string(layer) + ", " + std::to_string(head) + ") outside the model");
    params.ablate_head(layer, head);
  }
  adam_optimizer opt(tr_cfg, params);

  run_report& report = result.report;
  report.enc = enc_cfg;
  report.sup = sup;
  report.tr = tr_cfg;

  encoder_params best_params = params;
  double best_dev = -1.0;
  int best_epoch = -1;
  int epochs_since_best = 0;

  std::vector<int> order(splits.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= tr_cfg.epochs; ++epoch) {
    r.shuffle(order);
    double epoch_total = 0.0, epoch_nli = 0.0, epoch_attn = 0.0;
    int batches = 0;
    tape t;
    for (size_t start = 0; start < order.size(); start += tr_cfg.batch_size) {
      const size_t end = std::min(order.size(), start + tr_cfg.batch_size);
      const int batch = static_cast<int>(end - start);
      t.reset();
      const leafed_params lp = leaf_params(t, params);

      std::vector<int> logit_rows;
      std::vector<int> labels;
      int attn_sum = -1;
      for (size_t k = start; k < end; ++k) {
        const int idx = order[k];
        const forward_nodes nodes = build_forward(t, params, lp, train_seqs[idx]);
        logit_rows.push_back(nodes.logits);
        labels.push_back(static_cast<int>(splits.train[idx].label));
        const int a = attention_loss(t, nodes, train_targets[idx], sup, enc_cfg);
        attn_sum = attn_sum < 0 ? a : t.add(attn_sum, a);
      }
      const int nli = t.softmax_cross_entropy(t.concat_rows(logit_rows), labels);
      const int attn = t.scale(attn_sum, 1.0 / batch);
      const int loss = t.add(nli, attn);

      const double loss_value = t.value(loss)(0, 0);
      if (!std::isfinite(loss_value))
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " batch " + std::to_string(batches + 1) + ": non-finite loss");
      epoch_total += loss_value;
      epoch_nli += t.value(nli)(0, 0);
      epoch_attn += t.value(attn)(0, 0);
      ++batches;

      t.backward(loss);
      std::vector<matrix> grads;
      params.for_each([&](const std::string&, const matrix& m) { grads.push_back(t.grad(lp(m))); });
      opt.step(params, grads);
    }

    epoch_metrics em;
    em.epoch = epoch;
    em.train_loss = epoch_total / std::max(1, batches);
    em.train_nli_loss = epoch_nli / std::max(1, batches);
    em.train_attention_loss = epoch_attn / std::max(1, batches);
    em.dev_accuracy = accuracy(splits.dev, params, result.vocab);
    report.epochs.push_back(em);

    if (em.dev_accuracy > best_dev) {
      best_dev = em.dev_accuracy;
      best_epoch = epoch;
      best_params = params;
      epochs_since_best = 0;
    } else if (++epochs_since_best >= tr_cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }

  if (tr_cfg.epochs == 0) {
    best_params = params;
    best_dev = accuracy(splits.dev, params, result.vocab);
    best_epoch = 0;
  }
  report.best_dev_accuracy = best_dev;
  report.best_epoch = best_epoch;
  result.params = std::move(best_params);
  return result;
}

// ---- lambda sweep ----

struct sweep_cell {
  double lambda = 0.0;
  uint64_t seed = 0;
  double dev_accuracy = 0.0;
};

struct lambda_sweep_result {
  std::vector<sweep_cell> cells;              // one per (lambda, seed)
  std::map<double, double> mean_dev_accuracy; // lambda -> mean over seeds
  double best_lambda = 0.0;

  std::string to_csv() const {
    std::string out = "lambda,seed,dev_acc\n";
    for (const sweep_cell& c : cells)
      out += format_double(c.lambda) + "," + std::to_string(c.seed) + "," + format_double(c.dev_accuracy) + "\n";
    return out;
  }
};

inline std::vector<double> default_lambda_grid() {
  // 0.2 .. 1.8 in steps of 0.2 (9 values).
  std::vector<double> grid;
  for (int i = 1; i <= 9; ++i) grid.push_back(0.2 * i);
  return grid;
}

inline lambda_sweep_result sweep_lambda(const dataset_splits& splits, const encoder_config& enc_cfg,
                                        const supervision_config& sup_base, const train_config& tr_base,
                                        const std::vector<double>& grid,
                                        const std::vector<uint64_t>& seeds,
                                        const stopword_lexicon& stopwords) {
  if (grid.empty()) throw std::invalid_argument("sweep_lambda: empty grid");
  if (seeds.empty()) throw std::invalid_argument("sweep_lambda: empty seed list");
  std::vector<double> sorted_grid = grid;
  std::sort(sorted_grid.begin(), sorted_grid.end());
  sorted_grid.erase(std::unique(sorted_grid.begin(), sorted_grid.end()), sorted_grid.end());
  lambda_sweep_result result;
  for (double lambda : sorted_grid) {
    double sum = 0.0;
    for (uint64_t seed : seeds) {
      supervision_config sup = sup_base;
      sup.lambda = lambda;
      train_config tr = tr_base;
      tr.seed = seed;
      const train_result run = train(splits, enc_cfg, sup, tr, stopwords);
      result.cells.push_back({lambda, seed, run.report.best_dev_accuracy});
      sum += run.report.best_dev_accuracy;
    }
    result.mean_dev_accuracy[lambda] = sum / seeds.size();
  }
  result.best_lambda = sorted_grid[0];
  for (double lambda : sorted_grid)  // strict >: ties keep the smaller lambda (ascending order)
    if (result.mean_dev_accuracy.at(lambda) > result.mean_dev_accuracy.at(result.best_lambda))
      result.best_lambda = lambda;
  return result;
}

// ---- greedy head selection ----

struct head_selection_result {
  std::vector<double> per_head_mean_dev;              // index = head
  std::vector<std::vector<double>> per_head_seed_dev; // [head][seed index]
  std::vector<int> ranking;                           // heads, best first
  std::vector<int> k_grid;
  std::map<int, double> per_k_mean_dev;
  std::vector<std::vector<double>> per_k_seed_dev;    // aligned with k_grid
  int chosen_k = 0;
  std::vector<int> chosen_subset;
  int phase1_runs = 0;
  int phase2_runs = 0;
  int runs_executed = 0;

  std::string to_csv() const {
    std::string out = "condition,seed_index,dev_acc\n";
    for (size_t h = 0; h < per_head_seed_dev.size(); ++h)
      for (size_t s = 0; s < per_head_seed_dev[h].size(); ++s)
        out += "head=" + std::to_string(h) + "," + std::to_string(s) + "," + format_double(per_head_seed_dev[h][s]) + "\n";
    for (size_t ki = 0; ki < k_grid.size(); ++ki)
      for (size_t s = 0; s < per_k_seed_dev[ki].size(); ++s)
        out += "k=" + std::to_string(k_grid[ki]) + "," + std::to_string(s) + "," + format_double(per_k_seed_dev[ki][s]) + "\n";
    return out;
  }
};

inline std::vector<int> default_k_grid(int num_heads) {
  std::vector<int> grid;
  for (int k : {1, 3, 6, 9, 12})
    if (k >= 1 && k <= num_heads) grid.push_back(k);
  return grid;
}

// Phase 1 supervises each head alone over the seeds and ranks heads by mean
// dev accuracy (ties -> lower head index). Phase 2 trains the top-K subsets
// for each K in the grid and keeps the K with the best mean dev accuracy
// (ties -> smaller K).
inline head_selection_result greedy_head_selection(const dataset_splits& splits,
                                                   const encoder_config& enc_cfg,
                                                   const supervision_config& sup_base,
                                                   const train_config& tr_base,
                                                   const std::vector<uint64_t>& seeds,
                                                   const stopword_lexicon& stopwords,
                                                   std::vector<int> k_grid = {}) {
  if (seeds.empty()) throw std::invalid_argument("greedy_head_selection: empty seed list");
  if (k_grid.empty()) k_grid = default_k_grid(enc_cfg.num_heads);
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
  for (int k : k_grid)
    if (k < 1 || k > enc_cfg.num_heads)
      throw std::invalid_argument("greedy_head_selection: K=" + std::to_string(k) + " outside [1, " + std::to_string(enc_cfg.num_heads) + "]");

  head_selection_result result;
  result.k_grid = k_grid;

  auto run_condition = [&](const std::vector<int>& heads) {
    std::vector<double> accs;
    for (uint64_t seed : seeds) {
      supervision_config sup = sup_base;
      sup.supervised_heads = heads;
      train_config tr = tr_base;
      tr.seed = seed;
      const train_result run = train(splits, enc_cfg, sup, tr, stopwords);
      accs.push_back(run.report.best_dev_accuracy);
      ++result.runs_executed;
    }
    return accs;
  };

  for (int h = 0; h < enc_cfg.num_heads; ++h) {
    const std::vector<double> accs = run_condition({h});
    double mean = 0.0;
    for (double a : accs) mean += a;
    result.per_head_seed_dev.push_back(accs);
    result.per_head_mean_dev.push_back(mean / accs.size());
  }

  result.phase1_runs = result.runs_executed;

  result.ranking.resize(enc_cfg.num_heads);
  for (int h = 0; h < enc_cfg.num_heads; ++h) result.ranking[h] = h;
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](int a, int b) {
    if (result.per_head_mean_dev[a] != result.per_head_mean_dev[b])
      return result.per_head_mean_dev[a] > result.per_head_mean_dev[b];
    return a < b;
  });

  for (int k : k_grid) {
    const std::vector<int> subset(result.ranking.begin(), result.ranking.begin() + k);
    const std::vector<double> accs = run_condition(subset);
    double mean = 0.0;
    for (double a : accs) mean += a;
    result.per_k_seed_dev.push_back(accs);
    result.per_k_mean_dev[k] = mean / accs.size();
  }

  result.phase2_runs = result.runs_executed - result.phase1_runs;

  result.chosen_k = k_grid[0];
  for (int k : k_grid)  // strict >: ties keep the smaller K (ascending order)
    if (result.per_k_mean_dev.at(k) > result.per_k_mean_dev.at(result.chosen_k))
      result.chosen_k = k;
  result.chosen_subset.assign(result.ranking.begin(), result.ranking.begin() + result.chosen_k);
  return result;
}

}  // namespace attnsup
