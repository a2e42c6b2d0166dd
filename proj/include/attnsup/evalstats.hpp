#pragma once
// Significance machinery for multi-seed experiments: accuracy evaluation,
// two-tailed t-tests (paired by seed by default, Welch's unpaired variant
// behind a flag) with p-values from the regularized incomplete beta
// function, Bonferroni correction, and a resumable experiment matrix that
// trains every (arm, seed) cell and reports per-dataset means, deltas
// against the baseline arm, and significance flags.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "attnsup/corpus.hpp"
#include "attnsup/encoder.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/supervise.hpp"

namespace attnsup {

inline double evaluate_accuracy(const encoder_params& params, const vocabulary& vocab,
                                const std::vector<nli_example>& examples) {
  if (examples.empty()) throw std::invalid_argument("evaluate_accuracy: empty example set");
  return accuracy(examples, params, vocab);
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta function I_x(a, b), evaluated with Lentz's
// continued-fraction algorithm (the classic betacf scheme, as used in
// KataGo's fancymath implementation). Converges far below the 1e-10
// relative tolerance the t-test machinery requires.
// ---------------------------------------------------------------------------

namespace detail {

inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double rel_eps = 1e-14;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < rel_eps) return h;
  }
  throw std::runtime_error("incomplete beta continued fraction failed to converge");
}

}  // namespace detail

inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("regularized_incomplete_beta: a, b must be positive");
  if (std::isnan(x)) throw std::invalid_argument("regularized_incomplete_beta: x is NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) +
                           std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(log_front);
  // The continued fraction converges fast only for x below the split point;
  // above it, use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a).
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// Two-tailed p-value for a t statistic with df degrees of freedom:
// p = I_{df/(df+t^2)}(df/2, 1/2).
inline double t_statistic_p_value(double t, double df) {
  if (df <= 0.0) throw std::invalid_argument("t_statistic_p_value: df must be positive");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw std::invalid_argument("t_statistic_p_value: t is NaN");
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct t_test_result {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  double mean_delta = 0.0;  // mean(a) - mean(b)
};

namespace detail {

inline void mean_and_sample_variance(const std::vector<double>& v, double& mean, double& var) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
}

}  // namespace detail

// Paired two-tailed t-test on per-seed differences a_i - b_i.
// Degenerate conventions when the differences have zero variance:
// zero mean -> (t=0, p=1); nonzero mean -> (t=+/-inf, p=0).
inline t_test_result paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: arm lengths differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least 2 paired observations");
  std::vector<double> diffs(a.size());
  for (size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
  t_test_result r;
  r.df = static_cast<double>(diffs.size() - 1);
  double mean = 0.0, var = 0.0;
  detail::mean_and_sample_variance(diffs, mean, var);
  r.mean_delta = mean;
  if (var == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(diffs.size()));
  r.p = t_statistic_p_value(r.t, r.df);
  return r;
}

// Welch's unpaired two-tailed t-test (unequal variances, lengths may differ);
// degrees of freedom via Welch–Satterthwaite.
inline t_test_result welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: need at least 2 observations per arm");
  double ma = 0.0, va = 0.0, mb = 0.0, vb = 0.0;
  detail::mean_and_sample_variance(a, ma, va);
  detail::mean_and_sample_variance(b, mb, vb);
  t_test_result r;
  r.mean_delta = ma - mb;
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  if (sa + sb == 0.0) {
    r.df = static_cast<double>(a.size() + b.size() - 2);
    if (r.mean_delta == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = r.mean_delta > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = r.mean_delta / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = t_statistic_p_value(r.t, r.df);
  return r;
}

// Paired by seed by default; Welch's unpaired variant behind the flag.
inline t_test_result two_tailed_t_test(const std::vector<double>& a, const std::vector<double>& b,
                                       bool paired = true) {
  return paired ? paired_t_test(a, b) : welch_t_test(a, b);
}

// flag_i = (p_i < 0.05 / m), strict.
inline std::vector<bool> bonferroni(const std::vector<double>& p_values, int m, double alpha = 0.05) {
  if (m < 1) throw std::invalid_argument("bonferroni: m must be >= 1");
  std::vector<bool> flags(p_values.size());
  for (size_t i = 0; i < p_values.size(); ++i) flags[i] = p_values[i] < alpha / static_cast<double>(m);
  return flags;
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

struct matrix_arm {
  std::string name;        // row label; arms[0] is the baseline reference
  std::string config_key;  // canonical configuration string; part of the cache key
};

// One training job: given an arm and a seed, return accuracy per dataset
// name. Must be pure (thread-safe) and must cover every requested dataset.
using matrix_runner = std::function<std::map<std::string, double>(const matrix_arm&, uint64_t)>;

struct seed_results {
  std::vector<std::string> arm_names;
  std::vector<std::string> datasets;
  std::vector<uint64_t> seeds;
  // accuracies[arm][dataset][i] corresponds to seeds[i]
  std::map<std::string, std::map<std::string, std::vector<double>>> accuracies;
};

struct significance_row {
  std::string arm;      // compared arm (baseline excluded)
  std::string dataset;
  double baseline_mean = 0.0;
  double arm_mean = 0.0;
  double mean_delta = 0.0;
  double t = 0.0;
  double p = 1.0;
  bool significant_uncorrected = false;  // p < alpha
  bool significant = false;              // p < alpha / m (Bonferroni-adjusted)
};

struct significance_report {
  std::vector<significance_row> rows;
  int m = 1;
  double alpha = 0.05;
  bool paired = true;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["bonferroni_m"] = m;
    j["paired"] = paired;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const significance_row& r : rows) {
      nlohmann::json row;
      row["arm"] = r.arm;
      row["dataset"] = r.dataset;
      row["baseline_mean"] = r.baseline_mean;
      row["arm_mean"] = r.arm_mean;
      row["mean_delta"] = r.mean_delta;
      row["t"] = r.t;
      row["p"] = r.p;
      row["significant_uncorrected"] = r.significant_uncorrected;
      row["significant"] = r.significant;
      rows_json.push_back(std::move(row));
    }
    j["rows"] = std::move(rows_json);
    return j;
  }
};

struct matrix_result {
  seed_results results;
  significance_report significance;
  std::string summary_csv;
  int runs_executed = 0;  // run_cell invocations this call (cache hits excluded)
  int cache_hits = 0;     // (arm, dataset, seed) cells loaded from the cache
};

// Cache key: content hash of (arm config, dataset id, seed).
inline std::string matrix_cache_key(const matrix_arm& arm, const std::string& dataset, uint64_t seed) {
  const std::string material = arm.config_key + "\x1f" + arm.name + "\x1f" + dataset + "\x1f" + std::to_string(seed);
  return hex64(fnv1a64(material));
}

namespace detail {

// Run fn(0..count-1) across `workers` threads. Each index writes only its own
// output slot, so the merge is deterministic regardless of worker count.
// Exceptions are captured and rethrown on the calling thread.
inline void parallel_for(size_t count, int workers, const std::function<void(size_t)>& fn) {
  if (count == 0) return;
  if (workers < 1) workers = 1;
  workers = static_cast<int>(std::min<size_t>(static_cast<size_t>(workers), count));
  if (workers == 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Significance report over completed seed results; arms[0] is the baseline.
inline significance_report summarize_significance(const seed_results& results, int bonferroni_m,
                                                  double alpha = 0.05, bool paired = true) {
  if (results.arm_names.empty()) throw std::invalid_argument("summarize_significance: no arms");
  significance_report report;
  report.m = bonferroni_m >= 1 ? bonferroni_m : static_cast<int>(results.datasets.size());
  if (report.m < 1) report.m = 1;
  report.alpha = alpha;
  report.paired = paired;
  const std::string& baseline = results.arm_names.front();
  for (size_t a = 1; a < results.arm_names.size(); ++a) {
    for (const std::string& ds : results.datasets) {
      const std::vector<double>& base_acc = results.accuracies.at(baseline).at(ds);
      const std::vector<double>& arm_acc = results.accuracies.at(results.arm_names[a]).at(ds);
      const t_test_result t = two_tailed_t_test(arm_acc, base_acc, paired);
      significance_row row;
      row.arm = results.arm_names[a];
      row.dataset = ds;
      double bm = 0.0, am = 0.0;
      for (double v : base_acc) bm += v;
      for (double v : arm_acc) am += v;
      row.baseline_mean = bm / static_cast<double>(base_acc.size());
      row.arm_mean = am / static_cast<double>(arm_acc.size());
      row.mean_delta = t.mean_delta;
      row.t = t.t;
      row.p = t.p;
      row.significant_uncorrected = t.p < alpha;
      row.significant = t.p < alpha / static_cast<double>(report.m);
      report.rows.push_back(row);
    }
  }
  return report;
}

// Summary CSV: one row per arm with per-dataset mean accuracy, then one delta
// row per non-baseline arm. Deltas carry a dagger when significant at alpha
// and a double dagger when the Bonferroni-adjusted flag is set.
inline std::string matrix_summary_csv(const seed_results& results, const significance_report& report) {
  std::string csv = "arm";
  for (const std::string& ds : results.datasets) csv += "," + csv_escape(ds);
  csv += "\n";
  for (const std::string& arm : results.arm_names) {
    csv += csv_escape(arm);
    for (const std::string& ds : results.datasets) {
      const std::vector<double>& acc = results.accuracies.at(arm).at(ds);
      double mean = 0.0;
      for (double v : acc) mean += v;
      mean /= static_cast<double>(acc.size());
      csv += "," + format_double(mean);
    }
    csv += "\n";
  }
  const std::string& baseline = results.arm_names.front();
  for (size_t a = 1; a < results.arm_names.size(); ++a) {
    const std::string& arm = results.arm_names[a];
    csv += csv_escape("delta " + arm + " - " + baseline);
    for (const std::string& ds : results.datasets) {
      for (const significance_row& row : report.rows) {
        if (row.arm != arm || row.dataset != ds) continue;
        std::string cell = format_double(row.mean_delta);
        if (row.significant) cell += "‡";  // double dagger: Bonferroni-adjusted
        else if (row.significant_uncorrected) cell += "†";  // dagger: uncorrected
        csv += "," + csv_escape(cell);
        break;
      }
    }
    csv += "\n";
  }
  return csv;
}

// Runs/loads every (arm, seed) training cell, aggregates per-dataset
// accuracies, and produces the significance report plus the summary CSV.
// When cache_dir is non-empty, each (arm, dataset, seed) accuracy is stored
// under its content-hash key, so a rerun loads completed cells instead of
// training; partially cached (arm, seed) pairs are re-run once and refilled.
inline matrix_result experiment_matrix(const std::vector<matrix_arm>& arms,
                                       const std::vector<std::string>& datasets,
                                       const std::vector<uint64_t>& seeds, const matrix_runner& run_cell,
                                       const std::filesystem::path& cache_dir = {}, int bonferroni_m = 0,
                                       double alpha = 0.05, bool paired = true, int workers = 1) {
  if (arms.empty()) throw std::invalid_argument("experiment_matrix: no arms");
  if (datasets.empty()) throw std::invalid_argument("experiment_matrix: no datasets");
  if (seeds.size() < 2) throw std::invalid_argument("experiment_matrix: need at least 2 seeds for t-tests");
  for (size_t i = 0; i < arms.size(); ++i)
    for (size_t j = i + 1; j < arms.size(); ++j)
      if (arms[i].name == arms[j].name)
        throw std::invalid_argument("experiment_matrix: duplicate arm name '" + arms[i].name + "'");

  matrix_result result;
  result.results.datasets = datasets;
  result.results.seeds = seeds;
  for (const matrix_arm& arm : arms) {
    result.results.arm_names.push_back(arm.name);
    for (const std::string& ds : datasets)
      result.results.accuracies[arm.name][ds].assign(seeds.size(), 0.0);
  }

  const bool use_cache = !cache_dir.empty();
  if (use_cache) std::filesystem::create_directories(cache_dir);
  const auto cell_path = [&](const matrix_arm& arm, const std::string& ds, uint64_t seed) {
    return cache_dir / ("cell_" + matrix_cache_key(arm, ds, seed) + ".json");
  };

  struct job {
    size_t arm_index;
    size_t seed_index;
  };
  std::vector<job> jobs;
  std::atomic<int> cache_hits{0};
  for (size_t a = 0; a < arms.size(); ++a) {
    for (size_t s = 0; s < seeds.size(); ++s) {
      bool complete = use_cache;
      if (use_cache) {
        for (const std::string& ds : datasets) {
          const std::filesystem::path path = cell_path(arms[a], ds, seeds[s]);
          if (!std::filesystem::exists(path)) {
            complete = false;
            break;
          }
        }
      }
      if (complete) {
        for (const std::string& ds : datasets) {
          const nlohmann::json j = nlohmann::json::parse(read_file(cell_path(arms[a], ds, seeds[s])));
          result.results.accuracies[arms[a].name][ds][s] = j.at("accuracy").get<double>();
          ++cache_hits;
        }
      } else {
        jobs.push_back({a, s});
      }
    }
  }

  std::vector<std::map<std::string, double>> job_results(jobs.size());
  detail::parallel_for(jobs.size(), workers,
                       [&](size_t i) { job_results[i] = run_cell(arms[jobs[i].arm_index], seeds[jobs[i].seed_index]); });
  result.runs_executed = static_cast<int>(jobs.size());
  result.cache_hits = cache_hits.load();

  for (size_t i = 0; i < jobs.size(); ++i) {
    const matrix_arm& arm = arms[jobs[i].arm_index];
    const uint64_t seed = seeds[jobs[i].seed_index];
    for (const std::string& ds : datasets) {
      const auto it = job_results[i].find(ds);
      if (it == job_results[i].end())
        throw std::runtime_error("experiment_matrix: run for arm '" + arm.name + "' seed " + std::to_string(seed) +
                                 " did not report dataset '" + ds + "'");
      result.results.accuracies[arm.name][ds][jobs[i].seed_index] = it->second;
      if (use_cache) {
        nlohmann::json j;
        j["key"] = matrix_cache_key(arm, ds, seed);
        j["arm"] = arm.name;
        j["config_key"] = arm.config_key;
        j["dataset"] = ds;
        j["seed"] = seed;
        j["accuracy"] = it->second;
        atomic_write_file(cell_path(arm, ds, seed), j.dump(2) + "\n");
      }
    }
  }

  result.significance = summarize_significance(result.results, bonferroni_m, alpha, paired);
  result.summary_csv = matrix_summary_csv(result.results, result.significance);
  return result;
}

}  // namespace attnsup
