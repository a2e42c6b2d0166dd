// attnsup — command-line front end.
//
// Subcommands: synth, train, select-heads, sweep-lambda, eval, rationale,
// analyze, matrix, report. Every command reads one key=value config file
// (flags override individual fields), writes its artifacts atomically under
// the output directory, and records a manifest with the config hash, seeds,
// versions, and wall-clock time. Timestamps live only in manifests so that
// reruns with identical config and seed produce byte-identical artifacts.
//
// Exit codes: 0 success, 1 internal error, 2 config/usage error, 3 I/O or
// runtime error, 4 input-validation error.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnsup/analyze.hpp"
#include "attnsup/corpus.hpp"
#include "attnsup/encoder.hpp"
#include "attnsup/evalstats.hpp"
#include "attnsup/explain.hpp"
#include "attnsup/ioutil.hpp"
#include "attnsup/rationale.hpp"
#include "attnsup/supervise.hpp"
#include "attnsup/synth.hpp"

namespace {

using namespace attnsup;
namespace fs = std::filesystem;

constexpr const char* kVersion = "1.0.0";

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- config file ------------------------------------------------------------

using config_map = std::map<std::string, std::string>;

// Every known key with its default. "" marks optional paths and lists that
// fall back to built-in defaults.
const config_map& config_defaults() {
  static const config_map defaults = {
      // paths
      {"train_file", ""},
      {"dev_file", ""},
      {"test_file", ""},
      {"ood_file", ""},
      {"stopword_file", ""},
      {"lexicon_file", ""},
      {"checkpoint_file", ""},
      {"vocab_file", ""},
      {"compare_checkpoint_file", ""},
      {"output_dir", "out"},
      // encoder
      {"num_layers", "2"},
      {"num_heads", "4"},
      {"d_model", "64"},
      {"ffn_dim", "128"},
      {"n_max", "32"},
      {"extra_hidden", "0"},  // 0 -> d_model
      {"variant", "existing_attention"},
      // supervision
      {"lambda", "1"},
      {"target_mode", "none"},
      {"loss", "mse"},
      {"supervised_layer", "-1"},
      {"supervised_heads", ""},  // empty -> all heads when a mode needs them
      {"shuffle_seed", "0"},
      // training
      {"epochs", "8"},
      {"batch_size", "32"},
      {"learning_rate", "0.001"},
      {"patience", "3"},
      {"seed", "1"},
      {"vocab_min_freq", "1"},
      {"ablate_heads", ""},  // "layer:head,layer:head" zeroed at init
      // experiments
      {"seeds", "1,2,3,4,5"},
      {"arms", "baseline,supervised,shuffled"},
      {"lambda_grid", ""},     // empty -> built-in grid
      {"k_grid", ""},          // empty -> built-in grid
      {"threshold_grid", ""},  // empty -> built-in grid
      {"bonferroni_m", "0"},   // 0 -> number of datasets
      {"alpha", "0.05"},
      {"heatmap_examples", "2"},
      // synthetic corpus
      {"synth_train_count", "2000"},
      {"synth_dev_count", "500"},
      {"synth_test_count", "500"},
      {"synth_ood_count", "500"},
      {"synth_filler_vocab", "60"},
      {"synth_ood_filler_vocab", "60"},
      {"synth_premise_fillers_min", "6"},
      {"synth_premise_fillers_max", "10"},
      {"synth_hypothesis_fillers_min", "2"},
      {"synth_hypothesis_fillers_max", "4"},
      {"synth_markers_per_class", "1"},
      {"synth_noise_rate", "0.15"},
      {"synth_seed", "1"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key = value lines; blank lines and lines starting with '#' are ignored.
config_map parse_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw config_error("config file '" + path.string() + "' does not exist");
  config_map out;
  const std::vector<std::string> lines = read_lines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(path.string() + " line " + std::to_string(i + 1) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (config_defaults().count(key) == 0)
      throw config_error(path.string() + " line " + std::to_string(i + 1) + ": unknown config key '" + key + "'");
    out[key] = value;
  }
  return out;
}

const std::string& get_raw(const config_map& cfg, const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw config_error("unknown config key '" + key + "'");
  return it->second;
}

long long get_int(const config_map& cfg, const std::string& key) {
  const std::string& v = get_raw(cfg, key);
  try {
    size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return n;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

double get_double(const config_map& cfg, const std::string& key) {
  const std::string& v = get_raw(cfg, key);
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) parts.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string t = trim(cur);
  if (!t.empty()) parts.push_back(t);
  return parts;
}

std::vector<uint64_t> get_u64_list(const config_map& cfg, const std::string& key) {
  std::vector<uint64_t> out;
  for (const std::string& p : split_list(get_raw(cfg, key))) {
    try {
      out.push_back(std::stoull(p));
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected comma-separated integers, got '" + p + "'");
    }
  }
  return out;
}

std::vector<int> get_int_list(const config_map& cfg, const std::string& key) {
  std::vector<int> out;
  for (const std::string& p : split_list(get_raw(cfg, key))) {
    try {
      out.push_back(std::stoi(p));
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected comma-separated integers, got '" + p + "'");
    }
  }
  return out;
}

std::vector<double> get_double_list(const config_map& cfg, const std::string& key) {
  std::vector<double> out;
  for (const std::string& p : split_list(get_raw(cfg, key))) {
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected comma-separated numbers, got '" + p + "'");
    }
  }
  return out;
}

// "layer:head,layer:head"
std::vector<std::pair<int, int>> get_head_pairs(const config_map& cfg, const std::string& key) {
  std::vector<std::pair<int, int>> out;
  for (const std::string& p : split_list(get_raw(cfg, key))) {
    const size_t colon = p.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument("");
      out.emplace_back(std::stoi(p.substr(0, colon)), std::stoi(p.substr(colon + 1)));
    } catch (const std::exception&) {
      throw config_error("config key '" + key + "': expected layer:head pairs, got '" + p + "'");
    }
  }
  return out;
}

// The config hash covers every key except the seed values, so artifacts from
// different seeds of one experiment share a hash while any other config change
// produces a new one.
std::string config_hash(const config_map& cfg) {
  std::string canonical;
  for (const auto& [key, value] : cfg) {
    if (key == "seed" || key == "seeds") continue;
    canonical += key + "=" + value + "\n";
  }
  return hex64(fnv1a64(canonical));
}

// ---- typed config builders --------------------------------------------------

encoder_config make_encoder_config(const config_map& cfg) {
  encoder_config e;
  e.num_layers = static_cast<int>(get_int(cfg, "num_layers"));
  e.num_heads = static_cast<int>(get_int(cfg, "num_heads"));
  e.d_model = static_cast<int>(get_int(cfg, "d_model"));
  e.ffn_dim = static_cast<int>(get_int(cfg, "ffn_dim"));
  e.n_max = static_cast<int>(get_int(cfg, "n_max"));
  const int extra = static_cast<int>(get_int(cfg, "extra_hidden"));
  e.extra_hidden = extra > 0 ? extra : e.d_model;
  try {
    e.variant = parse_variant(get_raw(cfg, "variant"));
  } catch (const std::invalid_argument& err) {
    throw config_error(std::string("config key 'variant': ") + err.what());
  }
  return e;
}

supervision_config make_supervision_config(const config_map& cfg, const encoder_config& enc) {
  supervision_config s;
  s.lambda = get_double(cfg, "lambda");
  try {
    s.mode = parse_target_mode(get_raw(cfg, "target_mode"));
  } catch (const std::invalid_argument& err) {
    throw config_error(std::string("config key 'target_mode': ") + err.what());
  }
  try {
    s.loss = parse_loss_kind(get_raw(cfg, "loss"));
  } catch (const std::invalid_argument& err) {
    throw config_error(std::string("config key 'loss': ") + err.what());
  }
  s.supervised_layer = static_cast<int>(get_int(cfg, "supervised_layer"));
  s.shuffle_seed = static_cast<uint64_t>(get_int(cfg, "shuffle_seed"));
  s.supervised_heads = get_int_list(cfg, "supervised_heads");
  if (s.supervised_heads.empty() && s.mode != target_mode::none &&
      enc.variant == model_variant::existing_attention)
    for (int h = 0; h < enc.num_heads; ++h) s.supervised_heads.push_back(h);
  return s;
}

train_config make_train_config(const config_map& cfg) {
  train_config t;
  t.epochs = static_cast<int>(get_int(cfg, "epochs"));
  t.batch_size = static_cast<int>(get_int(cfg, "batch_size"));
  t.learning_rate = get_double(cfg, "learning_rate");
  t.patience = static_cast<int>(get_int(cfg, "patience"));
  t.seed = static_cast<uint64_t>(get_int(cfg, "seed"));
  t.ablate_heads = get_head_pairs(cfg, "ablate_heads");
  return t;
}

synthetic_spec make_synthetic_spec(const config_map& cfg) {
  synthetic_spec s;
  s.train_count = static_cast<int>(get_int(cfg, "synth_train_count"));
  s.dev_count = static_cast<int>(get_int(cfg, "synth_dev_count"));
  s.test_count = static_cast<int>(get_int(cfg, "synth_test_count"));
  s.ood_count = static_cast<int>(get_int(cfg, "synth_ood_count"));
  s.filler_vocab = static_cast<int>(get_int(cfg, "synth_filler_vocab"));
  s.ood_filler_vocab = static_cast<int>(get_int(cfg, "synth_ood_filler_vocab"));
  s.premise_fillers_min = static_cast<int>(get_int(cfg, "synth_premise_fillers_min"));
  s.premise_fillers_max = static_cast<int>(get_int(cfg, "synth_premise_fillers_max"));
  s.hypothesis_fillers_min = static_cast<int>(get_int(cfg, "synth_hypothesis_fillers_min"));
  s.hypothesis_fillers_max = static_cast<int>(get_int(cfg, "synth_hypothesis_fillers_max"));
  s.markers_per_class = static_cast<int>(get_int(cfg, "synth_markers_per_class"));
  s.noise_rate = get_double(cfg, "synth_noise_rate");
  s.seed = static_cast<uint64_t>(get_int(cfg, "synth_seed"));
  return s;
}

// ---- shared loaders ----------------------------------------------------------

fs::path require_file(const config_map& cfg, const std::string& key) {
  const std::string& v = get_raw(cfg, key);
  if (v.empty()) throw config_error("config key '" + key + "' is required for this command");
  if (!fs::exists(v)) throw config_error("config key '" + key + "': file '" + v + "' does not exist");
  return v;
}

std::optional<fs::path> optional_file(const config_map& cfg, const std::string& key) {
  const std::string& v = get_raw(cfg, key);
  if (v.empty()) return std::nullopt;
  if (!fs::exists(v)) throw config_error("config key '" + key + "': file '" + v + "' does not exist");
  return fs::path(v);
}

dataset_splits load_splits(const config_map& cfg) {
  dataset_splits splits;
  splits.train = load_dataset(require_file(cfg, "train_file"));
  splits.dev = load_dataset(require_file(cfg, "dev_file"));
  if (auto p = optional_file(cfg, "test_file")) splits.test = load_dataset(*p);
  return splits;
}

stopword_lexicon load_stopwords(const config_map& cfg) {
  if (auto p = optional_file(cfg, "stopword_file")) return stopword_lexicon::load(*p);
  return stopword_lexicon{};
}

int worker_count() {
  if (const char* env = std::getenv("ATTNSUP_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// ---- artifact helpers ---------------------------------------------------------

void write_json_artifact(const fs::path& path, nlohmann::json j, const std::string& hash) {
  j["config_hash"] = hash;
  fs::create_directories(path.parent_path());
  atomic_write_file(path, j.dump(2) + "\n");
}

void write_csv_artifact(const fs::path& path, const std::string& csv, const std::string& hash) {
  fs::create_directories(path.parent_path());
  atomic_write_file(path, "# config_hash=" + hash + "\n" + csv);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// The manifest is the only artifact carrying timestamps and wall-clock time;
// report and determinism checks skip *_manifest.json files.
void write_manifest(const fs::path& outdir, const std::string& command, const std::string& hash,
                    nlohmann::json extra, double wall_seconds) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = hash;
  j["versions"] = {{"attnsup", kVersion}, {"compiler", __VERSION__}};
  j["wall_clock_seconds"] = wall_seconds;
  j["finished_at_utc"] = utc_timestamp();
  if (extra.is_object())
    for (const auto& [key, value] : extra.items()) j[key] = value;
  std::string name = command;
  for (char& c : name)
    if (c == '-') c = '_';
  fs::create_directories(outdir);
  atomic_write_file(outdir / (name + "_manifest.json"), j.dump(2) + "\n");
}

nlohmann::json prf_to_json(const segment_prf& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
          {"tp", p.tp},               {"fp", p.fp},         {"fn", p.fn},
          {"support", p.support}};
}

nlohmann::json token_prf_to_json(const token_prf& p) {
  return {{"premise", prf_to_json(p.premise)}, {"hypothesis", prf_to_json(p.hypothesis)}};
}

// ---- arm presets ----------------------------------------------------------------

struct arm_settings {
  encoder_config enc;
  supervision_config sup;
  train_config tr;
};

// Named experiment arms. The base config supplies lambda, heads, layer, and
// training hyperparameters; the arm name picks the target mode and variant.
arm_settings make_arm(const std::string& name, const config_map& cfg) {
  arm_settings a;
  a.enc = make_encoder_config(cfg);
  a.tr = make_train_config(cfg);

  config_map armed = cfg;
  if (name == "baseline") {
    armed["target_mode"] = "none";
  } else if (name == "supervised" || name == "combined") {
    armed["target_mode"] = "combined";
  } else if (name == "freetext") {
    armed["target_mode"] = "freetext";
  } else if (name == "highlights") {
    armed["target_mode"] = "highlights";
  } else if (name == "shuffled") {
    armed["target_mode"] = "shuffled";
  } else if (name == "kl-variant") {
    armed["target_mode"] = "combined";
    armed["loss"] = "kl";
  } else if (name == "extra-layer") {
    armed["target_mode"] = "combined";
    a.enc.variant = model_variant::extra_layer;
  } else {
    throw config_error("unknown arm '" + name +
                       "' (known: baseline, supervised, freetext, highlights, shuffled, "
                       "kl-variant, extra-layer)");
  }
  a.sup = make_supervision_config(armed, a.enc);
  return a;
}

// Cache key material for one arm: everything that affects a trained cell
// except the seed (the cache key adds the seed separately).
std::string arm_config_key(const arm_settings& a, const config_map& cfg) {
  nlohmann::json j;
  j["encoder"] = config_to_json(a.enc);
  j["supervision"] = {{"lambda", a.sup.lambda},
                      {"heads", a.sup.supervised_heads},
                      {"loss", loss_kind_name(a.sup.loss)},
                      {"mode", target_mode_name(a.sup.mode)},
                      {"layer", a.sup.supervised_layer},
                      {"shuffle_seed", a.sup.shuffle_seed}};
  j["train"] = {{"epochs", a.tr.epochs},
                {"batch_size", a.tr.batch_size},
                {"learning_rate", a.tr.learning_rate},
                {"patience", a.tr.patience},
                {"ablate_heads", a.tr.ablate_heads}};
  j["vocab_min_freq"] = get_int(cfg, "vocab_min_freq");
  for (const char* key : {"train_file", "dev_file", "test_file", "ood_file", "stopword_file"})
    j[key] = get_raw(cfg, key);
  return hex64(fnv1a64(j.dump()));
}

// ---- commands -------------------------------------------------------------------

int cmd_synth(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  synthetic_spec spec = make_synthetic_spec(cfg);
  const synthetic_corpus corpus = generate_synthetic(spec);

  const fs::path outdir = get_raw(cfg, "output_dir");
  fs::create_directories(outdir);
  atomic_write_file(outdir / "train.jsonl", dataset_to_jsonl(corpus.train));
  atomic_write_file(outdir / "dev.jsonl", dataset_to_jsonl(corpus.dev));
  atomic_write_file(outdir / "test.jsonl", dataset_to_jsonl(corpus.test));
  atomic_write_file(outdir / "ood.jsonl", dataset_to_jsonl(corpus.ood));
  atomic_write_file(outdir / "categories.tsv",
                    "# config_hash=" + hash + "\n" + join(corpus.category_lines, "\n") + "\n");

  nlohmann::json spec_json = {{"train_count", spec.train_count},
                              {"dev_count", spec.dev_count},
                              {"test_count", spec.test_count},
                              {"ood_count", spec.ood_count},
                              {"filler_vocab", spec.filler_vocab},
                              {"ood_filler_vocab", spec.ood_filler_vocab},
                              {"premise_fillers_min", spec.premise_fillers_min},
                              {"premise_fillers_max", spec.premise_fillers_max},
                              {"hypothesis_fillers_min", spec.hypothesis_fillers_min},
                              {"hypothesis_fillers_max", spec.hypothesis_fillers_max},
                              {"markers_per_class", spec.markers_per_class},
                              {"noise_rate", spec.noise_rate},
                              {"seed", spec.seed}};
  write_json_artifact(outdir / "synth_spec.json", {{"spec", spec_json}}, hash);

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "synth", hash, {{"seed", spec.seed}}, wall);
  std::cout << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/"
            << corpus.test.size() << "/" << corpus.ood.size()
            << " train/dev/test/ood examples under " << outdir.string() << "\n";
  return 0;
}

int cmd_train(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const dataset_splits splits = load_splits(cfg);
  const stopword_lexicon stopwords = load_stopwords(cfg);
  const encoder_config enc = make_encoder_config(cfg);
  const supervision_config sup = make_supervision_config(cfg, enc);
  const train_config tr = make_train_config(cfg);
  const int vocab_min_freq = static_cast<int>(get_int(cfg, "vocab_min_freq"));

  train_result result = train(splits, enc, sup, tr, stopwords, vocab_min_freq);
  result.report.final_metrics["dev_accuracy"] =
      accuracy(splits.dev, result.params, result.vocab);
  if (!splits.test.empty())
    result.report.final_metrics["test_accuracy"] =
        accuracy(splits.test, result.params, result.vocab);
  if (auto p = optional_file(cfg, "ood_file"))
    result.report.final_metrics["ood_accuracy"] =
        accuracy(load_dataset(*p), result.params, result.vocab);

  const fs::path rundir =
      fs::path(get_raw(cfg, "output_dir")) / "train" / ("seed" + std::to_string(tr.seed));
  fs::create_directories(rundir);
  save_checkpoint(result.params, rundir / "checkpoint.json", {{"config_hash", hash}});
  result.vocab.save(rundir / "vocab.tsv");
  write_json_artifact(rundir / "report.json", result.report.to_json(), hash);

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(fs::path(get_raw(cfg, "output_dir")) / "train", "train", hash,
                 {{"seed", tr.seed}}, wall);
  std::cout << "best dev accuracy " << format_double(result.report.best_dev_accuracy)
            << " at epoch " << result.report.best_epoch << "; artifacts under "
            << rundir.string() << "\n";
  return 0;
}

struct loaded_model {
  encoder_params params;
  vocabulary vocab;
};

loaded_model load_model(const config_map& cfg) {
  loaded_model m{load_checkpoint(require_file(cfg, "checkpoint_file")),
                 vocabulary::load(require_file(cfg, "vocab_file"))};
  return m;
}

int cmd_eval(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const loaded_model m = load_model(cfg);
  nlohmann::json accuracies = nlohmann::json::object();
  for (const char* key : {"train_file", "dev_file", "test_file", "ood_file"}) {
    if (auto p = optional_file(cfg, key)) {
      const std::string name = std::string(key).substr(0, std::string(key).find('_'));
      accuracies[name] = evaluate_accuracy(m.params, m.vocab, load_dataset(*p));
    }
  }
  if (accuracies.empty())
    throw config_error("eval: set at least one of train_file/dev_file/test_file/ood_file");

  const fs::path outdir = fs::path(get_raw(cfg, "output_dir")) / "eval";
  write_json_artifact(outdir / "eval.json",
                      {{"checkpoint", get_raw(cfg, "checkpoint_file")}, {"accuracy", accuracies}},
                      hash);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "eval", hash, nlohmann::json::object(), wall);
  std::cout << "accuracy: " << accuracies.dump() << "\n";
  return 0;
}

int cmd_rationale(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const loaded_model m = load_model(cfg);
  const supervision_config sup = make_supervision_config(cfg, m.params.config);
  const std::vector<nli_example> dev = load_dataset(require_file(cfg, "dev_file"));

  std::vector<double> grid = get_double_list(cfg, "threshold_grid");
  if (grid.empty()) grid = default_threshold_grid();

  const std::vector<scored_example> dev_scored = score_examples(m.params, m.vocab, dev, sup);
  const double threshold = tune_threshold(dev_scored, grid);

  nlohmann::json j;
  j["threshold"] = threshold;
  j["threshold_grid"] = grid;
  j["dev"] = token_prf_to_json(prf_at_threshold(dev_scored, threshold));
  for (const char* key : {"test_file", "ood_file"}) {
    if (auto p = optional_file(cfg, key)) {
      const std::string name = std::string(key).substr(0, std::string(key).find('_'));
      const auto scored = score_examples(m.params, m.vocab, load_dataset(*p), sup);
      j[name] = token_prf_to_json(prf_at_threshold(scored, threshold));
    }
  }

  const fs::path outdir = fs::path(get_raw(cfg, "output_dir")) / "rationale";
  fs::create_directories(outdir);
  write_json_artifact(outdir / "rationale.json", j, hash);
  atomic_write_file(outdir / "dev_scores.jsonl", rationale_dump_jsonl(dev_scored, threshold));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "rationale", hash, nlohmann::json::object(), wall);
  std::cout << "tuned threshold " << format_double(threshold) << "; premise F1 "
            << format_double(j["dev"]["premise"]["f1"].get<double>()) << ", hypothesis F1 "
            << format_double(j["dev"]["hypothesis"]["f1"].get<double>()) << " on dev\n";
  return 0;
}

int cmd_analyze(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const loaded_model m = load_model(cfg);
  const supervision_config sup = make_supervision_config(cfg, m.params.config);
  const std::vector<nli_example> dev = load_dataset(require_file(cfg, "dev_file"));
  const int layer = sup.resolve_layer(m.params.config);
  const std::vector<int> heads = scoring_heads(sup, m.params.config);

  const std::vector<example_attention> attention =
      collect_attention(m.params, m.vocab, dev, layer, heads);

  nlohmann::json j;
  j["layer"] = layer;
  j["heads"] = heads;
  nlohmann::json seg = nlohmann::json::object();
  for (const auto& [kind, mass] : segment_mass(attention)) seg[segment_name(kind)] = mass;
  j["segment_mass"] = seg;
  if (auto p = optional_file(cfg, "lexicon_file"))
    j["category_mass"] = category_mass(attention, category_lexicon::load(*p));
  nlohmann::json top = nlohmann::json::array();
  const auto attended = most_attended(attention);
  for (size_t i = 0; i < attended.size() && i < 20; ++i)
    top.push_back({{"word", attended[i].first}, {"percent", attended[i].second}});
  j["most_attended"] = top;

  const fs::path outdir = fs::path(get_raw(cfg, "output_dir")) / "analyze";
  fs::create_directories(outdir);
  write_json_artifact(outdir / "analysis.json", j, hash);

  // Heatmaps: one page per example; a compare checkpoint adds a second view.
  std::vector<heatmap_view> views;
  views.push_back({"model", &m.params, sup});
  std::optional<encoder_params> compare;
  if (auto p = optional_file(cfg, "compare_checkpoint_file")) {
    compare = load_checkpoint(*p);
    views.push_back({"compare", &*compare, sup});
  }
  const int n_heatmaps =
      std::min<long long>(get_int(cfg, "heatmap_examples"), static_cast<long long>(dev.size()));
  for (int i = 0; i < n_heatmaps; ++i)
    atomic_write_file(outdir / ("heatmap_" + std::to_string(i) + ".html"),
                      render_heatmap_html(views, dev[i], m.vocab) + "\n<!-- config_hash=" + hash +
                          " -->\n");

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "analyze", hash, nlohmann::json::object(), wall);
  std::cout << "segment mass: " << seg.dump() << "\n";
  return 0;
}

int cmd_select_heads(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const dataset_splits splits = load_splits(cfg);
  const stopword_lexicon stopwords = load_stopwords(cfg);
  const encoder_config enc = make_encoder_config(cfg);
  const supervision_config sup = make_supervision_config(cfg, enc);
  if (sup.mode == target_mode::none)
    throw config_error("select-heads requires a supervising target_mode (not 'none')");
  const train_config tr = make_train_config(cfg);
  const std::vector<uint64_t> seeds = get_u64_list(cfg, "seeds");
  const std::vector<int> k_grid = get_int_list(cfg, "k_grid");

  const head_selection_result res =
      greedy_head_selection(splits, enc, sup, tr, seeds, stopwords, k_grid);

  nlohmann::json j;
  j["ranking"] = res.ranking;
  j["per_head_mean_dev"] = res.per_head_mean_dev;
  j["per_head_seed_dev"] = res.per_head_seed_dev;
  j["k_grid"] = res.k_grid;
  nlohmann::json per_k = nlohmann::json::object();
  for (const auto& [k, acc] : res.per_k_mean_dev) per_k[std::to_string(k)] = acc;
  j["per_k_mean_dev"] = per_k;
  j["per_k_seed_dev"] = res.per_k_seed_dev;
  j["chosen_k"] = res.chosen_k;
  j["chosen_subset"] = res.chosen_subset;
  j["phase1_runs"] = res.phase1_runs;
  j["phase2_runs"] = res.phase2_runs;
  j["runs_executed"] = res.runs_executed;

  const fs::path outdir = fs::path(get_raw(cfg, "output_dir")) / "select_heads";
  write_json_artifact(outdir / "selection.json", j, hash);
  write_csv_artifact(outdir / "selection.csv", res.to_csv(), hash);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "select-heads", hash, {{"seeds", seeds}}, wall);
  std::cout << "head ranking: " << nlohmann::json(res.ranking).dump() << "; chosen K = "
            << res.chosen_k << " (" << res.phase1_runs << " + " << res.phase2_runs
            << " runs)\n";
  return 0;
}

int cmd_sweep_lambda(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const dataset_splits splits = load_splits(cfg);
  const stopword_lexicon stopwords = load_stopwords(cfg);
  const encoder_config enc = make_encoder_config(cfg);
  const supervision_config sup = make_supervision_config(cfg, enc);
  if (sup.mode == target_mode::none)
    throw config_error("sweep-lambda requires a supervising target_mode (not 'none')");
  const train_config tr = make_train_config(cfg);
  const std::vector<uint64_t> seeds = get_u64_list(cfg, "seeds");
  std::vector<double> grid = get_double_list(cfg, "lambda_grid");
  if (grid.empty()) grid = default_lambda_grid();

  const lambda_sweep_result res = sweep_lambda(splits, enc, sup, tr, grid, seeds, stopwords);

  nlohmann::json j;
  nlohmann::json cells = nlohmann::json::array();
  for (const sweep_cell& c : res.cells)
    cells.push_back({{"lambda", c.lambda}, {"seed", c.seed}, {"dev_accuracy", c.dev_accuracy}});
  j["cells"] = cells;
  nlohmann::json means = nlohmann::json::object();
  for (const auto& [lambda, acc] : res.mean_dev_accuracy) means[format_double(lambda)] = acc;
  j["mean_dev_accuracy"] = means;
  j["best_lambda"] = res.best_lambda;

  const fs::path outdir = fs::path(get_raw(cfg, "output_dir")) / "sweep_lambda";
  write_json_artifact(outdir / "sweep.json", j, hash);
  write_csv_artifact(outdir / "sweep.csv", res.to_csv(), hash);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "sweep-lambda", hash, {{"seeds", seeds}}, wall);
  std::cout << "best lambda " << format_double(res.best_lambda) << " (mean dev accuracy "
            << format_double(res.mean_dev_accuracy.at(res.best_lambda)) << ")\n";
  return 0;
}

int cmd_matrix(const config_map& cfg, const std::string& hash) {
  const auto t0 = std::chrono::steady_clock::now();
  const dataset_splits splits = load_splits(cfg);
  const stopword_lexicon stopwords = load_stopwords(cfg);
  const int vocab_min_freq = static_cast<int>(get_int(cfg, "vocab_min_freq"));
  const std::vector<uint64_t> seeds = get_u64_list(cfg, "seeds");
  const std::vector<std::string> arm_names = split_list(get_raw(cfg, "arms"));
  if (arm_names.empty()) throw config_error("config key 'arms': need at least one arm");

  std::vector<std::string> datasets = {"dev"};
  if (!splits.test.empty()) datasets.push_back("test");
  std::vector<nli_example> ood;
  if (auto p = optional_file(cfg, "ood_file")) {
    ood = load_dataset(*p);
    datasets.push_back("ood");
  }

  std::map<std::string, arm_settings> settings;
  std::vector<matrix_arm> arms;
  for (const std::string& name : arm_names) {
    settings[name] = make_arm(name, cfg);
    arms.push_back({name, arm_config_key(settings[name], cfg)});
  }

  const auto run_cell = [&](const matrix_arm& arm, uint64_t seed) {
    arm_settings a = settings.at(arm.name);
    a.tr.seed = seed;
    const train_result run = train(splits, a.enc, a.sup, a.tr, stopwords, vocab_min_freq);
    std::map<std::string, double> acc;
    acc["dev"] = accuracy(splits.dev, run.params, run.vocab);
    if (!splits.test.empty()) acc["test"] = accuracy(splits.test, run.params, run.vocab);
    if (!ood.empty()) acc["ood"] = accuracy(ood, run.params, run.vocab);
    return acc;
  };

  const fs::path outroot = get_raw(cfg, "output_dir");
  const matrix_result res = experiment_matrix(
      arms, datasets, seeds, run_cell, outroot / "cache",
      static_cast<int>(get_int(cfg, "bonferroni_m")), get_double(cfg, "alpha"),
      /*paired=*/true, worker_count());

  nlohmann::json j;
  nlohmann::json arm_list = nlohmann::json::array();
  for (const matrix_arm& a : arms) arm_list.push_back({{"name", a.name}, {"config_key", a.config_key}});
  j["arms"] = arm_list;
  j["datasets"] = datasets;
  j["seeds"] = seeds;
  nlohmann::json acc = nlohmann::json::object();
  for (size_t ai = 0; ai < arms.size(); ++ai) {
    nlohmann::json per_ds = nlohmann::json::object();
    for (size_t di = 0; di < datasets.size(); ++di)
      per_ds[datasets[di]] = res.results.accuracies.at(arms[ai].name).at(datasets[di]);
    acc[arms[ai].name] = per_ds;
  }
  j["accuracies"] = acc;
  j["bonferroni_m"] = res.significance.m;
  j["alpha"] = res.significance.alpha;
  j["paired"] = res.significance.paired;

  const fs::path outdir = outroot / "matrix";
  write_json_artifact(outdir / "matrix.json", j, hash);
  write_json_artifact(outdir / "significance.json", res.significance.to_json(), hash);
  write_csv_artifact(outdir / "matrix_summary.csv", res.summary_csv, hash);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(outdir, "matrix", hash,
                 {{"seeds", seeds},
                  {"arms", arm_names},
                  {"runs_executed", res.runs_executed},
                  {"cache_hits", res.cache_hits}},
                 wall);
  std::cout << res.summary_csv << "(" << res.runs_executed << " runs executed, "
            << res.cache_hits << " cells from cache)\n";
  return 0;
}

int cmd_report(const config_map& cfg, const std::string& from_flag) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path from = from_flag.empty() ? fs::path(get_raw(cfg, "output_dir")) : fs::path(from_flag);
  if (!fs::is_directory(from))
    throw config_error("report: '" + from.string() + "' is not a directory");
  const fs::path report_dir = from / "report";

  // Collect every hashed artifact, refusing mixed hashes. The report's own
  // previous output and the manifests are excluded so reruns are stable.
  std::map<std::string, std::vector<std::string>> by_hash;
  fs::path matrix_json;
  for (auto it = fs::recursive_directory_iterator(from); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory()) {
      if (it->path() == report_dir) it.disable_recursion_pending();
      continue;
    }
    const fs::path& p = it->path();
    if (p.extension() != ".json") continue;
    if (p.filename().string().size() >= 13 &&
        p.filename().string().substr(p.filename().string().size() - 13) == "manifest.json")
      continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(p));
    } catch (const std::exception&) {
      continue;  // not a JSON artifact (e.g. JSONL data)
    }
    if (!j.is_object() || !j.contains("config_hash")) continue;
    by_hash[j.at("config_hash").get<std::string>()].push_back(fs::relative(p, from).string());
    if (p.filename() == "matrix.json") matrix_json = p;
  }
  if (by_hash.empty())
    throw config_error("report: no hashed artifacts found under '" + from.string() + "'");
  if (by_hash.size() > 1) {
    std::string msg = "report: refusing mixed config hashes under '" + from.string() + "':";
    for (const auto& [h, files] : by_hash) msg += "\n  " + h + "  e.g. " + files.front();
    throw std::invalid_argument(msg);
  }
  const std::string hash = by_hash.begin()->first;

  nlohmann::json j;
  std::vector<std::string> artifacts = by_hash.begin()->second;
  std::sort(artifacts.begin(), artifacts.end());
  j["artifacts"] = artifacts;

  // Regenerate the summary table from the raw matrix accuracies; the bytes
  // match the original matrix_summary.csv.
  if (!matrix_json.empty()) {
    const nlohmann::json m = nlohmann::json::parse(read_file(matrix_json));
    seed_results results;
    for (const auto& arm : m.at("arms")) results.arm_names.push_back(arm.at("name").get<std::string>());
    results.datasets = m.at("datasets").get<std::vector<std::string>>();
    results.seeds = m.at("seeds").get<std::vector<uint64_t>>();
    for (const std::string& arm : results.arm_names)
      for (const std::string& ds : results.datasets)
        results.accuracies[arm][ds] = m.at("accuracies").at(arm).at(ds).get<std::vector<double>>();
    const significance_report sig = summarize_significance(
        results, m.at("bonferroni_m").get<int>(), m.at("alpha").get<double>(),
        m.at("paired").get<bool>());
    write_csv_artifact(report_dir / "matrix_summary.csv", matrix_summary_csv(results, sig), hash);
    j["regenerated"] = {"report/matrix_summary.csv"};
    j["significance"] = sig.to_json();
  }

  write_json_artifact(report_dir / "report.json", j, hash);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(report_dir, "report", hash, nlohmann::json::object(), wall);
  std::cout << "report over " << artifacts.size() << " artifacts (config_hash " << hash
            << ") written under " << report_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-supervised NLI experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_flag, seeds_flag, arms_flag, heads_flag, mode_flag, loss_flag,
      thresholds_flag, from_flag;
  std::optional<double> lambda_flag;
  std::optional<int> layer_flag;
  std::optional<uint64_t> seed_flag;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_flag, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed_flag, "seed for single-run commands");
    sub->add_option("--seeds", seeds_flag, "comma-separated seed list");
    sub->add_option("--arms", arms_flag, "comma-separated arm names");
    sub->add_option("--lambda", lambda_flag, "attention-loss weight");
    sub->add_option("--heads", heads_flag, "comma-separated supervised head indices");
    sub->add_option("--target-mode", mode_flag,
                    "freetext|highlights|combined|shuffled|none");
    sub->add_option("--loss", loss_flag, "mse|kl");
    sub->add_option("--layer", layer_flag, "supervised layer (-1 = final)");
    sub->add_option("--threshold-grid", thresholds_flag, "comma-separated thresholds");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate the planted-rationale corpus");
  CLI::App* train_cmd = app.add_subcommand("train", "train one model");
  CLI::App* select = app.add_subcommand("select-heads", "greedy head selection");
  CLI::App* sweep = app.add_subcommand("sweep-lambda", "sweep the attention-loss weight");
  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on datasets");
  CLI::App* rationale_cmd =
      app.add_subcommand("rationale", "token-level rationale scores and P/R/F1");
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "attention mass analyses and heatmaps");
  CLI::App* matrix_cmd =
      app.add_subcommand("matrix", "multi-arm multi-seed accuracy matrix with t-tests");
  CLI::App* report_cmd = app.add_subcommand("report", "regenerate summaries from artifacts");
  for (CLI::App* sub : {synth, train_cmd, select, sweep, eval_cmd, rationale_cmd, analyze_cmd,
                        matrix_cmd, report_cmd})
    add_common(sub);
  report_cmd->add_option("--from", from_flag, "artifact directory to summarize");

  CLI11_PARSE(app, argc, argv);

  try {
    config_map cfg = config_defaults();
    if (!config_path.empty())
      for (const auto& [key, value] : parse_config_file(config_path)) cfg[key] = value;
    if (!out_flag.empty()) cfg["output_dir"] = out_flag;
    if (seed_flag) cfg["seed"] = std::to_string(*seed_flag);
    if (!seeds_flag.empty()) cfg["seeds"] = seeds_flag;
    if (!arms_flag.empty()) cfg["arms"] = arms_flag;
    if (lambda_flag) cfg["lambda"] = format_double(*lambda_flag);
    if (!heads_flag.empty()) cfg["supervised_heads"] = heads_flag;
    if (!mode_flag.empty()) cfg["target_mode"] = mode_flag;
    if (!loss_flag.empty()) cfg["loss"] = loss_flag;
    if (layer_flag) cfg["supervised_layer"] = std::to_string(*layer_flag);
    if (!thresholds_flag.empty()) cfg["threshold_grid"] = thresholds_flag;
    if (seed_flag && synth->parsed()) cfg["synth_seed"] = std::to_string(*seed_flag);

    const std::string hash = config_hash(cfg);
    if (synth->parsed()) return cmd_synth(cfg, hash);
    if (train_cmd->parsed()) return cmd_train(cfg, hash);
    if (select->parsed()) return cmd_select_heads(cfg, hash);
    if (sweep->parsed()) return cmd_sweep_lambda(cfg, hash);
    if (eval_cmd->parsed()) return cmd_eval(cfg, hash);
    if (rationale_cmd->parsed()) return cmd_rationale(cfg, hash);
    if (analyze_cmd->parsed()) return cmd_analyze(cfg, hash);
    if (matrix_cmd->parsed()) return cmd_matrix(cfg, hash);
    if (report_cmd->parsed()) return cmd_report(cfg, from_flag);
    return 1;
  } catch (const config_error& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error (validation): " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return 3;
  } catch (const std::runtime_error& e) {
    std::cerr << "error (runtime): " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error (internal): " << e.what() << "\n";
    return 1;
  }
}
