#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wordlearn/checkpoint.hpp"
#include "wordlearn/eval.hpp"
#include "wordlearn/fewshot.hpp"
#include "wordlearn/pretrain.hpp"
#include "wordlearn/synth.hpp"

namespace wordlearn {

namespace fs = std::filesystem;

/// Everything a prepare -> pretrain -> fewshot -> report pipeline needs.
struct ExperimentPlan {
  std::string preset = "desk";
  std::string corpus;  // training corpus, one sentence per line
  std::string test;    // test corpus for full-set perplexity and the irrelevant set
  std::string words;   // roster file; empty means the built-in hundred words
  fs::path out;
  PretrainConfig pretrain;
  VocabOptions vocab;
  std::size_t split = 10;
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;  // pretraining
  std::uint64_t synth_seed = 1;
  FewShotConfig fewshot;
  std::vector<Strategy> strategies{Strategy::optimize, Strategy::centroid};
  std::vector<Init> inits{Init::centroid};
  std::vector<TrainMode> modes{TrainMode::both};
  std::vector<std::size_t> shots;  // empty: 1..split
  std::vector<std::size_t> rows;   // empty: every schedule row
  std::size_t irrelevant = 10;
  bool similarity = false;
  Correlation correlation = Correlation::pearson;
  std::size_t jobs = 1;
};

using Settings = std::map<std::string, std::string>;

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  if (!(in >> out) || !(in >> std::ws).eof()) throw UsageError("setting '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  if (!v.empty() && v[0] == '-') throw UsageError("setting '" + key + "': must be non-negative");
  return parse_number<std::size_t>(key, v);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("setting '" + key + "': expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& s : split(v, ','))
    if (!s.empty()) out.push_back(s);
  return out;
}

template <typename F>
auto map_list(const std::string& v, F f) {
  std::vector<decltype(f(std::string()))> out;
  for (const auto& s : parse_list(v)) out.push_back(f(s));
  return out;
}

}  // namespace detail

struct SettingSpec {
  std::string key;
  std::string help;
  std::function<void(ExperimentPlan&, const std::string&)> apply;
};

/// Every configurable key. Config files and command-line flags share them.
inline const std::vector<SettingSpec>& setting_specs() {
  using detail::parse_count;
  using detail::parse_number;
  static const std::vector<SettingSpec> specs = {
      {"corpus", "training corpus, one sentence per line", [](auto& p, const auto& v) { p.corpus = v; }},
      {"test", "test corpus (full-set perplexity, irrelevant set)", [](auto& p, const auto& v) { p.test = v; }},
      {"words", "word roster file (default: built-in hundred words)", [](auto& p, const auto& v) { p.words = v; }},
      {"out", "output directory", [](auto& p, const auto& v) { p.out = v; }},
      {"hidden", "LSTM hidden size", [](auto& p, const auto& v) { p.pretrain.model.hidden_size = parse_count("hidden", v); }},
      {"layers", "number of LSTM layers", [](auto& p, const auto& v) { p.pretrain.model.num_layers = parse_count("layers", v); }},
      {"steps", "unroll length", [](auto& p, const auto& v) { p.pretrain.model.unroll_steps = parse_count("steps", v); }},
      {"p_keep", "dropout keep probability", [](auto& p, const auto& v) { p.pretrain.model.p_keep = parse_number<Real>("p_keep", v); }},
      {"init_range", "uniform init half-width", [](auto& p, const auto& v) { p.pretrain.model.init_range = parse_number<Real>("init_range", v); }},
      {"clip_norm", "pretraining gradient clip", [](auto& p, const auto& v) { p.pretrain.model.clip_norm = parse_number<Real>("clip_norm", v); }},
      {"epochs", "pretraining epochs", [](auto& p, const auto& v) { p.pretrain.epochs = parse_count("epochs", v); }},
      {"lr", "pretraining base learning rate", [](auto& p, const auto& v) { p.pretrain.base_lr = parse_number<Real>("lr", v); }},
      {"decay_start", "first decayed epoch (0-based)", [](auto& p, const auto& v) { p.pretrain.decay_start_epoch = parse_count("decay_start", v); }},
      {"decay", "per-epoch learning-rate multiplier", [](auto& p, const auto& v) { p.pretrain.decay = parse_number<Real>("decay", v); }},
      {"batch", "pretraining batch size", [](auto& p, const auto& v) { p.pretrain.batch = parse_count("batch", v); }},
      {"vocab_max", "vocabulary size cap, 0 = none", [](auto& p, const auto& v) { p.vocab.max_size = parse_count("vocab_max", v); }},
      {"min_count", "minimum word count", [](auto& p, const auto& v) { p.vocab.min_count = parse_count("min_count", v); }},
      {"reserved", "never-trained reserved slots", [](auto& p, const auto& v) { p.vocab.reserved = parse_count("reserved", v); }},
      {"split", "train (and test) sentences per word", [](auto& p, const auto& v) { p.split = parse_count("split", v); }},
      {"split_seed", "seed of the train/test split", [](auto& p, const auto& v) { p.split_seed = parse_number<std::uint64_t>("split_seed", v); }},
      {"seed", "pretraining seed", [](auto& p, const auto& v) { p.seed = parse_number<std::uint64_t>("seed", v); }},
      {"synth_seed", "synthetic corpus seed", [](auto& p, const auto& v) { p.synth_seed = parse_number<std::uint64_t>("synth_seed", v); }},
      {"strategies", "comma list: optimize, centroid", [](auto& p, const auto& v) { p.strategies = detail::map_list(v, parse_strategy); }},
      {"inits", "comma list: centroid, zeros, unused_token", [](auto& p, const auto& v) { p.inits = detail::map_list(v, parse_init); }},
      {"modes", "comma list: both, input_only, output_only", [](auto& p, const auto& v) { p.modes = detail::map_list(v, parse_mode); }},
      {"shots", "comma list of k (default 1..split)", [](auto& p, const auto& v) {
         p.shots = detail::map_list(v, [](const std::string& s) { return detail::parse_count("shots", s); });
       }},
      {"rows", "comma list of schedule rows (default all)", [](auto& p, const auto& v) {
         p.rows = detail::map_list(v, [](const std::string& s) { return detail::parse_count("rows", s); });
       }},
      {"fs_epochs", "few-shot epochs", [](auto& p, const auto& v) { p.fewshot.epochs = parse_count("fs_epochs", v); }},
      {"fs_lr", "few-shot learning rate", [](auto& p, const auto& v) { p.fewshot.lr = parse_number<Real>("fs_lr", v); }},
      {"l2", "few-shot l2 coefficient", [](auto& p, const auto& v) { p.fewshot.l2_coeff = parse_number<Real>("l2", v); }},
      {"penalty", "norm or squared_norm", [](auto& p, const auto& v) { p.fewshot.penalty = parse_penalty(v); }},
      {"replay", "replay buffer size, 0 disables", [](auto& p, const auto& v) { p.fewshot.replay_size = parse_count("replay", v); }},
      {"fs_clip", "clip few-shot gradients", [](auto& p, const auto& v) { p.fewshot.clip = detail::parse_bool("fs_clip", v); }},
      {"fs_dropout", "dropout during few-shot training", [](auto& p, const auto& v) { p.fewshot.dropout = detail::parse_bool("fs_dropout", v); }},
      {"engine", "cached or full", [](auto& p, const auto& v) { p.fewshot.engine = parse_engine(v); }},
      {"fs_seed", "few-shot seed", [](auto& p, const auto& v) { p.fewshot.seed = parse_number<std::uint64_t>("fs_seed", v); }},
      {"irrelevant", "leading test sentences used as the irrelevant set", [](auto& p, const auto& v) { p.irrelevant = parse_count("irrelevant", v); }},
      {"similarity", "record similarity maps", [](auto& p, const auto& v) { p.similarity = detail::parse_bool("similarity", v); }},
      {"correlation", "pearson or spearman", [](auto& p, const auto& v) {
         if (v == "pearson") p.correlation = Correlation::pearson;
         else if (v == "spearman") p.correlation = Correlation::spearman;
         else throw UsageError("setting 'correlation': expected pearson or spearman");
       }},
      {"jobs", "parallel workers", [](auto& p, const auto& v) { p.jobs = std::max<std::size_t>(1, parse_count("jobs", v)); }},
  };
  return specs;
}

/// Preset values, applied before the config file and flags.
inline Settings preset_settings(const std::string& name) {
  if (name == "paper") {
    return {{"hidden", "1500"}, {"layers", "2"},     {"steps", "35"},      {"p_keep", "0.35"},    {"init_range", "0.04"},
            {"clip_norm", "10"}, {"epochs", "55"},   {"lr", "1"},          {"decay_start", "14"}, {"decay", "0.8695652173913044"},
            {"batch", "20"},     {"vocab_max", "0"}, {"fs_epochs", "100"}, {"fs_lr", "0.01"},     {"l2", "0.01"},
            {"replay", "100"}};
  }
  if (name == "desk") {
    return {{"hidden", "128"},   {"layers", "2"},       {"steps", "35"},      {"p_keep", "0.9"},  {"init_range", "0.04"},
            {"clip_norm", "10"}, {"epochs", "8"},       {"lr", "1"},          {"decay_start", "6"}, {"decay", "0.5"},
            {"batch", "5"},      {"vocab_max", "5000"}, {"fs_epochs", "100"}, {"fs_lr", "0.1"},  {"l2", "0.01"},
            {"replay", "50"}};
  }
  throw UsageError("unknown preset '" + name + "' (expected paper or desk)");
}

/// key = value lines; '#' starts a comment.
inline Settings parse_config(std::istream& in, const std::string& origin = "config") {
  Settings out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(origin + ":" + std::to_string(n) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline Settings read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file '" + path.string() + "'");
  return parse_config(in, path.string());
}

inline fs::path default_out_dir() {
  if (const char* env = std::getenv("WORDLEARN_OUT"); env && *env) return env;
  return "wordlearn-out";
}

/// Preset, then config-file settings, then flag settings (flags win).
inline ExperimentPlan make_plan(const std::string& preset, const Settings& config, const Settings& flags) {
  ExperimentPlan plan;
  plan.preset = preset;
  plan.out = default_out_dir();
  Settings merged = preset_settings(preset);
  for (const auto& [k, v] : config) merged[k] = v;
  for (const auto& [k, v] : flags) merged[k] = v;
  for (const auto& [k, v] : merged) {
    if (k == "preset") continue;
    auto it = std::find_if(setting_specs().begin(), setting_specs().end(), [&](const SettingSpec& s) { return s.key == k; });
    if (it == setting_specs().end()) throw UsageError("unknown setting '" + k + "'");
    it->apply(plan, v);
  }
  if (plan.strategies.empty() || plan.inits.empty() || plan.modes.empty()) throw UsageError("plan: empty few-shot grid");
  if (plan.split == 0) throw UsageError("plan: split must be positive");
  return plan;
}

/// The plan as JSON, without settings that cannot change results (output
/// directory, job count).
inline nlohmann::json plan_json(const ExperimentPlan& p) {
  auto names = [](const auto& v) {
    std::vector<std::string> out;
    for (auto x : v) out.push_back(to_string(x));
    return out;
  };
  return {{"preset", p.preset},
          {"corpus", p.corpus},
          {"test", p.test},
          {"words", p.words},
          {"pretrain", p.pretrain},
          {"vocab", {{"min_count", p.vocab.min_count}, {"max_size", p.vocab.max_size}, {"reserved", p.vocab.reserved}}},
          {"split", p.split},
          {"split_seed", p.split_seed},
          {"seed", p.seed},
          {"synth_seed", p.synth_seed},
          {"fewshot", p.fewshot},
          {"strategies", names(p.strategies)},
          {"inits", names(p.inits)},
          {"modes", names(p.modes)},
          {"shots", p.shots},
          {"rows", p.rows},
          {"irrelevant", p.irrelevant},
          {"similarity", p.similarity},
          {"correlation", p.correlation == Correlation::pearson ? "pearson" : "spearman"}};
}

inline std::string fingerprint(const ExperimentPlan& p) { return detail::hex64(detail::fnv1a(plan_json(p).dump())); }

// ---------------------------------------------------------------------------
// File helpers

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

// File-name-safe form of a word.
inline std::string word_file_stem(const std::string& word) {
  std::string out;
  for (unsigned char c : word) out += (std::isalnum(c) || c == '-' || c == '.') ? static_cast<char>(c) : '_';
  return out + "-" + detail::hex64(detail::fnv1a(word)).substr(0, 8);
}

inline std::vector<std::string> plan_roster(const ExperimentPlan& p) {
  return p.words.empty() ? hundred_word_roster() : load_roster(p.words);
}

inline std::vector<Sentence> require_corpus(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("no ") + what + " corpus given");
  return load_corpus(path);
}

using Log = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Commands

/// Holds out the roster words: writes the vocabulary, the shared
/// without-words corpus, per-word train/test files and a manifest.
inline nlohmann::json cmd_prepare(const ExperimentPlan& plan, const Log& log = {}) {
  const auto corpus = require_corpus(plan.corpus, "training");
  const auto roster = plan_roster(plan);
  const RosterHoldout rh = hold_out_roster(corpus, roster, plan.split, plan.split_seed);
  VocabOptions vo = plan.vocab;
  vo.keep = roster;
  const Vocabulary vocab = Vocabulary::build(corpus, vo);
  const std::string fp = fingerprint(plan);

  fs::create_directories(plan.out / "words");
  write_text(plan.out / "vocab.json", vocab.to_json().dump(1) + "\n");
  write_corpus(plan.out / "train_without_words.txt", *rh.without_words);
  nlohmann::json words = nlohmann::json::array();
  for (const auto& hs : rh.words) {
    const std::string stem = word_file_stem(hs.word);
    write_corpus(plan.out / "words" / (stem + ".train.txt"), hs.train);
    write_corpus(plan.out / "words" / (stem + ".test.txt"), hs.test);
    words.push_back({{"word", hs.word},
                     {"occurrences", count_word(corpus, hs.word)},
                     {"train", hs.train.size()},
                     {"test", hs.test.size()},
                     {"train_file", "words/" + stem + ".train.txt"},
                     {"test_file", "words/" + stem + ".test.txt"}});
  }
  nlohmann::json manifest = {{"fingerprint", fp},
                             {"plan", plan_json(plan)},
                             {"corpus_sentences", corpus.size()},
                             {"without_words_sentences", rh.without_words->size()},
                             {"without_words_file", "train_without_words.txt"},
                             {"without_words_fnv1a", detail::hex64(detail::fnv1a(read_text(plan.out / "train_without_words.txt")))},
                             {"vocab_size", vocab.size()},
                             {"words", words}};
  write_text(plan.out / "manifest.json", manifest.dump(1) + "\n");
  if (log) log("prepared " + std::to_string(roster.size()) + " words, " + std::to_string(rh.without_words->size()) + " sentences without them");
  return manifest;
}

inline std::vector<std::string> manifest_words(const nlohmann::json& manifest) {
  std::vector<std::string> out;
  for (const auto& w : manifest.at("words")) out.push_back(w.at("word").get<std::string>());
  return out;
}

/// Pretrains on the prepared without-words corpus; writes model.ck and the
/// per-epoch loss CSV.
inline PretrainResult cmd_pretrain(const ExperimentPlan& plan, const Log& log = {}) {
  const auto manifest = read_json(plan.out / "manifest.json");
  const Vocabulary vocab = Vocabulary::from_json(read_json(plan.out / "vocab.json"));
  const auto corpus = load_corpus(plan.out / manifest.at("without_words_file").get<std::string>());
  const std::string fp = fingerprint(plan);
  std::string csv = "# plan=" + fp + "\nepoch,lr,loss\n";
  PretrainResult r = pretrain_run(corpus, vocab, plan.pretrain, plan.seed, manifest_words(manifest),
                                  [&](std::size_t e, Real lr, double loss) {
                                    csv += std::to_string(e) + "," + format_real(lr) + "," + format_real(loss) + "\n";
                                    if (log) log("epoch " + std::to_string(e) + " lr " + format_real(lr) + " loss " + format_real(loss));
                                  });
  r.checkpoint.metadata["fingerprint"] = fp;
  save_checkpoint(r.checkpoint, plan.out / "model.ck");
  write_text(plan.out / "pretrain_loss.csv", csv);
  return r;
}

inline std::string similarity_csv(const std::vector<RunResult>& results, const std::string& fp) {
  std::string out = "# plan=" + fp + "\nword,strategy,init,mode,k,perm,seed,indices,values\n";
  for (const auto& r : results) {
    if (!r.similarity) continue;
    std::vector<std::string> idx, val;
    for (std::size_t i : r.similarity->indices) idx.push_back(std::to_string(i));
    for (double v : r.similarity->values) val.push_back(format_real(v));
    out += join({r.word, r.strategy, r.init, r.mode, std::to_string(r.k), std::to_string(r.perm), std::to_string(r.seed),
                 join(idx, ';'), join(val, ';')}) +
           "\n";
  }
  return out;
}

/// Runs the few-shot grid for every prepared word; writes results.csv,
/// results.json and, when requested, similarity.csv.
inline std::vector<RunResult> cmd_fewshot(const ExperimentPlan& plan, const Log& log = {}) {
  const auto manifest = read_json(plan.out / "manifest.json");
  const Checkpoint base = load_checkpoint(plan.out / "model.ck");
  const auto test_corpus = require_corpus(plan.test, "test");
  const auto irrelevant = default_irrelevant_set(test_corpus, plan.irrelevant);
  auto without = std::make_shared<const std::vector<Sentence>>(
      load_corpus(plan.out / manifest.at("without_words_file").get<std::string>()));
  const auto roster = manifest_words(manifest);
  std::vector<std::size_t> roster_ids;
  for (const auto& w : roster) roster_ids.push_back(base.vocab.index(w));
  const PermutationSchedule schedule = latin_square(plan.split);

  SweepOptions opt;
  opt.shots = plan.shots;
  opt.rows = plan.rows;
  opt.jobs = plan.jobs;
  opt.similarity = plan.similarity;
  opt.similarity_exclude = roster_ids;

  std::vector<RunResult> all;
  for (const auto& entry : manifest.at("words")) {
    HoldoutSet hs;
    hs.word = entry.at("word").get<std::string>();
    hs.train = load_corpus(plan.out / entry.at("train_file").get<std::string>());
    hs.test = load_corpus(plan.out / entry.at("test_file").get<std::string>());
    hs.without_word_corpus = without;
    for (const auto& s : irrelevant)
      if (contains_word(s, hs.word)) throw DataError("word '" + hs.word + "' occurs in the irrelevant set");
    SweepData data{&base, &hs, test_corpus, irrelevant};
    for (Strategy s : plan.strategies) {
      for (TrainMode m : plan.modes) {
        const std::vector<Init> inits = s == Strategy::centroid ? std::vector<Init>{Init::centroid} : plan.inits;
        for (Init i : inits) {
          FewShotConfig cfg = plan.fewshot;
          cfg.strategy = s;
          cfg.init = i;
          cfg.mode = m;
          auto runs = run_shot_sweep(data, cfg, schedule, opt);
          if (log) {
            log(hs.word + " " + condition_label(to_string(s), to_string(i), to_string(m)) + ": " +
                std::to_string(runs.size()) + " runs");
          }
          for (auto& r : runs) all.push_back(std::move(r));
        }
      }
    }
  }
  const std::string fp = fingerprint(plan);
  write_text(plan.out / "results.csv", results_csv(all, fp));
  write_text(plan.out / "results.json", results_json(all, fp).dump(1) + "\n");
  if (plan.similarity) write_text(plan.out / "similarity.csv", similarity_csv(all, fp));
  return all;
}

// Fingerprint recorded in a CSV's leading comment, if any.
inline std::string csv_fingerprint(const std::string& text) {
  const std::string tag = "# plan=";
  if (text.rfind(tag, 0) != 0) return "";
  return text.substr(tag.size(), text.find('\n') - tag.size());
}

/// Mean correlation between the similarity maps of runs that share word and
/// condition at their largest k.
inline std::string similarity_correlation_csv(const std::string& similarity_text, Correlation method, const std::string& fp) {
  struct Entry {
    std::string cond;
    std::size_t k;
    SimilarityMap map;
  };
  std::map<std::string, std::vector<Entry>> by_word;
  std::istringstream in(similarity_text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 9) throw DataError("similarity.csv: malformed row");
    Entry e{condition_label(f[1], f[2], f[3]), std::stoul(f[4]), {}};
    for (const auto& s : split(f[7], ';')) e.map.indices.push_back(std::stoul(s));
    for (const auto& s : split(f[8], ';')) e.map.values.push_back(parse_real(s));
    by_word[f[0]].push_back(std::move(e));
  }
  std::string out = "# plan=" + fp + "\nword,condition,k,pairs,mean_correlation,min_correlation,max_correlation\n";
  for (const auto& [word, entries] : by_word) {
    std::map<std::string, std::size_t> kmax;
    for (const auto& e : entries) kmax[e.cond] = std::max(kmax[e.cond], e.k);
    for (const auto& [cond, k] : kmax) {
      std::vector<const SimilarityMap*> maps;
      for (const auto& e : entries)
        if (e.cond == cond && e.k == k) maps.push_back(&e.map);
      std::vector<double> cs;
      for (std::size_t a = 0; a < maps.size(); ++a)
        for (std::size_t b = a + 1; b < maps.size(); ++b) cs.push_back(map_correlation(*maps[a], *maps[b], method));
      if (cs.empty()) continue;
      out += join({word, cond, std::to_string(k), std::to_string(cs.size()), format_real(stats::mean(cs)),
                   format_real(*std::min_element(cs.begin(), cs.end())), format_real(*std::max_element(cs.begin(), cs.end()))}) +
             "\n";
    }
  }
  return out;
}

/// Summaries of results.csv in `dir`, written to dir/report.
inline Report cmd_report(const fs::path& dir, Correlation method = Correlation::pearson, const Log& log = {}) {
  const fs::path results = dir / "results.csv";
  if (!fs::exists(results)) throw DataError("no results.csv in '" + dir.string() + "'");
  const std::string text = read_text(results);
  std::istringstream in(text);
  const auto runs = parse_results_csv(in);
  if (runs.empty()) throw DataError("'" + results.string() + "' holds no runs");
  const std::string fp = csv_fingerprint(text);
  const Report rep = aggregate_report(runs);
  const fs::path out = dir / "report";
  write_text(out / "curves.csv", curves_csv(rep, fp));
  write_text(out / "scatter.csv", scatter_csv(rep, fp));
  write_text(out / "breakdown.csv", breakdown_csv(rep, fp));
  nlohmann::json tt = {{"fingerprint", fp}, {"comparison", "optimize/centroid/both vs centroid, paired by word"},
                       {"words", rep.scatter.size()}};
  if (rep.strategy_test) tt["optimize_vs_centroid"] = {{"t", rep.strategy_test->t}, {"p", rep.strategy_test->p}, {"dof", rep.strategy_test->dof}};
  else tt["optimize_vs_centroid"] = nullptr;
  write_text(out / "ttests.json", tt.dump(1) + "\n");
  if (fs::exists(dir / "similarity.csv"))
    write_text(out / "similarity_correlation.csv", similarity_correlation_csv(read_text(dir / "similarity.csv"), method, fp));
  if (log) log("report: " + std::to_string(runs.size()) + " runs, " + std::to_string(rep.curves.size()) + " curve points");
  return rep;
}

/// Writes a synthetic train/test corpus and its rare-word roster.
inline SynthCorpus cmd_synth(const ExperimentPlan& plan, const Log& log = {}) {
  SynthConfig sc;
  sc.seed = plan.synth_seed;
  SynthCorpus c = generate_synth(sc);
  fs::create_directories(plan.out);
  write_corpus(plan.out / "synth_train.txt", c.train);
  write_corpus(plan.out / "synth_test.txt", c.test);
  std::string roster = "# plan=" + fingerprint(plan) + "\n";
  for (const auto& w : c.roster) roster += w + "\n";
  write_text(plan.out / "synth_words.txt", roster);
  if (log) log("synthetic corpus: " + std::to_string(c.train.size()) + " train, " + std::to_string(c.test.size()) + " test sentences");
  return c;
}

}  // namespace wordlearn
