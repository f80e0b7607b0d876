// Copyright 2026 The rmgap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Config-driven experiment runner. Every subcommand reads one JSON config,
// writes its outputs atomically under --out and finishes with manifest.json.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>

#include "rmgap/io.hpp"
#include "rmgap/rmgap.hpp"

namespace fs = std::filesystem;
using namespace rmgap;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kMissingInput = 3, kNumeric = 4 };

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema-checked config access.

class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where(key) + "required field is missing");
    return convert<T>(key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, full(key));
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  /// Throws unless `ok`, naming the field.
  void check(bool ok, const std::string& key, const std::string& msg) const {
    if (!ok) throw ConfigError(where(key) + msg);
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where(k) + "unknown field");
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where(const std::string& key) const { return "config field '" + full(key) + "': "; }

  template <class T>
  T convert(const std::string& key) const {
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where(key) + "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(where(key) + "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where(key) + "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where(key) + "expected a string");
    }
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + e.what());
    }
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct Context {
  std::string command;
  Json config;  // effective config, seed included
  fs::path base;
  fs::path out;
  bool strict_lr = false;
  std::string format = "json";
  RunInfo info;
};

fs::path resolve(const Context& ctx, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : ctx.base / path;
}

PreferenceDataset load_dataset(const Context& ctx, const std::string& p) {
  const fs::path path = resolve(ctx, p);
  if (!fs::exists(path)) throw MissingInput("missing input file: " + path.string());
  return load_jsonl(path);
}

Json load_json_file(const Context& ctx, const std::string& p) {
  const fs::path path = resolve(ctx, p);
  if (!fs::exists(path)) throw MissingInput("missing input file: " + path.string());
  try {
    return Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

Json report_header(const Context& ctx) {
  Json j;
  j["command"] = ctx.command;
  j["run"] = run_json(ctx.info);
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Shared config pieces.

RewardKind parse_variant(Section& s, const std::string& key) {
  const std::string v = s.require<std::string>(key);
  for (RewardKind k : {RewardKind::Ex, RewardKind::ExAllRepr, RewardKind::Im, RewardKind::ImNoRef, RewardKind::ExGrm})
    if (to_string(k) == v) return k;
  s.check(false, key, "unknown variant '" + v + "'");
  return RewardKind::Ex;
}

std::vector<std::pair<TokenId, TokenId>> parse_pairs(Section& s, const std::string& key,
                                                     std::vector<std::pair<TokenId, TokenId>> fallback) {
  if (!s.has(key)) {
    s.get<int>(key, 0);
    return fallback;
  }
  const Json& v = s.raw(key);
  std::vector<std::pair<TokenId, TokenId>> out;
  s.check(v.is_array(), key, "expected an array of [good, bad] pairs");
  for (const auto& p : v) {
    s.check(p.is_array() && p.size() == 2 && p[0].is_number_unsigned() && p[1].is_number_unsigned(), key,
            "expected an array of [good, bad] pairs");
    out.emplace_back(p[0].get<TokenId>(), p[1].get<TokenId>());
  }
  return out;
}

TokenShiftConfig parse_token_shift(Section& s, std::uint64_t seed) {
  TokenShiftConfig c;
  c.vocab_size = s.get("vocab_size", c.vocab_size);
  c.dim = s.get("dim", c.dim);
  c.prompt_length = s.get("prompt_length", c.prompt_length);
  c.train_prompt_count = s.get("train_prompt_count", c.train_prompt_count);
  c.test_prompt_count = s.get("test_prompt_count", c.test_prompt_count);
  c.original_token_pairs = parse_pairs(s, "original_token_pairs", c.original_token_pairs);
  c.paraphrase_token_pairs = parse_pairs(s, "paraphrase_token_pairs", c.paraphrase_token_pairs);
  c.representation_similarity = s.get("representation_similarity", c.representation_similarity);
  s.check(c.representation_similarity >= -1.0 && c.representation_similarity <= 1.0, "representation_similarity",
          "must lie in [-1, 1]");
  c.signal = s.get("signal", c.signal);
  c.noise = s.get("noise", c.noise);
  c.max_attempts = s.get("max_attempts", c.max_attempts);
  c.seed = seed;
  return c;
}

struct Representations {
  RepresentationPtr reps;
  std::size_t vocab_size = 0;
  std::size_t dim = 0;
  std::string label;  // backbone identity for accuracy tables
};

/// {"kind": "seeded", "vocab_size", "dim", "seed"} or {"kind": "token_shift", ...task fields}.
Representations parse_representations(Section s) {
  const std::string kind = s.require<std::string>("kind");
  Representations out;
  if (kind == "seeded") {
    out.vocab_size = s.require<std::size_t>("vocab_size");
    out.dim = s.require<std::size_t>("dim");
    const auto seed = s.get<std::uint64_t>("seed", 0);
    s.check(out.vocab_size >= 2, "vocab_size", "must be at least 2");
    s.check(out.dim >= 1, "dim", "must be positive");
    out.reps = RepresentationProvider::seeded(out.vocab_size, out.dim, seed);
    out.label = "seeded-v" + std::to_string(out.vocab_size) + "-d" + std::to_string(out.dim) + "-s" +
                std::to_string(seed);
  } else if (kind == "token_shift") {
    const auto seed = s.get<std::uint64_t>("seed", 0);
    const TokenShiftConfig c = parse_token_shift(s, seed);
    out.vocab_size = c.vocab_size;
    out.dim = c.dim;
    out.reps = make_token_shift_task(c).reps;
    out.label = "token_shift-s" + std::to_string(seed);
  } else {
    s.check(false, "kind", "expected 'seeded' or 'token_shift'");
  }
  s.finish();
  return out;
}

Json matrix_json(const Matrix& m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.flat().begin(), m.flat().end())}};
}

Matrix matrix_from(const Json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw InputError("matrix data has the wrong length");
  std::copy(data.begin(), data.end(), m.flat().begin());
  return m;
}

struct TemplateSpec {
  TokenId separator = 0, yes = 0, no = 1;
};

TemplateSpec parse_template(Section s, std::size_t vocab) {
  TemplateSpec t;
  t.separator = s.get<TokenId>("separator", static_cast<TokenId>(vocab - 1));
  t.yes = s.get<TokenId>("yes", 0);
  t.no = s.get<TokenId>("no", 1);
  s.check(t.separator < vocab, "separator", "outside the vocabulary");
  s.check(t.yes < vocab, "yes", "outside the vocabulary");
  s.check(t.no < vocab && t.no != t.yes, "no", "must differ from 'yes' and lie in the vocabulary");
  s.finish();
  return t;
}

/// Builds the initial scorer of a variant. EX heads start at zero; policies
/// draw a Gaussian unembedding with stddev init_scale, and the IM reference is
/// that initial policy.
RewardScorer initial_scorer(RewardKind kind, const Representations& r, double beta, double init_scale,
                            const TemplateSpec& tmpl, Rng& rng) {
  switch (kind) {
    case RewardKind::Ex:
      return ExReward(LinearHead{Vector(r.dim, 0.0)}, r.reps);
    case RewardKind::ExAllRepr:
      return ExAllReprReward(LinearHead{Vector(r.dim, 0.0)}, r.reps);
    default:
      break;
  }
  const PolicyState p(gaussian_matrix(rng, r.vocab_size, r.dim, init_scale), r.reps);
  switch (kind) {
    case RewardKind::Im:
      return ImReward(p, p, beta);
    case RewardKind::ImNoRef:
      return ImNoRefReward{p};
    default:
      return ExGrmReward(p, GrmTemplate::with_separator(tmpl.separator, tmpl.yes, tmpl.no));
  }
}

Json scorer_json(const RewardScorer& s, const Json& reps_spec, const TemplateSpec& tmpl) {
  Json j;
  j["variant"] = to_string(kind_of(s));
  j["representations"] = reps_spec;
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ExReward> || std::is_same_v<T, ExAllReprReward>) {
          j["head"] = r.head.weights;
        } else if constexpr (std::is_same_v<T, ImReward>) {
          j["beta"] = r.beta;
          j["unembedding"] = matrix_json(r.policy.unembedding());
          j["reference_unembedding"] = matrix_json(r.reference.unembedding());
        } else if constexpr (std::is_same_v<T, ImNoRefReward>) {
          j["unembedding"] = matrix_json(r.policy.unembedding());
        } else {
          j["unembedding"] = matrix_json(r.policy.unembedding());
          j["template"] = Json{{"separator", tmpl.separator}, {"yes", tmpl.yes}, {"no", tmpl.no}};
        }
      },
      s);
  return j;
}

struct LoadedModel {
  RewardScorer scorer;
  std::string label;
  std::string seed;
};

LoadedModel scorer_from(const Json& j) {
  try {
    Section reps_section(j.at("representations"), "representations");
    const Representations r = parse_representations(reps_section);
    const std::string v = j.at("variant").get<std::string>();
    std::optional<RewardScorer> s;
    if (v == "ex") s = ExReward(LinearHead{j.at("head").get<Vector>()}, r.reps);
    else if (v == "ex_allrepr") s = ExAllReprReward(LinearHead{j.at("head").get<Vector>()}, r.reps);
    else if (v == "im")
      s = ImReward(PolicyState(matrix_from(j.at("unembedding")), r.reps),
                   PolicyState(matrix_from(j.at("reference_unembedding")), r.reps), j.at("beta").get<double>());
    else if (v == "im_noref") s = ImNoRefReward{PolicyState(matrix_from(j.at("unembedding")), r.reps)};
    else if (v == "exgrm") {
      const auto& t = j.at("template");
      s = ExGrmReward(PolicyState(matrix_from(j.at("unembedding")), r.reps),
                      GrmTemplate::with_separator(t.at("separator").get<TokenId>(), t.at("yes").get<TokenId>(),
                                                  t.at("no").get<TokenId>()));
    } else {
      throw InputError("unknown model variant '" + v + "'");
    }
    std::string seed = "0";
    if (j.contains("run")) seed = std::to_string(j["run"].at("seed").get<std::uint64_t>());
    return {*s, r.label, seed};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  } catch (const ConfigError& e) {
    throw InputError(std::string("malformed model file: ") + e.what());
  }
}

std::string dataset_name(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<std::string> string_list(Section& s, const std::string& key) {
  std::vector<std::string> out;
  if (!s.has(key)) {
    s.get<int>(key, 0);
    return out;
  }
  const Json& v = s.raw(key);
  s.check(v.is_array(), key, "expected an array of paths");
  for (const auto& e : v) {
    s.check(e.is_string(), key, "expected an array of paths");
    out.push_back(e.get<std::string>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// gen-task

void cmd_gen_task(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  const std::string task = s.get<std::string>("task", "ham");
  const auto seed = s.get<std::uint64_t>("seed", 0);
  if (task == "ham") {
    HamTaskConfig c;
    c.n = s.get("n", c.n);
    c.p = s.get("p", c.p);
    c.train_count = s.get("train_count", c.train_count);
    c.test_count = s.get("test_count", c.test_count);
    c.max_negative_tries = s.get("max_negative_tries", c.max_negative_tries);
    c.seed = seed;
    s.finish();
    s.check(c.n >= 3, "n", "must be at least 3");
    s.check(c.p >= 0.0 && c.p <= 1.0, "p", "must lie in [0, 1]");
    s.check(c.n >= 4 || c.p < 1.0, "p", "a complete triangle has no negative response");
    const HamDataset d = make_ham_dataset(c);
    auto write_split = [&](const PreferenceDataset& data, const std::vector<HamGraph>& graphs, const std::string& split) {
      std::vector<Json> metas;
      std::string text;
      for (std::size_t i = 0; i < graphs.size(); ++i) {
        metas.push_back(Json{{"task", "ham"}, {"split", split}, {"index", i}, {"graph", edge_list_text(graphs[i].graph)},
                             {"planted_cycle", graphs[i].planted_cycle}});
        text += edge_list_text(graphs[i].graph) + "\n";
      }
      out.write(split + ".jsonl", to_jsonl(data, metas));
      out.write(split + "_graphs.txt", text);
    };
    write_split(d.train, d.train_graphs, "train");
    write_split(d.test, d.test_graphs, "test");
    std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test examples\n";
  } else if (task == "token_shift") {
    const TokenShiftConfig c = parse_token_shift(s, seed);
    s.finish();
    const TokenShiftTask t = make_token_shift_task(c);
    out.write("train.jsonl", to_jsonl(t.train));
    out.write("eval_original.jsonl", to_jsonl(t.eval_original));
    out.write("eval_paraphrased.jsonl", to_jsonl(t.eval_paraphrased));
    std::cout << "wrote token-shift task after " << t.attempts << " attempt(s)\n";
  } else {
    s.check(false, "task", "expected 'ham' or 'token_shift'");
  }
}

// ---------------------------------------------------------------------------
// train

void cmd_train(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  const auto seed = s.get<std::uint64_t>("seed", 0);
  const std::string train_path = s.require<std::string>("train_data");
  const std::vector<std::string> eval_paths = string_list(s, "eval_data");
  Section reps_section = s.child("representations");
  const Json reps_spec = ctx.config.value("representations", Json::object());
  const Representations r = parse_representations(reps_section);

  Section m = s.child("model");
  const RewardKind kind = parse_variant(m, "variant");
  const double beta = m.get("beta", 1.0);
  const double init_scale = m.get("init_scale", 0.1);
  m.check(beta > 0.0, "beta", "must be positive");
  m.check(init_scale >= 0.0, "init_scale", "must be non-negative");
  const TemplateSpec tmpl = parse_template(m.child("template"), r.vocab_size);
  m.finish();

  TrainConfig tc;
  tc.beta = beta;
  tc.variant = kind;
  tc.steps = s.get("steps", tc.steps);
  tc.record_every = s.get("record_every", tc.record_every);
  s.check(tc.record_every > 0, "record_every", "must be positive");
  const bool has_lr = s.has("learning_rate"), has_frac = s.has("lr_fraction");
  s.check(!(has_lr && has_frac), "lr_fraction", "give either learning_rate or lr_fraction, not both");
  const double lr = s.get("learning_rate", 0.1);
  const double frac = s.get("lr_fraction", 0.0);
  tc.strict_lr = s.get("strict_lr", false) || ctx.strict_lr;
  s.finish();
  s.check(!has_lr || lr > 0.0, "learning_rate", "must be positive");
  s.check(!has_frac || frac > 0.0, "lr_fraction", "must be positive");

  const PreferenceDataset train = load_dataset(ctx, train_path);
  std::vector<PreferenceDataset> evals;
  for (const auto& p : eval_paths) evals.push_back(load_dataset(ctx, p));

  Rng rng(derive_seed(seed, 1));
  const RewardScorer init = initial_scorer(kind, r, beta, init_scale, tmpl, rng);
  const LrBound bound = smoothness_and_lr_bound(train, *r.reps, beta);
  tc.learning_rate = has_frac ? frac * bound.bound : lr;
  const TrainTrajectory traj = gd_train(tc, train, init);
  for (const auto& w : traj.warnings) std::cerr << "warning: " << w << "\n";

  std::vector<std::string> header{"step", "loss", "train_accuracy"};
  for (const auto& p : eval_paths) header.push_back(dataset_name(p) + "_accuracy");
  CsvWriter csv(header);
  Json rep = report_header(ctx);
  rep["variant"] = to_string(kind);
  rep["learning_rate"] = tc.learning_rate;
  rep["lr_bound"] = Json{{"max_rep_norm", bound.max_rep_norm}, {"bound", bound.bound}};
  rep["strict_lr"] = tc.strict_lr;
  rep["warnings"] = traj.warnings;
  Json records = Json::array();
  for (const auto& rec : traj.records) {
    Json jr{{"step", rec.step}, {"loss", rec.loss}, {"train_accuracy", rec.accuracy}};
    csv.cell(rec.step).cell(rec.loss).cell(rec.accuracy);
    if (!evals.empty()) {
      const RewardScorer sc = with_params(init, rec.params);
      Json je = Json::object();
      for (std::size_t i = 0; i < evals.size(); ++i) {
        const double acc = accuracy(sc, evals[i]);
        je[dataset_name(eval_paths[i])] = acc;
        csv.cell(acc);
      }
      jr["eval_accuracy"] = je;
    }
    csv.end_row();
    records.push_back(jr);
  }
  rep["records"] = records;
  rep["final"] = Json{{"step", traj.final_record().step},
                      {"loss", traj.final_record().loss},
                      {"train_accuracy", traj.final_record().accuracy}};
  Json model = scorer_json(final_scorer(init, traj), reps_spec, tmpl);
  model["run"] = run_json(ctx.info);
  out.write("trajectory.json", dump(rep));
  out.write("curves.csv", csv.str());
  out.write("model.json", dump(model));
  std::cout << "final loss " << format_double(traj.final_record().loss) << ", train accuracy "
            << format_double(traj.final_record().accuracy) << "\n";
}

// ---------------------------------------------------------------------------
// eval

void cmd_eval(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  s.get<std::uint64_t>("seed", 0);
  const std::string model_path = s.require<std::string>("model");
  const std::vector<std::string> data_paths = string_list(s, "data");
  s.check(!data_paths.empty(), "data", "needs at least one dataset");
  std::string name = s.get<std::string>("model_name", "");
  const double eps = s.get("tie_epsilon", 0.0);
  s.check(eps >= 0.0, "tie_epsilon", "must be non-negative");
  s.finish();

  const LoadedModel model = scorer_from(load_json_file(ctx, model_path));
  if (name.empty()) name = model.label;
  Json rep = report_header(ctx);
  rep["model"] = name;
  rep["variant"] = to_string(kind_of(model.scorer));
  rep["stddev"] = "population, pooled over chosen and rejected rewards";
  Json results = Json::array();
  CsvWriter csv({"model", "dataset", "seed", "metric", "value"});
  for (const auto& p : data_paths) {
    const PreferenceDataset d = load_dataset(ctx, p);
    const EvalReport e = evaluate(model.scorer, d, AccuracyOptions{eps});
    const std::string ds = dataset_name(p);
    results.push_back(Json{{"dataset", ds},
                           {"accuracy", e.accuracy},
                           {"normalized_margin_mean", e.normalized_margin_mean},
                           {"n_examples", e.n_examples},
                           {"n_ties", e.n_ties},
                           {"reward_stddev", e.reward_stddev},
                           {"degenerate", e.degenerate}});
    for (const auto& [metric, value] : std::vector<std::pair<std::string, double>>{
             {"accuracy", e.accuracy},
             {"normalized_margin_mean", e.normalized_margin_mean},
             {"n_examples", static_cast<double>(e.n_examples)},
             {"n_ties", static_cast<double>(e.n_ties)},
             {"reward_stddev", e.reward_stddev}}) {
      csv.cell(name).cell(ds).cell(model.seed).cell(metric).cell(value);
      csv.end_row();
    }
  }
  rep["seed"] = model.seed;
  rep["results"] = results;
  if (ctx.format == "csv") out.write("eval.csv", csv.str());
  else out.write("eval.json", dump(rep));
}

// ---------------------------------------------------------------------------
// compare

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cells.back() += '"', ++i;
      else if (c == '"') quoted = false;
      else cells.back() += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

/// Reads the accuracy rows of an eval report, in CSV or JSON form.
AccuracyTable load_accuracy_table(const Context& ctx, const std::string& p) {
  const fs::path path = resolve(ctx, p);
  if (!fs::exists(path)) throw MissingInput("missing input file: " + path.string());
  AccuracyTable t;
  if (path.extension() == ".json") {
    const Json j = load_json_file(ctx, p);
    try {
      for (const auto& r : j.at("results"))
        t[{j.at("model").get<std::string>(), r.at("dataset").get<std::string>(), j.at("seed").get<std::string>()}] =
            r.at("accuracy").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ": " + e.what());
    }
    return t;
  }
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (split_csv_line(line) != std::vector<std::string>{"model", "dataset", "seed", "metric", "value"})
    throw InputError(path.string() + ": expected header model,dataset,seed,metric,value");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw InputError(path.string() + ": line " + std::to_string(line_no) + ": expected 5 cells");
    if (c[3] != "accuracy") continue;
    double v = 0.0;
    const auto res = std::from_chars(c[4].data(), c[4].data() + c[4].size(), v);
    if (res.ec != std::errc() || res.ptr != c[4].data() + c[4].size())
      throw InputError(path.string() + ": line " + std::to_string(line_no) + ": bad number");
    t[{c[0], c[1], c[2]}] = v;
  }
  return t;
}

void cmd_compare(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  s.get<std::uint64_t>("seed", 0);
  const std::string a = s.require<std::string>("a");
  const std::string b = s.require<std::string>("b");
  const double thr = s.get("tie_threshold", 0.01);
  s.check(thr >= 0.0, "tie_threshold", "must be non-negative");
  s.finish();
  const AccuracyTable ta = load_accuracy_table(ctx, a), tb = load_accuracy_table(ctx, b);
  const WinRate w = win_rate_comparison(ta, tb, thr);
  if (ctx.format == "json") {
    Json rep = report_header(ctx);
    rep["tie_threshold"] = thr;
    rep["a_wins"] = w.a_wins;
    rep["ties"] = w.ties;
    rep["b_wins"] = w.b_wins;
    rep["cells"] = w.cells;
    Json cells = Json::array();
    for (const auto& [k, acc] : ta)
      cells.push_back(Json{{"model", k.model}, {"dataset", k.dataset}, {"seed", k.seed}, {"a", acc}, {"b", tb.at(k)}});
    rep["per_cell"] = cells;
    out.write("compare.json", dump(rep));
  } else {
    CsvWriter csv({"a_wins", "ties", "b_wins", "cells", "tie_threshold"});
    csv.cell(w.a_wins).cell(w.ties).cell(w.b_wins).cell(w.cells).cell(thr);
    csv.end_row();
    out.write("compare.csv", csv.str());
  }
  std::cout << "a wins " << format_double(w.a_wins) << "%, ties " << format_double(w.ties) << "%, b wins "
            << format_double(w.b_wins) << "%\n";
}

// ---------------------------------------------------------------------------
// dynamics-check

TokenSeq random_tokens(Rng& rng, std::size_t vocab, std::size_t len) {
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(vocab - 1));
  TokenSeq s(len);
  for (auto& t : s) t = tok(rng);
  return s;
}

void cmd_dynamics(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  const auto seed = s.get<std::uint64_t>("seed", 0);
  const Representations r = parse_representations(s.child("representations"));
  const RewardKind kind = parse_variant(s, "variant");
  s.check(kind == RewardKind::Ex || kind == RewardKind::Im || kind == RewardKind::ExGrm, "variant",
          "dynamics predictions exist for ex, im and exgrm");
  const std::size_t instances = s.get<std::size_t>("instances", 10);
  const std::size_t max_prompt = s.get<std::size_t>("max_prompt_length", 3);
  const std::size_t max_response = s.get<std::size_t>("max_response_length", 3);
  const double beta = s.get("beta", 1.0);
  const double scale = s.get("init_scale", 1.0);
  std::vector<double> etas{1e-2, 5e-3, 2.5e-3};
  if (s.has("etas")) etas = s.get("etas", etas);
  const TemplateSpec tmpl = parse_template(s.child("template"), r.vocab_size);
  s.finish();
  s.check(instances > 0, "instances", "must be positive");
  s.check(max_prompt > 0, "max_prompt_length", "must be positive");
  s.check(max_response > 0, "max_response_length", "must be positive");
  s.check(beta > 0.0, "beta", "must be positive");
  s.check(!etas.empty(), "etas", "needs at least one step size");
  for (double e : etas) s.check(e >= 0.0 && std::isfinite(e), "etas", "must be non-negative");

  Rng rng(derive_seed(seed, 2));
  std::uniform_int_distribution<std::size_t> plen(1, max_prompt), rlen(1, max_response);
  CsvWriter csv({"instance", "eta", "g", "predicted_delta", "actual_delta", "residual", "residual_ratio"});
  Json rep = report_header(ctx);
  rep["variant"] = to_string(kind);
  Json rows = Json::array();
  for (std::size_t i = 0; i < instances; ++i) {
    RewardScorer scorer = ExReward(LinearHead{gaussian_vector(rng, r.dim, scale)}, r.reps);
    if (kind != RewardKind::Ex) {
      const PolicyState p(gaussian_matrix(rng, r.vocab_size, r.dim, scale), r.reps);
      if (kind == RewardKind::Im)
        scorer = ImReward(p.with_unembedding(gaussian_matrix(rng, r.vocab_size, r.dim, scale)), p, beta);
      else
        scorer = ExGrmReward(p, GrmTemplate::with_separator(tmpl.separator, tmpl.yes, tmpl.no));
    }
    TokenSeq chosen = random_tokens(rng, r.vocab_size, rlen(rng)), rejected;
    do rejected = random_tokens(rng, r.vocab_size, rlen(rng));
    while (rejected == chosen);
    DynamicsQuery q{PreferenceExample(random_tokens(rng, r.vocab_size, plen(rng)), chosen, rejected),
                    random_tokens(rng, r.vocab_size, plen(rng)), random_tokens(rng, r.vocab_size, rlen(rng)), 0.0};
    double previous = std::nan("");
    for (double eta : etas) {
      q.eta = eta;
      const DynamicsReport d = dynamics_check(scorer, q);
      const double ratio = std::isnan(previous) || d.residual == 0.0 ? std::nan("") : previous / d.residual;
      previous = d.residual;
      csv.cell(i).cell(eta).cell(d.g).cell(d.predicted_delta).cell(d.actual_delta).cell(d.residual).cell(ratio);
      csv.end_row();
      Json row{{"instance", i},           {"eta", eta},
               {"g", d.g},                {"predicted_delta", d.predicted_delta},
               {"actual_delta", d.actual_delta}, {"residual", d.residual}};
      if (!std::isnan(ratio)) row["residual_ratio"] = ratio;
      Json coeffs = Json::array();
      for (const auto& c : d.coefficients)
        coeffs.push_back(Json{{"k", c.k}, {"l", c.l}, {"role", to_string(c.role)}, {"name", c.name},
                              {"value", c.value}, {"inner_product", c.inner_product}});
      row["coefficients"] = coeffs;
      rows.push_back(row);
    }
  }
  rep["rows"] = rows;
  if (ctx.format == "csv") out.write("dynamics.csv", csv.str());
  else out.write("dynamics.json", dump(rep));
}

// ---------------------------------------------------------------------------
// theorem1

Json generator_json(const EfficientGeneratorReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back(Json{{"prompt_length", row.prompt_length},
                        {"prompt_count", row.prompt_count},
                        {"min_probability", row.min_probability},
                        {"threshold", row.threshold},
                        {"pass", row.pass}});
  Json j{{"k", r.k}, {"alpha", r.alpha}, {"family", r.family}, {"rows", rows}};
  j["largest_failing_length"] = r.largest_failing_length ? Json(*r.largest_failing_length) : Json(nullptr);
  return j;
}

void cmd_theorem1(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  const auto seed = s.get<std::uint64_t>("seed", 0);
  const std::string task_name = s.get<std::string>("task", "toy");
  const double delta = s.get("delta", 1.0);
  const double beta = s.get("beta", 0.5);
  const std::size_t k = s.get<std::size_t>("k", 1);
  const double alpha = s.get("alpha", 1.0);
  s.check(delta > 0.0, "delta", "must be positive");
  s.check(beta > 0.0, "beta", "must be positive");
  s.check(alpha > 0.0, "alpha", "must be positive");

  Task task;
  if (task_name == "toy") {
    task = toy_two_response_task();
  } else if (task_name == "ham") {
    std::vector<std::size_t> sizes{6};
    if (s.has("sizes")) sizes = s.get("sizes", sizes);
    const double p = s.get("p", 0.2);
    const std::size_t per_size = s.get<std::size_t>("graphs_per_size", 3);
    s.check(p >= 0.0 && p < 1.0, "p", "must lie in [0, 1)");
    s.check(!sizes.empty(), "sizes", "needs at least one graph size");
    for (std::size_t n : sizes) s.check(n >= 4 && n <= 8, "sizes", "graph sizes must lie in [4, 8]");
    s.check(per_size > 0, "graphs_per_size", "must be positive");
    const std::size_t max_n = *std::max_element(sizes.begin(), sizes.end());
    std::vector<Graph> graphs;
    Rng rng(derive_seed(seed, 3));
    for (std::size_t n : sizes)
      for (std::size_t i = 0; i < per_size; ++i) graphs.push_back(generate_ham_graph(n, p, rng).graph);
    task = ham_task(graphs, ham_vocabulary(max_n));
  } else {
    s.check(false, "task", "expected 'toy' or 'ham'");
  }
  s.finish();

  const TabularPolicy ref = uniform_reference(task);
  const auto rep = verifier_construction_report(ref, task, delta, beta);
  const auto built = construct_verifier_policy(ref, task, delta, beta);
  const auto groups = group_by_length(task.prompts);

  Json j = report_header(ctx);
  j["task"] = task.name;
  j["delta"] = delta;
  j["beta"] = beta;
  j["bound"] = rep.bound;
  j["is_verifier"] = rep.verifier.is_verifier;
  j["measured_min_margin"] = rep.verifier.measured_min_margin;
  j["cross_accuracy"] = rep.verifier.cross_accuracy;
  j["cross_pairs"] = rep.verifier.cross_pairs;
  j["bound_holds"] = rep.bound_holds;
  j["max_identity_residual"] = rep.max_identity_residual;
  j["outside_universe"] = rep.outside_universe;
  CsvWriter csv({"prompt", "universe_count", "correct_count", "reference_mass", "policy_mass", "normalizer", "ratio",
                 "bound", "margin", "identity_residual"});
  Json prompts = Json::array();
  for (std::size_t i = 0; i < rep.prompts.size(); ++i) {
    const auto& row = rep.prompts[i];
    prompts.push_back(Json{{"universe_count", row.universe_count},
                           {"correct_count", row.correct_count},
                           {"reference_mass", row.reference_mass},
                           {"policy_mass", row.policy_mass},
                           {"normalizer", row.normalizer},
                           {"ratio", row.ratio},
                           {"margin", rep.verifier.margin_per_prompt[i]},
                           {"identity_residual", row.identity_residual}});
    csv.cell(i).cell(row.universe_count).cell(row.correct_count).cell(row.reference_mass).cell(row.policy_mass);
    csv.cell(row.normalizer).cell(row.ratio).cell(rep.bound).cell(rep.verifier.margin_per_prompt[i]);
    csv.cell(row.identity_residual);
    csv.end_row();
  }
  j["prompts"] = prompts;
  j["efficient_generator"] = Json{{"reference", generator_json(efficient_generator_check(ref, task, k, alpha, groups))},
                                  {"constructed", generator_json(efficient_generator_check(built.policy, task, k,
                                                                                           alpha, groups))}};
  if (ctx.format == "csv") out.write("theorem1.csv", csv.str());
  else out.write("theorem1.json", dump(j));
  std::cout << "min margin " << format_double(rep.verifier.measured_min_margin) << " (delta "
            << format_double(delta) << ")\n";
}

// ---------------------------------------------------------------------------
// theorem2

void cmd_theorem2(Context& ctx, Manifest& out) {
  Section s(ctx.config, "");
  UnseenTokenConfig c;
  c.seed = s.get<std::uint64_t>("seed", 0);
  c.vocab_size = s.get("vocab_size", c.vocab_size);
  c.train_token_count = s.get("train_token_count", c.train_token_count);
  c.dim = s.get("dim", c.dim);
  c.prompt_length = s.get("prompt_length", c.prompt_length);
  c.train_count = s.get("train_count", c.train_count);
  c.eval_count = s.get("eval_count", c.eval_count);
  c.signal = s.get("signal", c.signal);
  c.noise = s.get("noise", c.noise);
  c.min_quality_gap = s.get("min_quality_gap", c.min_quality_gap);
  c.beta = s.get("beta", c.beta);
  c.lr_fraction = s.get("lr_fraction", c.lr_fraction);
  c.steps = s.get("steps", c.steps);
  c.record_every = s.get("record_every", c.record_every);
  c.init_scale = s.get("init_scale", c.init_scale);
  c.strict_lr = s.get("strict_lr", c.strict_lr) || ctx.strict_lr;
  c.max_attempts = s.get("max_attempts", c.max_attempts);
  c.realizability_budget = s.get("realizability_budget", c.realizability_budget);
  s.finish();
  s.check(c.lr_fraction > 0.0, "lr_fraction", "must be positive");
  s.check(c.beta > 0.0, "beta", "must be positive");
  s.check(c.record_every > 0, "record_every", "must be positive");

  const UnseenTokenReport r = run_unseen_token_experiment(c);
  CsvWriter csv({"step", "ex_train_loss", "ex_train_accuracy", "im_train_loss", "im_train_accuracy",
                 "ex_eval_accuracy", "im_eval_accuracy", "ustar_lower_bound", "im_eval_max_abs_difference",
                 "unseen_rows_identical"});
  Json steps = Json::array();
  for (const auto& st : r.steps) {
    csv.cell(st.step).cell(st.ex_train_loss).cell(st.ex_train_accuracy).cell(st.im_train_loss);
    csv.cell(st.im_train_accuracy).cell(st.ex_eval_accuracy).cell(st.im_eval_accuracy).cell(st.ustar_lower_bound);
    csv.cell(st.im_eval_max_abs_difference).cell(st.unseen_rows_identical);
    csv.end_row();
    steps.push_back(Json{{"step", st.step},
                         {"ex_train_loss", st.ex_train_loss},
                         {"ex_train_accuracy", st.ex_train_accuracy},
                         {"im_train_loss", st.im_train_loss},
                         {"im_train_accuracy", st.im_train_accuracy},
                         {"ex_eval_accuracy", st.ex_eval_accuracy},
                         {"im_eval_accuracy", st.im_eval_accuracy},
                         {"ustar_lower_bound", st.ustar_lower_bound},
                         {"im_eval_max_abs_difference", st.im_eval_max_abs_difference},
                         {"unseen_rows_identical", st.unseen_rows_identical}});
  }
  Json j = report_header(ctx);
  j["learning_rate"] = r.learning_rate;
  j["lr_bound"] = Json{{"max_rep_norm", r.lr_bound.max_rep_norm}, {"bound", r.lr_bound.bound}};
  j["attempts"] = r.attempts;
  j["ex_realizability"] = to_string(r.ex_realizability);
  j["im_realizability"] = to_string(r.im_realizability);
  j["ustar_min_margin"] = r.ustar_min_margin;
  j["ustar_lower_bound"] = r.ustar_lower_bound;
  j["ex_final_cosine_to_ustar"] = r.ex_final_cosine_to_ustar;
  j["first_step_ex_meets_bound"] =
      r.first_step_ex_meets_bound ? Json(*r.first_step_ex_meets_bound) : Json(nullptr);
  j["im_final_eval_differences"] = r.im_final_eval_differences;
  j["steps"] = steps;
  if (ctx.format == "csv") out.write("theorem2.csv", csv.str());
  else out.write("theorem2.json", dump(j));
  const auto& last = r.steps.back();
  std::cout << "final: ex eval " << format_double(last.ex_eval_accuracy) << ", im eval "
            << format_double(last.im_eval_accuracy) << ", u* bound " << format_double(r.ustar_lower_bound) << "\n";
}

using Handler = void (*)(Context&, Manifest&);

int run(const std::string& name, Handler handler, const std::string& config_path, std::optional<std::uint64_t> seed,
        const std::string& out_dir, bool strict_lr, const std::string& format) {
  Context ctx;
  ctx.command = name;
  ctx.strict_lr = strict_lr;
  ctx.format = format;
  ctx.out = out_dir;
  try {
    if (config_path.empty()) {
      ctx.config = Json::object();
      ctx.base = fs::current_path();
    } else {
      if (!fs::exists(config_path)) throw MissingInput("missing config file: " + config_path);
      try {
        ctx.config = Json::parse(read_file(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      if (!ctx.config.is_object()) throw ConfigError("config must be a JSON object");
      ctx.base = fs::absolute(config_path).parent_path();
    }
    if (seed) ctx.config["seed"] = *seed;
    std::uint64_t effective_seed = 0;
    if (ctx.config.contains("seed") && ctx.config["seed"].is_number_unsigned())
      effective_seed = ctx.config["seed"].get<std::uint64_t>();
    ctx.info = run_info(ctx.config, effective_seed);
    Manifest manifest(ctx.out, ctx.info);
    handler(ctx, manifest);
    manifest.finish();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-model generalization experiments"};
  app.require_subcommand(1);
  std::string config, out = "out", format = "json";
  std::optional<std::uint64_t> seed;
  bool strict = false;

  const std::vector<std::pair<std::string, std::pair<Handler, std::string>>> commands{
      {"gen-task", {cmd_gen_task, "Generate a preference dataset as JSONL"}},
      {"train", {cmd_train, "Train a reward model by full-batch gradient descent"}},
      {"eval", {cmd_eval, "Evaluate a trained reward model on datasets"}},
      {"dynamics-check", {cmd_dynamics, "Compare predicted and actual one-step reward changes"}},
      {"theorem1", {cmd_theorem1, "Verifier construction and generation probability"}},
      {"theorem2", {cmd_theorem2, "Unseen-token generalization experiment"}},
      {"compare", {cmd_compare, "Win-rate comparison of two accuracy tables"}},
  };
  std::map<CLI::App*, std::pair<std::string, Handler>> handlers;
  for (const auto& [name, spec] : commands) {
    CLI::App* sub = app.add_subcommand(name, spec.second);
    sub->add_option("--config", config, "JSON config file");
    sub->add_option("--seed", seed, "Seed overriding the config");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
    sub->add_flag("--strict-lr", strict, "Reject learning rates at or above the stability bound");
    sub->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    handlers[sub] = {name, spec.first};
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }
  for (const auto& [sub, h] : handlers)
    if (sub->parsed()) return run(h.first, h.second, config, seed, out, strict, format);
  return kFailure;
}
