#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsteer/activation_io.hpp"
#include "hsteer/binary_io.hpp"
#include "hsteer/metrics.hpp"
#include "hsteer/pipeline.hpp"

namespace hsteer::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kRootEnv = "HSTEER_ARTIFACT_ROOT";
inline constexpr const char* kVersion = "0.1.0";

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

// State shared by every subcommand of one invocation.
struct Session {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> argv;
  std::string root;
  std::string config_file;
  std::string started;
  std::vector<fs::path> inputs_seen;

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    if (path.is_relative() && !root.empty()) return fs::path(root) / path;
    return path;
  }

  fs::path input(const std::string& p) {
    const fs::path path = resolve(p);
    if (!fs::exists(path)) throw MissingArtifact("missing artifact: " + path.string());
    inputs_seen.push_back(fs::weakly_canonical(path));
    return path;
  }

  // Refuses to overwrite anything this command reads.
  fs::path output(const std::string& p) const {
    const fs::path path = resolve(p);
    const fs::path canon = fs::weakly_canonical(path);
    for (const auto& in : inputs_seen) {
      if (canon == in) throw ValueError("output " + path.string() + " is also an input");
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    return path;
  }

  void write_manifest(const fs::path& path, const CLI::App& cmd, const json& seeds, const json& inputs,
                      const json& outputs, const json& extra = json::object()) const {
    json m;
    m["tool_version"] = kVersion;
    m["command"] = cmd.get_name();
    m["argv"] = argv;
    m["config_file"] = config_file.empty() ? json(nullptr) : json(config_file);
    m["artifact_root"] = root.empty() ? json(nullptr) : json(root);
    // Loadable as-is with --config.
    m["resolved_config"] = "[" + cmd.get_name() + "]\n" + cmd.config_to_str(true, false);
    m["seeds"] = seeds;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["started"] = started;
    m["finished"] = utc_now();
    for (const auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << m.dump(2) << "\n";
  }
};

fs::path manifest_path(const fs::path& artifact) {
  if (fs::is_directory(artifact)) return artifact / "manifest.json";
  return fs::path(artifact.string() + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Option groups shared across subcommands.

void add_corpus_options(CLI::App* c, CorpusConfig& cfg) {
  c->add_option("--n", cfg.n_problems, "Number of problems")->check(CLI::NonNegativeNumber);
  c->add_option("--seed", cfg.seed, "Corpus seed");
  c->add_option("--operand-min", cfg.operand_min, "Smallest operand");
  c->add_option("--operand-max", cfg.operand_max, "Largest operand");
  c->add_option("--operands-min", cfg.n_operands_min, "Fewest operands per problem");
  c->add_option("--operands-max", cfg.n_operands_max, "Most operands per problem");
  c->add_option("--mode-mix", cfg.mode_mix, "Share of stepwise responses in LM training text");
}

void check_corpus_flags(const CorpusConfig& c) {
  if (c.operand_min < 0) throw ValueError("--operand-min must be >= 0");
  if (c.operand_max < c.operand_min) throw ValueError("--operand-max must be >= --operand-min");
  if (c.n_operands_min < 2) throw ValueError("--operands-min must be >= 2");
  if (c.n_operands_max < c.n_operands_min) throw ValueError("--operands-max must be >= --operands-min");
  if (!(c.mode_mix > 0 && c.mode_mix < 1)) throw ValueError("--mode-mix must be in (0, 1)");
  if (static_cast<long>(c.operand_max) * c.n_operands_max > kMaxNumber) {
    throw ValueError("--operand-max x --operands-max exceeds " + std::to_string(kMaxNumber) +
                     ", the largest number in the vocabulary");
  }
}

void add_optimizer_options(CLI::App* c, OptimizerConfig& o) {
  c->add_option("--alpha0", o.alpha0, "Base step size");
  c->add_option("--lambda", o.lambda, "Distance penalty weight");
  c->add_option("--tau", o.tau, "Stop once the probe score exceeds this");
  c->add_option("--max-iters", o.max_iters, "Iteration cap per state");
  c->add_option("--epsilon-c", o.epsilon_c, "Alignment tolerance for the upper lambda bound");
  c->add_option("--epsilon-d", o.epsilon_d, "Distance-reduction floor for the lower lambda bound");
  c->add_option("--opt-seed", o.seed, "Optimizer noise seed");
  c->add_flag("!--no-noise", o.noise_enabled, "Disable the Gaussian exploration term");
  c->add_option("--step-denominator", o.denominator, "Adaptive step normalizer: one-plus or abs-eps")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, StepDenominator>{{"one-plus", StepDenominator::kOnePlus},
                                                 {"abs-eps", StepDenominator::kAbsPlusEpsilon}},
          CLI::ignore_case));
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"alpha0", o.alpha0},
          {"lambda", o.lambda},
          {"tau", o.tau},
          {"max_iters", o.max_iters},
          {"noise", o.noise_enabled},
          {"seed", o.seed},
          {"step_denominator", o.denominator == StepDenominator::kOnePlus ? "one-plus" : "abs-eps"}};
}

std::vector<Problem> eval_split(const fs::path& corpus, std::size_t n_train) {
  const auto all = read_corpus(corpus);
  if (n_train > all.size()) {
    throw ValueError("--n-train " + std::to_string(n_train) + " exceeds corpus size " + std::to_string(all.size()));
  }
  return split_corpus(all, n_train).eval;
}

std::vector<SiteKey> dataset_sites(const ActivationFile& f) {
  std::set<SiteKey> keys;
  for (const auto& r : f.records) keys.insert({r.layer, r.site});
  return {keys.begin(), keys.end()};
}

std::map<SiteKey, ContrastiveDataset> load_datasets(const fs::path& path) {
  const ActivationFile f = read_records(path);
  std::map<SiteKey, ContrastiveDataset> out;
  for (const auto& key : dataset_sites(f)) out[key] = to_dataset(f, key);
  return out;
}

// ---------------------------------------------------------------------------

struct GenCorpus {
  CorpusConfig corpus;
  std::string out;

  void attach(CLI::App* c) {
    add_corpus_options(c, corpus);
    c->add_option("--out", out, "Corpus file (JSON lines)")->required();
  }

  void run(Session& s, const CLI::App& cmd) const {
    check_corpus_flags(corpus);
    const fs::path path = s.output(out);
    const auto problems = gen_corpus(corpus);
    write_corpus(path, problems);
    s.write_manifest(manifest_path(path), cmd, {{"corpus", corpus.seed}}, json::object(), {{"corpus", path.string()}});
    s.out << "wrote " << problems.size() << " problems to " << path.string() << "\n";
  }
};

struct TrainLm {
  std::string corpus_path;
  std::string out;
  TestbedConfig tb;

  void attach(CLI::App* c) {
    c->add_option("--corpus", corpus_path, "Corpus file")->required();
    c->add_option("--out", out, "Model checkpoint")->required();
    c->add_option("--n-train", tb.n_train, "Leading problems used for training");
    c->add_option("--mode-mix", tb.corpus.mode_mix, "Share of stepwise documents");
    c->add_option("--doc-seed", tb.corpus.seed, "Document shuffling seed");
    c->add_option("--max-problems-per-doc", tb.documents.max_problems_per_doc, "Problems chained per document");
    c->add_option("--embed-dim", tb.model.embed_dim, "Model width");
    c->add_option("--layers", tb.model.n_layers, "Transformer blocks");
    c->add_option("--heads", tb.model.n_heads, "Attention heads");
    c->add_option("--ffn-dim", tb.model.ffn_dim, "Feed-forward width");
    c->add_option("--context", tb.model.context_len, "Context length");
    c->add_option("--epochs", tb.lm.epochs, "Training epochs");
    c->add_option("--lr", tb.lm.learning_rate, "Peak learning rate");
    c->add_option("--batch", tb.lm.batch_size, "Sequences per step");
    c->add_option("--seed", tb.lm.seed, "Initialization and batching seed");
  }

  void run(Session& s, const CLI::App& cmd) const {
    const fs::path corpus = s.input(corpus_path);
    const fs::path path = s.output(out);
    const auto problems = read_corpus(corpus);
    if (tb.n_train > problems.size()) throw ValueError("--n-train exceeds corpus size");
    const auto train = split_corpus(problems, tb.n_train).train;
    LmTrainReport report;
    const ToyModel m = train_testbed_lm(train, tb, &report);
    save_model(m, path);
    s.write_manifest(manifest_path(path), cmd, {{"lm", tb.lm.seed}, {"documents", tb.corpus.seed}},
                     {{"corpus", corpus.string()}}, {{"model", path.string()}},
                     {{"perplexity", {{"initial", report.initial_perplexity}, {"final", report.final_perplexity}}}});
    s.out << "training perplexity " << report.initial_perplexity << " -> " << report.final_perplexity << "\n"
          << "wrote " << path.string() << " (" << parameter_count(m.config()) << " parameters)\n";
  }
};

struct CaptureToy {
  std::string model_path, corpus_path, out, tag = "toy";
  std::size_t n_train = 400;

  void attach(CLI::App* c) {
    c->add_option("--model", model_path, "Model checkpoint")->required();
    c->add_option("--corpus", corpus_path, "Corpus file")->required();
    c->add_option("--out", out, "ACTREC1 activation file")->required();
    c->add_option("--n-train", n_train, "Leading problems to capture");
    c->add_option("--model-tag", tag, "Tag stored in the file header");
  }

  void run(Session& s, const CLI::App& cmd) const {
    const fs::path model = s.input(model_path);
    const fs::path corpus = s.input(corpus_path);
    const fs::path path = s.output(out);
    const ToyModel m = load_model(model);
    const auto problems = read_corpus(corpus);
    if (n_train > problems.size()) throw ValueError("--n-train exceeds corpus size");
    const auto train = split_corpus(problems, n_train).train;
    const auto datasets = build_contrastive_all(m, train, all_sites(m.config()));
    const ActivationFile f = from_datasets(datasets, tag);
    write_records(path, f);
    s.write_manifest(manifest_path(path), cmd, json::object(),
                     {{"model", model.string()}, {"corpus", corpus.string()}}, {{"activations", path.string()}});
    s.out << "wrote " << f.records.size() << " records (dim " << f.dim << ", " << datasets.size() << " sites) to "
          << path.string() << "\n";
  }
};

struct TrainProbes {
  std::string activations, out;
  TrainConfig train;
  double top_fraction = 0.5;

  void attach(CLI::App* c) {
    c->add_option("--activations", activations, "ACTREC1 activation file")->required();
    c->add_option("--out", out, "Probe bank directory")->required();
    c->add_option("--top-fraction", top_fraction, "Share of layers kept for steering")
        ->check(CLI::Range(0.0, 1.0).description("in (0, 1]"));
    c->add_option("--epochs", train.epochs, "Probe training epochs");
    c->add_option("--lr", train.learning_rate, "Probe learning rate");
    c->add_option("--batch", train.batch_size, "Minibatch size");
    c->add_option("--hidden-width", train.hidden_width, "Probe hidden width");
    c->add_option("--holdout", train.holdout_fraction, "Held-out share for metrics");
    c->add_option("--seed", train.seed, "Probe seed");
  }

  void run(Session& s, const CLI::App& cmd) const {
    if (!(top_fraction > 0)) throw ValueError("--top-fraction must be in (0, 1]");
    const fs::path in = s.input(activations);
    const fs::path dir = s.output(out);
    ProbeBank bank;
    for (const auto& [key, data] : load_datasets(in)) bank[key] = train_and_evaluate(data, train);
    const Site site = best_site(bank);
    const auto selected = select_sites(bank, top_fraction, site);
    save_probe_bank(bank, dir);

    s.out << "layer  site       accuracy  f1      roc_auc\n";
    for (const auto& [key, e] : bank) {
      s.out << std::left << std::setw(7) << key.layer << std::setw(11) << site_name(key.site) << std::fixed
            << std::setprecision(4) << std::setw(10) << e.metrics.accuracy << std::setw(8) << e.metrics.f1
            << e.metrics.roc_auc << "\n";
    }
    s.out.unsetf(std::ios::floatfield);
    json sel = json::array();
    for (const auto& k : selected) sel.push_back(to_string(k));
    s.out << "selected (" << site_name(site) << ", top " << top_fraction << "): " << sel.dump() << "\n";
    s.write_manifest(manifest_path(dir), cmd, {{"probe", train.seed}}, {{"activations", in.string()}},
                     {{"probes", dir.string()}},
                     {{"selection", {{"site", std::string(site_name(site))}, {"top_fraction", top_fraction},
                                     {"sites", sel}}}});
  }
};

// Inputs and settings shared by steer and sweep.
struct SteerInputs {
  std::string model_path, corpus_path, probes_path, activations_path;
  std::size_t n_train = 400;
  double top_fraction = 0.5;
  std::optional<std::string> site;
  OptimizerConfig optimizer;
  double strength = 1.0;
  EvalConfig eval;

  void attach(CLI::App* c) {
    c->add_option("--model", model_path, "Model checkpoint")->required();
    c->add_option("--corpus", corpus_path, "Corpus file; problems after --n-train are evaluated")->required();
    c->add_option("--probes", probes_path, "Probe bank directory (optimize)");
    c->add_option("--activations", activations_path, "ACTREC1 file for fitting baselines");
    c->add_option("--n-train", n_train, "Leading problems held out from evaluation");
    c->add_option("--top-fraction", top_fraction, "Share of layers to steer");
    c->add_option("--site", site, "Site type to steer (ATTN, MLP, INT_LAYER); default: best mean F1");
    c->add_option("--strength", strength, "Control-vector strength");
    c->add_option("--max-new", eval.max_new, "Generation budget per problem");
    c->add_option("--eval-seed", eval.seed, "Decoding seed");
    add_optimizer_options(c, optimizer);
  }

  struct Loaded {
    ToyModel model;
    std::vector<Problem> eval;
    ProbeBank bank;
    std::vector<SiteKey> sites;
    Baselines baselines;
    json inputs = json::object();
  };

  Loaded load(Session& s, const std::vector<Method>& methods) const {
    Loaded l;
    const fs::path model = s.input(model_path);
    const fs::path corpus = s.input(corpus_path);
    l.inputs = {{"model", model.string()}, {"corpus", corpus.string()}};
    l.model = load_model(model);
    l.eval = eval_split(corpus, n_train);
    const bool need_probes = std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::kNone; });
    const bool need_data = std::any_of(methods.begin(), methods.end(),
                                       [](Method m) { return m != Method::kNone && m != Method::kOptimize; });
    if (need_probes) {
      if (probes_path.empty()) throw ValueError("--probes is required for steering methods");
      const fs::path probes = s.input(probes_path);
      l.inputs["probes"] = probes.string();
      l.bank = load_probe_bank(probes);
      if (l.bank.empty()) throw MissingArtifact("probe bank " + probes.string() + " is empty");
      const Site which = site ? parse_site(*site) : best_site(l.bank);
      l.sites = select_sites(l.bank, top_fraction, which);
    }
    if (need_data) {
      if (activations_path.empty()) throw ValueError("--activations is required for baseline methods");
      const fs::path acts = s.input(activations_path);
      l.inputs["activations"] = acts.string();
      l.baselines = fit_baselines(load_datasets(acts), l.sites);
    }
    return l;
  }
};

void write_traces(const fs::path& dir, const std::string& label, const EvalOutcome& outcome) {
  fs::create_directories(dir);
  std::ofstream gen(dir / (label + ".generations.jsonl"));
  for (const auto& g : outcome.generations) write_generation_trace(gen, g);
  std::size_t n = 0;
  for (std::size_t i = 0; i < outcome.generations.size(); ++i) {
    for (const auto& t : outcome.generations[i].decode_traces) {
      std::ostringstream name;
      name << label << ".p" << std::setw(4) << std::setfill('0') << i << ".o" << std::setw(3) << n++ << ".csv";
      std::ofstream f(dir / name.str());
      write_trace_csv(f, t);
    }
  }
}

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(kAllMethods), std::end(kAllMethods)};
    out.push_back(parse_method(n));
  }
  return out;
}

struct Steer {
  SteerInputs in;
  std::vector<std::string> methods{"optimize"};
  std::string out;
  std::string trace_dir;

  void attach(CLI::App* c) {
    in.attach(c);
    c->add_option("--method", methods, "none, optimize, c-dim, c-pca, c-lr, p-svm, da, or all (repeatable)");
    c->add_option("--out", out, "Report CSV")->required();
    c->add_option("--trace-dir", trace_dir, "Write generation and optimizer traces here");
  }

  void run(Session& s, const CLI::App& cmd) const {
    const auto ms = parse_methods(methods);
    auto loaded = in.load(s, ms);
    const fs::path path = s.output(out);
    std::vector<ExperimentReport> reports;
    for (Method m : ms) {
      const auto plan = make_plan(m, loaded.sites, loaded.bank, loaded.baselines, in.optimizer, in.strength);
      const std::string label(method_label(m));
      auto outcome = evaluate_plan(loaded.model, loaded.eval, plan, in.eval, label);
      if (!trace_dir.empty()) {
        const fs::path dir = s.output(trace_dir);
        write_traces(dir, label, outcome);
        outcome.report.trace_path = dir.string();
      }
      s.out << label << ": accuracy " << outcome.report.accuracy << ", stepwise " << outcome.report.stepwise_rate
            << ", fluency " << outcome.report.fluency << ", perplexity " << outcome.report.perplexity << "\n";
      reports.push_back(outcome.report);
    }
    std::ofstream f(path);
    write_reports_csv(f, reports);
    f.close();
    json outs = {{"report", path.string()}};
    if (!trace_dir.empty()) outs["traces"] = s.resolve(trace_dir).string();
    json sel = json::array();
    for (const auto& k : loaded.sites) sel.push_back(to_string(k));
    s.write_manifest(manifest_path(path), cmd, {{"optimizer", in.optimizer.seed}, {"eval", in.eval.seed}},
                     loaded.inputs, outs, {{"optimizer", optimizer_json(in.optimizer)}, {"sites", sel}});
  }
};

struct Sweep {
  SteerInputs in;
  std::string method = "optimize";
  std::string param = "lambda";
  std::vector<double> grid;
  std::string out;

  void attach(CLI::App* c) {
    in.attach(c);
    c->add_option("--method", method, "Steering method");
    c->add_option("--param", param, "Swept parameter")
        ->check(CLI::IsMember({"lambda", "tau", "alpha0", "strength"}));
    c->add_option("--grid", grid, "Values to evaluate")->required();
    c->add_option("--out", out, "Sweep CSV")->required();
  }

  void run(Session& s, const CLI::App& cmd) const {
    const Method m = parse_method(method);
    const auto loaded = in.load(s, {m});
    const fs::path path = s.output(out);
    const auto reports = run_sweep(grid, param, [&](double v) {
      OptimizerConfig oc = in.optimizer;
      double strength = in.strength;
      if (param == "lambda") oc.lambda = v;
      if (param == "tau") oc.tau = v;
      if (param == "alpha0") oc.alpha0 = v;
      if (param == "strength") strength = v;
      const auto plan = make_plan(m, loaded.sites, loaded.bank, loaded.baselines, oc, strength);
      const auto r = evaluate_plan(loaded.model, loaded.eval, plan, in.eval, std::string(method_label(m))).report;
      s.out << param << "=" << v << ": accuracy " << r.accuracy << ", stepwise " << r.stepwise_rate << "\n";
      return r;
    });
    std::ofstream f(path);
    write_reports_csv(f, reports);
    f.close();
    s.write_manifest(manifest_path(path), cmd, {{"optimizer", in.optimizer.seed}, {"eval", in.eval.seed}},
                     loaded.inputs, {{"sweep", path.string()}}, {{"optimizer", optimizer_json(in.optimizer)}});
  }
};

struct BoundsReportCmd {
  std::vector<std::string> traces;
  double lambda = 0.01;
  std::string out;

  void attach(CLI::App* c) {
    c->add_option("--traces", traces, "Optimizer trace CSVs, or directories holding them")->required();
    c->add_option("--lambda", lambda, "Lambda to check against the per-step bounds");
    c->add_option("--out", out, "Bounds CSV")->required();
  }

  void run(Session& s, const CLI::App& cmd) const {
    std::vector<fs::path> files;
    json ins = json::array();
    for (const auto& t : traces) {
      const fs::path p = s.input(t);
      ins.push_back(p.string());
      if (fs::is_directory(p)) {
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(p)) {
          if (e.path().extension() == ".csv") found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
      } else {
        files.push_back(p);
      }
    }
    if (files.empty()) throw MissingArtifact("no optimizer traces found under the given --traces");
    const fs::path path = s.output(out);
    std::ofstream f(path);
    f << "trace,t,lemma1_ub,lemma2_lb,in_bounds,fraction_in_bounds\n";
    std::size_t steps = 0, inside = 0;
    for (const auto& file : files) {
      std::ifstream tin(file);
      const OptimizerTrace tr = read_trace_csv(tin);
      const BoundsReport rep = check_bounds(tr, lambda);
      for (std::size_t i = 0; i < tr.size(); ++i) {
        f << file.filename().string() << "," << tr[i].t << ",";
        if (tr[i].lemma1_upper) f << std::setprecision(17) << *tr[i].lemma1_upper;
        f << ",";
        if (tr[i].lemma2_lower) f << std::setprecision(17) << *tr[i].lemma2_lower;
        f << "," << (rep.in_bounds[i] ? 1 : 0) << "," << std::setprecision(17) << rep.fraction_in_bounds << "\n";
        inside += rep.in_bounds[i];
      }
      steps += tr.size();
    }
    f.close();
    const double frac = steps ? static_cast<double>(inside) / static_cast<double>(steps) : 0.0;
    s.out << files.size() << " traces, " << steps << " steps, lambda " << lambda << " in bounds at " << inside << " ("
          << frac << ")\n";
    s.write_manifest(manifest_path(path), cmd, json::object(), {{"traces", ins}}, {{"bounds", path.string()}},
                     {{"fraction_in_bounds", frac}});
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hidden-state steering toolkit"};
  app.name("hsteer");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI file with option values; command-line flags take precedence");
  app.set_version_flag("--version", kVersion);

  Session s{out, err, args, {}, {}, utc_now(), {}};
  app.add_option("--root", s.root, "Resolve relative artifact paths against this directory")->envname(kRootEnv);

  GenCorpus gen;
  TrainLm train_lm;
  CaptureToy capture;
  TrainProbes probes;
  Steer steer;
  Sweep sweep;
  BoundsReportCmd bounds;

  std::vector<std::pair<CLI::App*, std::function<void(const CLI::App&)>>> cmds;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* c = app.add_subcommand(name, help);
    cmd.attach(c);
    cmds.emplace_back(c, [&s, &cmd](const CLI::App& self) { cmd.run(s, self); });
  };
  add("gen-corpus", "Generate the synthetic addition corpus", gen);
  add("train-lm", "Train the toy language model on a corpus", train_lm);
  add("capture-toy", "Capture contrastive hidden states from the toy model into ACTREC1", capture);
  add("train-probes", "Train one probe per (layer, site) and print the F1 table", probes);
  add("steer", "Generate over the evaluation split under one or more steering methods", steer);
  add("sweep", "Evaluate a steering method over a parameter grid", sweep);
  add("bounds-report", "Check lambda against the per-step bounds stored in optimizer traces", bounds);

  std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::FileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0) s.config_file = cfg->as<std::string>();

  try {
    for (const auto& [c, fn] : cmds) {
      if (c->parsed()) fn(*c);
    }
  } catch (const MissingArtifact& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const FormatError& e) {
    err << "error: corrupt artifact: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const DimensionError& e) {
    err << "error: artifacts do not fit together: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitArtifact;
  }
  return kExitOk;
}

}  // namespace hsteer::cli
