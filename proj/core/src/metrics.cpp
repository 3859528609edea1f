#include "hsteer/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>

namespace hsteer {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// Splits one logical CSV record; quoted fields may span lines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ValueError("read_reports_csv: unterminated quoted field");
  if (any) fields.push_back(std::move(field));
  return any;
}

double parse_double(const std::string& s, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValueError(std::string("read_reports_csv: bad value '") + s + "' in column " + column);
  }
}

}  // namespace

double ngram_entropy(std::span<const int> tokens, std::size_t n) {
  if (n == 0) throw ValueError("ngram_entropy: n must be >= 1");
  if (tokens.size() < n) {
    throw ValueError("ngram_entropy: sequence of " + std::to_string(tokens.size()) + " tokens is shorter than n=" +
                     std::to_string(n));
  }
  std::map<std::vector<int>, std::size_t> counts;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
  double h = 0.0;
  for (const auto& [gram, c] : counts) {
    const double f = static_cast<double>(c) / static_cast<double>(total);
    h -= f * std::log2(f);
  }
  return h <= 0.0 ? 0.0 : h;
}

FluencyScore fluency(std::span<const int> tokens, double w2, double w3) {
  if (!(w2 >= 0 && w3 >= 0) || std::abs(w2 + w3 - 1.0) > 1e-12) {
    throw ValueError("fluency: weights must be non-negative and sum to 1");
  }
  if (tokens.size() < 3) throw ValueError("fluency: need at least 3 tokens");
  FluencyScore s;
  s.bigram_entropy = ngram_entropy(tokens, 2);
  s.trigram_entropy = ngram_entropy(tokens, 3);
  s.weighted = w2 * s.bigram_entropy + w3 * s.trigram_entropy;
  return s;
}

void write_reports_csv(std::ostream& out, const std::vector<ExperimentReport>& reports) {
  out << kReportCsvHeader << "\n";
  for (const auto& r : reports) {
    out << csv_field(r.method) << ',' << csv_field(r.param) << ',' << fmt_double(r.value) << ',' << r.n_eval << ','
        << fmt_double(r.accuracy) << ',' << fmt_double(r.stepwise_rate) << ',' << fmt_double(r.fluency) << ','
        << fmt_double(r.bigram_entropy) << ',' << fmt_double(r.trigram_entropy) << ',' << fmt_double(r.fluency_w2)
        << ',' << fmt_double(r.fluency_w3) << ',' << fmt_double(r.perplexity) << ','
        << (r.judge ? fmt_double(*r.judge) : std::string()) << ',' << csv_field(r.error) << ','
        << csv_field(r.trace_path) << "\n";
  }
}

std::vector<ExperimentReport> read_reports_csv(std::istream& in) {
  std::vector<std::string> f;
  if (!read_csv_record(in, f)) throw ValueError("read_reports_csv: empty input");
  std::string header;
  for (std::size_t i = 0; i < f.size(); ++i) header += (i ? "," : "") + f[i];
  if (header != kReportCsvHeader) throw ValueError("read_reports_csv: unexpected header '" + header + "'");
  std::vector<ExperimentReport> out;
  while (read_csv_record(in, f)) {
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 15) throw ValueError("read_reports_csv: expected 15 columns, got " + std::to_string(f.size()));
    ExperimentReport r;
    r.method = f[0];
    r.param = f[1];
    r.value = parse_double(f[2], "value");
    r.n_eval = static_cast<std::size_t>(parse_double(f[3], "n_eval"));
    r.accuracy = parse_double(f[4], "accuracy");
    r.stepwise_rate = parse_double(f[5], "stepwise_rate");
    r.fluency = parse_double(f[6], "fluency");
    r.bigram_entropy = parse_double(f[7], "bigram_entropy");
    r.trigram_entropy = parse_double(f[8], "trigram_entropy");
    r.fluency_w2 = parse_double(f[9], "fluency_w2");
    r.fluency_w3 = parse_double(f[10], "fluency_w3");
    r.perplexity = parse_double(f[11], "perplexity");
    if (!f[12].empty()) r.judge = parse_double(f[12], "judge");
    r.error = f[13];
    r.trace_path = f[14];
    out.push_back(std::move(r));
  }
  return out;
}

EvalOutcome evaluate_plan(const ToyModel& m, const std::vector<Problem>& problems, const InterventionPlan& plan,
                          const EvalConfig& cfg, std::string method) {
  if (problems.empty()) throw ValueError("evaluate_plan: no problems");
  EvalOutcome out;
  ExperimentReport& r = out.report;
  r.method = std::move(method);
  r.n_eval = problems.size();
  r.fluency_w2 = cfg.w2;
  r.fluency_w3 = cfg.w3;

  RngStream base(cfg.seed);
  const Vocab& vocab = m.vocab();
  std::vector<std::vector<std::string>> texts;
  std::vector<int> pooled;
  double nll = 0.0;
  std::size_t scored = 0;
  std::size_t stepwise = 0;
  for (const auto& p : problems) {
    std::vector<int> prompt;
    for (const auto& w : p.prompt) prompt.push_back(vocab.id(w));
    RngStream rng = base.split();
    GenerateResult g = generate(m, prompt, plan, cfg.max_new, rng);

    std::vector<std::string> words;
    for (int t : g.tokens) words.push_back(vocab.text(t));
    if (is_stepwise(words)) ++stepwise;
    pooled.insert(pooled.end(), g.tokens.begin(), g.tokens.end());

    std::vector<int> full = prompt;
    full.insert(full.end(), g.tokens.begin(), g.tokens.end());
    if (g.stopped_at_eos) full.push_back(m.eos_id());
    const std::size_t n_resp = full.size() - prompt.size();
    if (n_resp > 0) {
      nll += std::log(perplexity(m, full, prompt.size())) * static_cast<double>(n_resp);
      scored += n_resp;
    }
    texts.push_back(std::move(words));
    out.generations.push_back(std::move(g));
  }
  r.accuracy = accuracy(problems, texts);
  r.stepwise_rate = static_cast<double>(stepwise) / static_cast<double>(problems.size());
  if (pooled.size() >= 3) {
    const FluencyScore fs = fluency(pooled, cfg.w2, cfg.w3);
    r.fluency = fs.weighted;
    r.bigram_entropy = fs.bigram_entropy;
    r.trigram_entropy = fs.trigram_entropy;
  }
  r.perplexity = scored ? std::exp(nll / static_cast<double>(scored)) : 0.0;
  return out;
}

std::vector<ExperimentReport> run_sweep(const std::vector<double>& grid, const std::string& param,
                                        const std::function<ExperimentReport(double)>& point) {
  if (grid.empty()) throw ValueError("run_sweep: empty grid");
  std::vector<ExperimentReport> out;
  for (double v : grid) {
    ExperimentReport r;
    try {
      r = point(v);
    } catch (const std::exception& e) {
      r = ExperimentReport{};
      r.error = e.what();
    }
    r.param = param;
    r.value = v;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace hsteer
