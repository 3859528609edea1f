#include "hsteer/synth_task.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "hsteer/binary_io.hpp"

namespace hsteer {

namespace {

std::optional<int> parse_number(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::vector<int> encode_all(const Vocab& vocab, const std::vector<std::string>& words) {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

}  // namespace

void CorpusConfig::validate() const {
  if (n_problems < 0) throw ValueError("CorpusConfig: n_problems must be >= 0");
  if (operand_min < 0 || operand_max < operand_min) throw ValueError("CorpusConfig: invalid operand range");
  if (n_operands_min < 2 || n_operands_max < n_operands_min) {
    throw ValueError("CorpusConfig: invalid n_operands range (need 2 <= min <= max)");
  }
  if (!(mode_mix > 0 && mode_mix < 1)) throw ValueError("CorpusConfig: mode_mix must be in (0, 1)");
  if (static_cast<long>(operand_max) * n_operands_max > kMaxNumber) {
    throw ValueError("CorpusConfig: operand range allows answers above " + std::to_string(kMaxNumber) +
                     " (out of vocabulary)");
  }
}

Vocab synth_vocab() {
  std::vector<std::string> t = {"<eos>", "Q", "A", "+", "=", ";"};
  for (int i = 0; i <= kMaxNumber; ++i) t.push_back(std::to_string(i));
  return Vocab(std::move(t));
}

Problem make_problem(const std::vector<int>& operands) {
  if (operands.size() < 2) throw ValueError("make_problem: need at least 2 operands");
  Problem p;
  p.operands = operands;
  p.prompt.push_back("Q");
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i) p.prompt.push_back("+");
    p.prompt.push_back(std::to_string(operands[i]));
  }
  p.prompt.push_back("A");
  int sum = operands[0];
  for (std::size_t i = 1; i < operands.size(); ++i) {
    const int next = sum + operands[i];
    for (std::string s : {std::to_string(sum), std::string("+"), std::to_string(operands[i]), std::string("="),
                          std::to_string(next), std::string(";")}) {
      p.stepwise.push_back(std::move(s));
    }
    sum = next;
  }
  if (sum > kMaxNumber || sum < 0) throw ValueError("make_problem: answer " + std::to_string(sum) + " out of vocabulary");
  p.answer = sum;
  p.stepwise.push_back(std::to_string(sum));
  p.direct.push_back(std::to_string(sum));
  return p;
}

std::vector<Problem> gen_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed);
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(cfg.n_problems));
  for (int i = 0; i < cfg.n_problems; ++i) {
    const auto n = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.n_operands_max - cfg.n_operands_min + 1))) +
                   cfg.n_operands_min;
    std::vector<int> ops(static_cast<std::size_t>(n));
    for (int& o : ops) {
      o = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.operand_max - cfg.operand_min + 1))) +
          cfg.operand_min;
    }
    out.push_back(make_problem(ops));
  }
  return out;
}

CorpusSplit split_corpus(const std::vector<Problem>& problems, std::size_t n_train) {
  if (n_train > problems.size()) throw ValueError("split_corpus: n_train exceeds corpus size");
  CorpusSplit s;
  s.train.assign(problems.begin(), problems.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(problems.begin() + static_cast<std::ptrdiff_t>(n_train), problems.end());
  return s;
}

std::vector<int> problem_tokens(const Vocab& vocab, const Problem& p, bool stepwise) {
  std::vector<int> ids = encode_all(vocab, p.prompt);
  const auto resp = encode_all(vocab, stepwise ? p.stepwise : p.direct);
  ids.insert(ids.end(), resp.begin(), resp.end());
  ids.push_back(vocab.id("<eos>"));
  return ids;
}

std::vector<std::vector<int>> lm_documents(const std::vector<Problem>& problems, const Vocab& vocab,
                                           const DocumentConfig& cfg, int epoch, std::size_t context_len) {
  if (problems.empty()) throw ValueError("lm_documents: no problems");
  if (cfg.max_problems_per_doc < 1) throw ValueError("lm_documents: max_problems_per_doc must be >= 1");
  RngStream rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1)));
  std::vector<std::size_t> order(problems.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<int>> docs;
  std::size_t next = 0;
  while (next < order.size()) {
    const auto want = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(cfg.max_problems_per_doc))) + 1;
    const bool stepwise = rng.uniform() < cfg.mode_mix;
    std::vector<int> doc;
    for (std::size_t k = 0; k < want && next < order.size(); ++k) {
      const auto toks = problem_tokens(vocab, problems[order[next]], stepwise);
      if (!doc.empty() && doc.size() + toks.size() > context_len) break;
      if (toks.size() > context_len) throw ValueError("lm_documents: problem longer than context");
      doc.insert(doc.end(), toks.begin(), toks.end());
      ++next;
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<std::size_t> sampled_positions(std::size_t response_len, std::size_t stride) {
  if (stride == 0) throw ValueError("sampled_positions: stride must be >= 1");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < response_len; i += stride) pos.push_back(i);
  return pos;
}

std::vector<SiteKey> all_sites(const ModelConfig& cfg) {
  std::vector<SiteKey> keys;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (Site s : kAllSites) keys.push_back(SiteKey{l, s});
  return keys;
}

std::map<SiteKey, ContrastiveDataset> build_contrastive_all(const ToyModel& m, const std::vector<Problem>& problems,
                                                            const std::vector<SiteKey>& sites) {
  std::map<SiteKey, ContrastiveDataset> out;
  for (const auto& key : sites) {
    if (key.layer < 0 || key.layer >= m.config().n_layers) throw ValueError("build_contrastive: layer out of range");
    ContrastiveDataset d;
    d.layer = key.layer;
    d.site = key.site;
    out.emplace(key, std::move(d));
  }
  const auto context = static_cast<std::size_t>(m.config().context_len);
  for (std::size_t pi = 0; pi < problems.size(); ++pi) {
    const Problem& p = problems[pi];
    for (bool stepwise : {true, false}) {
      const auto tokens = problem_tokens(m.vocab(), p, stepwise);
      if (tokens.size() > context) {
        throw ValueError("build_contrastive: prompt + response of " + std::to_string(tokens.size()) +
                         " tokens exceeds context " + std::to_string(context));
      }
      DecodeSession session(m);
      CaptureSet cap;
      session.append(tokens, {}, &cap);
      const std::size_t start = p.prompt.size();
      const std::size_t span = tokens.size() - start;
      const auto positions = sampled_positions(span, stepwise ? kStepwiseStride : kDirectStride);
      for (auto& [key, data] : out) {
        for (std::size_t i : positions) {
          data.records.push_back(LabeledState{cap.at(CaptureKey{key.layer, key.site, start + i}), stepwise ? 1 : 0,
                                              static_cast<int>(pi)});
        }
      }
    }
  }
  return out;
}

ContrastiveDataset build_contrastive(const ToyModel& m, const std::vector<Problem>& problems, const SiteKey& site) {
  return std::move(build_contrastive_all(m, problems, {site}).at(site));
}

std::optional<int> extract_answer(const std::vector<std::string>& tokens) {
  for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
    if (auto v = parse_number(*it)) return v;
  }
  return std::nullopt;
}

double accuracy(const std::vector<Problem>& problems, const std::vector<std::vector<std::string>>& generations) {
  if (problems.size() != generations.size()) {
    throw DimensionError("accuracy: " + std::to_string(problems.size()) + " problems vs " +
                         std::to_string(generations.size()) + " generations");
  }
  if (problems.empty()) throw ValueError("accuracy: no problems");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto a = extract_answer(generations[i]);
    if (a && *a == problems[i].answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(problems.size());
}

bool is_stepwise(const std::vector<std::string>& tokens) {
  return std::find(tokens.begin(), tokens.end(), "=") != tokens.end();
}

void write_corpus(const std::filesystem::path& path, const std::vector<Problem>& problems) {
  std::string text;
  for (const auto& p : problems) {
    nlohmann::json j;
    j["operands"] = p.operands;
    j["answer"] = p.answer;
    j["prompt"] = p.prompt;
    j["direct"] = p.direct;
    j["stepwise"] = p.stepwise;
    text += j.dump();
    text += '\n';
  }
  write_file_bytes(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<Problem> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_corpus: cannot open " + path.string());
  std::vector<Problem> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Problem p;
      p.operands = j.at("operands").get<std::vector<int>>();
      p.answer = j.at("answer").get<int>();
      p.prompt = j.at("prompt").get<std::vector<std::string>>();
      p.direct = j.at("direct").get<std::vector<std::string>>();
      p.stepwise = j.at("stepwise").get<std::vector<std::string>>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValueError("read_corpus: " + path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hsteer
