#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsteer/probe.hpp"
#include "hsteer/toy_lm.hpp"

namespace hsteer {

// Multi-operand addition with two answer styles:
//   prompt   Q 3 + 4 + 5 A
//   direct   12
//   stepwise 3 + 4 = 7 ; 7 + 5 = 12 ; 12
struct Problem {
  std::vector<int> operands;
  int answer = 0;
  std::vector<std::string> prompt;
  std::vector<std::string> direct;
  std::vector<std::string> stepwise;

  friend bool operator==(const Problem&, const Problem&) = default;
};

// Largest number the synthetic vocabulary can spell.
inline constexpr int kMaxNumber = 57;

struct CorpusConfig {
  int n_problems = 500;
  int operand_min = 1;
  int operand_max = 9;
  int n_operands_min = 3;
  int n_operands_max = 4;
  double mode_mix = 0.2;  // share of stepwise responses in LM training text
  std::uint64_t seed = 7;

  void validate() const;
};

// "<eos>", "Q", "A", "+", "=", ";", then "0" .. "57": 64 tokens.
Vocab synth_vocab();

Problem make_problem(const std::vector<int>& operands);
std::vector<Problem> gen_corpus(const CorpusConfig& cfg);

// Training/evaluation split: the first n_train problems train, the rest
// evaluate.
struct CorpusSplit {
  std::vector<Problem> train;
  std::vector<Problem> eval;
};
CorpusSplit split_corpus(const std::vector<Problem>& problems, std::size_t n_train);

// prompt + response + "<eos>" as token ids.
std::vector<int> problem_tokens(const Vocab& vocab, const Problem& p, bool stepwise);

struct DocumentConfig {
  double mode_mix = 0.2;
  int max_problems_per_doc = 2;
  std::uint64_t seed = 7;
};

// LM training text for one epoch. Problems are shuffled and chained into
// documents of 1..max_problems_per_doc problems; every problem in a
// document uses the same answer style, stepwise with probability
// mode_mix. Each epoch draws fresh documents.
std::vector<std::vector<int>> lm_documents(const std::vector<Problem>& problems, const Vocab& vocab,
                                           const DocumentConfig& cfg, int epoch, std::size_t context_len);

// Response-span positions sampled for contrastive capture: every
// `stride`-th token of the response including its "<eos>".
std::vector<std::size_t> sampled_positions(std::size_t response_len, std::size_t stride);

inline constexpr std::size_t kStepwiseStride = 5;
inline constexpr std::size_t kDirectStride = 1;

// Stepwise responses (label 1, stride 5) against direct responses
// (label 0, stride 1), captured at every requested site with one forward
// pass per problem and style.
std::map<SiteKey, ContrastiveDataset> build_contrastive_all(const ToyModel& m, const std::vector<Problem>& problems,
                                                            const std::vector<SiteKey>& sites);
ContrastiveDataset build_contrastive(const ToyModel& m, const std::vector<Problem>& problems, const SiteKey& site);

// Every (layer, site) of the model.
std::vector<SiteKey> all_sites(const ModelConfig& cfg);

// Last numeric token, if any.
std::optional<int> extract_answer(const std::vector<std::string>& tokens);

// Fraction of generations whose extracted answer equals the gold answer.
double accuracy(const std::vector<Problem>& problems, const std::vector<std::vector<std::string>>& generations);

// A generation is in stepwise mode when it writes out a partial sum.
bool is_stepwise(const std::vector<std::string>& tokens);

// JSON-lines, one problem per line with explicit token arrays.
void write_corpus(const std::filesystem::path& path, const std::vector<Problem>& problems);
std::vector<Problem> read_corpus(const std::filesystem::path& path);

}  // namespace hsteer
