#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qadapter/errors.hpp"

namespace qadapter {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct Vocab {
  int size = 0;
  std::optional<Token> eos;

  void validate() const;
};

// Token-level MDP: states are token sequences, actions are tokens,
// transitions append the chosen token. Immutable after construction.
struct Mdp {
  Vocab vocab;
  int horizon = 1;
  double gamma = 1.0;
  // Initial state distribution: (prompt, probability) pairs.
  std::vector<std::pair<TokenSeq, double>> prompts;

  void validate() const;

  // Flat key-value serialization (round-trips exactly).
  std::string to_config_string() const;
  static Mdp from_config_string(const std::string& text);
};

// Appends token a to s. Throws DomainError on an out-of-range token.
TokenSeq step(const TokenSeq& s, Token a, const Vocab& vocab);

// True iff the generated suffix of s (past prompt_len) has reached the
// horizon or contains the EOS token.
bool is_terminal(const Mdp& mdp, const TokenSeq& s, int prompt_len);

struct SeqHash {
  std::size_t operator()(const TokenSeq& s) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (Token t : s) {
      h ^= static_cast<std::size_t>(static_cast<std::uint32_t>(t));
      h *= 1099511628211ull;
    }
    return h;
  }
};

// Deterministic BFS enumeration of the reachable state tree.
// Index 0..num_prompts-1 are the prompts (in Mdp order); deeper states
// follow in breadth-first order with siblings ordered by token id.
struct StateSpace {
  Mdp mdp;
  std::vector<TokenSeq> seqs;                       // inverse
  std::unordered_map<TokenSeq, int, SeqHash> forward;
  std::vector<int> depth;        // generated tokens so far
  std::vector<int> prompt_len;   // prompt prefix length of each state
  std::vector<char> terminal;
  Eigen::MatrixXi children;      // child state index per action; -1 on terminal rows
  std::vector<int> prompt_states;
  Eigen::VectorXd prompt_probs;

  int num_states() const { return static_cast<int>(seqs.size()); }
  int vocab_size() const { return mdp.vocab.size; }

  int index_of(const TokenSeq& s) const;
};

inline constexpr std::size_t kDefaultStateCap = 2'000'000;

StateSpace enumerate_states(const Mdp& mdp, std::size_t cap = kDefaultStateCap);

// Reward tables are dense (num_states x vocab) matrices in StateSpace order.
using RewardTable = Eigen::MatrixXd;

}  // namespace qadapter
