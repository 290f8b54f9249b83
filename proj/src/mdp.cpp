#include "qadapter/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

namespace qadapter {

void Vocab::validate() const {
  if (size < 2) {
    throw ConfigError("vocab size must be >= 2, got " + std::to_string(size));
  }
  if (eos && (*eos < 0 || *eos >= size)) {
    throw ConfigError("eos token " + std::to_string(*eos) +
                      " out of range [0," + std::to_string(size) + ")");
  }
}

void Mdp::validate() const {
  vocab.validate();
  if (horizon < 1) {
    throw ConfigError("horizon must be >= 1");
  }
  if (gamma < 0.0 || gamma > 1.0) {
    throw ConfigError("gamma must lie in [0,1]");
  }
  if (prompts.empty()) {
    throw ConfigError("at least one prompt is required");
  }
  double total = 0.0;
  for (const auto& [seq, p] : prompts) {
    if (p < 0.0) throw ConfigError("prompt probabilities must be non-negative");
    for (Token t : seq) {
      if (t < 0 || t >= vocab.size) {
        throw ConfigError("prompt token " + std::to_string(t) + " out of range");
      }
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConfigError("prompt probabilities must sum to 1 (got " +
                      std::to_string(total) + ")");
  }
}

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string Mdp::to_config_string() const {
  std::ostringstream out;
  out << "vocab_size=" << vocab.size << "\n";
  if (vocab.eos) out << "eos=" << *vocab.eos << "\n";
  out << "horizon=" << horizon << "\n";
  out << "gamma=" << format_real(gamma) << "\n";
  out << "prompts=";
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (i) out << ";";
    const TokenSeq& seq = prompts[i].first;
    for (std::size_t j = 0; j < seq.size(); ++j) {
      if (j) out << " ";
      out << seq[j];
    }
  }
  out << "\n";
  out << "prompt_probs=";
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (i) out << ",";
    out << format_real(prompts[i].second);
  }
  out << "\n";
  return out.str();
}

Mdp Mdp::from_config_string(const std::string& text) {
  Mdp mdp;
  std::vector<TokenSeq> prompt_seqs;
  std::vector<double> prompt_probs;
  bool saw_prompts = false, saw_probs = false;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("mdp config line " + std::to_string(lineno) +
                       ": missing '='");
    }
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    try {
      if (key == "vocab_size") {
        mdp.vocab.size = std::stoi(val);
      } else if (key == "eos") {
        mdp.vocab.eos = static_cast<Token>(std::stoi(val));
      } else if (key == "horizon") {
        mdp.horizon = std::stoi(val);
      } else if (key == "gamma") {
        mdp.gamma = std::stod(val);
      } else if (key == "prompts") {
        saw_prompts = true;
        std::istringstream ps(val);
        std::string item;
        while (std::getline(ps, item, ';')) {
          TokenSeq seq;
          std::istringstream ts(item);
          Token t;
          while (ts >> t) seq.push_back(t);
          prompt_seqs.push_back(std::move(seq));
        }
        if (prompt_seqs.empty()) prompt_seqs.emplace_back();  // empty prompt
      } else if (key == "prompt_probs") {
        saw_probs = true;
        std::istringstream ps(val);
        std::string item;
        while (std::getline(ps, item, ',')) prompt_probs.push_back(std::stod(item));
      } else {
        throw ParseError("mdp config line " + std::to_string(lineno) +
                         ": unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("mdp config line " + std::to_string(lineno) +
                       ": bad value for '" + key + "'");
    }
  }
  if (!saw_prompts && !saw_probs) {
    prompt_seqs.emplace_back();  // default: single empty prompt
  }
  if (!saw_probs && !prompt_seqs.empty()) {
    prompt_probs.assign(prompt_seqs.size(),
                        1.0 / static_cast<double>(prompt_seqs.size()));
  }
  if (prompt_seqs.size() != prompt_probs.size()) {
    throw ParseError("mdp config: prompts and prompt_probs lengths differ");
  }
  for (std::size_t i = 0; i < prompt_seqs.size(); ++i) {
    mdp.prompts.emplace_back(prompt_seqs[i], prompt_probs[i]);
  }
  mdp.validate();
  return mdp;
}

TokenSeq step(const TokenSeq& s, Token a, const Vocab& vocab) {
  if (a < 0 || a >= vocab.size) {
    throw DomainError("token id " + std::to_string(a) + " out of range [0," +
                      std::to_string(vocab.size) + ")");
  }
  TokenSeq next = s;
  next.push_back(a);
  return next;
}

bool is_terminal(const Mdp& mdp, const TokenSeq& s, int prompt_len) {
  int generated = static_cast<int>(s.size()) - prompt_len;
  if (generated >= mdp.horizon) return true;
  if (mdp.vocab.eos) {
    for (std::size_t i = prompt_len; i < s.size(); ++i) {
      if (s[i] == *mdp.vocab.eos) return true;
    }
  }
  return false;
}

int StateSpace::index_of(const TokenSeq& s) const {
  auto it = forward.find(s);
  if (it == forward.end()) {
    throw DomainError("state not reachable in enumerated tree");
  }
  return it->second;
}

StateSpace enumerate_states(const Mdp& mdp, std::size_t cap) {
  mdp.validate();

  // Upper bound |prompts| * sum_{t=0..T} |V|^t, checked before enumerating.
  double bound = 0.0;
  double pw = 1.0;
  for (int t = 0; t <= mdp.horizon; ++t) {
    bound += pw;
    pw *= mdp.vocab.size;
  }
  bound *= static_cast<double>(mdp.prompts.size());
  if (!mdp.vocab.eos && bound > static_cast<double>(cap)) {
    throw CapacityError(
        "state count bound " + std::to_string(static_cast<long long>(bound)) +
        " = " + std::to_string(mdp.prompts.size()) + " prompts * sum_t " +
        std::to_string(mdp.vocab.size) + "^t (t<=" +
        std::to_string(mdp.horizon) + ") exceeds cap " + std::to_string(cap));
  }

  StateSpace sp;
  sp.mdp = mdp;
  auto add_state = [&](const TokenSeq& seq, int plen, int d) -> int {
    auto it = sp.forward.find(seq);
    if (it != sp.forward.end()) return it->second;  // shared-prefix prompts
    if (sp.seqs.size() >= cap) {
      throw CapacityError("enumerated state count exceeds cap " +
                          std::to_string(cap));
    }
    int idx = static_cast<int>(sp.seqs.size());
    sp.forward.emplace(seq, idx);
    sp.seqs.push_back(seq);
    sp.prompt_len.push_back(plen);
    sp.depth.push_back(d);
    sp.terminal.push_back(is_terminal(mdp, seq, plen) ? 1 : 0);
    return idx;
  };

  sp.prompt_probs.resize(static_cast<Eigen::Index>(mdp.prompts.size()));
  for (std::size_t i = 0; i < mdp.prompts.size(); ++i) {
    int idx = add_state(mdp.prompts[i].first,
                        static_cast<int>(mdp.prompts[i].first.size()), 0);
    sp.prompt_states.push_back(idx);
    sp.prompt_probs[static_cast<Eigen::Index>(i)] = mdp.prompts[i].second;
  }

  // BFS: the vector itself is the queue (indices are assigned in BFS order).
  for (std::size_t qi = 0; qi < sp.seqs.size(); ++qi) {
    if (sp.terminal[qi]) continue;
    TokenSeq base = sp.seqs[qi];
    int plen = sp.prompt_len[qi];
    int d = sp.depth[qi];
    for (Token a = 0; a < mdp.vocab.size; ++a) {
      add_state(step(base, a, mdp.vocab), plen, d + 1);
    }
  }

  sp.children.setConstant(sp.num_states(), mdp.vocab.size, -1);
  for (int i = 0; i < sp.num_states(); ++i) {
    if (sp.terminal[i]) continue;
    for (Token a = 0; a < mdp.vocab.size; ++a) {
      TokenSeq child = sp.seqs[i];
      child.push_back(a);
      sp.children(i, a) = sp.forward.at(child);
    }
  }
  return sp;
}

}  // namespace qadapter
