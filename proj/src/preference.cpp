#include "qadapter/preference.hpp"

#include "qadapter/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace qadapter {

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_ids(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq[i]);
  }
  return out;
}

TokenSeq parse_ids(const std::string& text, int lineno) {
  TokenSeq seq;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    try {
      seq.push_back(static_cast<Token>(std::stoi(tok)));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad token id '" +
                       tok + "'");
    }
  }
  return seq;
}

}  // namespace

TokenSeq sample_response(const Policy& pi, const StateSpace& sp,
                         const TokenSeq& prompt, std::mt19937_64& rng) {
  int s = sp.index_of(prompt);
  TokenSeq out;
  while (!sp.terminal[s]) {
    double u = uniform01(rng);
    double acc = 0.0;
    int a = sp.vocab_size() - 1;
    for (int j = 0; j < sp.vocab_size(); ++j) {
      acc += pi.table(s, j);
      if (u < acc) {
        a = j;
        break;
      }
    }
    out.push_back(static_cast<Token>(a));
    s = sp.children(s, a);
  }
  return out;
}

std::vector<std::pair<int, int>> trajectory_steps(const StateSpace& sp,
                                                  const TokenSeq& prompt,
                                                  const TokenSeq& response) {
  std::vector<std::pair<int, int>> steps;
  int s = sp.index_of(prompt);
  for (Token a : response) {
    if (a < 0 || a >= sp.vocab_size()) {
      throw DomainError("response token " + std::to_string(a) + " out of range");
    }
    if (sp.terminal[s]) {
      // Post-EOS padding contributes nothing; anything else is unreachable.
      if (sp.mdp.vocab.eos) break;
      throw DomainError("response extends past the horizon");
    }
    steps.emplace_back(s, static_cast<int>(a));
    if (sp.mdp.vocab.eos && a == *sp.mdp.vocab.eos) break;
    s = sp.children(s, a);
  }
  return steps;
}

double trajectory_reward_sum(const StateSpace& sp, const RewardTable& r,
                             const TokenSeq& prompt, const TokenSeq& response) {
  double sum = 0.0;
  for (auto [s, a] : trajectory_steps(sp, prompt, response)) sum += r(s, a);
  return sum;
}

double bt_probability(double sum_w, double sum_l) {
  double d = sum_w - sum_l;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  double e = std::exp(d);
  return e / (1.0 + e);
}

Policy epsilon_mixture(const Policy& pi, double eps) {
  Policy out;
  double u = 1.0 / static_cast<double>(pi.table.cols());
  out.table = (1.0 - eps) * pi.table.array() + eps * u;
  return out;
}

PreferenceDataset generate_dataset(const StateSpace& sp, const RewardTable& r2,
                                   const Policy& behavior, int n_pairs,
                                   LabelMode mode, std::uint64_t seed,
                                   const std::string& behavior_desc,
                                   const std::string& mdp_fingerprint) {
  if (n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  PreferenceDataset ds;
  ds.vocab_size = sp.vocab_size();
  ds.horizon = sp.mdp.horizon;
  ds.meta.seed = seed;
  ds.meta.behavior = behavior_desc;
  ds.meta.mdp_fingerprint = mdp_fingerprint;
  ds.pairs.reserve(static_cast<std::size_t>(n_pairs));

  std::mt19937_64 rng(seed);
  for (int i = 0; i < n_pairs; ++i) {
    double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pidx = sp.prompt_states.size() - 1;
    for (std::size_t k = 0; k < sp.prompt_states.size(); ++k) {
      acc += sp.prompt_probs[static_cast<Eigen::Index>(k)];
      if (u < acc) {
        pidx = k;
        break;
      }
    }
    const TokenSeq& prompt = sp.mdp.prompts[pidx].first;
    TokenSeq ra = sample_response(behavior, sp, prompt, rng);
    TokenSeq rb = sample_response(behavior, sp, prompt, rng);
    double sum_a = trajectory_reward_sum(sp, r2, prompt, ra);
    double sum_b = trajectory_reward_sum(sp, r2, prompt, rb);
    double p_a = bt_probability(sum_a, sum_b);

    PreferencePair pair;
    pair.prompt = prompt;
    bool a_wins;
    if (mode == LabelMode::stochastic) {
      a_wins = uniform01(rng) < p_a;
    } else {
      a_wins = p_a >= 0.5;  // ties go to the first response
    }
    if (a_wins) {
      pair.chosen = std::move(ra);
      pair.rejected = std::move(rb);
      pair.label_prob = p_a;
    } else {
      pair.chosen = std::move(rb);
      pair.rejected = std::move(ra);
      pair.label_prob = 1.0 - p_a;
    }
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

RewardModelLoss reward_model_loss(const Eigen::MatrixXd& r_params,
                                  const std::vector<PreferencePair>& batch,
                                  const StateSpace& sp) {
  if (batch.empty()) throw ConfigError("reward_model_loss: empty batch");
  RewardModelLoss out;
  out.gradient = Eigen::MatrixXd::Zero(r_params.rows(), r_params.cols());
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const PreferencePair& pair : batch) {
    auto steps_w = trajectory_steps(sp, pair.prompt, pair.chosen);
    auto steps_l = trajectory_steps(sp, pair.prompt, pair.rejected);
    double delta = 0.0;
    for (auto [s, a] : steps_w) delta += r_params(s, a);
    for (auto [s, a] : steps_l) delta -= r_params(s, a);
    double sig = bt_probability(delta, 0.0);
    out.loss += -std::log(sig) * inv_n;
    double g = (sig - 1.0) * inv_n;  // d(-log sigma)/d delta
    for (auto [s, a] : steps_w) out.gradient(s, a) += g;
    for (auto [s, a] : steps_l) out.gradient(s, a) -= g;
  }
  return out;
}

void save_dataset(const PreferenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot open " + path + " for writing");
  out << "#qadapter-prefs v1 vocab=" << ds.vocab_size
      << " horizon=" << ds.horizon << " seed=" << ds.meta.seed;
  if (!ds.meta.behavior.empty()) out << " behavior=" << ds.meta.behavior;
  if (!ds.meta.mdp_fingerprint.empty()) out << " mdp=" << ds.meta.mdp_fingerprint;
  out << "\n";
  for (const PreferencePair& pair : ds.pairs) {
    out << "prompt=" << format_ids(pair.prompt)
        << "\tchosen=" << format_ids(pair.chosen)
        << "\trejected=" << format_ids(pair.rejected) << "\tlabel_prob=";
    if (pair.label_prob) {
      out << format_real(*pair.label_prob);
    } else {
      out << "-";
    }
    out << "\n";
  }
}

PreferenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open dataset " + path);
  PreferenceDataset ds;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file " + path);
  ++lineno;
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != "#qadapter-prefs" || version != "v1") {
      throw ParseError("line 1: expected '#qadapter-prefs v1' header");
    }
    std::string kv;
    while (hs >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ParseError("line 1: malformed header field '" + kv + "'");
      }
      std::string key = kv.substr(0, eq);
      std::string val = kv.substr(eq + 1);
      if (key == "vocab") {
        ds.vocab_size = std::stoi(val);
      } else if (key == "horizon") {
        ds.horizon = std::stoi(val);
      } else if (key == "seed") {
        ds.meta.seed = std::stoull(val);
      } else if (key == "behavior") {
        ds.meta.behavior = val;
      } else if (key == "mdp") {
        ds.meta.mdp_fingerprint = val;
      } else {
        throw ParseError("line 1: unknown header field '" + key + "'");
      }
    }
    if (ds.vocab_size < 2 || ds.horizon < 1) {
      throw ParseError("line 1: header must carry vocab>=2 and horizon>=1");
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    }
    const char* names[4] = {"prompt=", "chosen=", "rejected=", "label_prob="};
    for (int f = 0; f < 4; ++f) {
      if (fields[f].rfind(names[f], 0) != 0) {
        throw ParseError("line " + std::to_string(lineno) + ": field " +
                         std::to_string(f + 1) + " must start with '" +
                         names[f] + "'");
      }
      fields[f] = fields[f].substr(std::string(names[f]).size());
    }
    PreferencePair pair;
    pair.prompt = parse_ids(fields[0], lineno);
    pair.chosen = parse_ids(fields[1], lineno);
    pair.rejected = parse_ids(fields[2], lineno);
    if (fields[3] != "-") {
      try {
        pair.label_prob = std::stod(fields[3]);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(lineno) + ": bad label_prob '" +
                         fields[3] + "'");
      }
      if (*pair.label_prob < 0.0 || *pair.label_prob > 1.0) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": label_prob outside [0,1]");
      }
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (ds.pairs.empty()) throw ParseError("empty dataset: " + path);
  return ds;
}

}  // namespace qadapter
