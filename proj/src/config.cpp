#include "qadapter/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "qadapter/io.hpp"

namespace qadapter {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad real value for '" + key + "': '" + val + "'");
  }
}

long to_int(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    long v = std::stol(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for '" + key + "': '" + val + "'");
  }
}

bool to_bool(const std::string& key, const std::string& val) {
  if (val == "true" || val == "1") return true;
  if (val == "false" || val == "0") return false;
  throw ConfigError("bad boolean value for '" + key + "': '" + val + "'");
}

std::vector<double> to_real_list(const std::string& key, const std::string& val) {
  std::vector<double> out;
  std::istringstream in(val);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_real(key, item));
  }
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

}  // namespace

KvConfig parse_kv_config(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      cfg[section];  // record even if empty
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (!cfg[section].emplace(key, val).second) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig RunConfig::from_text(const std::string& text) {
  KvConfig kv = parse_kv_config(text);
  RunConfig rc;

  const std::map<std::string, std::vector<std::string>> known = {
      {"mdp", {"vocab_size", "eos", "horizon", "gamma", "prompts",
               "prompt_probs", "state_cap"}},
      {"rewards", {"mode", "r1_seed", "r2_seed", "low", "high", "r1_inline",
                   "r2_inline"}},
      {"pretrain", {"alpha1", "tol", "max_iters"}},
      {"data", {"n_pairs", "mode", "epsilon", "seed"}},
      {"train", {"alpha_tilde", "alpha_0", "beta", "gamma", "learning_rate",
                 "batch_size", "epochs", "seed", "normalize_by_length",
                 "optimizer", "psi_mode", "beta_dpo"}},
      {"eval", {"n_matches", "seed"}},
      {"sweep", {"alphas"}},
      {"paths", {"artifacts"}},
  };
  for (const auto& [section, keys] : kv) {
    auto it = known.find(section);
    if (it == known.end()) {
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, val] : keys) {
      if (std::find(it->second.begin(), it->second.end(), key) ==
          it->second.end()) {
        throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
      }
    }
  }

  auto get = [&](const std::string& sec, const std::string& key,
                 const std::string& fallback) -> std::string {
    auto sit = kv.find(sec);
    if (sit == kv.end()) return fallback;
    auto it = sit->second.find(key);
    return it == sit->second.end() ? fallback : it->second;
  };
  auto has = [&](const std::string& sec, const std::string& key) {
    auto sit = kv.find(sec);
    return sit != kv.end() && sit->second.count(key) > 0;
  };

  // [mdp] — reuse the Mdp flat-config parser for the shared keys.
  {
    std::ostringstream mdp_text;
    for (const char* key : {"vocab_size", "eos", "horizon", "gamma", "prompts",
                            "prompt_probs"}) {
      if (has("mdp", key)) mdp_text << key << "=" << get("mdp", key, "") << "\n";
    }
    try {
      rc.mdp = Mdp::from_config_string(mdp_text.str());
    } catch (const ParseError& e) {
      throw ConfigError(std::string("[mdp] ") + e.what());
    }
    if (has("mdp", "state_cap")) {
      rc.state_cap = static_cast<std::size_t>(
          to_int("state_cap", get("mdp", "state_cap", "")));
    }
  }

  {
    std::string mode = get("rewards", "mode", "random");
    if (mode == "random") {
      rc.rewards.mode = RewardSource::random;
    } else if (mode == "inline") {
      rc.rewards.mode = RewardSource::inline_table;
    } else {
      throw ConfigError("rewards mode must be 'random' or 'inline'");
    }
    rc.rewards.r1_seed = static_cast<std::uint64_t>(
        to_int("r1_seed", get("rewards", "r1_seed", "1")));
    rc.rewards.r2_seed = static_cast<std::uint64_t>(
        to_int("r2_seed", get("rewards", "r2_seed", "2")));
    rc.rewards.low = to_real("low", get("rewards", "low", "-1"));
    rc.rewards.high = to_real("high", get("rewards", "high", "1"));
    if (rc.rewards.low > rc.rewards.high) {
      throw ConfigError("rewards: low must be <= high");
    }
    if (has("rewards", "r1_inline")) {
      rc.rewards.r1_inline = to_real_list("r1_inline", get("rewards", "r1_inline", ""));
    }
    if (has("rewards", "r2_inline")) {
      rc.rewards.r2_inline = to_real_list("r2_inline", get("rewards", "r2_inline", ""));
    }
    if (rc.rewards.mode == RewardSource::inline_table &&
        (rc.rewards.r1_inline.empty() || rc.rewards.r2_inline.empty())) {
      throw ConfigError("rewards mode 'inline' requires r1_inline and r2_inline");
    }
  }

  rc.pretrain.alpha1 = to_real("alpha1", get("pretrain", "alpha1", "0.3"));
  if (rc.pretrain.alpha1 <= 0.0) throw ConfigError("alpha1 must be > 0");
  rc.pretrain.tol = to_real("tol", get("pretrain", "tol", "1e-10"));
  rc.pretrain.max_iters =
      static_cast<int>(to_int("max_iters", get("pretrain", "max_iters", "10000")));

  rc.data.n_pairs = static_cast<int>(to_int("n_pairs", get("data", "n_pairs", "1000")));
  if (rc.data.n_pairs < 1) throw ConfigError("n_pairs must be >= 1");
  {
    std::string mode = get("data", "mode", "stochastic");
    if (mode == "stochastic") {
      rc.data.mode = LabelMode::stochastic;
    } else if (mode == "deterministic") {
      rc.data.mode = LabelMode::deterministic;
    } else {
      throw ConfigError("data mode must be 'stochastic' or 'deterministic'");
    }
  }
  rc.data.epsilon = to_real("epsilon", get("data", "epsilon", "0.3"));
  if (rc.data.epsilon < 0.0 || rc.data.epsilon > 1.0) {
    throw ConfigError("epsilon must lie in [0,1]");
  }
  rc.data.seed = static_cast<std::uint64_t>(to_int("seed", get("data", "seed", "0")));

  rc.train.alpha_tilde = to_real("alpha_tilde", get("train", "alpha_tilde", "0.1"));
  if (rc.train.alpha_tilde <= 0.0) throw ConfigError("alpha_tilde must be > 0");
  rc.train.alpha_0 = to_real("alpha_0", get("train", "alpha_0", "1"));
  if (rc.train.alpha_0 < 0.0) throw ConfigError("alpha_0 must be >= 0");
  rc.train.beta = to_real("beta", get("train", "beta", "0.1"));
  rc.train.gamma = to_real("gamma", get("train", "gamma",
                                        get("mdp", "gamma", "0.99")));
  rc.train.learning_rate =
      to_real("learning_rate", get("train", "learning_rate", "3e-4"));
  if (rc.train.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  rc.train.batch_size =
      static_cast<int>(to_int("batch_size", get("train", "batch_size", "512")));
  rc.train.epochs = static_cast<int>(to_int("epochs", get("train", "epochs", "3")));
  if (rc.train.epochs < 1) throw ConfigError("epochs must be >= 1");
  rc.train.seed = static_cast<std::uint64_t>(to_int("seed", get("train", "seed", "0")));
  rc.train.normalize_by_length =
      to_bool("normalize_by_length", get("train", "normalize_by_length", "true"));
  {
    std::string opt = get("train", "optimizer", "adaptive_moments");
    if (opt == "adaptive_moments") {
      rc.train.optimizer = OptimizerKind::adaptive_moments;
    } else if (opt == "sgd") {
      rc.train.optimizer = OptimizerKind::sgd;
    } else {
      throw ConfigError("optimizer must be 'adaptive_moments' or 'sgd'");
    }
    std::string psi = get("train", "psi_mode", "mean");
    if (psi == "mean") {
      rc.train.psi_mode = PsiMode::mean;
    } else if (psi == "sum") {
      rc.train.psi_mode = PsiMode::sum;
    } else {
      throw ConfigError("psi_mode must be 'mean' or 'sum'");
    }
  }
  rc.train.beta_dpo = to_real("beta_dpo", get("train", "beta_dpo", "0.1"));

  rc.eval.n_matches =
      static_cast<int>(to_int("n_matches", get("eval", "n_matches", "10000")));
  if (rc.eval.n_matches < 1) throw ConfigError("n_matches must be >= 1");
  rc.eval.seed = static_cast<std::uint64_t>(to_int("seed", get("eval", "seed", "0")));

  if (has("sweep", "alphas")) {
    rc.sweep_alphas = to_real_list("alphas", get("sweep", "alphas", ""));
    for (double a : rc.sweep_alphas) {
      if (a < 0.0) throw ConfigError("sweep alphas must be >= 0");
    }
  }

  rc.artifacts_dir = get("paths", "artifacts", "artifacts");
  if (const char* env = std::getenv("QADAPTER_ARTIFACTS")) {
    rc.artifacts_dir = env;
  }
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const ArtifactError&) {
    throw ConfigError("cannot read config file " + path);
  }
  return from_text(text);
}

}  // namespace qadapter
