#include "scoretune/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "scoretune/errors.hpp"
#include "scoretune/serialization.hpp"

extern char** environ;

namespace scoretune {

void SftConfig::validate() const {
  if (epochs < 0) throw config_error("sft.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw config_error("sft.learning_rate must be positive");
}

void ToyConfig::validate() const {
  if (train_items < 1) throw config_error("toy.train_items must be >= 1");
  if (eval_items < 1) throw config_error("toy.eval_items must be >= 1");
  if (feature_dim < 1) throw config_error("toy.feature_dim must be >= 1");
}

void RunConfig::validate() const {
  reward.validate();
  grpo.validate();
  schedule.validate();
  train.validate();
  policy.validate();
  vocab.validate();
  toy.validate();
  teacher.validate();
  rejection.validate();
  sft.validate();
  tts.validate();
  if (policy.feature_dim != toy.feature_dim)
    throw config_error("policy.feature_dim must match toy.feature_dim");
  if (teacher.reason_len > policy.prefix_len)
    throw config_error("teacher.reason_len exceeds policy.prefix_len; sft could not rescore");
  if (output_dir.empty()) throw config_error("output_dir must be non-empty");
  if (paths.corpus.empty()) throw config_error("paths.corpus must be non-empty");
}

RunConfig default_config() { return RunConfig{}; }

namespace {

template <typename J>
J config_to_json(const RunConfig& config) {
  return J{{"seed", config.seed},
           {"output_dir", config.output_dir},
           {"reward", config.reward},
           {"grpo", config.grpo},
           {"schedule", config.schedule},
           {"train", config.train},
           {"policy", config.policy},
           {"vocab", config.vocab},
           {"toy", J{{"train_items", config.toy.train_items},
                     {"eval_items", config.toy.eval_items},
                     {"feature_dim", config.toy.feature_dim}}},
           {"teacher", config.teacher},
           {"rejection", config.rejection},
           {"sft", J{{"epochs", config.sft.epochs}, {"learning_rate", config.sft.learning_rate}}},
           {"tts", config.tts},
           {"paths", J{{"corpus", config.paths.corpus}, {"prompts", config.paths.prompts}}}};
}

template <typename J, typename T>
void section(const J& j, const char* key, T& out) {
  if (!j.contains(key)) throw config_error(std::string("config: missing section '") + key + "'");
  try {
    j.at(key).get_to(out);
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error(std::string("config section '") + key + "': " + e.what());
  }
}

}  // namespace

std::string serialize_config(const RunConfig& config) {
  return config_to_json<nlohmann::ordered_json>(config).dump(2) + "\n";
}

RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig config;
  section(j, "seed", config.seed);
  section(j, "output_dir", config.output_dir);
  section(j, "reward", config.reward);
  section(j, "grpo", config.grpo);
  section(j, "schedule", config.schedule);
  section(j, "train", config.train);
  section(j, "policy", config.policy);
  section(j, "vocab", config.vocab);
  {
    const auto& t = j.contains("toy") ? j.at("toy") : nlohmann::json();
    if (t.is_null()) throw config_error("config: missing section 'toy'");
    try {
      t.at("train_items").get_to(config.toy.train_items);
      t.at("eval_items").get_to(config.toy.eval_items);
      t.at("feature_dim").get_to(config.toy.feature_dim);
    } catch (const std::exception& e) {
      throw config_error(std::string("config section 'toy': ") + e.what());
    }
  }
  section(j, "teacher", config.teacher);
  section(j, "rejection", config.rejection);
  {
    if (!j.contains("sft")) throw config_error("config: missing section 'sft'");
    try {
      j.at("sft").at("epochs").get_to(config.sft.epochs);
      j.at("sft").at("learning_rate").get_to(config.sft.learning_rate);
    } catch (const std::exception& e) {
      throw config_error(std::string("config section 'sft': ") + e.what());
    }
  }
  section(j, "tts", config.tts);
  {
    if (!j.contains("paths")) throw config_error("config: missing section 'paths'");
    try {
      j.at("paths").at("corpus").get_to(config.paths.corpus);
      j.at("paths").at("prompts").get_to(config.paths.prompts);
    } catch (const std::exception& e) {
      throw config_error(std::string("config section 'paths': ") + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("config: cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

void apply_env_overrides(std::string& config_json_text,
                         const std::map<std::string, std::string>& env) {
  constexpr const char* kPrefix = "SCORETUNE_";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(config_json_text);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: malformed JSON: ") + e.what());
  }
  for (const auto& [name, value] : env) {
    if (name.rfind(kPrefix, 0) != 0) continue;
    const std::string path = lower(name.substr(std::string(kPrefix).size()));
    if (path.empty()) continue;

    nlohmann::json* node = &j;
    std::size_t pos = 0;
    while (true) {
      const std::size_t sep = path.find("__", pos);
      const std::string key = path.substr(pos, sep == std::string::npos ? sep : sep - pos);
      if (key.empty()) throw config_error("env override '" + name + "': empty path segment");
      if (sep == std::string::npos) {
        nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
        break;
      }
      node = &(*node)[key];
      pos = sep + 2;
    }
  }
  config_json_text = j.dump();
}

std::map<std::string, std::string> scoretune_env() {
  std::map<std::string, std::string> env;
  for (char** p = environ; p != nullptr && *p != nullptr; ++p) {
    const std::string entry(*p);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(0, eq);
    if (name.rfind("SCORETUNE_", 0) == 0) env[name] = entry.substr(eq + 1);
  }
  return env;
}

std::string config_hash(const RunConfig& config) {
  // plain json sorts keys, giving a canonical byte stream; artifact placement
  // (output_dir, paths) is not part of the experiment identity
  nlohmann::json j = config_to_json<nlohmann::json>(config);
  j.erase("output_dir");
  j.erase("paths");
  const std::string canonical = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace scoretune
