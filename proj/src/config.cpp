#include "sdcnet/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sdcnet/model.hpp"

namespace sdcnet {

using nlohmann::json;

void ExperimentConfig::validate() const {
  Method m = method_from_string(method);  // throws on unknown tags
  if (m == Method::bbb || m == Method::deterministic) {
    if (p.has_value())
      throw ConfigError("method " + method + " takes no leave-out rate; remove \"p\"");
  } else {
    if (!p.has_value()) throw ConfigError("method " + method + " requires a leave-out rate p");
    if (*p < 0.0 || *p > 1.0)
      throw ConfigError("p must be in [0,1], got " + std::to_string(*p));
  }
  if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  if (bbb_train_samples == 0) throw ConfigError("bbb_train_samples must be positive");
  if (val_passes == 0 || test_passes == 0)
    throw ConfigError("val_passes and test_passes must be positive");
  if (train_items == 0 || test_items == 0)
    throw ConfigError("train_items and test_items must be positive");
  if (architecture != "mnist_cnn" && architecture != "tiny_dense")
    throw ConfigError("unknown architecture: " + architecture);
  if (dataset != "mnist" && dataset != "blobs") throw ConfigError("unknown dataset: " + dataset);
  if (kl_schedule != "uniform" && kl_schedule != "geometric")
    throw ConfigError("unknown kl_schedule: " + kl_schedule);
  if (eval_chunk == 0) throw ConfigError("eval_chunk must be positive");
  if (blob_classes < 2) throw ConfigError("blob_classes must be >= 2");
}

namespace {

ExperimentConfig from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("method", cfg.method);
    if (j.contains("p") && !j.at("p").is_null()) cfg.p = j.at("p").get<double>();
    get("architecture", cfg.architecture);
    get("epochs", cfg.epochs);
    get("batch_size", cfg.batch_size);
    get("learning_rate", cfg.learning_rate);
    get("bbb_train_samples", cfg.bbb_train_samples);
    get("val_passes", cfg.val_passes);
    get("test_passes", cfg.test_passes);
    get("seed", cfg.seed);
    get("dataset", cfg.dataset);
    get("data_dir", cfg.data_dir);
    get("output_dir", cfg.output_dir);
    get("train_items", cfg.train_items);
    get("val_items", cfg.val_items);
    get("test_items", cfg.test_items);
    get("kl_schedule", cfg.kl_schedule);
    get("blob_classes", cfg.blob_classes);
    get("blob_noise", cfg.blob_noise);
    get("eval_chunk", cfg.eval_chunk);
    get("threads", cfg.threads);
    get("dump_passes", cfg.dump_passes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig from_key_value(const std::string& text) {
  json j = json::object();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    // Numbers and booleans become typed JSON values; everything else is a string.
    if (value == "true" || value == "false") {
      j[key] = value == "true";
    } else {
      try {
        std::size_t pos = 0;
        const double num = std::stod(value, &pos);
        if (pos == value.size()) {
          if (num == static_cast<double>(static_cast<long long>(num)) &&
              value.find('.') == std::string::npos && value.find('e') == std::string::npos &&
              value.find('E') == std::string::npos)
            j[key] = static_cast<long long>(num);
          else
            j[key] = num;
        } else {
          j[key] = value;
        }
      } catch (...) {
        j[key] = value;
      }
    }
  }
  return from_json(j);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw ConfigError("empty config");
  if (text[first] == '{') {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    return from_json(j);
  }
  return from_key_value(text);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["method"] = cfg.method;
  if (cfg.p.has_value()) j["p"] = *cfg.p;
  j["architecture"] = cfg.architecture;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["bbb_train_samples"] = cfg.bbb_train_samples;
  j["val_passes"] = cfg.val_passes;
  j["test_passes"] = cfg.test_passes;
  j["seed"] = cfg.seed;
  j["dataset"] = cfg.dataset;
  j["data_dir"] = cfg.data_dir;
  j["output_dir"] = cfg.output_dir;
  j["train_items"] = cfg.train_items;
  j["val_items"] = cfg.val_items;
  j["test_items"] = cfg.test_items;
  j["kl_schedule"] = cfg.kl_schedule;
  j["blob_classes"] = cfg.blob_classes;
  j["blob_noise"] = cfg.blob_noise;
  j["eval_chunk"] = cfg.eval_chunk;
  j["threads"] = cfg.threads;
  j["dump_passes"] = cfg.dump_passes;
  return j.dump(2);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

void apply_paper_scale(ExperimentConfig& cfg) {
  cfg.epochs = 500;
  cfg.learning_rate = 0.001;
  cfg.train_items = 50000;
  cfg.val_items = 10000;
  cfg.test_items = 10000;
}

}  // namespace sdcnet
