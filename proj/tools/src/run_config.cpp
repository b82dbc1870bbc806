#include "run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "natscan/error.hpp"

namespace natscan::cli {
namespace {

const std::set<std::string>& path_keys() {
  static const std::set<std::string> keys = {
      "cnn",          "images",        "taps",        "features",    "layer",
      "model",        "models",        "image",       "dataset",     "target_image",
      "target_tensor", "target_layers", "init_image", "rgb_corpus",  "lambdas",
      "out"};
  return keys;
}

nlohmann::json without_seed(const nlohmann::json& section, const char* name) {
  if (!section.is_object()) throw UsageError(std::string("config section '") + name + "' must be an object");
  if (section.contains("seed")) {
    throw UsageError(std::string("config section '") + name +
                     "' may not set a seed; use the top-level \"seed\"");
  }
  return section;
}

}  // namespace

std::string precision_name(Precision p) { return p == Precision::kWide ? "wide" : "narrow"; }

Precision parse_precision(const std::string& s) {
  if (s == "wide") return Precision::kWide;
  if (s == "narrow") return Precision::kNarrow;
  throw UsageError("precision must be \"wide\" or \"narrow\", got \"" + s + "\"");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  cfg.merge_json(j);
  // Relative paths in a config file are relative to the file itself.
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& [key, value] : cfg.paths.items()) {
    if (key == "taps" || key == "layer" || key == "lambdas" || key == "target_layers") continue;
    auto rebase = [&](nlohmann::json& v) {
      const std::filesystem::path p = v.get<std::string>();
      if (p.is_relative()) v = (base / p).lexically_normal().generic_string();
    };
    if (value.is_string()) {
      rebase(value);
    } else {
      for (auto& v : value)
        if (v.is_string()) rebase(v);
    }
  }
  return cfg;
}

void RunConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") {
        seed = value.get<std::uint64_t>();
      } else if (key == "precision") {
        precision = parse_precision(value.get<std::string>());
      } else if (key == "jobs") {
        jobs = value.get<std::size_t>();
      } else if (key == "pixel_mean") {
        pixel_mean = value.get<std::array<double, 3>>();
      } else if (key == "train") {
        train.merge_json(without_seed(value, "train"));
      } else if (key == "reconstruct") {
        reconstruct.merge_json(without_seed(value, "reconstruct"));
      } else if (key == "saliency") {
        if (!value.is_object()) throw UsageError("config section 'saliency' must be an object");
        for (const auto& [k, v] : value.items()) {
          if (k == "sigma") saliency.sigma = v.get<double>();
          else if (k == "negative_cap") saliency.negative_cap = v.get<std::size_t>();
          else throw UsageError("unknown saliency config key '" + k + "'");
        }
      } else if (key == "paths") {
        if (!value.is_object()) throw UsageError("config section 'paths' must be an object");
        for (const auto& [k, v] : value.items()) {
          if (!path_keys().contains(k)) throw UsageError("unknown paths config key '" + k + "'");
          if (!v.is_string() && !v.is_array()) {
            throw UsageError("paths." + k + " must be a string or a list of strings");
          }
          paths[k] = v;
        }
      } else {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (!(saliency.sigma >= 0.0)) throw UsageError("saliency.sigma must be >= 0");
  if (saliency.negative_cap == 0) throw UsageError("saliency.negative_cap must be positive");
}

nlohmann::json RunConfig::to_json() const {
  auto tr = train.to_json();
  tr.erase("seed");
  auto rc = reconstruct.to_json();
  rc.erase("seed");
  return {
      {"seed", seed},
      {"precision", precision_name(precision)},
      {"jobs", jobs},
      {"pixel_mean", pixel_mean},
      {"train", tr},
      {"reconstruct", rc},
      {"saliency", {{"sigma", saliency.sigma}, {"negative_cap", saliency.negative_cap}}},
      {"paths", paths},
  };
}

std::size_t RunConfig::effective_jobs() const {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::optional<std::string> RunConfig::path(const std::string& key) const {
  if (!paths.contains(key)) return std::nullopt;
  const auto& v = paths.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array() && v.size() == 1 && v[0].is_string()) return v[0].get<std::string>();
  throw UsageError("paths." + key + " must be a single string");
}

std::vector<std::string> RunConfig::path_list(const std::string& key) const {
  if (!paths.contains(key)) return {};
  const auto& v = paths.at(key);
  if (v.is_string()) return {v.get<std::string>()};
  try {
    return v.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("paths." + key + " must be a string or a list of strings");
  }
}

}  // namespace natscan::cli
