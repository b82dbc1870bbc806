#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "natscan/reconstruct.hpp"
#include "natscan/saliency.hpp"
#include "natscan/train.hpp"

namespace natscan::cli {

enum class Precision { kWide, kNarrow };

struct SaliencySettings {
  double sigma = 0.03;
  std::size_t negative_cap = sal::kDefaultNegativeCap;
};

/// Everything a command can be configured with. Loaded from a JSON file,
/// then overridden by command-line flags.
struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kWide;
  std::size_t jobs = 0;  // 0: one worker per available core
  std::array<double, 3> pixel_mean{0.0, 0.0, 0.0};
  vlm::TrainConfig train;
  recon::ReconstructionConfig reconstruct;
  SaliencySettings saliency;
  /// Input/output locations keyed by flag name without dashes, e.g. "cnn",
  /// "images", "out", "models".
  nlohmann::json paths = nlohmann::json::object();

  /// Relative entries under "paths" resolve against the file's directory.
  static RunConfig from_file(const std::string& path);
  /// Merges a document into this config. Unknown keys are a UsageError.
  void merge_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::size_t effective_jobs() const;
  std::optional<std::string> path(const std::string& key) const;
  std::vector<std::string> path_list(const std::string& key) const;
};

std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

}  // namespace natscan::cli
