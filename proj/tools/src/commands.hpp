#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace natscan::cli {

// Path arguments arrive already resolved (flag, else config file) and are
// echoed back through RunConfig::paths.

struct ExtractArgs {
  std::string cnn, images, out;
  std::vector<std::string> taps;
};

struct TrainArgs {
  std::string features, layer, out;
};

struct ScoreArgs {
  std::string cnn, image, lambdas;
  std::vector<std::string> models;
};

struct SaliencyArgs {
  std::string cnn, model, image, out;
};

struct EvalAucArgs {
  std::string cnn, model, dataset, out;
};

struct ReconstructArgs {
  std::string cnn, target_image, init_image, rgb_corpus, out;
  std::vector<std::string> models, target_tensors, target_layers;
};

/// "conv1=1,conv2=0.1" -> {conv1: 1, conv2: 0.1}.
std::map<std::string, double> parse_lambdas(const std::string& spec);

void cmd_extract(const ExtractArgs& a, const RunConfig& cfg, std::ostream& out);
void cmd_train_vlm(const TrainArgs& a, const RunConfig& cfg, std::ostream& out);
void cmd_score(const ScoreArgs& a, const RunConfig& cfg, std::ostream& out);
void cmd_saliency(const SaliencyArgs& a, const RunConfig& cfg, std::ostream& out);
void cmd_eval_auc(const EvalAucArgs& a, const RunConfig& cfg, std::ostream& out);
void cmd_reconstruct(const ReconstructArgs& a, const RunConfig& cfg, std::ostream& out);

}  // namespace natscan::cli
