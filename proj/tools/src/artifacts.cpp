#include "artifacts.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <thread>
#include <vector>

#include "natscan/container.hpp"
#include "natscan/error.hpp"
#include "natscan/log.hpp"
#include "natscan/rng.hpp"

namespace natscan::cli {
namespace {

nlohmann::json read_json_or(const std::filesystem::path& path, nlohmann::json fallback) {
  if (!std::filesystem::exists(path)) return fallback;
  std::ifstream in(path);
  try {
    auto j = nlohmann::json::parse(in);
    if (j.is_object() && j.value("schema_version", 0) == kManifestSchemaVersion) return j;
  } catch (const nlohmann::json::exception&) {
  }
  log::warn("replacing unreadable " + path.string());
  return fallback;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  io::write_file(path, j.dump(2) + "\n");
}

}  // namespace

std::string file_fingerprint(const std::filesystem::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(io::read_file(path))));
  return buf;
}

OutputRecord::OutputRecord(std::filesystem::path dir, std::string command)
    : dir_(std::move(dir)), command_(std::move(command)) {
  std::filesystem::create_directories(dir_);
}

void OutputRecord::input(const std::filesystem::path& path) {
  inputs_[path.generic_string()] = {{"fnv1a64", file_fingerprint(path)},
                                    {"bytes", std::filesystem::file_size(path)}};
}

void OutputRecord::artifact(const std::filesystem::path& file, nlohmann::json extra) {
  const auto rel = std::filesystem::relative(file, dir_).generic_string();
  nlohmann::json entry = {{"command", command_},
                          {"fnv1a64", file_fingerprint(file)},
                          {"bytes", std::filesystem::file_size(file)}};
  entry.update(extra);
  artifacts_[rel] = std::move(entry);
}

void OutputRecord::finish(const nlohmann::json& effective_config, const std::string& run_key) {
  const nlohmann::json empty = {{"schema_version", kManifestSchemaVersion}};

  auto manifest = read_json_or(dir_ / "manifest.json", empty);
  manifest["tool"] = "natscan";
  for (const auto& [k, v] : artifacts_.items()) manifest["artifacts"][k] = v;
  for (const auto& [k, v] : inputs_.items()) manifest["inputs"][k] = v;
  if (!manifest.contains("artifacts")) manifest["artifacts"] = nlohmann::json::object();
  if (!manifest.contains("inputs")) manifest["inputs"] = nlohmann::json::object();
  write_json(dir_ / "manifest.json", manifest);

  auto config = read_json_or(dir_ / "effective-config.json", empty);
  config["runs"][run_key] = {{"command", command_}, {"config", effective_config}};
  write_json(dir_ / "effective-config.json", config);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void progress(const std::string& command, const std::string& message) {
  log::info(command + ": " + message);
}

}  // namespace natscan::cli
