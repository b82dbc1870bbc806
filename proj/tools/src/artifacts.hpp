#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

namespace natscan::cli {

inline constexpr int kManifestSchemaVersion = 1;

/// FNV-1a 64 of a file's bytes as 16 lowercase hex digits.
std::string file_fingerprint(const std::filesystem::path& path);

/// Collects what one command read and wrote, then merges that into
/// `manifest.json` and `effective-config.json` of its output directory.
/// Entries are keyed by path, so several commands (or several runs writing
/// different files) can share a directory.
class OutputRecord {
 public:
  OutputRecord(std::filesystem::path dir, std::string command);

  const std::filesystem::path& dir() const { return dir_; }

  void input(const std::filesystem::path& path);
  /// `file` must lie inside dir(). `extra` is merged into its entry.
  void artifact(const std::filesystem::path& file, nlohmann::json extra = nlohmann::json::object());
  /// Writes both JSON files. `run_key` names the run in effective-config.json.
  void finish(const nlohmann::json& effective_config, const std::string& run_key);

 private:
  std::filesystem::path dir_;
  std::string command_;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json artifacts_ = nlohmann::json::object();
};

/// Runs fn(0..n-1) on up to `jobs` threads. Results must be written to
/// per-index slots; the first failure by index is rethrown after all workers
/// stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// "[natscan] <command>: <message>" on stderr, serialized across threads.
void progress(const std::string& command, const std::string& message);

}  // namespace natscan::cli
