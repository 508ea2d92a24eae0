#pragma once

// Run manifests: the resolved configuration and content hashes of every
// input, written before a command starts computing.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "json.hpp"

namespace explink {

// SHA-1 of "blob <size>\0" + content, as git hashes file contents.
std::string git_blob_sha1(std::string_view content);

// Blob hash of a file; for a directory, the SHA-1 of its sorted
// "<relative path> <blob hash>\n" lines. Throws Error when missing.
std::string hash_path(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::map<std::string, std::filesystem::path> inputs;
  std::map<std::string, std::filesystem::path> outputs;

  nlohmann::json to_json() const;
  // Writes <run_dir>/manifest.json, creating the directory.
  void write(const std::filesystem::path& run_dir) const;
};

}  // namespace explink
