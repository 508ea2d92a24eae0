#include "explink/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

#include <openssl/evp.h>

#include "explink/error.hpp"

namespace explink {

namespace {

std::string hex_sha1(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("sha1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    out += kHex[c >> 4];
    out += kHex[c & 0xF];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string git_blob_sha1(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  return hex_sha1(data);
}

std::string hash_path(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return git_blob_sha1(read_file(path));
  if (!fs::is_directory(path)) throw Error("no such input '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    entries.emplace_back(fs::relative(e.path(), path).generic_string(),
                         git_blob_sha1(read_file(e.path())));
  }
  std::sort(entries.begin(), entries.end());
  std::string listing;
  for (const auto& [rel, h] : entries) listing += rel + " " + h + "\n";
  return hex_sha1(listing);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [role, path] : inputs) {
    in[role] = {{"path", path.string()}, {"sha1", hash_path(path)}};
  }
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [role, path] : outputs) out[role] = path.string();
  return {{"command", command},
          {"config", config},
          {"seed", seed},
          {"inputs", in},
          {"outputs", out}};
}

void RunManifest::write(const std::filesystem::path& run_dir) const {
  std::filesystem::create_directories(run_dir);
  std::ofstream f(run_dir / "manifest.json");
  if (!f) throw Error("cannot write manifest in '" + run_dir.string() + "'");
  f << to_json().dump(2) << '\n';
}

}  // namespace explink
