#include "manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <vector>

#include <openssl/evp.h>

#include "langxpand/error.hpp"

namespace langxpand::cli {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

StageManifest& StageManifest::input(const std::string& role, const std::filesystem::path& path) {
  inputs_[role] = {path.filename().string(), sha256_file(path)};
  return *this;
}

StageManifest& StageManifest::config(nlohmann::ordered_json cfg) {
  config_ = std::move(cfg);
  return *this;
}

nlohmann::ordered_json StageManifest::write(const std::filesystem::path& dir) const {
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  for (const auto& [role, file] : inputs_) inputs[role] = {{"file", file.first}, {"sha256", file.second}};

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path() != dir / "manifest.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  for (const auto& f : files) outputs[std::filesystem::relative(f, dir).generic_string()] = sha256_file(f);

  nlohmann::ordered_json m{{"stage", stage_},
                           {"inputs", inputs},
                           {"config", config_},
                           {"config_hash", sha256_hex(config_.dump())},
                           {"outputs", outputs}};
  write_json(dir / "manifest.json", m);
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace langxpand::cli
