#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace langxpand::cli {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// Provenance record written as manifest.json next to a stage's outputs.
// Inputs are keyed by role and recorded by basename and content hash, so the
// manifest does not depend on where the stage was run from.
class StageManifest {
 public:
  explicit StageManifest(std::string stage) : stage_(std::move(stage)) {}

  StageManifest& input(const std::string& role, const std::filesystem::path& path);
  StageManifest& config(nlohmann::ordered_json cfg);

  // Hashes every file under dir (except the manifest itself) and writes
  // dir/manifest.json.
  nlohmann::ordered_json write(const std::filesystem::path& dir) const;

 private:
  std::string stage_;
  std::map<std::string, std::pair<std::string, std::string>> inputs_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
};

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace langxpand::cli
