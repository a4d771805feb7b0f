#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace compbind::cli {

// Line-based key=value settings checked against a fixed schema. Blank lines
// and lines starting with '#' are ignored.
class RunConfig {
 public:
  RunConfig();

  // Throws ValidationError on unknown keys, malformed lines or repeated keys.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;  // comma separated
  std::vector<int> integers(const std::string& key) const;

  // Every key in schema order, one "key=value" per line.
  std::string effective() const;
  std::string hash() const;

  static const std::vector<std::pair<std::string, std::string>>& schema();

 private:
  std::map<std::string, std::string> values_;
};

// Provenance record written next to every command's outputs.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, hash
  std::vector<std::string> outputs;

  void add_input(const std::filesystem::path& path);
  std::string text() const;
};

}  // namespace compbind::cli
