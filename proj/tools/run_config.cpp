#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "compbind/errors.hpp"
#include "compbind/io/checkpoint.hpp"

#ifndef COMPBIND_VERSION
#define COMPBIND_VERSION "unknown"
#endif

namespace compbind::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::schema() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"corpus.n_samples", "8000"},
      {"corpus.p_corrupt", "0.5"},
      {"corpus.single_fraction", "0.2"},
      {"corpus.holdout", "64"},
      {"corpus.holdout_seed", "1234"},
      {"corpus.seed", "7"},
      {"encoder.width", "32"},
      {"encoder.heads", "4"},
      {"encoder.layers", "4"},
      {"encoder.max_len", "12"},
      {"encoder.causal", "true"},
      {"encoder.init_seed", "1"},
      {"diffusion.steps", "200"},
      {"diffusion.beta_start", "0.0005"},
      {"diffusion.beta_end", "0.1"},
      {"diffusion.width", "64"},
      {"diffusion.heads", "4"},
      {"diffusion.blocks", "2"},
      {"diffusion.init_seed", "2"},
      {"diffusion.train_steps", "80000"},
      {"diffusion.batch", "8"},
      {"diffusion.lr", "0.001"},
      {"diffusion.seed", "11"},
      {"proj.radius", "2"},
      {"proj.steps", "3000"},
      {"proj.batch", "4"},
      {"proj.lr", "0.001"},
      {"proj.seed", "11"},
      {"embed.steps", "300"},
      {"embed.batch", "4"},
      {"embed.lr", "0.01"},
      {"embed.mask", "adjectives+nouns"},
      {"embed.seed", "5"},
      {"reweight.layers", "2,3"},
      {"reweight.neg_big", "0"},
      {"reweight.pos", "0"},
      {"reweight.neg_small", "0"},
      {"reweight.tuning_prompts", "5"},
      {"eval.seeds", "8"},
      {"eval.base_seed", "2024"},
      {"eval.tau", "0.8"},
      {"eval.taus", "0,0.2,0.4,0.6,0.8,1"},
      {"eval.heatmap_prompts", "8"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : schema()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ValidationError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::stringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ValidationError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!values_.count(key)) throw ValidationError(where + ": unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw ValidationError(where + ": key '" + key + "' given twice");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  merge_text(buf.str(), path.string());
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const auto& s = str(key);
  std::int64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValidationError("config key " + key + " needs an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& s = str(key);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValidationError("config key " + key + " needs a non-negative integer, got '" + s + "'");
  }
  return v;
}

double RunConfig::real(const std::string& key) const {
  const auto& s = str(key);
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ValidationError("config key " + key + " needs a number, got '" + s + "'");
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ValidationError("config key " + key + " needs true or false, got '" + s + "'");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(str(key))) {
    double v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ValidationError("config key " + key + " needs numbers, got '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<int> RunConfig::integers(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(str(key))) {
    int v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ValidationError("config key " + key + " needs integers, got '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::string RunConfig::effective() const {
  std::string out;
  for (const auto& [k, unused] : schema()) out += k + "=" + values_.at(k) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  const std::string text = effective();
  return io::fnv1a_hex(text.data(), text.size());
}

void Manifest::add_input(const std::filesystem::path& path) { inputs.emplace_back(path.string(), io::file_hash(path)); }

std::string Manifest::text() const {
  std::ostringstream out;
  out << "tool=compbind\n";
  out << "version=" << COMPBIND_VERSION << "\n";
  out << "command=" << command << "\n";
  out << "seed=" << seed << "\n";
  out << "config_hash=" << config_hash << "\n";
  for (const auto& [path, hash] : inputs) out << "input=" << path << " " << hash << "\n";
  for (const auto& o : outputs) out << "output=" << o << "\n";
  return out.str();
}

}  // namespace compbind::cli
