#include "fidn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fidn/error.hpp"

namespace fidn {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<KeyValueLine> parse_key_values(const std::string& text) {
  std::vector<KeyValueLine> out;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    KeyValueLine kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (kv.key.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ValidationError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ValidationError("config key '" + key + "': expected true/false, got '" + value + "'");
}

const std::map<std::string, std::string>& RunConfig::defaults() {
  // attributes/classes default to "auto": taken from the dataset header.
  static const std::map<std::string, std::string> d = {
      {"input_channels", "1"},
      {"input_height", "32"},
      {"input_width", "32"},
      {"trunk", "16,16p,32,32p,64,64"},
      {"fc_width", "128"},
      {"attributes", "auto"},
      {"classes", "auto"},
      {"lambda_id", "1.0"},
      {"learning_rate", "0.001"},
      {"seed", "0"},
      {"epochs", "100"},
      {"batch_size", "16"},
      {"mode", "joint"},
      {"log", "auto"},
      {"checkpoint_every_epoch", "false"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::load_file(const std::filesystem::path& path) {
  try {
    load_text(read_text_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void RunConfig::load_text(const std::string& text) {
  for (const auto& kv : parse_key_values(text)) {
    if (!values_.contains(kv.key)) {
      throw ValidationError("line " + std::to_string(kv.line) + ": unknown config key '" + kv.key + "'");
    }
    values_[kv.key] = kv.value;
    explicit_.insert(kv.key);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.contains(key)) throw ValidationError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_.insert(key);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

std::size_t RunConfig::get_size(const std::string& key) const { return parse_size(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_u64(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }
bool RunConfig::get_bool(const std::string& key) const { return parse_bool(key, get(key)); }

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace fidn
