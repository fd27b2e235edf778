#include "soda/kv_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "soda/error.hpp"

namespace soda {

namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

double parse_number(const std::string& text, const std::string& key, const std::string& source) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(source + ": key '" + key + "' expects a number, got '" + text + "'");
  }
  return value;
}

}  // namespace

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

KeyValueFile KeyValueFile::parse(std::string_view text, const std::string& source) {
  KeyValueFile file;
  file.source_ = source;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::string current_block;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      current_block = trim(std::string_view(line).substr(1, line.size() - 2));
      file.blocks_[current_block];
      continue;
    }
    if (!current_block.empty()) {
      if (!line.empty() && line.front() != '#') file.blocks_[current_block].push_back(line);
      continue;
    }
    if (auto hash = line.find('#'); hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(source, line_no, "expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source, line_no, "empty key");
    file.values_[key] = trim(line.substr(eq + 1));
  }
  return file;
}

std::optional<std::string> KeyValueFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? parse_number(*v, key, source_) : fallback;
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  long long value = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), value);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError(source_ + ": key '" + key + "' expects an integer, got '" + *v + "'");
  }
  return value;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(source_ + ": key '" + key + "' expects a boolean, got '" + *v + "'");
}

std::optional<std::vector<double>> KeyValueFile::get_doubles(const std::string& key) const {
  auto v = get(key);
  if (!v) return std::nullopt;
  std::string s = *v;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<double> out;
  std::string token;
  while (in >> token) out.push_back(parse_number(token, key, source_));
  return out;
}

const std::vector<std::string>& KeyValueFile::block(const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw ConfigError(source_ + ": missing block [" + name + "]");
  return it->second;
}

std::string KeyValueFile::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  for (const auto& [name, lines] : blocks_) {
    out << "[" << name << "]\n";
    for (const auto& l : lines) out << l << "\n";
  }
  return out.str();
}

std::string format_number(double value) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

}  // namespace soda
