#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace soda {

// Flat `key = value` text files with `#` comments. A line of the form
// `[name]` opens a raw block: every following line up to the next `[...]`
// header is kept verbatim (used for embedded CSV tables).
class KeyValueFile {
 public:
  static KeyValueFile load(const std::filesystem::path& path);
  static KeyValueFile parse(std::string_view text, const std::string& source = "<string>");

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma- or whitespace-separated list of numbers.
  std::optional<std::vector<double>> get_doubles(const std::string& key) const;

  bool has_block(const std::string& name) const { return blocks_.count(name) != 0; }
  const std::vector<std::string>& block(const std::string& name) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& source() const { return source_; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string serialize() const;

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::vector<std::string>> blocks_;
};

// Shortest text that parses back to exactly `value`.
std::string format_number(double value);

}  // namespace soda
