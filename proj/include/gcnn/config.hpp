#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gcnn {

// Canonical key-value text: "[section]" headers, one "key = value" per line,
// blank lines and "#" comments ignored. Entries keep insertion order.
class KeyValueDoc {
 public:
  struct Entry {
    std::string section;
    std::string key;
    std::string value;
  };

  static KeyValueDoc parse(std::string_view text);
  static KeyValueDoc load(const std::string& path);

  void set(const std::string& section, const std::string& key, std::string value);
  std::optional<std::string> get(std::string_view section, std::string_view key) const;
  bool has_section(std::string_view section) const;
  std::vector<std::string> keys(std::string_view section) const;
  std::vector<std::string> sections() const;
  // Copies every entry of `other`, overriding existing keys.
  void merge(const KeyValueDoc& other);

  std::string to_text() const;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Typed accessors; throw ConfigError naming section.key on malformed values.
std::size_t parse_size(std::string_view section, std::string_view key, const std::string& v);
std::uint64_t parse_u64(std::string_view section, std::string_view key, const std::string& v);
double parse_double(std::string_view section, std::string_view key, const std::string& v);
bool parse_bool(std::string_view section, std::string_view key, const std::string& v);
std::vector<std::size_t> parse_size_list(std::string_view section, std::string_view key,
                                         const std::string& v);

std::string format_double(double v);

// Throws ConfigError if `section` holds a key outside `allowed`.
void require_known_keys(const KeyValueDoc& doc, std::string_view section,
                        const std::vector<std::string_view>& allowed);

}  // namespace gcnn
