#include "gcnn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "gcnn/error.hpp"

namespace gcnn {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view section, std::string_view key, const std::string& v,
                            const char* expected) {
  throw ConfigError("config " + std::string(section) + "." + std::string(key) + ": '" + v +
                    "' is not " + expected);
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(std::string_view text) {
  KeyValueDoc doc;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    doc.set(section, key, trim(std::string_view(line).substr(eq + 1)));
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void KeyValueDoc::set(const std::string& section, const std::string& key, std::string value) {
  for (auto& e : entries_)
    if (e.section == section && e.key == key) {
      e.value = std::move(value);
      return;
    }
  // Keep sections contiguous: insert after the last entry of the section.
  auto pos = entries_.end();
  for (auto it = entries_.begin(); it != entries_.end(); ++it)
    if (it->section == section) pos = it + 1;
  entries_.insert(pos, Entry{section, key, std::move(value)});
}

std::optional<std::string> KeyValueDoc::get(std::string_view section, std::string_view key) const {
  for (const auto& e : entries_)
    if (e.section == section && e.key == key) return e.value;
  return std::nullopt;
}

bool KeyValueDoc::has_section(std::string_view section) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.section == section; });
}

std::vector<std::string> KeyValueDoc::keys(std::string_view section) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.section == section) out.push_back(e.key);
  return out;
}

std::vector<std::string> KeyValueDoc::sections() const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (std::find(out.begin(), out.end(), e.section) == out.end()) out.push_back(e.section);
  return out;
}

void KeyValueDoc::merge(const KeyValueDoc& other) {
  for (const auto& e : other.entries_) set(e.section, e.key, e.value);
}

std::string KeyValueDoc::to_text() const {
  std::string out;
  std::string current;
  bool first = true;
  for (const auto& e : entries_) {
    if (first || e.section != current) {
      if (!first) out += '\n';
      if (!e.section.empty()) out += "[" + e.section + "]\n";
      current = e.section;
      first = false;
    }
    out += e.key + " = " + e.value + "\n";
  }
  return out;
}

std::size_t parse_size(std::string_view section, std::string_view key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(section, key, v, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(std::string_view section, std::string_view key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(section, key, v, "an unsigned 64-bit integer");
  return out;
}

double parse_double(std::string_view section, std::string_view key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(section, key, v, "a number");
  return out;
}

bool parse_bool(std::string_view section, std::string_view key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(section, key, v, "a boolean (true/false)");
}

std::vector<std::size_t> parse_size_list(std::string_view section, std::string_view key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(section, key, trim(item)));
  if (out.empty()) bad_value(section, key, v, "a comma-separated list of integers");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void require_known_keys(const KeyValueDoc& doc, std::string_view section,
                        const std::vector<std::string_view>& allowed) {
  for (const auto& key : doc.keys(section))
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key '" + key + "' in section [" + std::string(section) + "]");
}

}  // namespace gcnn
