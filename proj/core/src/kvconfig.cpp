#include "declab/kvconfig.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "declab/errors.hpp"

namespace declab {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string format_double(double v) {
  // Shortest representation that round-trips.
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string current;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw FormatError("config line " + std::to_string(line_no) + ": unterminated section");
      current = trim(t.substr(1, t.size() - 2));
      cfg.section_ref(current);
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw FormatError("config line " + std::to_string(line_no) + ": empty key");
    cfg.set(current, key, value);
  }
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

std::string KvConfig::emit() const {
  std::ostringstream out;
  bool first = true;
  for (const Section& s : sections_) {
    if (!first) out << "\n";
    first = false;
    out << "[" << s.name << "]\n";
    for (const auto& [k, v] : s.entries) out << k << " = " << v << "\n";
  }
  return out.str();
}

void KvConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << emit();
}

KvConfig::Section& KvConfig::section_ref(const std::string& name) {
  for (Section& s : sections_)
    if (s.name == name) return s;
  sections_.push_back({name, {}});
  return sections_.back();
}

const KvConfig::Section* KvConfig::find(const std::string& name) const {
  for (const Section& s : sections_)
    if (s.name == name) return &s;
  return nullptr;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  const Section* s = find(section);
  if (!s) return false;
  for (const auto& [k, v] : s->entries)
    if (k == key) return true;
  return false;
}

const std::string& KvConfig::get(const std::string& section, const std::string& key) const {
  const Section* s = find(section);
  if (s) {
    for (const auto& [k, v] : s->entries)
      if (k == key) return v;
  }
  throw ConfigError("missing config key [" + section + "] " + key);
}

std::string KvConfig::get_or(const std::string& section, const std::string& key,
                             const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

int KvConfig::get_int(const std::string& section, const std::string& key) const {
  return static_cast<int>(get_i64(section, key));
}

std::int64_t KvConfig::get_i64(const std::string& section, const std::string& key) const {
  try {
    return std::stoll(get(section, key));
  } catch (const std::exception&) {
    throw ConfigError("config key [" + section + "] " + key + " is not an integer");
  }
}

std::uint64_t KvConfig::get_u64(const std::string& section, const std::string& key) const {
  try {
    return std::stoull(get(section, key));
  } catch (const std::exception&) {
    throw ConfigError("config key [" + section + "] " + key + " is not an integer");
  }
}

double KvConfig::get_double(const std::string& section, const std::string& key) const {
  try {
    return std::stod(get(section, key));
  } catch (const std::exception&) {
    throw ConfigError("config key [" + section + "] " + key + " is not a number");
  }
}

bool KvConfig::get_bool(const std::string& section, const std::string& key) const {
  const std::string& v = get(section, key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key [" + section + "] " + key + " is not a bool");
}

void KvConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  Section& s = section_ref(section);
  for (auto& [k, v] : s.entries) {
    if (k == key) {
      v = value;
      return;
    }
  }
  s.entries.emplace_back(key, value);
}

void KvConfig::set_int(const std::string& section, const std::string& key, std::int64_t value) {
  set(section, key, std::to_string(value));
}

void KvConfig::set_double(const std::string& section, const std::string& key, double value) {
  set(section, key, format_double(value));
}

void KvConfig::set_bool(const std::string& section, const std::string& key, bool value) {
  set(section, key, value ? "true" : "false");
}

void KvConfig::apply_override(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  std::string target = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  size_t dot = target.rfind('.');
  if (dot == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  set(target.substr(0, dot), target.substr(dot + 1), value);
}

std::vector<std::string> KvConfig::sections() const {
  std::vector<std::string> names;
  names.reserve(sections_.size());
  for (const Section& s : sections_) names.push_back(s.name);
  return names;
}

std::vector<std::string> KvConfig::sections_with_prefix(const std::string& prefix) const {
  std::vector<std::string> names;
  for (const Section& s : sections_)
    if (s.name.rfind(prefix, 0) == 0) names.push_back(s.name);
  return names;
}

const std::vector<std::pair<std::string, std::string>>& KvConfig::entries(
    const std::string& section) const {
  const Section* s = find(section);
  if (!s) throw ConfigError("missing config section [" + section + "]");
  return s->entries;
}

bool KvConfig::has_section(const std::string& section) const { return find(section) != nullptr; }

}  // namespace declab
