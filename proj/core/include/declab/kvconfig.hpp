#pragma once

#include <map>
#include <string>
#include <vector>

namespace declab {

// Flat key-value configuration text with [section] headers, one "key = value"
// per line, '#' comments. Section and key order is preserved so emit() is a
// stable round-trip of parse().
class KvConfig {
 public:
  static KvConfig parse_string(const std::string& text);
  static KvConfig parse_file(const std::string& path);

  std::string emit() const;
  void save(const std::string& path) const;

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key) const;
  std::int64_t get_i64(const std::string& section, const std::string& key) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  void set_int(const std::string& section, const std::string& key, std::int64_t value);
  void set_double(const std::string& section, const std::string& key, double value);
  void set_bool(const std::string& section, const std::string& key, bool value);

  // "section.key=value"
  void apply_override(const std::string& assignment);

  std::vector<std::string> sections() const;
  std::vector<std::string> sections_with_prefix(const std::string& prefix) const;
  const std::vector<std::pair<std::string, std::string>>& entries(
      const std::string& section) const;
  bool has_section(const std::string& section) const;

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  Section& section_ref(const std::string& name);
  const Section* find(const std::string& name) const;
  std::vector<Section> sections_;
};

std::string format_double(double v);

}  // namespace declab
