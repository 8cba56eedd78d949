#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace cltmle {

// Flat key-value configuration with INI sections. Keys are addressed as
// "section.key"; keys before any section header live at top level.
class KvConfig {
 public:
  static KvConfig load(const std::filesystem::path& path);
  static KvConfig parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ArgumentError naming every key not in `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

  // INI text with sections in lexicographic order; `header` lines are
  // emitted first as ';' comments.
  std::string to_ini(const std::string& header = {}) const;
  void save(const std::filesystem::path& path, const std::string& header = {}) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cltmle
