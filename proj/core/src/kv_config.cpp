#include "cltmle/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cltmle/csv.hpp"
#include "cltmle/error.hpp"

namespace cltmle {

namespace pt = boost::property_tree;

namespace {

KvConfig from_tree(const pt::ptree& tree) {
  KvConfig cfg;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      cfg.set(name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw ArgumentError("config: nested sections are not supported");
      cfg.set(name + "." + key, leaf.data());
    }
  }
  return cfg;
}

}  // namespace

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ArgumentError& e) {
    throw ArgumentError(path.string() + ": " + e.what());
  }
}

KvConfig KvConfig::parse(const std::string& text) {
  // '#' comments are accepted as well as ';'.
  std::istringstream lines(text);
  std::ostringstream cleaned;
  for (std::string line; std::getline(lines, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    cleaned << line << '\n';
  }
  std::istringstream in(cleaned.str());
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ArgumentError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  return from_tree(tree);
}

void KvConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ArgumentError("config: empty key");
  values_[key] = value;
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  double out = 0.0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) throw ArgumentError("config: " + key + " must be a number, got '" + *v + "'");
  return out;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  int out = 0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) throw ArgumentError("config: " + key + " must be an integer, got '" + *v + "'");
  return out;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto* end = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ArgumentError("config: " + key + " must be a nonnegative integer, got '" + *v + "'");
  }
  return out;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ArgumentError("config: " + key + " must be true or false, got '" + *v + "'");
}

void KvConfig::reject_unknown(const std::set<std::string>& allowed) const {
  std::string bad;
  for (const auto& [key, value] : values_) {
    if (!allowed.count(key)) bad += (bad.empty() ? "" : ", ") + key;
  }
  if (!bad.empty()) throw ArgumentError("unknown config key(s): " + bad);
}

std::string KvConfig::to_ini(const std::string& header) const {
  std::ostringstream out;
  std::istringstream h(header);
  for (std::string line; std::getline(h, line);) out << "; " << line << '\n';
  std::map<std::string, std::map<std::string, std::string>> sections;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""][key] = value;
    } else {
      sections[key.substr(0, dot)][key.substr(dot + 1)] = value;
    }
  }
  bool first = true;
  for (const auto& [name, entries] : sections) {
    if (!name.empty()) out << (first && header.empty() ? "" : "\n") << '[' << name << "]\n";
    for (const auto& [key, value] : entries) out << key << " = " << value << '\n';
    first = false;
  }
  return out.str();
}

void KvConfig::save(const std::filesystem::path& path, const std::string& header) const {
  csv::write_atomic(path, to_ini(header));
}

}  // namespace cltmle
