#include "divker/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace divker {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string key_name(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

Config Config::parse(const std::string& text, const std::string& source) {
  Config c;
  std::istringstream is(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (c.entries_.count({section, key}))
      throw ConfigError(where + "duplicate key '" + key_name(section, key) + "'");
    c.entries_[{section, key}] = Entry{value, line_no, source};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

bool Config::has(const std::string& section, const std::string& key) const {
  return entries_.count({section, key}) != 0;
}

const Config::Entry* Config::find(const std::string& section, const std::string& key) const {
  const auto it = entries_.find({section, key});
  if (it == entries_.end()) return nullptr;
  const_cast<Config*>(this)->used_.insert({section, key});
  return &it->second;
}

void Config::fail(const Key& key, const Entry& e, const std::string& what) const {
  std::string where = e.source;
  if (e.line > 0) where += ":" + std::to_string(e.line);
  throw ConfigError(where + ": " + key_name(key.first, key.second) + ": " + what + " (got '" +
                    e.value + "')");
}

void Config::record(const std::string& section, const std::string& key,
                    const std::string& value) {
  effective_[{section, key}] = value;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  entries_[{section, key}] = Entry{value, 0, "override"};
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) {
  const auto* e = find(section, key);
  const auto v = e ? e->value : fallback;
  record(section, key, v);
  return v;
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) {
  const auto* e = find(section, key);
  double v = fallback;
  if (e) {
    const auto& s = e->value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail({section, key}, *e, "expected a number");
  }
  record(section, key, format_double(v));
  return v;
}

long long Config::get_int(const std::string& section, const std::string& key,
                          long long fallback) {
  const auto* e = find(section, key);
  long long v = fallback;
  if (e) {
    const auto& s = e->value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail({section, key}, *e, "expected an integer");
  }
  record(section, key, std::to_string(v));
  return v;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) {
  const auto* e = find(section, key);
  std::uint64_t v = fallback;
  if (e) {
    const auto& s = e->value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      fail({section, key}, *e, "expected a non-negative integer");
  }
  record(section, key, std::to_string(v));
  return v;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) {
  const auto* e = find(section, key);
  bool v = fallback;
  if (e) {
    if (e->value == "true" || e->value == "1" || e->value == "yes") {
      v = true;
    } else if (e->value == "false" || e->value == "0" || e->value == "no") {
      v = false;
    } else {
      fail({section, key}, *e, "expected true or false");
    }
  }
  record(section, key, v ? "true" : "false");
  return v;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     const std::vector<double>& fallback) {
  const auto* e = find(section, key);
  std::vector<double> v = fallback;
  if (e && trim(e->value).empty()) {
    v.clear();
  } else if (e) {
    v.clear();
    std::stringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      double d = 0.0;
      const auto res = std::from_chars(item.data(), item.data() + item.size(), d);
      if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size())
        fail({section, key}, *e, "expected a comma-separated list of numbers");
      v.push_back(d);
    }
  }
  record(section, key, format_list(v));
  return v;
}

double Config::get_positive(const std::string& section, const std::string& key,
                            double fallback) {
  const double v = get_double(section, key, fallback);
  if (!(v > 0.0)) {
    const auto* e = find(section, key);
    if (e) fail({section, key}, *e, "must be positive");
    throw ConfigError(key_name(section, key) + ": must be positive (got " + format_double(v) + ")");
  }
  return v;
}

void Config::merge(const Config& other) {
  for (const auto& [k, e] : other.entries_) entries_[k] = e;
}

void Config::reject_unknown() const {
  const Key* first = nullptr;
  const Entry* entry = nullptr;
  for (const auto& [k, e] : entries_) {
    if (used_.count(k)) continue;
    if (!entry || e.line < entry->line) {
      first = &k;
      entry = &e;
    }
  }
  if (first) fail(*first, *entry, "unknown key");
}

std::string Config::effective_text() const {
  std::ostringstream os;
  std::string section = "\x01";
  for (const auto& [k, v] : effective_) {
    if (k.first != section) {
      section = k.first;
      if (!section.empty()) os << (os.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
    }
    os << k.second << " = " << v << '\n';
  }
  return os.str();
}

}  // namespace divker
