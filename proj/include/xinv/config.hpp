#pragma once

#include <cstdint>
#include <map>
#include <string>

// Flat key=value run configuration. '#' starts a comment, blank lines are
// skipped, keys are unique. The config hash is the sha256 of the canonical
// form (sorted "key=value" lines), so formatting and comments do not change
// a run's identity.

namespace xinv {

class Config {
 public:
  static Config parse_text(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  const std::map<std::string, std::string>& items() const { return kv_; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get(const std::string& key) const;  // throws config_error if absent
  std::string get(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_real(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  std::string canonical() const;
  std::string hash() const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace xinv
