#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace g2s {

/// `key = value` lines; `#` starts a comment. Keys may repeat, and scalar
/// lookups take the last occurrence. Errors are FormatError naming the
/// source and the key.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text,
                            const std::string& source = "<config>");
  static KeyValueFile load(const std::string& path);

  const std::string& source() const { return source_; }
  bool has(const std::string& key) const;
  std::vector<std::string> all(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Whitespace-separated reals; throws unless exactly `count` are present
  /// (any count when `count` is 0).
  std::vector<double> doubles(const std::string& key, const std::string& value,
                              std::size_t count = 0) const;

  /// Throws FormatError on the first key outside `known`.
  void require_known(const std::set<std::string>& known) const;

  void set(const std::string& key, const std::string& value);
  void add(const std::string& key, const std::string& value);
  std::string to_text() const;

 private:
  std::string source_ = "<config>";
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace g2s
