#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wce {

/// Ordered class vocabulary. Index 0 is always the background class.
class ClassTable {
 public:
  static constexpr std::size_t kBackground = 0;

  /// `names[0]` is the background entry. Names must be unique
  /// (case-insensitively) and there must be at least one foreground class.
  explicit ClassTable(std::vector<std::string> names);

  static ClassTable with_background(const std::vector<std::string>& foreground);

  /// Background + the seven driving-scene targets.
  static ClassTable driving();

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t num_foreground() const noexcept { return names_.size() - 1; }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Like find(), but throws ErrorKind::InvalidConfig for unknown names.
  std::size_t index_of(std::string_view name) const;

  bool operator==(const ClassTable&) const = default;

 private:
  std::vector<std::string> names_;
};

bool iequals(std::string_view a, std::string_view b);

}  // namespace wce
