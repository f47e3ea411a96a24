#include "wce/class_table.hpp"

#include <algorithm>
#include <cctype>

#include "wce/error.hpp"

namespace wce {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

ClassTable::ClassTable(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw Error(ErrorKind::InvalidConfig,
                "class table needs a background entry and at least one foreground class");
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw Error(ErrorKind::InvalidConfig, "empty class name");
    for (std::size_t j = 0; j < i; ++j) {
      if (iequals(names_[i], names_[j])) {
        throw Error(ErrorKind::InvalidConfig, "duplicate class name '" + names_[i] + "'");
      }
    }
  }
}

ClassTable ClassTable::with_background(const std::vector<std::string>& foreground) {
  std::vector<std::string> names{"Background"};
  names.insert(names.end(), foreground.begin(), foreground.end());
  return ClassTable(std::move(names));
}

ClassTable ClassTable::driving() {
  return with_background({"Car", "Truck", "Bus", "Person", "Rider", "Motor", "Bike"});
}

std::optional<std::size_t> ClassTable::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (iequals(names_[i], name)) return i;
  }
  return std::nullopt;
}

std::size_t ClassTable::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw Error(ErrorKind::InvalidConfig, "unknown class '" + std::string(name) + "'");
}

}  // namespace wce
