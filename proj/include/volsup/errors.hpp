#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace volsup {

/// Thrown when an argument violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an enumeration would exceed its configured cap.
class CapExceeded : public std::runtime_error {
 public:
  CapExceeded(const std::string& what, double count, std::uint64_t cap)
      : std::runtime_error(what + " (count " + std::to_string(count) + " > cap " +
                           std::to_string(cap) + ")"),
        count_(count),
        cap_(cap) {}

  double count() const noexcept { return count_; }
  std::uint64_t cap() const noexcept { return cap_; }

 private:
  double count_;
  std::uint64_t cap_;
};

}  // namespace volsup
