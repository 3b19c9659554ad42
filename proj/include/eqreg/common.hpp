#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqreg {

// Precondition/shape failures. Messages carry the offending values.
class ContractViolation : public std::runtime_error {
public:
  explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, failed solves, aborted iterations.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
inline void str_impl(std::ostringstream&) {}
template <class A, class... Rest>
void str_impl(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  str_impl(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::str_impl(os, args...);
  return os.str();
}

template <class... Args>
[[noreturn]] void fail_contract(const Args&... args) {
  throw ContractViolation(cat(args...));
}

template <class... Args>
[[noreturn]] void fail_numeric(const Args&... args) {
  throw NumericError(cat(args...));
}

}  // namespace eqreg
