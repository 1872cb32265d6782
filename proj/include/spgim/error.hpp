#pragma once

#include <stdexcept>
#include <string>

namespace spgim {

/// Raised for every rejected input (shape mismatch, bad range, corrupt file).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spgim
