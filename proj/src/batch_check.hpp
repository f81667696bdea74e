#pragma once

#include <span>
#include <string>

#include "dynmole/errors.hpp"

namespace dynmole::detail {

inline void check_batch(std::size_t data_size, std::span<const std::size_t> indices, const char* what) {
  if (indices.empty()) throw UsageError(std::string(what) + ": empty batch");
  for (std::size_t i : indices) {
    if (i >= data_size) {
      throw ShapeError(std::string(what) + ": sample index " + std::to_string(i) + " out of range for " +
                       std::to_string(data_size) + " samples");
    }
  }
}

}  // namespace dynmole::detail
