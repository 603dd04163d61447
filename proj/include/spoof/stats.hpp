#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "spoof/error.hpp"

namespace spoof {

/// Median; even counts average the two middle values.
inline double median(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::EmptyInput, "median of an empty set");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double mean(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::EmptyInput, "mean of an empty set");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace spoof
