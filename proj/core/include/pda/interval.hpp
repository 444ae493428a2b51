#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pda {

/// Closed 1-D interval [start, end] with start < end.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
  bool valid() const { return start < end; }
};

inline void require_valid(const Interval& i, const char* what) {
  if (!i.valid()) throw std::invalid_argument(std::string(what) + ": degenerate interval");
}

inline double intersection_length(const Interval& a, const Interval& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

}  // namespace pda
