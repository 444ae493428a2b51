#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pda {

/// Temporal phase of an action. Enumerator order is the canonical order:
/// start < middle/mid1..mid3 < end < global.
enum class Phase : std::uint8_t { Start, Middle, Mid1, Mid2, Mid3, End, Global };

std::string_view phase_tag(Phase p);
Phase phase_from_tag(std::string_view tag);

/// Phrase used for the phase inside an LLM answer ("In the <name> phase, ...").
std::string_view phase_answer_name(Phase p);

bool is_temporal(Phase p);

/// Ordered, duplicate-free list of phases drawn from the canonical tags.
class PhaseSet {
 public:
  PhaseSet() = default;
  explicit PhaseSet(std::vector<Phase> phases);

  /// Named sets by size: 1 = (Glob), 2 = (Start, End), 3 = (Start, Mid, End),
  /// 4 = (Start, Mid, End, Glob), 5 = (Start, Mid1, Mid2, End, Glob),
  /// 6 = (Start, Mid1, Mid2, Mid3, End, Glob).
  static PhaseSet with_count(int n);
  static PhaseSet canonical() { return with_count(4); }

  const std::vector<Phase>& phases() const noexcept { return phases_; }
  std::size_t size() const noexcept { return phases_.size(); }
  Phase operator[](std::size_t i) const { return phases_[i]; }
  auto begin() const noexcept { return phases_.begin(); }
  auto end() const noexcept { return phases_.end(); }

  bool contains(Phase p) const;
  bool has_global() const { return contains(Phase::Global); }
  /// Phases other than Global, in order.
  std::vector<Phase> temporal() const;
  /// Position of p among the temporal phases.
  int temporal_index(Phase p) const;

  std::string label() const;  // e.g. "Four (Start, Mid, End, Glob)"
  bool operator==(const PhaseSet&) const = default;

 private:
  std::vector<Phase> phases_;
};

}  // namespace pda
