#include "pda/phase.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace pda {

std::string_view phase_tag(Phase p) {
  switch (p) {
    case Phase::Start: return "start";
    case Phase::Middle: return "middle";
    case Phase::Mid1: return "mid1";
    case Phase::Mid2: return "mid2";
    case Phase::Mid3: return "mid3";
    case Phase::End: return "end";
    case Phase::Global: return "global";
  }
  return "?";
}

Phase phase_from_tag(std::string_view tag) {
  for (Phase p : {Phase::Start, Phase::Middle, Phase::Mid1, Phase::Mid2, Phase::Mid3,
                  Phase::End, Phase::Global}) {
    if (phase_tag(p) == tag) return p;
  }
  if (tag == "glob") return Phase::Global;
  if (tag == "mid") return Phase::Middle;
  throw std::invalid_argument("unknown phase tag '" + std::string(tag) + "'");
}

std::string_view phase_answer_name(Phase p) {
  switch (p) {
    case Phase::Start: return "start";
    case Phase::Middle: return "middle";
    case Phase::Mid1: return "first middle";
    case Phase::Mid2: return "second middle";
    case Phase::Mid3: return "third middle";
    case Phase::End: return "end";
    case Phase::Global: return "global";
  }
  return "?";
}

bool is_temporal(Phase p) { return p != Phase::Global; }

PhaseSet::PhaseSet(std::vector<Phase> phases) : phases_(std::move(phases)) {
  if (phases_.empty()) throw std::invalid_argument("phase set must not be empty");
  if (!std::is_sorted(phases_.begin(), phases_.end()) ||
      std::set<Phase>(phases_.begin(), phases_.end()).size() != phases_.size()) {
    throw std::invalid_argument("phase set must be strictly in canonical order");
  }
  const bool has_middle = contains(Phase::Middle);
  const bool has_numbered = contains(Phase::Mid1) || contains(Phase::Mid2) || contains(Phase::Mid3);
  if (has_middle && has_numbered) {
    throw std::invalid_argument("phase set cannot mix 'middle' with numbered middle phases");
  }
}

PhaseSet PhaseSet::with_count(int n) {
  using P = Phase;
  switch (n) {
    case 1: return PhaseSet({P::Global});
    case 2: return PhaseSet({P::Start, P::End});
    case 3: return PhaseSet({P::Start, P::Middle, P::End});
    case 4: return PhaseSet({P::Start, P::Middle, P::End, P::Global});
    case 5: return PhaseSet({P::Start, P::Mid1, P::Mid2, P::End, P::Global});
    case 6: return PhaseSet({P::Start, P::Mid1, P::Mid2, P::Mid3, P::End, P::Global});
    default: break;
  }
  throw std::invalid_argument("phase count must be in [1, 6], got " + std::to_string(n));
}

bool PhaseSet::contains(Phase p) const {
  return std::find(phases_.begin(), phases_.end(), p) != phases_.end();
}

std::vector<Phase> PhaseSet::temporal() const {
  std::vector<Phase> out;
  std::copy_if(phases_.begin(), phases_.end(), std::back_inserter(out), is_temporal);
  return out;
}

int PhaseSet::temporal_index(Phase p) const {
  const auto t = temporal();
  const auto it = std::find(t.begin(), t.end(), p);
  if (it == t.end()) throw std::invalid_argument("phase is not a temporal member of the set");
  return static_cast<int>(it - t.begin());
}

std::string PhaseSet::label() const {
  static const char* kCounts[] = {"", "One", "Two", "Three", "Four", "Five", "Six"};
  std::string out = size() <= 6 ? kCounts[size()] : std::to_string(size());
  out += " (";
  for (std::size_t i = 0; i < phases_.size(); ++i) {
    if (i) out += ", ";
    switch (phases_[i]) {
      case Phase::Start: out += "Start"; break;
      case Phase::Middle: out += "Mid"; break;
      case Phase::Mid1: out += "Mid1"; break;
      case Phase::Mid2: out += "Mid2"; break;
      case Phase::Mid3: out += "Mid3"; break;
      case Phase::End: out += "End"; break;
      case Phase::Global: out += "Glob"; break;
    }
  }
  return out + ")";
}

}  // namespace pda
