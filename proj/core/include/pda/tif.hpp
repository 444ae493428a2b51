#pragma once

#include <utility>

#include "pda/phase.hpp"
#include "pda/tensor.hpp"

namespace pda {

/// Softmax over time of the best class similarity per timestep.
struct ForegroundScore {
  Phase phase = Phase::Global;
  Vector scores;  // length T, sums to 1
};

struct ForegroundMask {
  Phase phase = Phase::Global;
  Vector mask;  // entries in {0, 1}
};

/// raw_t = max_c <visual[t], bank[c]>, scores = softmax_t(raw).
ForegroundScore foreground_score(const Matrix& visual, const Matrix& bank, Phase phase);

/// Per-timestep maxima before the softmax.
Vector max_class_similarity(const Matrix& visual, const Matrix& bank);

/// Vector-Jacobian product of foreground_score: returns {d visual, d bank}.
/// The max routes gradient to the arg-max class only.
std::pair<Matrix, Matrix> foreground_score_backward(const Matrix& visual, const Matrix& bank,
                                                    const ForegroundScore& score,
                                                    const Vector& dscores);

/// mask_t = 1 iff scores_t >= mean(scores). Not differentiated through.
ForegroundMask binarize(const ForegroundScore& score);

/// Zeroes the rows of masked-out timesteps.
Matrix apply_mask(const Matrix& visual, const ForegroundMask& mask);

/// k-th of n contiguous blocks over T timesteps; the remainder goes to the
/// earliest blocks.
Vector static_block_mask(int T, int block, int n_blocks);

/// Fixed-segment baseline: temporal phases get their block, Global gets all ones.
ForegroundMask static_mask(int T, Phase phase, const PhaseSet& phases);

}  // namespace pda
