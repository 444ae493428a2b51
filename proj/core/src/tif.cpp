#include "pda/tif.hpp"

#include <stdexcept>
#include <string>

namespace pda {

Vector max_class_similarity(const Matrix& visual, const Matrix& bank) {
  if (bank.rows() == 0) throw std::invalid_argument("foreground score needs at least one class");
  if (bank.cols() != visual.cols()) {
    throw std::invalid_argument("bank width " + std::to_string(bank.cols()) +
                                " does not match visual width " + std::to_string(visual.cols()));
  }
  const Matrix sim = visual * bank.transpose();
  return sim.rowwise().maxCoeff();
}

ForegroundScore foreground_score(const Matrix& visual, const Matrix& bank, Phase phase) {
  return ForegroundScore{phase, softmax(max_class_similarity(visual, bank))};
}

std::pair<Matrix, Matrix> foreground_score_backward(const Matrix& visual, const Matrix& bank,
                                                    const ForegroundScore& score,
                                                    const Vector& dscores) {
  const Vector& s = score.scores;
  const Vector draw = (s.array() * (dscores.array() - s.dot(dscores))).matrix();
  const Matrix sim = visual * bank.transpose();
  Matrix dvisual = Matrix::Zero(visual.rows(), visual.cols());
  Matrix dbank = Matrix::Zero(bank.rows(), bank.cols());
  for (Eigen::Index t = 0; t < visual.rows(); ++t) {
    Eigen::Index best = 0;
    sim.row(t).maxCoeff(&best);
    dvisual.row(t) += draw(t) * bank.row(best);
    dbank.row(best) += draw(t) * visual.row(t);
  }
  return {std::move(dvisual), std::move(dbank)};
}

ForegroundMask binarize(const ForegroundScore& score) {
  const Eigen::Index T = score.scores.size();
  ForegroundMask m{score.phase, Vector::Zero(T)};
  if (T == 0) return m;
  const double mean = score.scores.mean();
  for (Eigen::Index t = 0; t < T; ++t) m.mask(t) = score.scores(t) >= mean ? 1.0 : 0.0;
  return m;
}

Matrix apply_mask(const Matrix& visual, const ForegroundMask& mask) {
  if (mask.mask.size() != visual.rows()) {
    throw std::invalid_argument("mask length " + std::to_string(mask.mask.size()) +
                                " does not match sequence length " +
                                std::to_string(visual.rows()));
  }
  return mask.mask.asDiagonal() * visual;
}

Vector static_block_mask(int T, int block, int n_blocks) {
  if (n_blocks < 1 || block < 0 || block >= n_blocks) {
    throw std::invalid_argument("invalid static block index");
  }
  if (T < n_blocks) {
    throw std::invalid_argument("static filtering needs T >= number of temporal phases");
  }
  const int base = T / n_blocks;
  const int extra = T % n_blocks;
  int begin = 0;
  for (int k = 0; k < block; ++k) begin += base + (k < extra ? 1 : 0);
  const int len = base + (block < extra ? 1 : 0);
  Vector m = Vector::Zero(T);
  m.segment(begin, len).setOnes();
  return m;
}

ForegroundMask static_mask(int T, Phase phase, const PhaseSet& phases) {
  if (!is_temporal(phase)) return ForegroundMask{phase, Vector::Ones(T)};
  const int n = static_cast<int>(phases.temporal().size());
  return ForegroundMask{phase, static_block_mask(T, phases.temporal_index(phase), n)};
}

}  // namespace pda
