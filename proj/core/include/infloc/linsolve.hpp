#pragma once

#include <Eigen/SparseCore>
#include <memory>

#include "infloc/errors.hpp"

namespace infloc::linsolve {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

/// Sparse unsymmetric LU with column-reordering. One analyze + factor per
/// matrix; the symbolic analysis may be reused across matrices with an
/// identical sparsity pattern (Newton iterations on a fixed structure).
class SparseLu {
  public:
    SparseLu();
    ~SparseLu();
    SparseLu(SparseLu&&) noexcept;
    SparseLu& operator=(SparseLu&&) noexcept;

    /// Factorizes A. Reuses the previous symbolic analysis when the pattern
    /// matches the last analyzed one (caller guarantees it by passing matrices
    /// assembled from the same triplet structure). Throws SingularMatrix.
    void factorize(const SparseMatrix& a);

    Vector solve(const Vector& rhs) const;

    bool factorized() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// One-shot factor-and-solve. The returned x satisfies
/// ||Ax - b||_inf / (1 + ||b||_inf) < 1e-9 for reasonably conditioned systems.
/// Throws SingularMatrix when elimination hits a zero pivot.
Vector lu_solve(const SparseMatrix& a, const Vector& b);

}  // namespace infloc::linsolve
