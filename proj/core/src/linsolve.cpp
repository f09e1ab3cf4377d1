#include "infloc/linsolve.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <vector>

namespace infloc::linsolve {

struct SparseLu::Impl {
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    bool analyzed = false;
    bool factorized = false;
    Eigen::Index rows = 0;
    std::vector<int> outer, inner;

    bool same_pattern(const SparseMatrix& a) const {
        if (!analyzed || rows != a.rows()) return false;
        if (static_cast<Eigen::Index>(inner.size()) != a.nonZeros()) return false;
        return std::equal(outer.begin(), outer.end(), a.outerIndexPtr()) &&
               std::equal(inner.begin(), inner.end(), a.innerIndexPtr());
    }

    void remember_pattern(const SparseMatrix& a) {
        rows = a.rows();
        outer.assign(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1);
        inner.assign(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros());
    }
};

SparseLu::SparseLu() : impl_(std::make_unique<Impl>()) {}
SparseLu::~SparseLu() = default;
SparseLu::SparseLu(SparseLu&&) noexcept = default;
SparseLu& SparseLu::operator=(SparseLu&&) noexcept = default;

void SparseLu::factorize(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw SingularMatrix("matrix is not square");
    SparseMatrix compressed = a;
    compressed.makeCompressed();
    if (!impl_->same_pattern(compressed)) {
        impl_->lu.analyzePattern(compressed);
        impl_->analyzed = true;
        impl_->remember_pattern(compressed);
    }
    impl_->lu.factorize(compressed);
    if (impl_->lu.info() != Eigen::Success) {
        impl_->factorized = false;
        throw SingularMatrix("sparse LU factorization failed: " +
                             impl_->lu.lastErrorMessage());
    }
    impl_->factorized = true;
}

Vector SparseLu::solve(const Vector& rhs) const {
    if (!impl_->factorized) throw SingularMatrix("solve() before factorize()");
    Vector x = impl_->lu.solve(rhs);
    if (impl_->lu.info() != Eigen::Success) {
        throw SingularMatrix("sparse LU back-substitution failed");
    }
    return x;
}

bool SparseLu::factorized() const { return impl_->factorized; }

Vector lu_solve(const SparseMatrix& a, const Vector& b) {
    if (a.rows() != b.size()) throw SingularMatrix("dimension mismatch in lu_solve");
    SparseLu lu;
    lu.factorize(a);
    return lu.solve(b);
}

}  // namespace infloc::linsolve
