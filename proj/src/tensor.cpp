#include "fragdiff/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "fragdiff/kernels.hpp"

namespace fragdiff {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Matrix& a, const Matrix& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw Error(ErrorKind::ShapeMismatch,
                    what + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.rows()) throw Error(ErrorKind::ShapeMismatch, "matmul inner dimension");
    if (out.rows() != a.rows() || out.cols() != b.cols()) out = Matrix(a.rows(), b.cols());
    else out.set_zero();
    const auto& k = kernels::active();
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.row(i).data();
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double av = a(i, p);
            if (av != 0.0) k.axpy(av, b.row(p).data(), orow, n);
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw Error(ErrorKind::ShapeMismatch, "matmul_tn_acc");
    }
    const auto& k = kernels::active();
    const std::size_t n = b.cols();
    for (std::size_t p = 0; p < a.rows(); ++p) {
        const double* brow = b.row(p).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = a(p, i);
            if (av != 0.0) k.axpy(av, brow, out.row(i).data(), n);
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
    if (out.rows() != a.rows() || out.cols() != b.rows()) out = Matrix(a.rows(), b.rows());
    else out.set_zero();
    matmul_nt_acc(a, b, out);
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "matmul_nt");
    }
    const auto& k = kernels::active();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            out(i, j) += k.dot(a.row(i).data(), b.row(j).data(), a.cols());
        }
    }
}

void add_row_bias(Matrix& m, const Matrix& bias) {
    if (bias.size() != m.cols()) throw Error(ErrorKind::ShapeMismatch, "add_row_bias");
    const auto& k = kernels::active();
    for (std::size_t r = 0; r < m.rows(); ++r) k.axpy(1.0, bias.data(), m.row(r).data(), m.cols());
}

void acc_col_sums(const Matrix& m, Matrix& bias) {
    if (bias.size() != m.cols()) throw Error(ErrorKind::ShapeMismatch, "acc_col_sums");
    const auto& k = kernels::active();
    for (std::size_t r = 0; r < m.rows(); ++r) k.axpy(1.0, m.row(r).data(), bias.data(), m.cols());
}

}  // namespace fragdiff
