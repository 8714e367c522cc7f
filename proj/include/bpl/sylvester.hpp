#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/schur.hpp"

namespace bpl {

namespace detail {

// Diagonal block starts of a quasi-upper-triangular matrix.
inline std::vector<std::pair<int, int>> quasi_blocks(const Matrix& t) {
    std::vector<std::pair<int, int>> blocks;
    int i = 0;
    while (i < t.rows) {
        int w = (i + 1 < t.rows && t.at(i + 1, i) != 0.0) ? 2 : 1;
        blocks.emplace_back(i, w);
        i += w;
    }
    return blocks;
}

// Small Sylvester block A0 w + w B0 = rhs with A0 (p x p), B0 (r x r),
// p, r <= 2, solved as a <=4x4 linear system in row-major vec order.
inline Matrix solve_small_block(const Matrix& a0, const Matrix& b0, const Matrix& rhs) {
    const int p = a0.rows, r = b0.rows;
    Matrix m(p * r, p * r);
    Matrix f(p * r, 1);
    for (int ai = 0; ai < p; ++ai)
        for (int bi = 0; bi < r; ++bi) {
            int row = ai * r + bi;
            f.at(row, 0) = rhs.at(ai, bi);
            for (int c = 0; c < p; ++c) m.at(row, c * r + bi) += a0.at(ai, c);
            for (int c = 0; c < r; ++c) m.at(row, ai * r + c) += b0.at(c, bi);
        }
    auto sol = gauss_solve(m, f);
    if (!sol) throw SingularPencilError("sylvester block system is singular");
    Matrix w(p, r);
    for (int ai = 0; ai < p; ++ai)
        for (int bi = 0; bi < r; ++bi) w.at(ai, bi) = sol->at(ai * r + bi, 0);
    return w;
}

}  // namespace detail

/// Raises when the spectra of A and -B touch: the pencil check behind
/// solve_sylvester, exposed for the solver's escalation remedy.
inline void require_solvable_pencil(const Matrix& a, const Matrix& ta, const Matrix& b,
                                    const Matrix& tb) {
    auto ea = quasi_triangular_eigenvalues(ta);
    auto eb = quasi_triangular_eigenvalues(tb);
    double dmin = std::numeric_limits<double>::infinity();
    for (const auto& la : ea)
        for (const auto& lb : eb)
            dmin = std::min(dmin, std::hypot(la.first + lb.first, la.second + lb.second));
    double tol = 1e-10 * (frobenius_norm(a) + frobenius_norm(b));
    if (dmin <= tol) throw SingularPencilError("sylvester pencil has (near-)shared eigenvalues");
}

/// Bartels-Stewart solve of A W + W B = C for W (d x k).
inline Matrix solve_sylvester(const Matrix& a, const Matrix& b, const Matrix& c) {
    if (a.rows != a.cols || b.rows != b.cols) throw DimensionError("solve_sylvester: A, B must be square");
    if (c.rows != a.rows || c.cols != b.rows) throw DimensionError("solve_sylvester: C shape mismatch");
    const int d = a.rows, k = b.rows;

    SchurForm sa = schur_decompose(a);
    SchurForm sb = schur_decompose(b);
    require_solvable_pencil(a, sa.T, b, sb.T);

    // Transformed right-hand side F = Qa^T C Qb.
    Matrix f = matmul(matmul(transpose(sa.Q), c), sb.Q);
    const Matrix& ta = sa.T;
    const Matrix& tb = sb.T;
    auto ablocks = detail::quasi_blocks(ta);
    auto bblocks = detail::quasi_blocks(tb);

    // Block back-substitution: Tb block columns left to right, Ta block rows
    // bottom to top; each (row, col) block is a <=4x4 linear solve.
    Matrix w(d, k);
    for (const auto& [bs, bw] : bblocks) {
        for (auto it = ablocks.rbegin(); it != ablocks.rend(); ++it) {
            const auto [as, aw] = *it;
            Matrix rhs(aw, bw);
            for (int i = 0; i < aw; ++i)
                for (int j = 0; j < bw; ++j) {
                    double s = f.at(as + i, bs + j);
                    for (int m = 0; m < bs; ++m) s -= w.at(as + i, m) * tb.at(m, bs + j);
                    for (int cc = as + aw; cc < d; ++cc) s -= ta.at(as + i, cc) * w.at(cc, bs + j);
                    rhs.at(i, j) = s;
                }
            Matrix a0(aw, aw), b0(bw, bw);
            for (int i = 0; i < aw; ++i)
                for (int j = 0; j < aw; ++j) a0.at(i, j) = ta.at(as + i, as + j);
            for (int i = 0; i < bw; ++i)
                for (int j = 0; j < bw; ++j) b0.at(i, j) = tb.at(bs + i, bs + j);
            Matrix wb = detail::solve_small_block(a0, b0, rhs);
            for (int i = 0; i < aw; ++i)
                for (int j = 0; j < bw; ++j) w.at(as + i, bs + j) = wb.at(i, j);
        }
    }
    return matmul(matmul(sa.Q, w), transpose(sb.Q));
}

/// Brute-force verification oracle: solves (I_k (x) A + B^T (x) I_d) vec(W)
/// = vec(C) (column-stacked vec) by dense Gaussian elimination. Independent
/// of the Schur route by construction.
inline Matrix kron_oracle_solve(const Matrix& a, const Matrix& b, const Matrix& c) {
    if (a.rows != a.cols || b.rows != b.cols) throw DimensionError("kron_oracle_solve: A, B must be square");
    if (c.rows != a.rows || c.cols != b.rows) throw DimensionError("kron_oracle_solve: C shape mismatch");
    const int d = a.rows, k = b.rows;
    if (static_cast<long>(d) * k > 4096) throw SizeError("kron_oracle_solve: d*k exceeds 4096");

    Matrix m(d * k, d * k);
    Matrix rhs(d * k, 1);
    for (int cc = 0; cc < k; ++cc)
        for (int r = 0; r < d; ++r) {
            int row = cc * d + r;
            rhs.at(row, 0) = c.at(r, cc);
            for (int r2 = 0; r2 < d; ++r2) m.at(row, cc * d + r2) += a.at(r, r2);
            for (int c2 = 0; c2 < k; ++c2) m.at(row, c2 * d + r) += b.at(c2, cc);
        }
    auto sol = gauss_solve(m, rhs);
    if (!sol) throw SingularPencilError("kron_oracle_solve: singular system");
    Matrix w(d, k);
    for (int cc = 0; cc < k; ++cc)
        for (int r = 0; r < d; ++r) w.at(r, cc) = sol->at(cc * d + r, 0);
    return w;
}

/// ||A W + W B - C||_F, the residual behind the solver contracts.
inline double sylvester_residual(const Matrix& a, const Matrix& b, const Matrix& c,
                                 const Matrix& w) {
    return frobenius_norm(sub(add(matmul(a, w), matmul(w, b)), c));
}

}  // namespace bpl
