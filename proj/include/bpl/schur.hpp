#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"

namespace bpl {

// Real Schur decomposition A = Q T Q^T with orthogonal Q and quasi-upper-
// triangular T (1x1 and 2x2 diagonal blocks, complex pairs kept in real
// arithmetic). Classic EISPACK/JAMA route: Householder reduction to upper
// Hessenberg form followed by the Francis implicit double-shift QR
// iteration with full accumulation of the transformations.
struct SchurForm {
    Matrix Q;
    Matrix T;
};

namespace detail {

// Householder reduction to Hessenberg form; V accumulates the similarity.
inline void hessenberg_reduce(Matrix& h, Matrix& v) {
    const int nn = h.rows;
    const int low = 0, high = nn - 1;
    std::vector<double> ort(nn, 0.0);

    for (int m = low + 1; m <= high - 1; ++m) {
        double scale = 0.0;
        for (int i = m; i <= high; ++i) scale += std::fabs(h.at(i, m - 1));
        if (scale == 0.0) continue;

        double hh = 0.0;
        for (int i = high; i >= m; --i) {
            ort[i] = h.at(i, m - 1) / scale;
            hh += ort[i] * ort[i];
        }
        double g = std::sqrt(hh);
        if (ort[m] > 0) g = -g;
        hh -= ort[m] * g;
        ort[m] -= g;

        // Householder similarity (I - u u^T / h) applied from both sides.
        for (int j = m; j < nn; ++j) {
            double f = 0.0;
            for (int i = high; i >= m; --i) f += ort[i] * h.at(i, j);
            f /= hh;
            for (int i = m; i <= high; ++i) h.at(i, j) -= f * ort[i];
        }
        for (int i = 0; i <= high; ++i) {
            double f = 0.0;
            for (int j = high; j >= m; --j) f += ort[j] * h.at(i, j);
            f /= hh;
            for (int j = m; j <= high; ++j) h.at(i, j) -= f * ort[j];
        }
        // Accumulate this reflector into V right away (vectors are not kept),
        // before any rescaling touches the Householder entries.
        for (int j = 0; j < nn; ++j) {
            double f = 0.0;
            for (int i = high; i >= m; --i) f += ort[i] * v.at(j, i);
            f /= hh;
            for (int i = m; i <= high; ++i) v.at(j, i) -= f * ort[i];
        }
        h.at(m, m - 1) = scale * g;
    }

    // Entries below the subdiagonal are algebraically zero now; make it so.
    for (int i = 2; i < nn; ++i)
        for (int j = 0; j < i - 1; ++j) h.at(i, j) = 0.0;
}

// Francis double-shift QR on a Hessenberg matrix; h becomes T, v gains Q.
inline void francis_qr(Matrix& h, Matrix& v) {
    const int nn = h.rows;
    const int low = 0, high = nn - 1;
    const double eps = std::pow(2.0, -52.0);
    double exshift = 0.0;
    double p = 0, q = 0, r = 0, s = 0, z = 0, w = 0, x = 0, y = 0;

    double norm = 0.0;
    for (int i = 0; i < nn; ++i)
        for (int j = std::max(i - 1, 0); j < nn; ++j) norm += std::fabs(h.at(i, j));

    int n = nn - 1;
    int iter = 0;
    long budget = 30L * std::max(nn, 1);
    while (n >= low) {
        // Look for a single small subdiagonal element.
        int l = n;
        while (l > low) {
            s = std::fabs(h.at(l - 1, l - 1)) + std::fabs(h.at(l, l));
            if (s == 0.0) s = norm;
            if (std::fabs(h.at(l, l - 1)) <= eps * s) break;
            --l;
        }

        if (l == n) {
            // One root found.
            h.at(n, n) += exshift;
            if (n > low) h.at(n, n - 1) = 0.0;
            --n;
            iter = 0;
        } else if (l == n - 1) {
            // Two roots found.
            w = h.at(n, n - 1) * h.at(n - 1, n);
            p = (h.at(n - 1, n - 1) - h.at(n, n)) / 2.0;
            q = p * p + w;
            z = std::sqrt(std::fabs(q));
            h.at(n, n) += exshift;
            h.at(n - 1, n - 1) += exshift;
            x = h.at(n, n);

            if (q >= 0) {
                // Real pair: rotate the block to upper triangular form.
                z = (p >= 0) ? p + z : p - z;
                x = h.at(n, n - 1);
                s = std::fabs(x) + std::fabs(z);
                p = x / s;
                q = z / s;
                r = std::sqrt(p * p + q * q);
                p /= r;
                q /= r;
                for (int j = n - 1; j < nn; ++j) {
                    z = h.at(n - 1, j);
                    h.at(n - 1, j) = q * z + p * h.at(n, j);
                    h.at(n, j) = q * h.at(n, j) - p * z;
                }
                for (int i = 0; i <= n; ++i) {
                    z = h.at(i, n - 1);
                    h.at(i, n - 1) = q * z + p * h.at(i, n);
                    h.at(i, n) = q * h.at(i, n) - p * z;
                }
                for (int i = low; i <= high; ++i) {
                    z = v.at(i, n - 1);
                    v.at(i, n - 1) = q * z + p * v.at(i, n);
                    v.at(i, n) = q * v.at(i, n) - p * z;
                }
                h.at(n, n - 1) = 0.0;
            }
            if (n - 1 > low) h.at(n - 1, n - 2) = 0.0;
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet: perform one implicit double QR sweep.
            x = h.at(n, n);
            y = 0.0;
            w = 0.0;
            if (l < n) {
                y = h.at(n - 1, n - 1);
                w = h.at(n, n - 1) * h.at(n - 1, n);
            }

            if (iter == 10) {
                // Wilkinson's original exceptional shift.
                exshift += x;
                for (int i = low; i <= n; ++i) h.at(i, i) -= x;
                s = std::fabs(h.at(n, n - 1)) + std::fabs(h.at(n - 1, n - 2));
                x = y = 0.75 * s;
                w = -0.4375 * s * s;
            }
            if (iter == 30) {
                // Second exceptional shift (MATLAB's ad hoc variant).
                s = (y - x) / 2.0;
                s = s * s + w;
                if (s > 0) {
                    s = std::sqrt(s);
                    if (y < x) s = -s;
                    s = x - w / ((y - x) / 2.0 + s);
                    for (int i = low; i <= n; ++i) h.at(i, i) -= s;
                    exshift += s;
                    x = y = w = 0.964;
                }
            }
            ++iter;
            if (--budget < 0)
                throw DecompositionError("schur_decompose: QR iteration did not converge");

            // Look for two consecutive small sub-diagonal elements.
            int m = n - 2;
            while (m >= l) {
                z = h.at(m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / h.at(m + 1, m) + h.at(m, m + 1);
                q = h.at(m + 1, m + 1) - z - r - s;
                r = h.at(m + 2, m + 1);
                s = std::fabs(p) + std::fabs(q) + std::fabs(r);
                p /= s;
                q /= s;
                r /= s;
                if (m == l) break;
                if (std::fabs(h.at(m, m - 1)) * (std::fabs(q) + std::fabs(r)) <
                    eps * (std::fabs(p) * (std::fabs(h.at(m - 1, m - 1)) + std::fabs(z) +
                                           std::fabs(h.at(m + 1, m + 1)))))
                    break;
                --m;
            }
            for (int i = m + 2; i <= n; ++i) {
                h.at(i, i - 2) = 0.0;
                if (i > m + 2) h.at(i, i - 3) = 0.0;
            }

            // Double QR sweep over rows l..n, columns m..n.
            for (int k = m; k <= n - 1; ++k) {
                bool notlast = (k != n - 1);
                if (k != m) {
                    p = h.at(k, k - 1);
                    q = h.at(k + 1, k - 1);
                    r = notlast ? h.at(k + 2, k - 1) : 0.0;
                    x = std::fabs(p) + std::fabs(q) + std::fabs(r);
                    if (x == 0.0) continue;
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = std::sqrt(p * p + q * q + r * r);
                if (p < 0) s = -s;
                if (s == 0.0) continue;
                if (k != m)
                    h.at(k, k - 1) = -s * x;
                else if (l != m)
                    h.at(k, k - 1) = -h.at(k, k - 1);
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for (int j = k; j < nn; ++j) {
                    p = h.at(k, j) + q * h.at(k + 1, j);
                    if (notlast) {
                        p += r * h.at(k + 2, j);
                        h.at(k + 2, j) -= p * z;
                    }
                    h.at(k, j) -= p * x;
                    h.at(k + 1, j) -= p * y;
                }
                int iupper = std::min(n, k + 3);
                for (int i = 0; i <= iupper; ++i) {
                    p = x * h.at(i, k) + y * h.at(i, k + 1);
                    if (notlast) {
                        p += z * h.at(i, k + 2);
                        h.at(i, k + 2) -= p * r;
                    }
                    h.at(i, k) -= p;
                    h.at(i, k + 1) -= p * q;
                }
                for (int i = low; i <= high; ++i) {
                    p = x * v.at(i, k) + y * v.at(i, k + 1);
                    if (notlast) {
                        p += z * v.at(i, k + 2);
                        v.at(i, k + 2) -= p * r;
                    }
                    v.at(i, k) -= p;
                    v.at(i, k + 1) -= p * q;
                }
            }
        }
    }
}

}  // namespace detail

inline SchurForm schur_decompose(const Matrix& a) {
    if (a.rows != a.cols) throw DimensionError("schur_decompose: matrix not square");
    a.require_finite("schur_decompose input");
    SchurForm f{Matrix::identity(a.rows), a};
    if (a.rows == 1) return f;
    detail::hessenberg_reduce(f.T, f.Q);
    detail::francis_qr(f.T, f.Q);
    // The bulge chase leaves stale values below the first subdiagonal (the
    // reflector results are written analytically, not by row updates); those
    // entries are algebraically zero, so make them so.
    for (int i = 2; i < a.rows; ++i)
        for (int j = 0; j + 1 < i; ++j) f.T.at(i, j) = 0.0;
    return f;
}

/// Eigenvalues of a quasi-upper-triangular T as (re, im) pairs, in diagonal
/// block order. 2x2 blocks after schur_decompose always hold complex pairs.
inline std::vector<std::pair<double, double>> quasi_triangular_eigenvalues(const Matrix& t) {
    if (t.rows != t.cols) throw DimensionError("quasi_triangular_eigenvalues: not square");
    std::vector<std::pair<double, double>> eig;
    int i = 0;
    while (i < t.rows) {
        if (i + 1 < t.rows && t.at(i + 1, i) != 0.0) {
            double a = t.at(i, i), b = t.at(i, i + 1);
            double c = t.at(i + 1, i), d = t.at(i + 1, i + 1);
            double mid = (a + d) / 2.0;
            double disc = (a - d) * (a - d) / 4.0 + b * c;
            if (disc < 0) {
                double im = std::sqrt(-disc);
                eig.emplace_back(mid, im);
                eig.emplace_back(mid, -im);
            } else {
                // Defensive: a real pair left in block form.
                double root = std::sqrt(disc);
                eig.emplace_back(mid + root, 0.0);
                eig.emplace_back(mid - root, 0.0);
            }
            i += 2;
        } else {
            eig.emplace_back(t.at(i, i), 0.0);
            ++i;
        }
    }
    return eig;
}

}  // namespace bpl
