#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "uad/rng.hpp"

namespace uad::linalg {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Vector primitives
// ---------------------------------------------------------------------------

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void scale_inplace(Vector& v, double c) {
  for (double& x : v) x *= c;
}

inline void axpy_inplace(Vector& y, double a, std::span<const double> x) {
  if (y.size() != x.size()) throw std::invalid_argument("axpy: size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline Vector normalized(Vector v) {
  const double n = norm2(v);
  if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
  scale_inplace(v, 1.0 / n);
  return v;
}

/// Resolves the +/-v ambiguity of singular vectors: the first component with
/// magnitude above `threshold` is made positive.
inline void sign_normalize(Vector& v, double threshold = 1e-9) {
  for (double x : v) {
    if (std::abs(x) > threshold) {
      if (x < 0.0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// DenseMatrix: row-major, double precision
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    DenseMatrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw std::invalid_argument("from_rows: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + static_cast<std::ptrdiff_t>(i * m.cols_));
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<const double> flat() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) throw std::invalid_argument("matvec: size mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

inline Vector tmatvec(const DenseMatrix& a, std::span<const double> x) {
  if (x.size() != a.rows()) throw std::invalid_argument("tmatvec: size mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += xi * r[j];
  }
  return y;
}

/// A^T A, cols x cols.
inline DenseMatrix gram(const DenseMatrix& a) {
  DenseMatrix g(a.cols(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double rp = r[p];
      if (rp == 0.0) continue;
      for (std::size_t q = p; q < a.cols(); ++q) g(p, q) += rp * r[q];
    }
  }
  for (std::size_t p = 0; p < a.cols(); ++p) {
    for (std::size_t q = 0; q < p; ++q) g(p, q) = g(q, p);
  }
  return g;
}

inline double frobenius_norm(const DenseMatrix& a) { return norm2(a.flat()); }

// ---------------------------------------------------------------------------
// Norm-ball projection
// ---------------------------------------------------------------------------

/// Euclidean projection onto the ball of the given radius. The rescale loop
/// re-checks the recomputed norm, so the returned vector always passes this
/// function's own norm test and the projection is exactly idempotent.
inline Vector project_l2_ball(Vector v, double radius) {
  if (radius < 0.0) throw std::invalid_argument("project_l2_ball: negative radius");
  if (!all_finite(v)) throw std::invalid_argument("project_l2_ball: non-finite input");
  for (int pass = 0; pass < 4; ++pass) {
    const double n = norm2(v);
    if (n <= radius) return v;
    if (radius == 0.0) {
      std::fill(v.begin(), v.end(), 0.0);
      return v;
    }
    scale_inplace(v, radius / n);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Spectral routines
// ---------------------------------------------------------------------------

struct SvdResult {
  Vector singular_values;             // descending
  std::vector<Vector> right_vectors;  // orthonormal columns of V, aligned with sigma
  int sweeps = 0;
  bool converged = false;
};

/// Dense SVD by one-sided Jacobi column orthogonalization. Only singular
/// values and right singular vectors are produced. Serves both as the
/// fallback when power iteration stalls and as the independent oracle in
/// spectral tests.
inline SvdResult jacobi_svd(const DenseMatrix& a, double tol = 1e-13, int max_sweeps = 60) {
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  if (n == 0 || d == 0) throw std::invalid_argument("jacobi_svd: empty matrix");
  DenseMatrix w = a;
  DenseMatrix v = DenseMatrix::identity(d);
  SvdResult out;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (apq == 0.0 || std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t i = 0; i < n; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = cs * wp - sn * wq;
          w(i, q) = sn * wp + cs * wq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
    out.sweeps = sweep;
    if (!rotated) {
      out.converged = true;
      break;
    }
  }
  std::vector<std::pair<double, std::size_t>> order(d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w(i, j) * w(i, j);
    order[j] = {std::sqrt(s), j};
  }
  std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  out.singular_values.resize(d);
  out.right_vectors.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    out.singular_values[j] = order[j].first;
    Vector col(d);
    for (std::size_t i = 0; i < d; ++i) col[i] = v(i, order[j].second);
    sign_normalize(col);
    out.right_vectors[j] = std::move(col);
  }
  return out;
}

struct TopSingularResult {
  double sigma = 0.0;
  Vector vec;  // unit right singular vector, sign normalized
  int iterations = 0;
  bool converged = false;
  bool used_dense_fallback = false;
};

/// Top singular pair by power iteration on A^T A products. The Gram matrix is
/// materialized only when it is the smaller object (rows <= 4*cols);
/// otherwise every step is a pair of matrix-vector products. When the
/// Rayleigh quotient stalls while the residual test still fails (tiny
/// spectral gap), the routine falls back to the dense Jacobi SVD so it always
/// terminates with a certified pair. Exhausting max_iter without a stall
/// returns converged=false together with the best iterate.
inline TopSingularResult top_right_singular(const DenseMatrix& a, double tol = 1e-10,
                                            int max_iter = 20000) {
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("top_right_singular: empty matrix");
  if (!(tol > 0.0)) throw std::invalid_argument("top_right_singular: tol must be positive");
  if (frobenius_norm(a) == 0.0) throw std::invalid_argument("top_right_singular: zero matrix");

  const std::size_t d = a.cols();
  const bool use_gram = a.rows() <= 4 * d;
  DenseMatrix c;
  if (use_gram) c = gram(a);
  const auto apply = [&](const Vector& x) {
    if (use_gram) return matvec(c, x);
    Vector t = matvec(a, x);
    return tmatvec(a, t);
  };

  Rng rng(0x9e3779b97f4a7c15ull);
  Vector v = rng.unit_vector(d);

  TopSingularResult out;
  double sigma_sq = 0.0;
  double prev_sigma_sq = -1.0;
  int stall = 0;
  for (int it = 1; it <= max_iter; ++it) {
    Vector w = apply(v);
    sigma_sq = dot(v, w);
    double res = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double r = w[i] - sigma_sq * v[i];
      res += r * r;
    }
    res = std::sqrt(res);
    out.iterations = it;
    if (sigma_sq > 0.0 && res <= tol * sigma_sq) {
      out.sigma = std::sqrt(sigma_sq);
      out.vec = std::move(v);
      sign_normalize(out.vec);
      out.converged = true;
      return out;
    }
    if (prev_sigma_sq >= 0.0 &&
        std::abs(sigma_sq - prev_sigma_sq) < tol * std::max(sigma_sq, 1e-300)) {
      if (++stall >= 10) break;
    } else {
      stall = 0;
    }
    prev_sigma_sq = sigma_sq;
    const double nw = norm2(w);
    if (nw == 0.0) {
      v = rng.unit_vector(d);  // landed in the null space, restart
      prev_sigma_sq = -1.0;
      continue;
    }
    scale_inplace(w, 1.0 / nw);
    v = std::move(w);
  }

  if (stall >= 10) {
    const SvdResult svd = jacobi_svd(a);
    out.sigma = svd.singular_values[0];
    out.vec = svd.right_vectors[0];
    out.converged = true;
    out.used_dense_fallback = true;
    return out;
  }
  out.sigma = std::sqrt(std::max(sigma_sq, 0.0));
  out.vec = std::move(v);
  sign_normalize(out.vec);
  out.converged = false;
  return out;
}

struct SpectralResult {
  Vector singular_values;                     // descending
  std::vector<Vector> right_singular_vectors; // orthonormal, aligned with sigma
  int iterations = 0;
  bool converged = true;
};

namespace detail {

/// Deterministic orthonormal completion: the basis vector least explained by
/// `basis`, re-orthogonalized.
inline Vector orthonormal_completion(const std::vector<Vector>& basis, std::size_t d) {
  Vector best;
  double best_res = -1.0;
  for (std::size_t j = 0; j < d; ++j) {
    Vector e(d, 0.0);
    e[j] = 1.0;
    for (const Vector& b : basis) axpy_inplace(e, -dot(e, b), b);
    const double r = norm2(e);
    if (r > best_res) {
      best_res = r;
      best = std::move(e);
    }
  }
  if (best_res <= 0.0) throw std::runtime_error("orthonormal_completion: no independent direction");
  scale_inplace(best, 1.0 / best_res);
  return best;
}

}  // namespace detail

/// Top-k singular values and right singular vectors by power iteration with
/// explicit-projection deflation: after each extracted pair, the residual
/// matrix is updated as A <- A(I - vv^T). Each sigma is re-measured as
/// ||A_residual v|| on the matrix it was extracted from. New vectors are
/// re-orthogonalized against the ones already collected.
inline SpectralResult singular_spectrum(const DenseMatrix& a, std::size_t k, double tol = 1e-10,
                                        int max_iter = 20000) {
  if (k > std::min(a.rows(), a.cols())) {
    throw std::invalid_argument("singular_spectrum: k exceeds min(rows, cols)");
  }
  SpectralResult out;
  if (k == 0) return out;

  DenseMatrix r = a;
  const double fro0 = frobenius_norm(a);
  for (std::size_t j = 0; j < k; ++j) {
    Vector v;
    double sigma = 0.0;
    bool comp_converged = true;
    if (frobenius_norm(r) <= std::max(1e-300, 1e-14 * fro0)) {
      v = detail::orthonormal_completion(out.right_singular_vectors, a.cols());
      sigma = 0.0;
    } else {
      TopSingularResult top = top_right_singular(r, tol, max_iter);
      out.iterations += top.iterations;
      comp_converged = top.converged;
      v = std::move(top.vec);
      for (const Vector& b : out.right_singular_vectors) axpy_inplace(v, -dot(v, b), b);
      const double nv = norm2(v);
      if (nv < 1e-8) {
        v = detail::orthonormal_completion(out.right_singular_vectors, a.cols());
      } else {
        scale_inplace(v, 1.0 / nv);
      }
      sigma = norm2(matvec(r, v));  // re-verified against the residual matrix
    }
    sign_normalize(v);
    out.singular_values.push_back(sigma);
    out.right_singular_vectors.push_back(v);
    out.converged = out.converged && comp_converged;
    // deflate: every row loses its component along v
    for (std::size_t i = 0; i < r.rows(); ++i) {
      auto row = r.row(i);
      const double c = dot(row, v);
      for (std::size_t t = 0; t < row.size(); ++t) row[t] -= c * v[t];
    }
  }
  // rounding can reorder near-ties; restore the descending contract
  std::vector<std::size_t> idx(out.singular_values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return out.singular_values[i] > out.singular_values[j];
  });
  Vector sv(idx.size());
  std::vector<Vector> vecs(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sv[i] = out.singular_values[idx[i]];
    vecs[i] = std::move(out.right_singular_vectors[idx[i]]);
  }
  out.singular_values = std::move(sv);
  out.right_singular_vectors = std::move(vecs);
  return out;
}

struct EigenResult {
  Vector values;                 // descending
  std::vector<Vector> vectors;   // orthonormal, aligned with values
  int sweeps = 0;
  bool converged = false;
};

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
inline EigenResult sym_eigen(const DenseMatrix& s, double tol = 1e-12, int max_sweeps = 100) {
  const std::size_t d = s.rows();
  if (d == 0 || s.cols() != d) throw std::invalid_argument("sym_eigen: matrix must be square");
  DenseMatrix b = s;
  DenseMatrix v = DenseMatrix::identity(d);
  const double fro = std::max(frobenius_norm(s), 1e-300);
  EigenResult out;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) off = std::max(off, std::abs(b(p, q)));
    }
    out.sweeps = sweep;
    if (off <= tol * fro) {
      out.converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double bpq = b(p, q);
        if (std::abs(bpq) <= 0.1 * tol * fro) continue;
        const double zeta = (b(q, q) - b(p, p)) / (2.0 * bpq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t i = 0; i < d; ++i) {  // rotate rows/columns p and q
          const double bip = b(i, p), biq = b(i, q);
          b(i, p) = cs * bip - sn * biq;
          b(i, q) = sn * bip + cs * biq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double bpi = b(p, i), bqi = b(q, i);
          b(p, i) = cs * bpi - sn * bqi;
          b(q, i) = sn * bpi + cs * bqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = cs * vip - sn * viq;
          v(i, q) = sn * vip + cs * viq;
        }
      }
    }
  }
  std::vector<std::pair<double, std::size_t>> order(d);
  for (std::size_t j = 0; j < d; ++j) order[j] = {b(j, j), j};
  std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  out.values.resize(d);
  out.vectors.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    out.values[j] = order[j].first;
    Vector col(d);
    for (std::size_t i = 0; i < d; ++i) col[i] = v(i, order[j].second);
    sign_normalize(col);
    out.vectors[j] = std::move(col);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm input");
  const double c = dot(u, v) / (nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace uad::linalg
