#pragma once

// Reference implementations used only by tests. Each is written straight from
// the defining formula with no attempt at speed, and shares no code with the
// library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// v(x,y,z,f) = relu(b_f + sum_c sum_p sum_q sum_r w(p,q,r,c,f) * v(x+p-g, y+q-d, z+r-n, c))
// Inputs are one sample laid out [h][w][d][c]; weights [kh][kw][kd][c][f].
template <class T>
std::vector<T> conv_loop_nest(const std::vector<T>& in, int h, int w, int d, int c, int kh, int kw,
                              int kd, int filters, const std::vector<T>& weights,
                              const std::vector<T>& bias, bool relu) {
  const int gamma = (kh - 1) / 2, delta = (kw - 1) / 2, nu = (kd - 1) / 2;
  std::vector<T> out(static_cast<std::size_t>(h) * w * d * filters);
  for (int x = 0; x < h; ++x)
    for (int y = 0; y < w; ++y)
      for (int z = 0; z < d; ++z)
        for (int f = 0; f < filters; ++f) {
          long double acc = bias[f];
          for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < kh; ++p)
              for (int q = 0; q < kw; ++q)
                for (int r = 0; r < kd; ++r) {
                  const int xi = x + p - gamma, yi = y + q - delta, zi = z + r - nu;
                  if (xi < 0 || xi >= h || yi < 0 || yi >= w || zi < 0 || zi >= d) continue;
                  const T wv = weights[(((static_cast<std::size_t>(p) * kw + q) * kd + r) * c + ch) *
                                           filters + f];
                  const T iv = in[((static_cast<std::size_t>(xi) * w + yi) * d + zi) * c + ch];
                  acc += static_cast<long double>(wv) * iv;
                }
          const T v = static_cast<T>(acc);
          out[((static_cast<std::size_t>(x) * w + y) * d + z) * filters + f] =
              relu ? std::max(T(0), v) : v;
        }
  return out;
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix (row-major n x n).
// Returns eigenvalues in descending order and matching unit eigenvectors as
// columns of `vectors`.
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& values,
                         std::vector<double>& vectors) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a[p * n + q]) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * a[p * n + q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0), sn = t * cs;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = cs * akp - sn * akq;
          a[k * n + q] = sn * akp + cs * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = cs * apk - sn * aqk;
          a[q * n + k] = sn * apk + cs * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = cs * vkp - sn * vkq;
          v[k * n + q] = sn * vkp + cs * vkq;
        }
      }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x * n + x] > a[y * n + y]; });
  values.assign(n, 0.0);
  vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    values[j] = a[order[j] * n + order[j]];
    for (int k = 0; k < n; ++k) vectors[k * n + j] = v[k * n + order[j]];
  }
}

// Confusion-matrix statistics by direct tally; rows are true classes.
struct Tally {
  double oa = 0, aa = 0, kappa = 0;
};

inline Tally tally(const std::vector<std::vector<long long>>& m) {
  const std::size_t c = m.size();
  long double total = 0, diag = 0, expected = 0, recall_sum = 0;
  int present = 0;
  std::vector<long double> rows(c, 0), cols(c, 0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      total += m[i][j];
      rows[i] += m[i][j];
      cols[j] += m[i][j];
      if (i == j) diag += m[i][j];
    }
  for (std::size_t i = 0; i < c; ++i) {
    expected += rows[i] * cols[i];
    if (rows[i] > 0) {
      recall_sum += m[i][i] / rows[i];
      ++present;
    }
  }
  Tally t;
  if (total == 0) return t;
  const long double po = diag / total, pe = expected / (total * total);
  t.oa = static_cast<double>(po);
  t.aa = present ? static_cast<double>(recall_sum / present) : 0.0;
  t.kappa = pe >= 1 ? 0.0 : static_cast<double>((po - pe) / (1 - pe));
  return t;
}

}  // namespace oracle
