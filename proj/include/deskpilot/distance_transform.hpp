#pragma once
//
// Exact Euclidean distance transform on a 2D grid (lower envelope of
// parabolas, one pass per axis).

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace deskpilot {

namespace detail {

// Squared distance transform of one row/column `f` (0 at sites, +inf elsewhere).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates the first one entirely.
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

}  // namespace detail

/// Distance in cells from each cell to the nearest site; +inf if there are none.
/// `sites` is row-major, width * height.
inline std::vector<double> distance_transform(const std::vector<bool>& sites, int width, int height) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const std::size_t w = static_cast<std::size_t>(width), h = static_cast<std::size_t>(height);
  std::vector<double> g(w * h, inf);
  const int len = std::max(width, height);
  std::vector<double> f(static_cast<std::size_t>(len)), d(static_cast<std::size_t>(len));
  std::vector<int> v(static_cast<std::size_t>(len));
  std::vector<double> z(static_cast<std::size_t>(len) + 1);

  f.resize(h);
  d.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) f[y] = sites[y * w + x] ? 0.0 : inf;
    detail::edt_1d(f, d, v, z);
    for (std::size_t y = 0; y < h; ++y) g[y * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) f[x] = g[y * w + x];
    detail::edt_1d(f, d, v, z);
    for (std::size_t x = 0; x < w; ++x) g[y * w + x] = std::sqrt(d[x]);
  }
  return g;
}

}  // namespace deskpilot
