#pragma once

// Test-only reference implementations. These deliberately avoid the library
// code paths they check: plain loops over std::vector<double>.

#include <cmath>
#include <cstddef>
#include <vector>

#include "objcrop/probe.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_vec(const objcrop::Vector& v) { return Vec(v.data(), v.data() + v.size()); }

inline double sqdist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Weighted mean cross-entropy + l2 * ||W||^2, evaluated from scratch.
inline double probe_loss(const std::vector<Vec>& w, const Vec& b, const std::vector<Vec>& x,
                         const std::vector<std::size_t>& y, const Vec& weights, double l2) {
  double total_w = 0.0;
  for (double v : weights) total_w += v;
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> z(w.size());
    for (std::size_t c = 0; c < w.size(); ++c) {
      z[c] = b[c];
      for (std::size_t k = 0; k < x[i].size(); ++k) z[c] += w[c][k] * x[i][k];
    }
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    loss += weights[i] / total_w * (std::log(s) + m - z[y[i]]);
  }
  for (const auto& row : w)
    for (double v : row) loss += l2 * v * v;
  return loss;
}

/// Central differences of probe_loss with respect to every W and b entry,
/// flattened as [W row-major, b].
inline Vec probe_fd_gradient(std::vector<Vec> w, Vec b, const std::vector<Vec>& x, const std::vector<std::size_t>& y,
                             const Vec& weights, double l2, double h) {
  Vec g;
  for (std::size_t c = 0; c < w.size(); ++c) {
    for (std::size_t k = 0; k < w[c].size(); ++k) {
      const double orig = w[c][k];
      w[c][k] = orig + h;
      const double up = probe_loss(w, b, x, y, weights, l2);
      w[c][k] = orig - h;
      const double down = probe_loss(w, b, x, y, weights, l2);
      w[c][k] = orig;
      g.push_back((up - down) / (2 * h));
    }
  }
  for (std::size_t c = 0; c < b.size(); ++c) {
    const double orig = b[c];
    b[c] = orig + h;
    const double up = probe_loss(w, b, x, y, weights, l2);
    b[c] = orig - h;
    const double down = probe_loss(w, b, x, y, weights, l2);
    b[c] = orig;
    g.push_back((up - down) / (2 * h));
  }
  return g;
}

struct Head {
  std::vector<Vec> w;
  Vec b;
};

/// Full-batch gradient descent from zero, gradient written out per entry.
inline Head probe_train(const std::vector<Vec>& x, const std::vector<std::size_t>& y, std::size_t ways, double lr,
                        std::size_t epochs, double l2) {
  const std::size_t d = x[0].size();
  const double n = static_cast<double>(x.size());
  Head h{std::vector<Vec>(ways, Vec(d, 0.0)), Vec(ways, 0.0)};
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<Vec> gw(ways, Vec(d, 0.0));
    Vec gb(ways, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      Vec z(ways);
      double m = -1e300;
      for (std::size_t c = 0; c < ways; ++c) {
        z[c] = h.b[c];
        for (std::size_t k = 0; k < d; ++k) z[c] += h.w[c][k] * x[i][k];
        m = std::max(m, z[c]);
      }
      double s = 0.0;
      for (std::size_t c = 0; c < ways; ++c) s += std::exp(z[c] - m);
      for (std::size_t c = 0; c < ways; ++c) {
        const double r = std::exp(z[c] - m) / s - (c == y[i] ? 1.0 : 0.0);
        for (std::size_t k = 0; k < d; ++k) gw[c][k] += r * x[i][k] / n;
        gb[c] += r / n;
      }
    }
    for (std::size_t c = 0; c < ways; ++c) {
      for (std::size_t k = 0; k < d; ++k) h.w[c][k] -= lr * (gw[c][k] + 2.0 * l2 * h.w[c][k]);
      h.b[c] -= lr * gb[c];
    }
  }
  return h;
}

struct KMeansOut {
  std::vector<Vec> centroids;
  std::vector<std::size_t> labels;
  std::size_t iterations = 0;
};

/// Soft K-means written out line by line: assignment, then centroid update
/// with support anchored to its class, until displacement < tol.
inline KMeansOut soft_kmeans(const std::vector<std::vector<Vec>>& support, const std::vector<Vec>& query, double beta,
                             double tol, std::size_t max_iters) {
  const std::size_t w = support.size();
  const std::size_t d = support[0][0].size();
  KMeansOut out;
  for (const auto& cls : support) {
    Vec c(d, 0.0);
    for (const auto& x : cls)
      for (std::size_t k = 0; k < d; ++k) c[k] += x[k] / static_cast<double>(cls.size());
    out.centroids.push_back(c);
  }
  std::vector<Vec> r(query.size(), Vec(w));
  auto assign = [&] {
    for (std::size_t i = 0; i < query.size(); ++i) {
      Vec s(w);
      double m = -1e300;
      for (std::size_t c = 0; c < w; ++c) {
        s[c] = -beta * sqdist(query[i], out.centroids[c]);
        m = std::max(m, s[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < w; ++c) z += std::exp(s[c] - m);
      for (std::size_t c = 0; c < w; ++c) r[i][c] = std::exp(s[c] - m) / z;
    }
  };
  for (out.iterations = 1; out.iterations <= max_iters; ++out.iterations) {
    assign();
    double moved = 0.0;
    for (std::size_t c = 0; c < w; ++c) {
      Vec num(d, 0.0);
      double den = 0.0;
      for (const auto& x : support[c]) {
        for (std::size_t k = 0; k < d; ++k) num[k] += x[k];
        den += 1.0;
      }
      for (std::size_t i = 0; i < query.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) num[k] += r[i][c] * query[i][k];
        den += r[i][c];
      }
      for (std::size_t k = 0; k < d; ++k) num[k] /= den;
      moved = std::max(moved, std::sqrt(sqdist(num, out.centroids[c])));
      out.centroids[c] = num;
    }
    if (moved < tol) break;
  }
  assign();
  for (const auto& row : r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < w; ++c)
      if (row[c] > row[best]) best = c;
    out.labels.push_back(best);
  }
  return out;
}

/// Hard K-means (Lloyd) from the support class means, support anchored.
inline KMeansOut lloyd(const std::vector<std::vector<Vec>>& support, const std::vector<Vec>& query,
                       std::size_t max_iters) {
  const std::size_t w = support.size();
  const std::size_t d = support[0][0].size();
  KMeansOut out;
  for (const auto& cls : support) {
    Vec c(d, 0.0);
    for (const auto& x : cls)
      for (std::size_t k = 0; k < d; ++k) c[k] += x[k] / static_cast<double>(cls.size());
    out.centroids.push_back(c);
  }
  out.labels.assign(query.size(), 0);
  for (out.iterations = 1; out.iterations <= max_iters; ++out.iterations) {
    std::vector<std::size_t> next(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < w; ++c)
        if (sqdist(query[i], out.centroids[c]) < sqdist(query[i], out.centroids[best])) best = c;
      next[i] = best;
    }
    const bool stable = out.iterations > 1 && next == out.labels;
    out.labels = next;
    if (stable) break;
    for (std::size_t c = 0; c < w; ++c) {
      Vec num(d, 0.0);
      double den = 0.0;
      for (const auto& x : support[c]) {
        for (std::size_t k = 0; k < d; ++k) num[k] += x[k];
        den += 1.0;
      }
      for (std::size_t i = 0; i < query.size(); ++i)
        if (out.labels[i] == c) {
          for (std::size_t k = 0; k < d; ++k) num[k] += query[i][k];
          den += 1.0;
        }
      for (std::size_t k = 0; k < d; ++k) num[k] /= den;
      out.centroids[c] = num;
    }
  }
  return out;
}

}  // namespace oracle
