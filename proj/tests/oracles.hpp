// Reference implementations used only by the tests. They are written as
// plain loops, independent of the library kernels they are compared with.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gcnn/ecc.hpp"
#include "gcnn/graph.hpp"
#include "gcnn/rng.hpp"
#include "gcnn/tensor.hpp"

namespace oracle {

using gcnn::Shape;
using gcnn::Tensor;

inline Tensor<double> random_tensor(Shape s, gcnn::CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, mag = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
  }
  return mag > 0.0 ? diff / mag : diff;
}

// Zero-padded same-size cross-correlation, x:[N,C,H,W], k:[O,C,kh,kw].
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>* bias) {
  const long n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const long o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  Tensor<double> y(Shape{x.dim(0), k.dim(0), x.dim(2), x.dim(3)});
  for (long b = 0; b < n; ++b)
    for (long oc = 0; oc < o; ++oc)
      for (long r = 0; r < h; ++r)
        for (long q = 0; q < w; ++q) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (long ic = 0; ic < c; ++ic)
            for (long dr = 0; dr < kh; ++dr)
              for (long dq = 0; dq < kw; ++dq) {
                const long rr = r + dr - kh / 2, qq = q + dq - kw / 2;
                if (rr < 0 || rr >= h || qq < 0 || qq >= w) continue;
                acc += k.at(oc, ic, dr, dq) * x.at(b, ic, rr, qq);
              }
          y.at(b, oc, r, q) = acc;
        }
  return y;
}

// Dense rows of a stacked circulant: row m*r+s equals generator m shifted
// right by s positions.
inline std::vector<std::vector<double>> dense_circulant(const Tensor<double>& gens, std::size_t rows) {
  const std::size_t m = gens.dim(0), n = gens.dim(1);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < rows; ++s) {
      std::vector<double> row(n);
      for (std::size_t t = 0; t < n; ++t) row[(t + s) % n] = gens[i * n + t];
      out.push_back(row);
    }
  return out;
}

struct Fnet {
  std::size_t d_in, d_out, hidden, rows;
  bool structured;
  Tensor<double> hw, hb, ow, ob;
  double slope;
};

// Theta = reshape(C * lrelu(Wh * label + bh) + bo) as a d_out x d_in matrix.
inline std::vector<double> theta(const Fnet& f, const std::vector<double>& label) {
  std::vector<double> z(f.hidden);
  for (std::size_t a = 0; a < f.hidden; ++a) {
    double s = f.hb[a];
    for (std::size_t i = 0; i < f.d_in; ++i) s += f.hw[a * f.d_in + i] * label[i];
    z[a] = s > 0 ? s : f.slope * s;
  }
  std::vector<std::vector<double>> c;
  if (f.structured) {
    c = dense_circulant(f.ow, f.rows);
  } else {
    for (std::size_t o = 0; o < f.d_in * f.d_out; ++o)
      c.emplace_back(f.ow.ptr() + o * f.hidden, f.ow.ptr() + (o + 1) * f.hidden);
  }
  std::vector<double> th(f.d_in * f.d_out);
  for (std::size_t o = 0; o < th.size(); ++o) {
    double s = f.ob[o];
    for (std::size_t a = 0; a < f.hidden; ++a) s += c[o][a] * z[a];
    th[o] = s;
  }
  return th;
}

// Term-by-term edge-conditioned convolution on one [C,H,W] map:
// out_i = 1/|N_i| sum_j Theta(H_j - H_i) H_j + W H_i + b.
inline std::vector<double> ecc(const Fnet& f, const Tensor<double>& w, const Tensor<double>& b, const double* feat,
                               std::size_t h, std::size_t wd, const gcnn::NonLocalGraph& g) {
  const std::size_t px = h * wd, din = f.d_in, dout = f.d_out;
  std::vector<double> out(dout * px, 0.0);
  for (std::size_t i = 0; i < px; ++i) {
    std::vector<double> hi(din);
    for (std::size_t c = 0; c < din; ++c) hi[c] = feat[c * px + i];
    std::vector<double> acc(dout, 0.0);
    const auto nb = g.neighbors(i);
    for (auto j : nb) {
      std::vector<double> hj(din), label(din);
      for (std::size_t c = 0; c < din; ++c) {
        hj[c] = feat[c * px + j];
        label[c] = hj[c] - hi[c];
      }
      const auto th = theta(f, label);
      for (std::size_t o = 0; o < dout; ++o)
        for (std::size_t c = 0; c < din; ++c) acc[o] += th[o * din + c] * hj[c];
    }
    for (std::size_t o = 0; o < dout; ++o) {
      double v = nb.empty() ? 0.0 : acc[o] / static_cast<double>(nb.size());
      for (std::size_t c = 0; c < din; ++c) v += w[o * din + c] * hi[c];
      out[o * px + i] = v + b[o];
    }
  }
  return out;
}

// Any valid neighbour lists (k distinct pixels other than i) for ECC tests
// that do not depend on how the graph was selected.
inline gcnn::NonLocalGraph random_graph(std::size_t h, std::size_t w, std::size_t k, gcnn::CounterRng& rng) {
  gcnn::NonLocalGraph g(h, w, k);
  const std::size_t px = h * w;
  for (std::size_t i = 0; i < px; ++i) {
    std::vector<std::uint32_t> pool;
    for (std::size_t j = 0; j < px; ++j)
      if (j != i) pool.push_back(static_cast<std::uint32_t>(j));
    for (std::size_t a = 0; a < k; ++a) {
      const std::size_t pick = a + rng.index(pool.size() - a);
      std::swap(pool[a], pool[pick]);
      g.neighbors(i)[a] = pool[a];
    }
  }
  return g;
}

}  // namespace oracle
