#include "gcnn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

namespace gcnn::ops {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " but got " + shape_str(s));
}

template <class T>
Tape<T>* tape_of(Var<T> v, const char* op) {
  if (!v.valid()) throw UsageError(std::string(op) + ": empty input");
  return v.tape();
}

// Lays out the receptive windows of one [C,H,W] image as columns of a
// [C*kh*kw, H*W] matrix (zero padded, same-size output).
template <class T>
void im2col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, T* cols) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((ch * kh + ky) * kw + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - ph;
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, T{0});
            continue;
          }
          const T* src = img + (ch * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pw;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? T{0} : src[sx];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, T* img) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const std::size_t hw = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((ch * kh + ky) * kw + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - ph;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          T* dst = img + (ch * h + static_cast<std::size_t>(sy)) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - pw;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>* tape = tape_of(a, "add");
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape->record("add", std::move(out), {a, b},
                      [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (auto* t : gi)
                          if (t)
                            for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
                      });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>* tape = tape_of(a, "sub");
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape->record("sub", std::move(out), {a, b},
                      [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        if (gi[0])
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                        if (gi[1])
                          for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                      });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>* tape = tape_of(a, "scale");
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return tape->record("scale", std::move(out), {a},
                      [s](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
                      });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>* tape = tape_of(a, "reshape");
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return tape->record("reshape", std::move(out), {a},
                      [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                      });
}

template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>* tape = tape_of(a, "sum");
  T total{0};
  for (T v : a.value().data()) total += v;
  return tape->record("sum", Tensor<T>(Shape{1}, {total}), {a},
                      [](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (auto& v : gi[0]->data()) v += g[0];
                      });
}

template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  Tape<T>* tape = tape_of(a, "mse");
  require_same(a.shape(), b.shape(), "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  const T n = static_cast<T>(av.size());
  T acc{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  return tape->record("mse", Tensor<T>(Shape{1}, {acc / n}), {a, b},
                      [&av, &bv, n](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        const T k = T{2} * g[0] / n;
                        for (std::size_t i = 0; i < av.size(); ++i) {
                          const T d = k * (av[i] - bv[i]);
                          if (gi[0]) (*gi[0])[i] += d;
                          if (gi[1]) (*gi[1])[i] -= d;
                        }
                      });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>* tape = tape_of(a, "matmul");
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()));
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(Shape{m, n});
  MapMat<T>(out.ptr(), m, n).noalias() = CMapMat<T>(av.ptr(), m, k) * CMapMat<T>(bv.ptr(), k, n);
  return tape->record(
      "matmul", std::move(out), {a, b},
      [&av, &bv, m, k, n](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        CMapMat<T> gm(g.ptr(), m, n);
        if (gi[0]) MapMat<T>(gi[0]->ptr(), m, k).noalias() += gm * CMapMat<T>(bv.ptr(), k, n).transpose();
        if (gi[1]) MapMat<T>(gi[1]->ptr(), k, n).noalias() += CMapMat<T>(av.ptr(), m, k).transpose() * gm;
      });
}

template <class T>
Var<T> linear(Var<T> w, Var<T> x, Var<T> b) {
  Tape<T>* tape = tape_of(w, "linear");
  require_rank(w.shape(), 2, "linear");
  const std::size_t out_n = w.shape()[0], in_n = w.shape()[1];
  require(x.value().size() == in_n, "linear: input length " + std::to_string(x.value().size()) +
                                        " does not match weight " + shape_str(w.shape()));
  if (b.valid())
    require(b.value().size() == out_n, "linear: bias length does not match weight rows");
  const auto& wv = w.value();
  const auto& xv = x.value();
  Tensor<T> out(Shape{out_n});
  for (std::size_t o = 0; o < out_n; ++o) {
    T acc = b.valid() ? b.value()[o] : T{0};
    for (std::size_t i = 0; i < in_n; ++i) acc += wv[o * in_n + i] * xv[i];
    out[o] = acc;
  }
  std::vector<Var<T>> inputs{w, x};
  if (b.valid()) inputs.push_back(b);
  return tape->record(
      "linear", std::move(out), std::move(inputs),
      [&wv, &xv, out_n, in_n](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        for (std::size_t o = 0; o < out_n; ++o) {
          for (std::size_t i = 0; i < in_n; ++i) {
            if (gi[0]) (*gi[0])[o * in_n + i] += g[o] * xv[i];
            if (gi[1]) (*gi[1])[i] += wv[o * in_n + i] * g[o];
          }
          if (gi.size() > 2 && gi[2]) (*gi[2])[o] += g[o];
        }
      });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tape<T>* tape = tape_of(x, "leaky_relu");
  if (!(slope > T{0} && slope < T{1}))
    throw ConfigError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  const auto& xv = x.value();
  Tensor<T> out = xv;
  for (auto& v : out.data()) {
    const bool pos = v > T{0};
    tape->note_kink_side(pos);
    if (!pos) v *= slope;
  }
  return tape->record("leaky_relu", std::move(out), {x},
                      [&xv, slope](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          (*gi[0])[i] += xv[i] > T{0} ? g[i] : slope * g[i];
                      });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias) {
  Tape<T>* tape = tape_of(x, "conv2d");
  require_rank(x.shape(), 4, "conv2d");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const std::size_t o = kernel.shape()[0], kh = kernel.shape()[2], kw = kernel.shape()[3];
  require(kernel.shape()[1] == c, "conv2d: input has " + std::to_string(c) +
                                      " channels but kernel expects " +
                                      std::to_string(kernel.shape()[1]));
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
  if (bias.valid()) require(bias.value().size() == o, "conv2d: bias length differs from out channels");

  const std::size_t hw = h * w, patch = c * kh * kw;
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  Tensor<T> out(Shape{n, o, h, w});
  AlignedVector<T> cols(patch * hw);
  CMapMat<T> kmat(kv.ptr(), o, patch);
  for (std::size_t b = 0; b < n; ++b) {
    im2col(xv.ptr() + b * c * hw, c, h, w, kh, kw, cols.data());
    MapMat<T> om(out.ptr() + b * o * hw, o, hw);
    om.noalias() = kmat * CMapMat<T>(cols.data(), patch, hw);
    if (bias.valid())
      for (std::size_t oc = 0; oc < o; ++oc) om.row(oc).array() += bias.value()[oc];
  }
  std::vector<Var<T>> inputs{x, kernel};
  if (bias.valid()) inputs.push_back(bias);
  return tape->record(
      "conv2d", std::move(out), std::move(inputs),
      [&xv, &kv, n, c, h, w, o, kh, kw](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const std::size_t hw = h * w, patch = c * kh * kw;
        AlignedVector<T> cols(patch * hw), dcols(patch * hw);
        CMapMat<T> kmat(kv.ptr(), o, patch);
        for (std::size_t b = 0; b < n; ++b) {
          CMapMat<T> gm(g.ptr() + b * o * hw, o, hw);
          if (gi[1]) {
            im2col(xv.ptr() + b * c * hw, c, h, w, kh, kw, cols.data());
            MapMat<T>(gi[1]->ptr(), o, patch).noalias() +=
                gm * CMapMat<T>(cols.data(), patch, hw).transpose();
          }
          if (gi[0]) {
            MapMat<T>(dcols.data(), patch, hw).noalias() = kmat.transpose() * gm;
            col2im_add(dcols.data(), c, h, w, kh, kw, gi[0]->ptr() + b * c * hw);
          }
          if (gi.size() > 2 && gi[2])
            for (std::size_t oc = 0; oc < o; ++oc) (*gi[2])[oc] += gm.row(oc).sum();
        }
      });
}

template <class T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode,
                  const BatchNormOptions& opts) {
  Tape<T>* tape = tape_of(x, "batch_norm");
  require_rank(x.shape(), 4, "batch_norm");
  const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  require(gamma.value().size() == c && beta.value().size() == c,
          "batch_norm: affine parameters must have one entry per channel");
  require(state.running_mean.size() == c, "batch_norm: running statistics sized for " +
                                              std::to_string(state.running_mean.size()) +
                                              " channels, input has " + std::to_string(c));
  const T eps = static_cast<T>(opts.eps);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  const T count = static_cast<T>(n * hw);

  // Per-channel normalization statistics.
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    const T mom = static_cast<T>(opts.momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s{0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const T mu = s / count;
      T v{0};
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      v /= count;
      mean[ch] = mu;
      inv_std[ch] = T{1} / std::sqrt(v + eps);
      state.running_mean[ch] = mom * state.running_mean[ch] + (T{1} - mom) * mu;
      state.running_var[ch] = mom * state.running_var[ch] + (T{1} - mom) * v;
    }
    state.initialized = true;
  } else {
    if (!state.initialized)
      throw UsageError("batch_norm: inference mode before any training step; running "
                       "statistics are uninitialized");
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(state.running_var[ch] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  Tensor<T> out(xv.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xv[off + i] - mean[ch]) * inv_std[ch];
        (*xhat)[off + i] = xh;
        out[off + i] = gv[ch] * xh + bv[ch];
      }
    }

  const bool train = mode == Mode::kTrain;
  return tape->record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [xhat, inv_std, &gv, n, c, hw, count, train](const Tensor<T>& g,
                                                   std::span<Tensor<T>* const> gi) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g{0}, sum_gx{0};
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += g[off + i];
              sum_gx += g[off + i] * (*xhat)[off + i];
            }
          }
          if (gi[1]) (*gi[1])[ch] += sum_gx;
          if (gi[2]) (*gi[2])[ch] += sum_g;
          if (!gi[0]) continue;
          const T k = gv[ch] * inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                (*gi[0])[off + i] +=
                    k * (g[off + i] - sum_g / count - (*xhat)[off + i] * sum_gx / count);
              } else {
                (*gi[0])[off + i] += k * g[off + i];
              }
            }
          }
        }
      });
}

template <class T>
Var<T> concat_channels(std::span<const Var<T>> maps) {
  if (maps.empty()) throw ShapeError("concat_channels: no inputs");
  Tape<T>* tape = tape_of(maps[0], "concat_channels");
  const Shape& s0 = maps[0].shape();
  require_rank(s0, 4, "concat_channels");
  std::size_t total = 0;
  std::vector<std::size_t> chans;
  for (const auto& m : maps) {
    const Shape& s = m.shape();
    require_rank(s, 4, "concat_channels");
    require(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels: batch/spatial mismatch " + shape_str(s) + " vs " + shape_str(s0));
    chans.push_back(s[1]);
    total += s[1];
  }
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out(Shape{n, total, s0[2], s0[3]});
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t c0 = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
      const T* src = maps[m].value().ptr() + b * chans[m] * hw;
      std::copy(src, src + chans[m] * hw, out.ptr() + (b * total + c0) * hw);
      c0 += chans[m];
    }
  }
  std::vector<Var<T>> inputs(maps.begin(), maps.end());
  return tape->record("concat_channels", std::move(out), std::move(inputs),
                      [chans, n, hw, total](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (std::size_t b = 0; b < n; ++b) {
                          std::size_t c0 = 0;
                          for (std::size_t m = 0; m < chans.size(); ++m) {
                            if (gi[m]) {
                              const T* src = g.ptr() + (b * total + c0) * hw;
                              T* dst = gi[m]->ptr() + b * chans[m] * hw;
                              for (std::size_t i = 0; i < chans[m] * hw; ++i) dst[i] += src[i];
                            }
                            c0 += chans[m];
                          }
                        }
                      });
}

template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  Tape<T>* tape = tape_of(x, "slice_channels");
  const Shape& s = x.shape();
  require_rank(s, 4, "slice_channels");
  require(count > 0 && begin + count <= s[1], "slice_channels: range out of bounds");
  const std::size_t n = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out(Shape{n, count, s[2], s[3]});
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = x.value().ptr() + (b * c + begin) * hw;
    std::copy(src, src + count * hw, out.ptr() + b * count * hw);
  }
  return tape->record("slice_channels", std::move(out), {x},
                      [n, c, hw, begin, count](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
                        for (std::size_t b = 0; b < n; ++b) {
                          T* dst = gi[0]->ptr() + (b * c + begin) * hw;
                          const T* src = g.ptr() + b * count * hw;
                          for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
                        }
                      });
}

#define GCNN_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add<T>(Var<T>, Var<T>);                                                    \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                    \
  template Var<T> scale<T>(Var<T>, T);                                                       \
  template Var<T> reshape<T>(Var<T>, Shape);                                                 \
  template Var<T> sum<T>(Var<T>);                                                            \
  template Var<T> mse<T>(Var<T>, Var<T>);                                                    \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                 \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> leaky_relu<T>(Var<T>, T);                                                  \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode,           \
                                const BatchNormOptions&);                                    \
  template Var<T> concat_channels<T>(std::span<const Var<T>>);                               \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);

GCNN_INSTANTIATE_OPS(float)
GCNN_INSTANTIATE_OPS(double)

}  // namespace gcnn::ops
