#include "gcnn/ecc.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <string>

#include "gcnn/ops.hpp"

namespace gcnn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Budget for one chunk of per-edge filter matrices (elements).
constexpr std::size_t kEdgeChunkElements = std::size_t{1} << 21;

void check_stack(const CirculantShape& s, const Shape& gen_shape) {
  if (gen_shape != Shape{s.n_matrices, s.n_in})
    throw ShapeError("circulant stack: generators " + shape_str(gen_shape) + " do not match " +
                     std::to_string(s.n_matrices) + "x" + std::to_string(s.n_in));
  if (s.rows_per_matrix == 0 || s.rows_per_matrix > s.n_in)
    throw ShapeError("circulant stack: rows per matrix must lie in [1, n_in]");
}

// Dense (M*r) x n operator of a generator block.
template <class T>
void expand_into(const T* gens, std::size_t m, std::size_t r, std::size_t n, T* dense) {
  for (std::size_t b = 0; b < m; ++b)
    for (std::size_t s = 0; s < r; ++s) {
      T* row = dense + (b * r + s) * n;
      const T* g = gens + b * n;
      for (std::size_t t = 0; t < n; ++t) row[t] = g[(t + n - s) % n];
    }
}

// Adjoint of expand_into: dg[b][u] += sum_s dC[b*r+s][(u+s) mod n].
template <class T>
void fold_into(const T* dense_grad, std::size_t m, std::size_t r, std::size_t n, T* gen_grad) {
  for (std::size_t b = 0; b < m; ++b)
    for (std::size_t s = 0; s < r; ++s) {
      const T* row = dense_grad + (b * r + s) * n;
      T* g = gen_grad + b * n;
      for (std::size_t u = 0; u < n; ++u) g[u] += row[(u + s) % n];
    }
}

}  // namespace

std::size_t circulant_rows_for(std::size_t n_out, std::size_t requested) {
  if (requested == 0) throw ConfigError("circulant rows per matrix must be positive");
  for (std::size_t r = std::min(requested, n_out); r > 1; --r)
    if (n_out % r == 0) return r;
  return 1;
}

std::size_t fnet_output_parameter_count(std::size_t d_in, std::size_t d_out, std::size_t hidden,
                                        std::size_t rows, bool structured) {
  const std::size_t n_out = d_in * d_out;
  if (!structured) return n_out * hidden;
  if (rows == 0 || n_out % rows != 0)
    throw ConfigError("circulant rows (" + std::to_string(rows) + ") must divide d_out*d_in (" +
                      std::to_string(n_out) + ")");
  return (n_out / rows) * hidden;
}

template <class T>
std::vector<T> edge_label(std::span<const T> h_i, std::span<const T> h_j) {
  if (h_i.size() != h_j.size()) throw ShapeError("edge_label: feature lengths differ");
  std::vector<T> out(h_i.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = h_j[c] - h_i[c];
  return out;
}

template <class T>
std::vector<T> circulant_apply(const CirculantStack<T>& stack, std::span<const T> x) {
  const auto& s = stack.shape;
  check_stack(s, stack.generators.shape());
  if (x.size() != s.n_in)
    throw ShapeError("circulant_apply: input length " + std::to_string(x.size()) +
                     " != " + std::to_string(s.n_in));
  const std::size_t n = s.n_in;
  std::vector<T> out(s.n_out(), T{0});
  for (std::size_t b = 0; b < s.n_matrices; ++b) {
    const T* g = stack.generators.ptr() + b * n;
    for (std::size_t r = 0; r < s.rows_per_matrix; ++r) {
      // sum_t g[(t - r) mod n] x[t], split to avoid the modulo in the loop.
      T acc{0};
      for (std::size_t t = r; t < n; ++t) acc += g[t - r] * x[t];
      for (std::size_t t = 0; t < r; ++t) acc += g[n - r + t] * x[t];
      out[b * s.rows_per_matrix + r] = acc;
    }
  }
  return out;
}

template <class T>
Tensor<T> expand_to_dense(const CirculantStack<T>& stack) {
  const auto& s = stack.shape;
  check_stack(s, stack.generators.shape());
  Tensor<T> dense(Shape{s.n_out(), s.n_in});
  expand_into(stack.generators.ptr(), s.n_matrices, s.rows_per_matrix, s.n_in, dense.ptr());
  return dense;
}

template <class T>
Tensor<T> fnet_forward(const FNetWeights<T>& f, std::span<const T> label) {
  const auto& s = f.shape;
  if (label.size() != s.d_in)
    throw ShapeError("fnet_forward: label length " + std::to_string(label.size()) +
                     " != d_in " + std::to_string(s.d_in));
  if (f.hidden_w.shape() != Shape{s.hidden, s.d_in} || f.hidden_b.size() != s.hidden ||
      f.out_w.shape() != s.output_weight_shape() || f.out_b.size() != s.n_out())
    throw ShapeError("fnet_forward: weights do not match the network shape");
  std::vector<T> z(s.hidden);
  for (std::size_t o = 0; o < s.hidden; ++o) {
    T a = f.hidden_b[o];
    for (std::size_t i = 0; i < s.d_in; ++i) a += f.hidden_w[o * s.d_in + i] * label[i];
    z[o] = a > T{0} ? a : f.slope * a;
  }
  std::vector<T> theta;
  if (s.structured) {
    CirculantStack<T> stack{{s.n_out() / s.rows, s.rows, s.hidden}, f.out_w};
    theta = circulant_apply<T>(stack, z);
  } else {
    theta.assign(s.n_out(), T{0});
    for (std::size_t o = 0; o < s.n_out(); ++o)
      for (std::size_t t = 0; t < s.hidden; ++t) theta[o] += f.out_w[o * s.hidden + t] * z[t];
  }
  for (std::size_t o = 0; o < s.n_out(); ++o) theta[o] += f.out_b[o];
  return Tensor<T>(Shape{s.d_out, s.d_in}, std::move(theta));
}

namespace ops {

template <class T>
Var<T> circulant_apply(Var<T> generators, Var<T> x, std::size_t rows) {
  if (!generators.valid()) throw UsageError("circulant_apply: empty generators");
  const auto& gv = generators.value();
  if (gv.rank() != 2) throw ShapeError("circulant_apply: generators must be [M, n]");
  const CirculantShape shape{gv.dim(0), rows, gv.dim(1)};
  CirculantStack<T> stack{shape, gv};
  const auto& xv = x.value();
  std::vector<T> out = gcnn::circulant_apply<T>(stack, xv.data());
  Tape<T>* tape = generators.tape();
  return tape->record(
      "circulant_apply", Tensor<T>(Shape{shape.n_out()}, std::move(out)), {generators, x},
      [&gv, &xv, shape](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        const std::size_t n = shape.n_in, r = shape.rows_per_matrix;
        for (std::size_t b = 0; b < shape.n_matrices; ++b) {
          const T* gen = gv.ptr() + b * n;
          for (std::size_t s = 0; s < r; ++s) {
            const T go = g[b * r + s];
            for (std::size_t t = 0; t < n; ++t) {
              const std::size_t u = (t + n - s) % n;
              if (gi[0]) (*gi[0])[b * n + u] += go * xv[t];
              if (gi[1]) (*gi[1])[t] += go * gen[u];
            }
          }
        }
      });
}

template <class T>
Var<T> fnet_forward(const FNetVars<T>& f, Var<T> label) {
  const auto& s = f.shape;
  Var<T> z = leaky_relu(linear(f.hidden_w, label, f.hidden_b), f.slope);
  Var<T> theta = s.structured ? ops::circulant_apply(f.out_w, z, s.rows)
                              : linear(f.out_w, z, Var<T>());
  theta = add(theta, f.out_b);
  return reshape(theta, Shape{s.d_out, s.d_in});
}

template <class T>
Var<T> ecc_aggregate(Var<T> features, GraphSetPtr graphs, const EccVars<T>& p) {
  if (!features.valid()) throw UsageError("ecc_aggregate: empty features");
  Tape<T>* tape = features.tape();
  const Shape& xs = features.shape();
  if (xs.size() != 4) throw ShapeError("ecc_aggregate: features must be [N,C,H,W]");
  const FNetShape fs = p.fnet.shape;
  const std::size_t n = xs[0], d_in = xs[1], h = xs[2], w = xs[3], hw = h * w;
  const std::size_t d_out = fs.d_out, hid = fs.hidden, n_out = fs.n_out();
  if (d_in != fs.d_in)
    throw ShapeError("ecc_aggregate: features have " + std::to_string(d_in) +
                     " channels, layer expects " + std::to_string(fs.d_in));
  if (p.node_w.value().shape() != Shape{d_out, d_in} || p.node_b.value().size() != d_out)
    throw ShapeError("ecc_aggregate: node transform does not match layer shape");
  if (p.fnet.hidden_w.value().shape() != Shape{hid, d_in} ||
      p.fnet.hidden_b.value().size() != hid ||
      p.fnet.out_w.value().shape() != fs.output_weight_shape() ||
      p.fnet.out_b.value().size() != n_out)
    throw ShapeError("ecc_aggregate: filter-generating network does not match layer shape");
  if (!graphs || graphs->size() != n)
    throw ShapeError("ecc_aggregate: need one graph per image in the batch");
  const std::size_t k = graphs->front().k();
  for (const auto& g : *graphs)
    if (g.height() != h || g.width() != w || g.k() != k)
      throw ShapeError("ecc_aggregate: graph grid " + std::to_string(g.height()) + "x" +
                       std::to_string(g.width()) + " does not match features " +
                       std::to_string(h) + "x" + std::to_string(w));

  const T slope = p.fnet.slope;
  const auto& xv = features.value();
  const auto& wh = p.fnet.hidden_w.value();
  const auto& bh = p.fnet.hidden_b.value();
  const auto& wo = p.fnet.out_w.value();
  const auto& bo = p.fnet.out_b.value();
  const auto& wn = p.node_w.value();
  const auto& bn = p.node_b.value();

  // Dense output operator C [n_out, hidden].
  auto dense_out = std::make_shared<AlignedVector<T>>();
  if (fs.structured) {
    dense_out->resize(n_out * hid);
    expand_into(wo.ptr(), n_out / fs.rows, fs.rows, hid, dense_out->data());
  }
  const T* c_ptr = fs.structured ? dense_out->data() : wo.ptr();
  const std::size_t chunk_pixels =
      k == 0 ? hw : std::max<std::size_t>(1, kEdgeChunkElements / (k * std::max(n_out, hid)));

  // Pixel-major copy [hw, d_in] of image b.
  auto pixel_major = [&xv, d_in, hw](std::size_t b) {
    RowMat<T> pm(hw, d_in);
    const T* src = xv.ptr() + b * d_in * hw;
    for (std::size_t c = 0; c < d_in; ++c)
      for (std::size_t i = 0; i < hw; ++i) pm(i, c) = src[c * hw + i];
    return pm;
  };

  // Edge matrices for pixels [p0, p1): labels, hidden pre-activations and
  // hidden activations, rows ordered (pixel, neighbor rank).
  struct EdgeBlock {
    RowMat<T> labels, pre, act, theta;
  };
  auto edge_block = [&wh, &bh, &bo, tape, k, d_in, hid, n_out, slope, c_ptr, dense_out](
                        const RowMat<T>& pm, const NonLocalGraph& g, std::size_t p0,
                        std::size_t p1, EdgeBlock& eb, bool note_kinks) {
    const std::size_t e = (p1 - p0) * k;
    eb.labels.resize(e, d_in);
    for (std::size_t i = p0; i < p1; ++i) {
      auto nb = g.neighbors(i);
      for (std::size_t q = 0; q < k; ++q)
        eb.labels.row((i - p0) * k + q) = pm.row(nb[q]) - pm.row(i);
    }
    eb.pre.noalias() = eb.labels * CMapMat<T>(wh.ptr(), hid, d_in).transpose();
    eb.pre.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bh.ptr(), hid);
    eb.act = eb.pre;
    for (Eigen::Index r = 0; r < eb.act.rows(); ++r)
      for (Eigen::Index c = 0; c < eb.act.cols(); ++c) {
        T& v = eb.act(r, c);
        const bool pos = v > T{0};
        if (note_kinks) tape->note_kink_side(pos);
        if (!pos) v *= slope;
      }
    eb.theta.noalias() = eb.act * CMapMat<T>(c_ptr, n_out, hid).transpose();
    eb.theta.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bo.ptr(), n_out);
  };

  Tensor<T> out(Shape{n, d_out, h, w});
  EdgeBlock eb;
  for (std::size_t b = 0; b < n; ++b) {
    const RowMat<T> pm = pixel_major(b);
    RowMat<T> acc = pm * CMapMat<T>(wn.ptr(), d_out, d_in).transpose();
    acc.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn.ptr(), d_out);
    if (k > 0) {
      const NonLocalGraph& g = (*graphs)[b];
      const T inv_k = T{1} / static_cast<T>(k);
      for (std::size_t p0 = 0; p0 < hw; p0 += chunk_pixels) {
        const std::size_t p1 = std::min(hw, p0 + chunk_pixels);
        edge_block(pm, g, p0, p1, eb, true);
        for (std::size_t i = p0; i < p1; ++i) {
          auto nb = g.neighbors(i);
          Vec<T> sum = Vec<T>::Zero(d_out);
          for (std::size_t q = 0; q < k; ++q) {
            CMapMat<T> theta(eb.theta.row((i - p0) * k + q).data(), d_out, d_in);
            sum.noalias() += theta * pm.row(nb[q]).transpose();
          }
          acc.row(i) += inv_k * sum.transpose();
        }
      }
    }
    T* dst = out.ptr() + b * d_out * hw;
    for (std::size_t c = 0; c < d_out; ++c)
      for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] = acc(i, c);
  }

  std::vector<Var<T>> inputs{features,        p.fnet.hidden_w, p.fnet.hidden_b, p.fnet.out_w,
                             p.fnet.out_b,    p.node_w,        p.node_b};
  return tape->record(
      "ecc_aggregate", std::move(out), std::move(inputs),
      [=, &wh, &wn](const Tensor<T>& g, std::span<Tensor<T>* const> gi) {
        Tensor<T>* g_x = gi[0];
        RowMat<T> d_wh = RowMat<T>::Zero(hid, d_in);
        RowMat<T> d_c = RowMat<T>::Zero(n_out, hid);
        Vec<T> d_bh = Vec<T>::Zero(hid), d_bo = Vec<T>::Zero(n_out);
        RowMat<T> d_wn = RowMat<T>::Zero(d_out, d_in);
        Vec<T> d_bn = Vec<T>::Zero(d_out);
        CMapMat<T> cmat(c_ptr, n_out, hid);
        CMapMat<T> whm(wh.ptr(), hid, d_in);
        CMapMat<T> wnm(wn.ptr(), d_out, d_in);
        EdgeBlock eb;
        RowMat<T> d_theta, d_act, d_lab;
        for (std::size_t b = 0; b < n; ++b) {
          const RowMat<T> pm = pixel_major(b);
          RowMat<T> gp(hw, d_out);
          const T* src = g.ptr() + b * d_out * hw;
          for (std::size_t c = 0; c < d_out; ++c)
            for (std::size_t i = 0; i < hw; ++i) gp(i, c) = src[c * hw + i];

          d_wn.noalias() += gp.transpose() * pm;
          d_bn += gp.colwise().sum().transpose();
          RowMat<T> dp = gp * wnm;

          if (k > 0) {
            const NonLocalGraph& graph = (*graphs)[b];
            const T inv_k = T{1} / static_cast<T>(k);
            for (std::size_t p0 = 0; p0 < hw; p0 += chunk_pixels) {
              const std::size_t p1 = std::min(hw, p0 + chunk_pixels);
              edge_block(pm, graph, p0, p1, eb, false);
              const std::size_t e = (p1 - p0) * k;
              d_theta.resize(e, n_out);
              for (std::size_t i = p0; i < p1; ++i) {
                auto nb = graph.neighbors(i);
                const Vec<T> gi_scaled = inv_k * gp.row(i).transpose();
                for (std::size_t q = 0; q < k; ++q) {
                  const std::size_t row = (i - p0) * k + q;
                  MapMat<T>(d_theta.row(row).data(), d_out, d_in).noalias() =
                      gi_scaled * pm.row(nb[q]);
                  CMapMat<T> theta(eb.theta.row(row).data(), d_out, d_in);
                  dp.row(nb[q]).noalias() += (theta.transpose() * gi_scaled).transpose();
                }
              }
              d_bo += d_theta.colwise().sum().transpose();
              d_c.noalias() += d_theta.transpose() * eb.act;
              d_act.noalias() = d_theta * cmat;
              for (Eigen::Index r = 0; r < d_act.rows(); ++r)
                for (Eigen::Index c = 0; c < d_act.cols(); ++c)
                  if (!(eb.pre(r, c) > T{0})) d_act(r, c) *= slope;
              d_wh.noalias() += d_act.transpose() * eb.labels;
              d_bh += d_act.colwise().sum().transpose();
              d_lab.noalias() = d_act * whm;
              for (std::size_t i = p0; i < p1; ++i) {
                auto nb = graph.neighbors(i);
                for (std::size_t q = 0; q < k; ++q) {
                  const auto lr = d_lab.row((i - p0) * k + q);
                  dp.row(nb[q]) += lr;
                  dp.row(i) -= lr;
                }
              }
            }
          }
          if (g_x) {
            T* dst = g_x->ptr() + b * d_in * hw;
            for (std::size_t c = 0; c < d_in; ++c)
              for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] += dp(i, c);
          }
        }
        auto add_to = [](Tensor<T>* t, const T* src) {
          if (t)
            for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += src[i];
        };
        add_to(gi[1], d_wh.data());
        add_to(gi[2], d_bh.data());
        if (gi[3]) {
          if (fs.structured)
            fold_into(d_c.data(), n_out / fs.rows, fs.rows, hid, gi[3]->ptr());
          else
            add_to(gi[3], d_c.data());
        }
        add_to(gi[4], d_bo.data());
        add_to(gi[5], d_wn.data());
        add_to(gi[6], d_bn.data());
      });
}

}  // namespace ops

#define GCNN_INSTANTIATE_ECC(T)                                                             \
  template std::vector<T> edge_label<T>(std::span<const T>, std::span<const T>);            \
  template std::vector<T> circulant_apply<T>(const CirculantStack<T>&, std::span<const T>); \
  template Tensor<T> expand_to_dense<T>(const CirculantStack<T>&);                          \
  template Tensor<T> fnet_forward<T>(const FNetWeights<T>&, std::span<const T>);            \
  template Var<T> ops::circulant_apply<T>(Var<T>, Var<T>, std::size_t);                     \
  template Var<T> ops::fnet_forward<T>(const FNetVars<T>&, Var<T>);                         \
  template Var<T> ops::ecc_aggregate<T>(Var<T>, GraphSetPtr, const EccVars<T>&);

GCNN_INSTANTIATE_ECC(float)
GCNN_INSTANTIATE_ECC(double)

}  // namespace gcnn
