#pragma once

#include <memory>
#include <span>
#include <vector>

#include "gcnn/graph.hpp"
#include "gcnn/tape.hpp"

namespace gcnn {

// Stack of M row-subsampled circulant matrices. Matrix m keeps rows
// 0..r-1 of the circulant generated by g_m, where row s is g_m cyclically
// shifted right by s: row_s[t] = g_m[(t - s) mod n_in]. Stacked, the rows
// form an (M*r) x n_in operator held in M*n_in numbers.
struct CirculantShape {
  std::size_t n_matrices = 0;
  std::size_t rows_per_matrix = 0;
  std::size_t n_in = 0;

  std::size_t n_out() const { return n_matrices * rows_per_matrix; }
  std::size_t parameter_count() const { return n_matrices * n_in; }
};

template <class T>
struct CirculantStack {
  CirculantShape shape;
  Tensor<T> generators;  // [M, n_in]
};

// Largest r' <= requested that divides n_out, so that M * r' == n_out.
std::size_t circulant_rows_for(std::size_t n_out, std::size_t requested);

// Weight count of the filter-generating network's output layer (no bias):
// d_out*d_in*hidden dense, or (d_out*d_in / rows)*hidden when stacked.
std::size_t fnet_output_parameter_count(std::size_t d_in, std::size_t d_out, std::size_t hidden,
                                        std::size_t rows, bool structured);

// L(i,j) = h_j - h_i.
template <class T>
std::vector<T> edge_label(std::span<const T> h_i, std::span<const T> h_j);

// expand_to_dense(stack) * x without forming the dense matrix.
template <class T>
std::vector<T> circulant_apply(const CirculantStack<T>& stack, std::span<const T> x);

template <class T>
Tensor<T> expand_to_dense(const CirculantStack<T>& stack);

struct FNetShape {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::size_t hidden = 0;
  std::size_t rows = 1;    // circulant rows per matrix (structured only)
  bool structured = true;

  std::size_t n_out() const { return d_out * d_in; }
  Shape output_weight_shape() const {
    return structured ? Shape{n_out() / rows, hidden} : Shape{n_out(), hidden};
  }
};

// Filter-generating network: label -> LReLU(Wh label + bh) -> C z + bo,
// reshaped row-major to a d_out x d_in matrix.
template <class T>
struct FNetWeights {
  FNetShape shape;
  Tensor<T> hidden_w;  // [hidden, d_in]
  Tensor<T> hidden_b;  // [hidden]
  Tensor<T> out_w;     // generators [M, hidden] or dense [n_out, hidden]
  Tensor<T> out_b;     // [n_out]
  T slope = T(0.2);
};

template <class T>
Tensor<T> fnet_forward(const FNetWeights<T>& fnet, std::span<const T> label);

using GraphSet = std::vector<NonLocalGraph>;
using GraphSetPtr = std::shared_ptr<const GraphSet>;

template <class T>
struct FNetVars {
  FNetShape shape;
  Var<T> hidden_w, hidden_b, out_w, out_b;
  T slope = T(0.2);
};

template <class T>
struct EccVars {
  FNetVars<T> fnet;
  Var<T> node_w;  // [d_out, d_in]
  Var<T> node_b;  // [d_out]
};

namespace ops {

// generators:[M,n] x:[n] -> [M*rows]
template <class T>
Var<T> circulant_apply(Var<T> generators, Var<T> x, std::size_t rows);

// label:[d_in] -> [d_out, d_in]
template <class T>
Var<T> fnet_forward(const FNetVars<T>& fnet, Var<T> label);

// Pre-activation edge-conditioned aggregation over a [N,d_in,H,W] batch
// with one graph per image:
//   out_i = 1/|N_i| sum_{j in N_i} F(H_j - H_i) H_j + W H_i + b.
// Gradients reach the parameters and the features, both through the
// aggregated H_j and through the labels fed to F.
template <class T>
Var<T> ecc_aggregate(Var<T> features, GraphSetPtr graphs, const EccVars<T>& params);

}  // namespace ops
}  // namespace gcnn
