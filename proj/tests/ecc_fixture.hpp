#pragma once

#include "gcnn/ecc.hpp"
#include "gcnn/gradcheck.hpp"
#include "gcnn/ops.hpp"
#include "oracles.hpp"

// Random edge-conditioned convolution parameters held as double Parameters,
// usable both on a tape and by the loop oracle.
struct EccFixture {
  gcnn::FNetShape shape;
  double slope = 0.2;
  gcnn::Parameter<double> hw, hb, ow, ob, nw, nb;

  EccFixture(std::size_t d_in, std::size_t d_out, std::size_t hidden, std::size_t rows, bool structured,
             gcnn::CounterRng& rng, double bias_scale = 0.3)
      : shape{d_in, d_out, hidden, rows, structured} {
    using gcnn::Shape;
    hw = {"fnet.hidden.w", oracle::random_tensor(Shape{hidden, d_in}, rng), {}};
    hb = {"fnet.hidden.b", oracle::random_tensor(Shape{hidden}, rng, -bias_scale, bias_scale), {}};
    ow = {"fnet.out.w", oracle::random_tensor(shape.output_weight_shape(), rng, -0.5, 0.5), {}};
    ob = {"fnet.out.b", oracle::random_tensor(Shape{d_in * d_out}, rng, -bias_scale, bias_scale), {}};
    nw = {"node.w", oracle::random_tensor(Shape{d_out, d_in}, rng), {}};
    nb = {"node.b", oracle::random_tensor(Shape{d_out}, rng), {}};
    for (auto* p : params()) p->zero_grad();
  }

  std::vector<gcnn::Parameter<double>*> params() { return {&hw, &hb, &ow, &ob, &nw, &nb}; }

  gcnn::EccVars<double> bind(gcnn::Tape<double>& t) {
    gcnn::EccVars<double> v;
    v.fnet.shape = shape;
    v.fnet.hidden_w = t.parameter(hw);
    v.fnet.hidden_b = t.parameter(hb);
    v.fnet.out_w = t.parameter(ow);
    v.fnet.out_b = t.parameter(ob);
    v.fnet.slope = slope;
    v.node_w = t.parameter(nw);
    v.node_b = t.parameter(nb);
    return v;
  }

  oracle::Fnet oracle_fnet() const {
    return {shape.d_in, shape.d_out, shape.hidden, shape.rows, shape.structured, hw.value, hb.value, ow.value,
            ob.value, slope};
  }

  gcnn::FNetWeights<double> weights() const {
    return {shape, hw.value, hb.value, ow.value, ob.value, slope};
  }
};
