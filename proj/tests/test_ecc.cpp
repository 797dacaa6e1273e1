#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ecc_fixture.hpp"

using namespace gcnn;

namespace {

CirculantStack<double> random_stack(std::size_t m, std::size_t r, std::size_t n, CounterRng& rng) {
  return {CirculantShape{m, r, n}, oracle::random_tensor(Shape{m, n}, rng)};
}

std::vector<double> dense_matvec(const Tensor<double>& d, const std::vector<double>& x) {
  std::vector<double> y(d.dim(0), 0.0);
  for (std::size_t i = 0; i < d.dim(0); ++i)
    for (std::size_t j = 0; j < d.dim(1); ++j) y[i] += d[i * d.dim(1) + j] * x[j];
  return y;
}

std::vector<double> random_vec(std::size_t n, CounterRng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

GraphSetPtr single(NonLocalGraph g) { return std::make_shared<GraphSet>(GraphSet{std::move(g)}); }

}  // namespace

TEST_CASE("edge labels") {
  const std::vector<double> a{1.0, 2.0}, b{0.0, 2.0};
  CHECK(edge_label<double>(a, a) == std::vector<double>{0.0, 0.0});
  CHECK(edge_label<double>(b, a) == std::vector<double>{1.0, 0.0});
  const auto ab = edge_label<double>(a, b), ba = edge_label<double>(b, a);
  for (std::size_t i = 0; i < 2; ++i) CHECK(ab[i] == -ba[i]);
}

TEST_CASE("circulant examples") {
  CounterRng rng(1);
  SUBCASE("delta generator with all rows is the identity") {
    CirculantStack<double> s{{1, 5, 5}, Tensor<double>(Shape{1, 5})};
    s.generators[0] = 1.0;
    const auto x = random_vec(5, rng);
    CHECK(circulant_apply<double>(s, x) == x);
  }
  SUBCASE("zero generator gives zero rows") {
    auto s = random_stack(3, 2, 4, rng);
    for (std::size_t t = 0; t < 4; ++t) s.generators[4 + t] = 0.0;
    const auto y = circulant_apply<double>(s, random_vec(4, rng));
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 0.0);
  }
  SUBCASE("dense expansion rows") {
    CirculantStack<double> s{{1, 2, 3}, Tensor<double>(Shape{1, 3}, {1.0, 2.0, 3.0})};
    CHECK(expand_to_dense(s).storage() == AlignedVector<double>{1, 2, 3, 3, 1, 2});
    CirculantStack<double> one{{1, 1, 3}, s.generators};
    CHECK(expand_to_dense(one).storage() == AlignedVector<double>{1, 2, 3});
  }
  SUBCASE("n_in=6, M=4, r=3 against the dense oracle") {
    const auto s = random_stack(4, 3, 6, rng);
    const auto x = random_vec(6, rng);
    const auto y = circulant_apply<double>(s, x);
    const auto rows = oracle::dense_circulant(s.generators, 3);
    REQUIRE(y.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      double ref = 0;
      for (std::size_t j = 0; j < 6; ++j) ref += rows[i][j] * x[j];
      CHECK(y[i] == doctest::Approx(ref).epsilon(1e-14));
    }
  }
  SUBCASE("length mismatch") {
    const auto s = random_stack(2, 2, 4, rng);
    CHECK_THROWS_AS(circulant_apply<double>(s, random_vec(3, rng)), ShapeError);
  }
}

TEST_CASE("structured product equals dense matvec on 100 random stacks") {
  CounterRng rng(100);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.index(40), r = 1 + rng.index(n), m = 1 + rng.index(12);
    const auto s = random_stack(m, r, n, rng);
    const auto x = random_vec(n, rng);
    const auto y = circulant_apply<double>(s, x);
    const auto d = expand_to_dense(s);
    CHECK(d.shape() == Shape{m * r, n});
    CHECK(oracle::max_rel_diff(y, dense_matvec(d, x)) < 1e-12);
  }
}

TEST_CASE("parameter counts") {
  CHECK(fnet_output_parameter_count(66, 66, 66, 3, false) == 287496);
  CHECK(fnet_output_parameter_count(66, 66, 66, 3, true) == 95832);
  CHECK(66 * 66 / 3 == 1452);
  CHECK(circulant_rows_for(66 * 66, 3) == 3);
  CHECK(circulant_rows_for(22 * 22, 3) == 2);
  CHECK(circulant_rows_for(25, 3) == 1);
}

TEST_CASE("filter-generating network") {
  CounterRng rng(7);
  SUBCASE("d=4, h=4, r=2 against composed dense layers") {
    EccFixture f(4, 4, 4, 2, true, rng);
    const auto label = random_vec(4, rng);
    const auto th = fnet_forward(f.weights(), std::span<const double>(label));
    CHECK(th.shape() == Shape{4, 4});
    CHECK(oracle::max_rel_diff(th.data(), oracle::theta(f.oracle_fnet(), label)) < 1e-13);
  }
  SUBCASE("unstructured output layer") {
    EccFixture f(3, 2, 5, 1, false, rng);
    const auto label = random_vec(3, rng);
    const auto th = fnet_forward(f.weights(), std::span<const double>(label));
    CHECK(oracle::max_rel_diff(th.data(), oracle::theta(f.oracle_fnet(), label)) < 1e-13);
  }
  SUBCASE("identical labels give identical matrices") {
    EccFixture f(4, 4, 4, 2, true, rng);
    const auto label = random_vec(4, rng);
    const auto copy = label;
    CHECK(fnet_forward(f.weights(), std::span<const double>(label)) ==
          fnet_forward(f.weights(), std::span<const double>(copy)));
  }
  SUBCASE("zero label with zero biases gives zero") {
    EccFixture f(4, 4, 4, 2, true, rng);
    f.hb.value.fill(0.0);
    f.ob.value.fill(0.0);
    const std::vector<double> zero(4, 0.0);
    const auto th = fnet_forward(f.weights(), std::span<const double>(zero));
    for (double v : th.data()) CHECK(v == 0.0);
  }
  SUBCASE("taped network equals the plain one") {
    EccFixture f(4, 3, 5, 3, true, rng);
    const auto label = random_vec(4, rng);
    Tape<double> t;
    auto v = f.bind(t);
    auto th = ops::fnet_forward(v.fnet, t.constant(Tensor<double>(Shape{4}, label)));
    CHECK(oracle::max_rel_diff(th.value().data(), oracle::theta(f.oracle_fnet(), label)) < 1e-13);
  }
}

TEST_CASE("edge-conditioned aggregation against the loop oracle") {
  CounterRng rng(3);
  SUBCASE("3x3 map, d=2, k=1, tiny network") {
    EccFixture f(2, 2, 2, 2, true, rng);
    const auto feat = oracle::random_tensor(Shape{1, 2, 3, 3}, rng);
    auto g = oracle::random_graph(3, 3, 1, rng);
    Tape<double> t;
    auto out = ops::ecc_aggregate(t.constant(feat), single(g), f.bind(t));
    const auto ref = oracle::ecc(f.oracle_fnet(), f.nw.value, f.nb.value, feat.ptr(), 3, 3, g);
    CHECK(out.shape() == Shape{1, 2, 3, 3});
    CHECK(oracle::max_rel_diff(out.value().data(), ref) < 1e-10);
  }
  SUBCASE("20 random instances, batch of graphs") {
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t din = 1 + rng.index(6), dout = 1 + rng.index(6), hid = 1 + rng.index(6);
      const std::size_t h = 3 + rng.index(6), w = 3 + rng.index(6), k = rng.index(6), n = 1 + rng.index(2);
      const bool structured = rng.uniform() < 0.7;
      const std::size_t rows = structured ? circulant_rows_for(din * dout, 1 + rng.index(3)) : 1;
      EccFixture f(din, dout, hid, rows, structured, rng);
      const auto feat = oracle::random_tensor(Shape{n, din, h, w}, rng);
      auto set = std::make_shared<GraphSet>();
      for (std::size_t b = 0; b < n; ++b) set->push_back(oracle::random_graph(h, w, k, rng));
      Tape<double> t;
      auto out = ops::ecc_aggregate(t.constant(feat), set, f.bind(t));
      for (std::size_t b = 0; b < n; ++b) {
        const auto ref =
            oracle::ecc(f.oracle_fnet(), f.nw.value, f.nb.value, feat.ptr() + b * din * h * w, h, w, (*set)[b]);
        std::span<const double> got(out.value().ptr() + b * dout * h * w, dout * h * w);
        CHECK(oracle::max_rel_diff(got, ref) < 1e-10);
      }
    }
  }
}

TEST_CASE("aggregation special cases") {
  CounterRng rng(5);
  EccFixture f(3, 4, 3, 3, true, rng);
  SUBCASE("k = 0 reduces to the node term") {
    const auto feat = oracle::random_tensor(Shape{1, 3, 4, 4}, rng);
    Tape<double> t;
    auto out = ops::ecc_aggregate(t.constant(feat), single(NonLocalGraph(4, 4, 0)), f.bind(t));
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t o = 0; o < 4; ++o) {
        double ref = f.nb.value[o];
        for (std::size_t c = 0; c < 3; ++c) ref += f.nw.value[o * 3 + c] * feat[c * 16 + i];
        CHECK(out.value()[o * 16 + i] == doctest::Approx(ref).epsilon(1e-15));
      }
  }
  SUBCASE("identical features give identical outputs") {
    Tensor<double> feat(Shape{1, 3, 4, 4});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) feat[c * 16 + i] = 0.1 * static_cast<double>(c + 1);
    Tape<double> t;
    auto out = ops::ecc_aggregate(t.constant(feat), single(oracle::random_graph(4, 4, 3, rng)), f.bind(t));
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t i = 1; i < 16; ++i) CHECK(out.value()[o * 16 + i] == out.value()[o * 16]);
  }
  SUBCASE("pixel relabelling permutes the output") {
    const std::size_t h = 3, w = 4, px = 12;
    const auto feat = oracle::random_tensor(Shape{1, 3, h, w}, rng);
    const auto g = oracle::random_graph(h, w, 3, rng);
    std::vector<std::uint32_t> perm(px);
    for (std::size_t i = 0; i < px; ++i) perm[i] = static_cast<std::uint32_t>((i * 5 + 3) % px);
    Tensor<double> pf(feat.shape());
    NonLocalGraph pg(h, w, 3);
    for (std::size_t i = 0; i < px; ++i) {
      for (std::size_t c = 0; c < 3; ++c) pf[c * px + perm[i]] = feat[c * px + i];
      for (std::size_t a = 0; a < 3; ++a) pg.neighbors(perm[i])[a] = perm[g.neighbors(i)[a]];
    }
    Tape<double> t;
    auto base = ops::ecc_aggregate(t.constant(feat), single(g), f.bind(t));
    auto moved = ops::ecc_aggregate(t.constant(pf), single(pg), f.bind(t));
    for (std::size_t i = 0; i < px; ++i)
      for (std::size_t o = 0; o < 4; ++o)
        CHECK(moved.value()[o * px + perm[i]] == doctest::Approx(base.value()[o * px + i]).epsilon(1e-14));
  }
  SUBCASE("shape errors") {
    Tape<double> t;
    auto wrong_c = t.constant(Tensor<double>(Shape{1, 2, 4, 4}));
    CHECK_THROWS_AS(ops::ecc_aggregate(wrong_c, single(NonLocalGraph(4, 4, 0)), f.bind(t)), ShapeError);
    auto feat = t.constant(Tensor<double>(Shape{1, 3, 4, 4}));
    CHECK_THROWS_AS(ops::ecc_aggregate(feat, single(NonLocalGraph(4, 5, 0)), f.bind(t)), ShapeError);
  }
}

TEST_CASE("gradients") {
  CounterRng rng(9);
  SUBCASE("circulant stack") {
    Parameter<double> g{"generators", oracle::random_tensor(Shape{4, 6}, rng), {}};
    Parameter<double> x{"x", oracle::random_tensor(Shape{6}, rng), {}};
    const auto target = oracle::random_tensor(Shape{12}, rng);
    std::vector<Parameter<double>*> ps{&g, &x};
    auto rep = finite_difference_check(
        [&](Tape<double>& t) {
          return ops::mse(ops::circulant_apply(t.parameter(g), t.parameter(x), 3), t.constant(target));
        },
        ps);
    CHECK_MESSAGE(rep.passed, rep.to_string());
  }
  SUBCASE("filter-generating network") {
    EccFixture f(3, 3, 4, 3, true, rng);
    Parameter<double> label{"label", oracle::random_tensor(Shape{3}, rng), {}};
    const auto target = oracle::random_tensor(Shape{3, 3}, rng);
    auto ps = f.params();
    ps.resize(4);
    ps.push_back(&label);
    auto rep = finite_difference_check(
        [&](Tape<double>& t) {
          auto v = f.bind(t);
          return ops::mse(ops::fnet_forward(v.fnet, t.parameter(label)), t.constant(target));
        },
        ps);
    CHECK_MESSAGE(rep.passed, rep.to_string());
  }
  SUBCASE("aggregation, parameters and features") {
    EccFixture f(3, 2, 3, 2, true, rng);
    Parameter<double> feat{"features", oracle::random_tensor(Shape{2, 3, 5, 5}, rng), {}};
    auto set = std::make_shared<GraphSet>(GraphSet{oracle::random_graph(5, 5, 4, rng), oracle::random_graph(5, 5, 4, rng)});
    const auto target = oracle::random_tensor(Shape{2, 2, 5, 5}, rng);
    auto ps = f.params();
    ps.push_back(&feat);
    auto rep = finite_difference_check(
        [&](Tape<double>& t) {
          return ops::mse(ops::ecc_aggregate(t.parameter(feat), set, f.bind(t)), t.constant(target));
        },
        ps);
    CHECK_MESSAGE(rep.passed, rep.to_string());
  }
}
