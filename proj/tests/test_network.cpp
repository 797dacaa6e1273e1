#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "gcnn/eval.hpp"
#include "gcnn/network.hpp"
#include "oracles.hpp"

using namespace gcnn;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.branch_channels = 6;
  c.trunk_channels = 18;
  c.graph_stages = 1;
  c.res_blocks_per_stage = 2;
  c.layers_per_res_block = 2;
  c.nlg = NlgConfig{4, 8, 1};
  return c;
}

std::size_t census_of(const Model<float>& m, const std::string& name) {
  for (const auto& e : m.census())
    if (e.module == name) return e.count;
  return 0;
}

Tensor<float> random_input(Shape s, std::uint64_t seed) {
  CounterRng rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
  return t;
}

}  // namespace

TEST_CASE("parameter census") {
  SUBCASE("default network, structured filter network") {
    Model<float> m(NetworkConfig{});
    CHECK(census_of(m, "stage0.block0.layer0.fnet.out") == 95832);
    CHECK(census_of(m, "stage1.block1.layer2.fnet.out") == 95832);
    std::size_t total = 0;
    for (const auto& e : m.census()) total += e.count;
    CHECK(total == m.parameter_count());
  }
  SUBCASE("unstructured output layer") {
    NetworkConfig c;
    c.fnet_structured = false;
    Model<float> m(c);
    CHECK(census_of(m, "stage0.block0.layer0.fnet.out") == 287496);
  }
  SUBCASE("no trunk layers: head is 9 * trunk + 1") {
    NetworkConfig c = tiny_config();
    c.graph_stages = 0;
    Model<float> m(c);
    CHECK(census_of(m, "head") == 9 * 18 + 1);
    CHECK(m.gc_layer_count() == 3);
  }
}

TEST_CASE("zero network passes the input through") {
  Model<float> m(tiny_config());
  m.zero_parameters();
  const auto x = random_input(Shape{2, 1, 12, 12}, 3);
  Tape<float> t;
  auto out = m.forward(t, t.constant(x), Mode::kInference);
  for (float v : out.noise_estimate.value().data()) CHECK(v == 0.0f);
  CHECK(out.denoised.value() == x);
}

TEST_CASE("residual connection") {
  Model<float> m(tiny_config());
  const auto x = random_input(Shape{2, 1, 16, 16}, 4);
  Tape<float> t;
  auto out = m.forward(t, t.constant(x), Mode::kTrain);
  CHECK(out.noise_estimate.shape() == Shape{2, 1, 16, 16});
  CHECK(out.denoised.shape() == Shape{2, 1, 16, 16});
  CHECK(out.denoised.value().all_finite());
  const auto& n = out.noise_estimate.value();
  const auto& d = out.denoised.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(d[i] == x[i] - n[i]);
    CHECK(std::abs((d[i] + n[i]) - x[i]) <= std::numeric_limits<float>::epsilon() * 4);
  }
}

TEST_CASE("graph sharing") {
  SUBCASE("stage layers share one graph object; prepro layers share the input graph") {
    NetworkConfig c = tiny_config();
    c.graph_stages = 2;
    Model<float> m(c);
    ForwardTrace tr;
    Tape<float> t;
    m.forward(t, t.constant(random_input(Shape{1, 1, 12, 12}, 5)), Mode::kTrain, nullptr, &tr);
    REQUIRE(tr.layers.size() == 3 + 8);
    for (std::size_t b = 1; b < 3; ++b) CHECK(tr.layers[b].graphs == tr.layers[0].graphs);
    for (std::size_t l = 4; l < 7; ++l) CHECK(tr.layers[l].graphs == tr.layers[3].graphs);
    for (std::size_t l = 8; l < 11; ++l) CHECK(tr.layers[l].graphs == tr.layers[7].graphs);
    CHECK(tr.layers[3].graphs != tr.layers[7].graphs);
    CHECK(tr.layers[0].graphs != tr.layers[3].graphs);
  }
  SUBCASE("per-branch preprocessing graphs") {
    NetworkConfig c = tiny_config();
    c.prepro_graph = PreproGraph::kPerBranch;
    Model<float> m(c);
    ForwardTrace tr;
    Tape<float> t;
    m.forward(t, t.constant(random_input(Shape{1, 1, 12, 12}, 6)), Mode::kTrain, nullptr, &tr);
    CHECK(tr.layers[0].graphs != tr.layers[1].graphs);
    CHECK(tr.layers[1].graphs != tr.layers[2].graphs);
  }
  SUBCASE("a cache freezes graph selection") {
    Model<float> m(tiny_config());
    GraphCache cache;
    ForwardTrace a, b;
    const auto x = random_input(Shape{1, 1, 12, 12}, 7);
    {
      Tape<float> t;
      m.forward(t, t.constant(x), Mode::kTrain, &cache, &a);
    }
    CHECK(cache.graphs.size() == 2);
    {
      Tape<float> t;
      m.forward(t, t.constant(x), Mode::kTrain, &cache, &b);
    }
    for (std::size_t i = 0; i < a.layers.size(); ++i) CHECK(a.layers[i].graphs == b.layers[i].graphs);
  }
}

TEST_CASE("sizing error carries a remedy hint") {
  NetworkConfig c = tiny_config();
  c.nlg = NlgConfig{8, 2, 1};
  Model<float> m(c);
  Tape<float> t;
  try {
    m.forward(t, t.constant(Tensor<float>(Shape{1, 1, 3, 3})), Mode::kTrain);
    FAIL("expected SizingError");
  } catch (const SizingError& e) {
    CHECK(std::string(e.what()).find("til") != std::string::npos);
  }
}

TEST_CASE("network config validation and text round trip") {
  NetworkConfig c = tiny_config();
  c.slope = 0.1;
  c.fnet_hidden = 5;
  c.seed = 99;
  c.prepro_graph = PreproGraph::kPerBranch;
  KeyValueDoc doc;
  write_network_config(c, doc);
  CHECK(read_network_config(KeyValueDoc::parse(doc.to_text())) == c);

  NetworkConfig bad = c;
  bad.trunk_channels = 17;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.layers_per_res_block = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(read_network_config(KeyValueDoc::parse("[network]\nbogus = 1\n")), ConfigError);
  CHECK_THROWS_AS(read_network_config(KeyValueDoc::parse("[network]\ntrunk_channels = x\n")), ConfigError);
}

TEST_CASE("checkpoint format") {
  Model<float> m(tiny_config());
  Checkpoint ck;
  store_model(m, ck);
  const auto bytes = ck.serialize();
  REQUIRE(bytes.size() > 8);
  CHECK(std::memcmp(bytes.data(), "GCNN", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(Checkpoint::deserialize(bytes) == ck);
  CHECK(Checkpoint::deserialize(bytes).serialize() == bytes);

  SUBCASE("restored model gives bit-identical inference") {
    {
      Tape<float> t;
      m.forward(t, t.constant(random_input(Shape{2, 1, 12, 12}, 8)), Mode::kTrain);
    }
    Checkpoint trained;
    store_model(m, trained);
    Model<float> back = restore_model<float>(Checkpoint::deserialize(trained.serialize()));
    const auto x = random_input(Shape{1, 1, 14, 14}, 9);
    CHECK(back.denoise(x) == m.denoise(x));
  }
  SUBCASE("corruption is rejected") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::deserialize(bad), FormatError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(Checkpoint::deserialize(bad), FormatError);
    bad = bytes;
    bad.resize(bytes.size() / 2);
    CHECK_THROWS_AS(Checkpoint::deserialize(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(Checkpoint::deserialize(bad), FormatError);
  }
  SUBCASE("shape mismatch on restore") {
    Checkpoint other = ck;
    KeyValueDoc doc = KeyValueDoc::parse(other.config_text);
    doc.set("network", "branch_channels", "4");
    doc.set("network", "trunk_channels", "12");
    other.config_text = doc.to_text();
    CHECK_THROWS_AS(restore_model<float>(other), FormatError);
  }
  SUBCASE("f32 tensors read back as f64") {
    Model<double> dm = restore_model<double>(ck);
    CHECK(dm.parameter_count() == m.parameter_count());
  }
}

TEST_CASE("end-to-end gradient, micro network with fixed graphs") {
  NetworkConfig c;
  c.branch_channels = 2;
  c.trunk_channels = 6;
  c.graph_stages = 1;
  c.res_blocks_per_stage = 1;
  c.layers_per_res_block = 2;
  c.nlg = NlgConfig{4, 3, 1};
  ModelGradCheckOptions opt;
  opt.fixed_graph = true;
  const auto rep = model_gradcheck(c, opt);
  CHECK_MESSAGE(rep.passed, rep.to_string());
}
