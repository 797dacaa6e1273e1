#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcnn/train.hpp"
#include "oracles.hpp"

using namespace gcnn;
namespace fs = std::filesystem;

namespace {

NetworkConfig micro_net() {
  NetworkConfig c;
  c.branch_channels = 2;
  c.trunk_channels = 6;
  c.graph_stages = 1;
  c.res_blocks_per_stage = 1;
  c.layers_per_res_block = 2;
  c.nlg = NlgConfig{4, 4, 1};
  return c;
}

TrainConfig micro_train() {
  TrainConfig t;
  t.synthetic_images = 2;
  t.synthetic_size = 64;
  t.patch_size = 16;
  t.patch_stride = 16;
  t.batch_size = 4;
  t.patches_per_epoch = 16;
  t.epochs = 3;
  t.lr_decay_every = 2;
  t.validation_patches = 3;
  t.log_wall_time = false;
  t.seed = 7;
  return t;
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "gcnn_test_train" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

float batch_loss(Model<float>& m, const Tensor<float>& x, const Tensor<float>& target) {
  Tape<float> t;
  t.set_grad_enabled(false);
  auto out = m.forward(t, t.constant(x), Mode::kTrain);
  return loss(out.noise_estimate, t.constant(target)).value()[0];
}

float train_step(Model<float>& m, AdamMoments<float>& adam, const Tensor<float>& x,
                 const Tensor<float>& target, double lr) {
  Tape<float> t;
  m.store().zero_grad();
  auto out = m.forward(t, t.constant(x), Mode::kTrain);
  auto l = loss(out.noise_estimate, t.constant(target));
  t.backward(l);
  adam_step(m.store(), adam, AdamOptions{}, lr);
  return l.value()[0];
}

}  // namespace

TEST_CASE("loss") {
  Tape<double> t;
  Tensor<double> a(Shape{1, 1, 2, 2}), b(Shape{1, 1, 2, 2});
  CHECK(loss(t.constant(a), t.constant(b)).value()[0] == 0.0);
  a.data()[0] = 2.0;
  CHECK(loss(t.constant(a), t.constant(b)).value()[0] == doctest::Approx(1.0));

  CounterRng rng(1);
  const auto x = oracle::random_tensor(Shape{2, 1, 5, 3}, rng, -1, 1);
  const auto y = oracle::random_tensor(Shape{2, 1, 5, 3}, rng, -1, 1);
  double expect = 0;
  for (std::size_t i = 0; i < x.size(); ++i) expect += (x[i] - y[i]) * (x[i] - y[i]);
  expect /= static_cast<double>(x.size());
  CHECK(loss(t.constant(x), t.constant(y)).value()[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK_THROWS_AS(loss(t.constant(x), t.constant(Tensor<double>(Shape{2, 1, 5, 4}))), ShapeError);
}

TEST_CASE("adam update rule") {
  SUBCASE("zero gradient leaves parameters but decays moments") {
    ParameterStore<double> s;
    auto& p = s.add("p", Tensor<double>(Shape{2}, 0.5));
    AdamMoments<double> m;
    p.grad.data()[0] = 1.0;
    adam_step(s, m, AdamOptions{}, 0.1);
    const auto after_one = p.value;
    const double m1 = m.m[0][0], v1 = m.v[0][0];
    p.zero_grad();
    adam_step(s, m, AdamOptions{}, 0.0);
    CHECK(p.value == after_one);
    CHECK(m.m[0][0] == doctest::Approx(0.9 * m1));
    CHECK(m.v[0][0] == doctest::Approx(0.999 * v1));
    CHECK(m.t == 2);
  }
  SUBCASE("three steps against a hand recurrence") {
    ParameterStore<double> s;
    auto& p = s.add("w", Tensor<double>(Shape{1}, 1.0));
    AdamMoments<double> mom;
    const AdamOptions opt{0.8, 0.95, 1e-6};
    const double gs[3] = {1.0, -2.0, 0.5};
    double w = 1.0, m = 0.0, v = 0.0;
    for (int k = 0; k < 3; ++k) {
      p.grad.data()[0] = gs[k];
      adam_step(s, mom, opt, 0.05);
      m = 0.8 * m + 0.2 * gs[k];
      v = 0.95 * v + 0.05 * gs[k] * gs[k];
      const double mh = m / (1.0 - std::pow(0.8, k + 1));
      const double vh = v / (1.0 - std::pow(0.95, k + 1));
      w -= 0.05 * mh / (std::sqrt(vh) + 1e-6);
      CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-13));
    }
  }
  SUBCASE("non-finite gradient names the parameter and changes nothing") {
    ParameterStore<float> s;
    auto& a = s.add("first", Tensor<float>(Shape{2}, 1.0f));
    auto& b = s.add("stage0.block0.layer1.node.w", Tensor<float>(Shape{2}, 1.0f));
    a.grad.data()[0] = 1.0f;
    b.grad.data()[1] = std::nanf("");
    AdamMoments<float> m;
    try {
      adam_step(s, m, AdamOptions{}, 0.1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("stage0.block0.layer1.node.w") != std::string::npos);
    }
    CHECK(a.value[0] == 1.0f);
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.lr_decay = 0.5;
  c.lr_decay_every = 10;
  CHECK(learning_rate_at(c, 0) == 1e-3);
  CHECK(learning_rate_at(c, 9) == 1e-3);
  CHECK(learning_rate_at(c, 10) == 5e-4);
  CHECK(learning_rate_at(c, 25) == 2.5e-4);
}

TEST_CASE("overfitting a single batch") {
  const auto net = micro_net();
  Model<float> m(net);
  std::vector<GrayImage> clean, noisy;
  const auto src = make_synthetic_image(3, 32, 32);
  for (std::size_t i = 0; i < 4; ++i) {
    clean.push_back(crop(src, (i / 2) * 16, (i % 2) * 16, 16, 16));
    noisy.push_back(add_awgn(clean.back(), NoiseConfig{25.0, i}));
  }
  const auto x = to_tensor<float>(noisy);
  auto target = to_tensor<float>(clean);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = x[i] - target[i];
  AdamMoments<float> adam;
  const float first = train_step(m, adam, x, target, 1e-2);
  float last = first;
  for (int i = 0; i < 60; ++i) last = train_step(m, adam, x, target, 1e-2);
  MESSAGE("single-batch loss " << first << " -> " << last);
  CHECK(last < 0.5f * first);
}

TEST_CASE("noise-free training drives the loss to zero") {
  Model<float> m(micro_net());
  CounterRng rng(2);
  for (auto& p : m.store().parameters())
    if (p.name == "head.w")
      for (auto& v : p.value.data()) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  const auto img = make_synthetic_image(8, 16, 16);
  std::vector<GrayImage> batch{img, img};
  const auto x = to_tensor<float>(batch);
  const Tensor<float> zero(x.shape());
  AdamMoments<float> adam;
  const float first = batch_loss(m, x, zero);
  REQUIRE(first > 1e-4f);
  for (int i = 0; i < 80; ++i) train_step(m, adam, x, zero, 1e-2);
  const float last = batch_loss(m, x, zero);
  MESSAGE("noise-free loss " << first << " -> " << last);
  CHECK(last < 0.05f * first);
}

TEST_CASE("train config text round trip") {
  TrainConfig c = micro_train();
  c.validation_manifest = "val/list.txt";
  c.beta2 = 0.99;
  c.max_steps = 11;
  KeyValueDoc doc;
  write_train_config(c, doc);
  CHECK(read_train_config(KeyValueDoc::parse(doc.to_text())) == c);
  CHECK_THROWS_AS(read_train_config(KeyValueDoc::parse("[train]\nlearning_rat = 1\n")), ConfigError);
  TrainConfig bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patch budget sizing") {
  TrainConfig c;
  c.batch_size = 4;
  c.patches_per_epoch = 10;
  CHECK(steps_per_epoch(c, 100) == 2);
  c.patches_per_epoch = 0;
  CHECK(steps_per_epoch(c, 9) == 2);
  c.patches_per_epoch = 200;
  CHECK_THROWS_AS(steps_per_epoch(c, 100), SizingError);
  c.patches_per_epoch = 3;
  CHECK_THROWS_AS(steps_per_epoch(c, 100), SizingError);
}

TEST_CASE("training loop determinism and resume") {
  const auto net = micro_net();
  const auto cfg = micro_train();
  const TrainData data = load_train_data(cfg, "");
  REQUIRE(data.images.size() == 2);
  REQUIRE(data.validation.size() == 3);

  const auto d1 = fresh_dir("a"), d2 = fresh_dir("b"), d3 = fresh_dir("c");
  const auto full = train_loop(net, cfg, data, TrainRun{d1.string(), std::nullopt, 0, nullptr});
  CHECK(full.steps == 12);
  CHECK(full.metrics.size() == 12);
  CHECK(fs::exists(d1 / "best.gcnn"));
  CHECK(std::isfinite(full.best_val_psnr));
  CHECK(full.metrics[0].lr == cfg.learning_rate);
  CHECK(full.metrics[11].lr == cfg.learning_rate * cfg.lr_decay);

  SUBCASE("identical runs are bit-identical") {
    train_loop(net, cfg, data, TrainRun{d2.string(), std::nullopt, 0, nullptr});
    CHECK(slurp(d1 / "checkpoint.gcnn") == slurp(d2 / "checkpoint.gcnn"));
    CHECK(slurp(d1 / "metrics.tsv") == slurp(d2 / "metrics.tsv"));
  }
  SUBCASE("interrupted run resumes to the same final state") {
    const auto part = train_loop(net, cfg, data, TrainRun{d3.string(), std::nullopt, 5, nullptr});
    CHECK(part.steps == 5);
    const auto ck = Checkpoint::load((d3 / "checkpoint.gcnn").string());
    const auto rest = train_loop(net, cfg, data, TrainRun{d3.string(), ck, 0, nullptr});
    CHECK(rest.steps == 12);
    CHECK(rest.metrics.size() == 7);
    CHECK(slurp(d1 / "checkpoint.gcnn") == slurp(d3 / "checkpoint.gcnn"));
    CHECK(slurp(d1 / "metrics.tsv") == slurp(d3 / "metrics.tsv"));
    CHECK(slurp(d1 / "best.gcnn") == slurp(d3 / "best.gcnn"));
  }
  SUBCASE("resume refuses a different configuration") {
    auto other = cfg;
    other.learning_rate = 2e-3;
    CHECK_THROWS_AS(train_loop(net, other, data, TrainRun{"", full.checkpoint, 0, nullptr}), ConfigError);
  }
  SUBCASE("train state round trip") {
    const auto st = load_train_state(full.checkpoint);
    CHECK(st.step == 12);
    CHECK(st.adam.t == 12);
    CHECK(save_train_state(st, cfg).serialize() == full.checkpoint.serialize());
  }
  SUBCASE("metrics format") {
    std::istringstream in(slurp(d1 / "metrics.tsv"));
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("1\t", 0) == 0);
    CHECK(line.substr(line.size() - 9) == "\t0.000000");
  }
}
