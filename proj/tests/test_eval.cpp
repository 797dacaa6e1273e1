#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "gcnn/eval.hpp"

using namespace gcnn;

namespace {

NetworkConfig micro_net(std::size_t k) {
  NetworkConfig c;
  c.branch_channels = 2;
  c.trunk_channels = 6;
  c.graph_stages = 1;
  c.res_blocks_per_stage = 1;
  c.layers_per_res_block = 2;
  c.nlg = NlgConfig{k, 6, 1};
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
  t.epochs = 2;
  t.log_wall_time = false;
  return t;
}

// Pixels on which output (row, col) of layer `upto` depends, walking the
// recorded layer graphs back to the input one 3x3 footprint at a time.
Mask dependency_oracle(const std::vector<const NonLocalGraph*>& graphs, std::size_t h, std::size_t w,
                       std::size_t row, std::size_t col, std::size_t upto) {
  std::vector<char> cur(h * w, 0);
  cur[row * w + col] = 1;
  for (std::size_t l = upto; l-- > 0;) {
    std::vector<char> next(h * w, 0);
    for (std::size_t i = 0; i < h * w; ++i) {
      if (!cur[i]) continue;
      const long r = static_cast<long>(i / w), c = static_cast<long>(i % w);
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = r + dr, cc = c + dc;
          if (rr >= 0 && cc >= 0 && rr < static_cast<long>(h) && cc < static_cast<long>(w))
            next[static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)] = 1;
        }
      if (graphs[l])
        for (auto j : graphs[l]->neighbors(i)) next[j] = 1;
    }
    cur.swap(next);
  }
  Mask m(h, w);
  for (std::size_t i = 0; i < h * w; ++i) m.cells[i] = cur[i] ? 1 : 0;
  return m;
}

Mask clipped_square(std::size_t h, std::size_t w, std::size_t row, std::size_t col, std::size_t rad) {
  Mask m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (std::abs(static_cast<long>(r) - static_cast<long>(row)) <= static_cast<long>(rad) &&
          std::abs(static_cast<long>(c) - static_cast<long>(col)) <= static_cast<long>(rad))
        m.set(r, c);
  return m;
}

// One train-mode pass so batch-norm statistics exist for inference.
void warm_up(Model<float>& m, const GrayImage& img) {
  const std::vector<GrayImage> one{img};
  Tape<float> t;
  t.set_grad_enabled(false);
  m.forward(t, t.constant(to_tensor<float>(one)), Mode::kTrain);
}

}  // namespace

TEST_CASE("psnr") {
  GrayImage a(4, 4, 0.5f);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
  CHECK(format_psnr(psnr(a, a)) == "inf");
  CHECK(psnr(GrayImage(4, 4, 0.0f), GrayImage(4, 4, 1.0f)) == doctest::Approx(0.0));
  // mse 1e-3 -> 30 dB
  GrayImage b = a;
  const float d = static_cast<float>(std::sqrt(1e-3));
  for (std::size_t i = 0; i < b.pixels.size(); ++i) b.pixels[i] += (i % 2 ? d : -d);
  CHECK(psnr(a, b) == doctest::Approx(30.0).epsilon(1e-5));
  CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-6));
  // test image is clamped first
  GrayImage over(4, 4, 1.7f);
  CHECK(std::isinf(psnr(GrayImage(4, 4, 1.0f), over)));
  CHECK_THROWS_AS(psnr(GrayImage(4, 4), GrayImage(4, 5)), ShapeError);
  CHECK(format_psnr(30.25) == "30.25");
}

TEST_CASE("denoising with an all-zero model returns the clamped input") {
  Model<float> m(micro_net(4));
  m.zero_parameters();
  const auto noisy = add_awgn(make_synthetic_image(1, 24, 30), NoiseConfig{25.0, 2});
  CHECK(denoise_image(m, noisy) == clamped(noisy));
  CHECK(denoise_image(m, noisy, TileOptions{true, 16, 4}) == clamped(noisy));
}

TEST_CASE("tiled inference matches whole-image inference") {
  const auto net = micro_net(4);
  const auto cfg = micro_train();
  const auto res = train_loop(net, cfg, load_train_data(cfg, ""), TrainRun{});
  Model<float> m = restore_model<float>(res.checkpoint);
  const auto clean = make_synthetic_image(77, 72, 56);
  const auto noisy = add_awgn(clean, NoiseConfig{25.0, 3});
  const auto whole = denoise_image(m, noisy);
  const auto tiled = denoise_image(m, noisy, TileOptions{true, 32, 8});
  const double a = psnr(clean, whole), b = psnr(clean, tiled);
  MESSAGE("whole " << a << " dB, tiled " << b << " dB");
  CHECK(std::abs(a - b) < 0.1);
  CHECK(!(whole == tiled));
  CHECK_THROWS_AS(denoise_image(m, noisy, TileOptions{true, 16, 16}), ConfigError);
}

TEST_CASE("receptive field tracing") {
  const auto img = make_synthetic_image(5, 20, 20);
  SUBCASE("purely local layers grow clipped squares") {
    Model<float> m(micro_net(0));
    warm_up(m, img);
    const auto tr = trace_receptive_field(m, img, 1, 18, 3);
    REQUIRE(tr.masks.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(tr.masks[l] == clipped_square(20, 20, 1, 18, l + 1));
    CHECK(tr.layer_names[0] == "prepro.0.gc");
  }
  SUBCASE("graph layers follow the recorded neighbors") {
    Model<float> m(micro_net(4));
    warm_up(m, img);
    const std::size_t row = 10, col = 9;
    const auto tr = trace_receptive_field(m, img, row, col, 3);
    ForwardTrace ft;
    const std::vector<GrayImage> one{img};
    m.denoise(to_tensor<float>(one), &ft);
    std::vector<const NonLocalGraph*> graphs{&(*ft.layers[0].graphs)[0], &(*ft.layers[3].graphs)[0],
                                             &(*ft.layers[4].graphs)[0]};
    bool beyond_square = false;
    for (std::size_t l = 0; l < 3; ++l) {
      const Mask expect = dependency_oracle(graphs, 20, 20, row, col, l + 1);
      CHECK(tr.masks[l] == expect);
      const Mask sq = clipped_square(20, 20, row, col, l + 1);
      CHECK(sq.subset_of(tr.masks[l]));
      beyond_square |= !(tr.masks[l] == sq);
      if (l > 0) CHECK(tr.masks[l - 1].subset_of(tr.masks[l]));
    }
    CHECK(beyond_square);
  }
  SUBCASE("bad requests") {
    Model<float> m(micro_net(4));
    warm_up(m, img);
    CHECK_THROWS_AS(trace_receptive_field(m, img, 20, 0, 1), UsageError);
    CHECK_THROWS_AS(trace_receptive_field(m, img, 0, 0, 0), UsageError);
    CHECK_THROWS_AS(trace_receptive_field(m, img, 0, 0, 4), UsageError);
  }
}

TEST_CASE("evaluation report") {
  Model<float> m(micro_net(4));
  m.zero_parameters();
  Checkpoint ck;
  store_model(m, ck);
  std::vector<GrayImage> clean{make_synthetic_image(1, 24, 24), make_synthetic_image(2, 20, 28),
                               make_synthetic_image(3, 16, 16)};
  const std::vector<std::string> names{"a.png", "b.png", "c.png"};
  const EvalOptions opt{25.0, 9, {}};
  const auto rep = evaluate(ck, clean, names, opt);
  const auto noisy = eval_noisy(clean, opt);
  REQUIRE(rep.rows.size() == 3);
  double sn = 0, sd = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(rep.rows[i].image == names[i]);
    CHECK(rep.rows[i].psnr_noisy == psnr(clean[i], noisy[i]));
    CHECK(rep.rows[i].psnr_denoised == psnr(clean[i], clamped(noisy[i])));
    sn += rep.rows[i].psnr_noisy;
    sd += rep.rows[i].psnr_denoised;
  }
  CHECK(rep.average_noisy == doctest::Approx(sn / 3).epsilon(1e-12));
  CHECK(rep.average_denoised == doctest::Approx(sd / 3).epsilon(1e-12));
  CHECK(rep.checkpoint_digest == content_digest(ck.serialize()));
  CHECK(rep.config_digest.size() == 16);

  // The table re-parses to the same averages.
  std::istringstream in(rep.to_tsv());
  std::string line;
  std::getline(in, line);
  CHECK(line == "image\tpsnr_noisy_db\tpsnr_denoised_db");
  double parsed = 0, avg = 0;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, pn, pd;
    std::getline(ls, name, '\t');
    std::getline(ls, pn, '\t');
    std::getline(ls, pd, '\t');
    if (name == "average") {
      avg = std::stod(pd);
    } else {
      parsed += std::stod(pd);
      ++rows;
    }
  }
  CHECK(rows == 3);
  CHECK(avg == doctest::Approx(parsed / 3).epsilon(1e-6));
  CHECK(eval_noisy(clean, opt)[1] == noisy[1]);
  CHECK(evaluate(ck, clean, names, opt).to_tsv().substr(0, 200) == rep.to_tsv().substr(0, 200));
}

TEST_CASE("ablation pairing") {
  const auto a = micro_net(0);
  const auto t = micro_train();
  CHECK_NOTHROW(check_ablation_pair(a, t, micro_net(4), t));
  auto b = micro_net(4);
  b.trunk_channels = 12;
  CHECK_THROWS_AS(check_ablation_pair(a, t, b, t), ConfigError);
  b = micro_net(4);
  b.nlg.window_radius = 7;
  CHECK_THROWS_AS(check_ablation_pair(a, t, b, t), ConfigError);
  auto t2 = t;
  t2.seed = 5;
  CHECK_THROWS_AS(check_ablation_pair(a, t, micro_net(4), t2), ConfigError);

  auto quick = micro_train();
  quick.epochs = 1;
  const std::vector<GrayImage> ev{make_synthetic_image(31, 24, 24)};
  const auto rep = ablation_compare(a, quick, load_train_data(quick, ""), {0, 4}, ev, {"e.png"}, EvalOptions{});
  REQUIRE(rep.reports.size() == 2);
  const auto tsv = rep.to_tsv();
  CHECK(tsv.rfind("k\tpsnr_noisy_db\tpsnr_denoised_db\n0\t", 0) == 0);
  CHECK(tsv.find("\ndifference\t") != std::string::npos);
  CHECK(tsv.find("# expectation") != std::string::npos);
  CHECK(rep.reports[0].average_noisy == rep.reports[1].average_noisy);
}

TEST_CASE("digests") {
  CHECK(hex_digest(0xabcULL) == "0000000000000abc");
  CHECK(content_digest({}) == "cbf29ce484222325");
  CHECK(content_digest({'a'}) == "af63dc4c8601ec8c");
}
