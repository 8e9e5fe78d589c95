#include <doctest.h>

#include "gaunet/critic.hpp"

using namespace gau;

namespace {

CriticConfig tiny_cfg(int size = 16, int k = 2) {
  CriticConfig cfg;
  cfg.input_size = size;
  cfg.growth_rate = k;
  cfg.dropout_rate = 0.25;
  return cfg;
}

template <typename S>
Tensor<S> random_images(int n, int size, Rng& rng) {
  Tensor<S> t(Shape{n, size, size, 3});
  for (S& v : t.data) v = (S)rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("channel bookkeeping at growth rate 64: first dense block emits 262 channels") {
  CriticConfig cfg;  // defaults: k=64, 4 blocks of 4 layers
  CHECK(cfg.block_out_channels(0) == 6 + 4 * 64);  // 262
  CHECK(cfg.block_out_channels(0) == 262);

  // the parameter shapes of a real k=64 critic encode the same arithmetic
  Rng rng(1);
  auto ps = init_critic<float>(cfg, rng);
  CHECK(ps.at("db0.l0.w").shape == Shape{3, 3, 6, 64});
  CHECK(ps.at("db0.l3.w").shape == Shape{3, 3, 6 + 3 * 64, 64});
  CHECK(ps.at("tr0.w").shape == Shape{1, 1, 262, 131});
  CHECK(ps.at("head.w").shape == Shape{cfg.head_channels(), 1});
}

TEST_CASE("closed-form channel count matches an explicit recurrence") {
  CriticConfig cfg = tiny_cfg();
  int c = 6;
  for (int b = 0; b < cfg.num_dense_blocks; ++b) {
    c += cfg.layers_per_block * cfg.growth_rate;
    CHECK(cfg.block_out_channels(b) == c);
    c /= 2;
  }
  CHECK(cfg.head_channels() == c);
}

TEST_CASE("critic scores are deterministic in infer mode") {
  CriticConfig cfg = tiny_cfg();
  Rng rng(5);
  auto ps = init_critic<float>(cfg, rng);
  Rng drng(2);
  Tensor<float> a = random_images<float>(1, 16, drng);
  Tensor<float> b = random_images<float>(1, 16, drng);
  Tensor<float> ai(Shape{16, 16, 3}, a.data), bi(Shape{16, 16, 3}, b.data);
  float s1 = critic_score(ai, bi, ps, cfg, Mode::kInfer);
  float s2 = critic_score(ai, bi, ps, cfg, Mode::kInfer);
  CHECK(s1 == s2);
  CHECK(std::isfinite(s1));
}

TEST_CASE("critic rejects mismatched pair shapes") {
  CriticConfig cfg = tiny_cfg();
  Rng rng(5);
  auto ps = init_critic<float>(cfg, rng);
  NetRun<float> run(ps);
  Rng drng(3);
  Var<float> a = ad::constant(random_images<float>(1, 16, drng));
  Var<float> b = ad::constant(random_images<float>(1, 8, drng));
  CHECK_THROWS_AS((void)critic_forward(a, b, run, cfg), std::invalid_argument);
}

TEST_CASE("a batch of one equals the scalar call and a batch of m yields m scores") {
  CriticConfig cfg = tiny_cfg();
  Rng rng(7);
  auto ps = init_critic<float>(cfg, rng);
  Rng drng(4);
  Tensor<float> xi = random_images<float>(3, 16, drng);
  Tensor<float> xg = random_images<float>(3, 16, drng);

  NetRun<float> run(ps);
  Var<float> scores = critic_forward(ad::constant(xi), ad::constant(xg), run, cfg);
  CHECK(scores.shape() == Shape{3, 1});

  long per = 16 * 16 * 3;
  for (int n = 0; n < 3; ++n) {
    Tensor<float> a(Shape{16, 16, 3},
                    std::vector<float>(xi.data.begin() + n * per, xi.data.begin() + (n + 1) * per));
    Tensor<float> b(Shape{16, 16, 3},
                    std::vector<float>(xg.data.begin() + n * per, xg.data.begin() + (n + 1) * per));
    float solo = critic_score(a, b, ps, cfg, Mode::kInfer);
    CHECK(scores.value()[n] == doctest::Approx(solo).epsilon(1e-5));
  }
}

TEST_CASE("infer-mode scores are independent of batch companions") {
  CriticConfig cfg = tiny_cfg();
  Rng rng(11);
  auto ps = init_critic<float>(cfg, rng);
  Rng drng(6);
  Tensor<float> xi = random_images<float>(4, 16, drng);
  Tensor<float> xg = random_images<float>(4, 16, drng);

  NetRun<float> r1(ps);
  Tensor<float> base = critic_forward(ad::constant(xi), ad::constant(xg), r1, cfg).value();

  // reverse the batch; scores must follow their samples exactly
  long per = 16 * 16 * 3;
  Tensor<float> xi_r = xi, xg_r = xg;
  for (int n = 0; n < 4; ++n) {
    std::copy(xi.data.begin() + n * per, xi.data.begin() + (n + 1) * per,
              xi_r.data.begin() + (3 - n) * per);
    std::copy(xg.data.begin() + n * per, xg.data.begin() + (n + 1) * per,
              xg_r.data.begin() + (3 - n) * per);
  }
  NetRun<float> r2(ps);
  Tensor<float> rev = critic_forward(ad::constant(xi_r), ad::constant(xg_r), r2, cfg).value();
  for (int n = 0; n < 4; ++n) CHECK(rev[3 - n] == base[n]);
}

TEST_CASE("the head is unbounded: random critics emit scores outside [0,1]") {
  CriticConfig cfg = tiny_cfg();
  double lo = 1e300, hi = -1e300;
  for (std::uint64_t seed : {13u, 17u, 19u}) {
    Rng rng(seed);
    auto ps = init_critic<float>(cfg, rng);
    Rng drng(seed + 100);
    Tensor<float> xi = random_images<float>(8, 16, drng);
    Tensor<float> xg = random_images<float>(8, 16, drng);
    NetRun<float> run(ps);
    Tensor<float> s = critic_forward(ad::constant(xi), ad::constant(xg), run, cfg).value();
    for (float v : s.data) {
      lo = std::min(lo, (double)v);
      hi = std::max(hi, (double)v);
    }
  }
  CHECK((lo < 0.0 || hi > 1.0));
}

TEST_CASE("critic gradients w.r.t. input pixels pass a finite-difference check") {
  CriticConfig cfg = tiny_cfg();
  cfg.dropout_rate = 0;
  Rng rng(23);
  auto ps = init_critic<double>(cfg, rng);
  Rng drng(8);
  Tensor<double> xi = random_images<double>(2, 16, drng);
  Tensor<double> xg = random_images<double>(2, 16, drng);

  auto f = [&](const std::vector<Var<double>>& in) {
    NetRun<double> run(ps);
    run.params_require_grad = false;
    return ad::sum_all(critic_forward(in[0], in[1], run, cfg));
  };
  Rng prng(29);
  auto rep = grad_check<double>(f, {xi, xg}, 1e-3, 1e-5, /*max_probes=*/24, &prng);
  INFO("max_rel_err=", rep.max_rel_err, " probes=", rep.probes);
  CHECK(rep.ok);
}

TEST_CASE("critic gradients w.r.t. parameters pass a finite-difference check") {
  CriticConfig cfg = tiny_cfg();
  cfg.dropout_rate = 0;
  Rng rng(31);
  auto ps = init_critic<double>(cfg, rng);
  Rng drng(9);
  Tensor<double> xi = random_images<double>(2, 16, drng);
  Tensor<double> xg = random_images<double>(2, 16, drng);

  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  for (const auto& n : ps.names()) {
    names.push_back(n);
    inputs.push_back(ps.at(n));
  }
  auto f = [&](const std::vector<Var<double>>& in) {
    NetRun<double> run(ps);
    for (size_t i = 0; i < names.size(); ++i) run.lifted[names[i]] = in[i];
    return ad::sum_all(ad::square(critic_forward(ad::constant(xi), ad::constant(xg), run, cfg)));
  };
  Rng prng(37);
  auto rep = grad_check<double>(f, inputs, 1e-3, 1e-5, /*max_probes=*/3, &prng);
  INFO("max_rel_err=", rep.max_rel_err, " probes=", rep.probes);
  CHECK(rep.ok);
}
