#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gaunet/training.hpp"

using namespace gau;
namespace fs = std::filesystem;

namespace {

Dataset tiny_data(int n_per_class = 8, int size = 16, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = n_per_class;
  spec.image_size = size;
  spec.seed = seed;
  return make_synthetic_dataset(spec);
}

TrainState<float> tiny_state(std::uint64_t seed, int total_steps = 10) {
  GeneratorConfig g;
  g.input_size = 16;
  g.base_filters = 2;
  g.num_blocks = 4;
  g.latent_dim = 4;
  g.latent_channels = 2;
  CriticConfig c;
  c.input_size = 16;
  c.growth_rate = 2;
  TrainConfig t;
  t.batch_size = 4;
  t.n_critic = 2;
  t.total_steps = total_steps;
  t.seed = seed;
  return init_train_state<float>(t, g, c, 2);
}

std::vector<int> all_indices(const Dataset& ds) {
  std::vector<int> idx(ds.records.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = (int)i;
  return idx;
}

}  // namespace

// --- interpolate ---

TEST_CASE("interpolate endpoints and midpoint arithmetic") {
  Tensor<float> a(Shape{1, 1, 1, 2}, {4.0f, 8.0f});
  Tensor<float> b(Shape{1, 1, 1, 2}, {0.0f, 4.0f});
  CHECK(interpolate(a, b, 1.0).data == a.data);
  CHECK(interpolate(a, b, 0.0).data == b.data);
  Tensor<float> mid = interpolate(a, b, 0.25);
  CHECK(mid[0] == doctest::Approx(1.0));  // 0.25*4 + 0.75*0
  CHECK(mid[1] == doctest::Approx(5.0));
}

TEST_CASE("interpolate stays elementwise between its endpoints") {
  Rng rng(5);
  Tensor<float> a(Shape{3, 2, 2, 1}), b(a.shape);
  for (auto& v : a.data) v = (float)rng.uniform();
  for (auto& v : b.data) v = (float)rng.uniform();
  std::vector<double> eps = {0.1, 0.5, 0.9};
  Tensor<float> x = interpolate(a, b, eps);
  long per = 4;
  for (int n = 0; n < 3; ++n)
    for (long i = 0; i < per; ++i) {
      float lo = std::min(a[n * per + i], b[n * per + i]);
      float hi = std::max(a[n * per + i], b[n * per + i]);
      CHECK(x[n * per + i] >= lo - 1e-6f);
      CHECK(x[n * per + i] <= hi + 1e-6f);
    }
}

TEST_CASE("interpolate rejects bad shapes and epsilons") {
  Tensor<float> a(Shape{1, 2, 2, 1});
  Tensor<float> b(Shape{1, 2, 2, 3});
  CHECK_THROWS_AS((void)interpolate(a, b, 0.5), std::invalid_argument);
  Tensor<float> c(Shape{1, 2, 2, 1});
  CHECK_THROWS_AS((void)interpolate(a, c, 1.5), std::invalid_argument);
}

// --- gradient penalty oracles ---

TEST_CASE("constant critic: penalty equals lambda exactly") {
  Tensor<double> x_hat(Shape{3, 2, 2, 1});
  for (long i = 0; i < x_hat.size(); ++i) x_hat[i] = 0.1 * (double)i;
  auto score = [](const ad::Var<double>& x) {
    return ad::constant(Tensor<double>::full({x.shape()[0], 1}, 7.0));
  };
  CHECK(gradient_penalty<double>(score, x_hat, 10.0) == 10.0);
  CHECK(gradient_penalty<double>(score, x_hat, 0.0) == 0.0);
}

TEST_CASE("linear critic with weight norm s: penalty is 10*(s-1)^2") {
  Rng rng(9);
  Tensor<double> x_hat(Shape{4, 2, 2, 2});
  for (auto& v : x_hat.data) v = rng.uniform();
  long dim = 8;
  Tensor<double> dir(Shape{(int)dim, 1});
  double n2 = 0;
  for (auto& v : dir.data) {
    v = rng.normal();
    n2 += v * v;
  }
  for (auto& v : dir.data) v /= std::sqrt(n2);

  for (double s : {0.5, 1.0, 3.0}) {
    Tensor<double> u = dir;
    for (auto& v : u.data) v *= s;
    ad::Var<double> uv = ad::constant(u);
    auto score = [&](const ad::Var<double>& x) {
      return ad::matmul(ad::reshape(x, Shape{x.shape()[0], (int)dim}), uv);
    };
    double expected = 10.0 * (s - 1.0) * (s - 1.0);
    CHECK(gradient_penalty<double>(score, x_hat, 10.0) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("gradient penalty is nonnegative and differentiable w.r.t. critic weights") {
  Rng rng(13);
  Tensor<double> x_hat(Shape{2, 2, 2, 1});
  for (auto& v : x_hat.data) v = rng.uniform();
  Tensor<double> w0(Shape{4, 1});
  for (auto& v : w0.data) v = rng.normal();

  auto penalty_of = [&](const std::vector<ad::Var<double>>& in) {
    auto score = [&](const ad::Var<double>& x) {
      return ad::matmul(ad::reshape(x, Shape{x.shape()[0], 4}), in[0]);
    };
    return gradient_penalty_term<double>(score, x_hat, 10.0);
  };
  CHECK(penalty_of({ad::constant(w0)}).value()[0] >= 0.0);
  auto rep = grad_check<double>(penalty_of, {w0}, 1e-4);
  INFO("max_rel_err=", rep.max_rel_err);
  CHECK(rep.ok);
}

// --- scalar losses ---

TEST_CASE("wasserstein critic and generator losses") {
  CHECK(critic_loss({1, 3}, {1, 3}) == 0.0);
  CHECK(critic_loss({1, 3}, {2, 4}) == doctest::Approx(-1.0));
  CHECK(critic_loss({2.5, 2.5}, {2.0, 2.0}) == doctest::Approx(0.5));
  CHECK_THROWS_AS((void)critic_loss({}, {}), std::invalid_argument);
  CHECK(generator_loss({0, 0, 0}) == 0.0);
  CHECK(generator_loss({2, 4}) == doctest::Approx(-3.0));
  CHECK(generator_loss({3, 5}) == doctest::Approx(generator_loss({2, 4}) - 1.0));
  CHECK_THROWS_AS((void)generator_loss({}), std::invalid_argument);
}

TEST_CASE("cgan losses match the analytic values") {
  auto [d1, g1] = cgan_losses({0.5, 0.5}, {0.5, 0.5});
  CHECK(d1 == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(g1 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto [d2, g2] = cgan_losses({1.0, 1.0}, {0.0, 0.0});
  CHECK(d2 == doctest::Approx(0.0).epsilon(1e-5));  // clamped at 1e-7
  CHECK(g2 > 10.0);                                 // -log(1e-7)
  CHECK_THROWS_AS((void)cgan_losses({}, {0.5}), std::invalid_argument);
}

// --- convex surrogate run ---

TEST_CASE("scalar-table critic under the wasserstein loss decreases monotonically") {
  // toy 1-D setting: critic is a free table c over 8 bins, real mass on bins
  // 0..3, fake on 4..7, lambda=0, frozen "generator"
  const int K = 8;
  Tensor<double> real_onehot(Shape{4, K}), fake_onehot(Shape{4, K});
  for (int i = 0; i < 4; ++i) {
    real_onehot[(long)i * K + i] = 1;
    fake_onehot[(long)i * K + 4 + i] = 1;
  }
  ParameterStore<double> ps;
  ps.add("table", Tensor<double>::zeros({K, 1}));
  AdamOptimizer<double> opt(1e-2, 0.0, 0.9);

  double prev = 1e300;
  for (int step = 0; step < 100; ++step) {
    ad::Var<double> c = ad::Var<double>::leaf(ps.at("table"), true);
    ad::Var<double> loss = ad::sub(ad::mean_all(ad::matmul(ad::constant(fake_onehot), c)),
                                   ad::mean_all(ad::matmul(ad::constant(real_onehot), c)));
    double v = loss.value()[0];
    CHECK(v < prev);
    prev = v;
    std::unordered_map<std::string, Tensor<double>> grads;
    grads.emplace("table", ad::grad(loss, {c})[0].value());
    opt.update(ps, grads);
  }
}

// --- the full loop ---

TEST_CASE("training losses are a deterministic function of the seed") {
  Dataset ds = tiny_data();
  std::vector<int> idx = all_indices(ds);

  TrainState<float> a = tiny_state(77);
  TrainState<float> b = tiny_state(77);
  for (int i = 0; i < 10; ++i) {
    train_step(a, ds, idx);
    train_step(b, ds, idx);
  }
  REQUIRE(a.history.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(a.history[i].critic_loss == b.history[i].critic_loss);
    CHECK(a.history[i].gp == b.history[i].gp);
    CHECK(a.history[i].gen_loss == b.history[i].gen_loss);
    CHECK(std::isfinite(a.history[i].critic_loss));
    CHECK(std::isfinite(a.history[i].gen_loss));
    CHECK(a.history[i].gp >= 0.0);
  }
  TrainState<float> c = tiny_state(78);
  train_step(c, ds, idx);
  CHECK(c.history[0].critic_loss != a.history[0].critic_loss);
}

TEST_CASE("cgan mode trains with sigmoid probabilities and zero penalty") {
  Dataset ds = tiny_data();
  std::vector<int> idx = all_indices(ds);
  TrainState<float> st = tiny_state(91);
  st.config.loss_mode = LossMode::kCgan;
  for (int i = 0; i < 3; ++i) train_step(st, ds, idx);
  for (const auto& rec : st.history) {
    CHECK(rec.gp == 0.0);
    CHECK(rec.critic_loss > 0.0);  // -log likelihood form is positive
    CHECK(rec.gen_loss > 0.0);
    CHECK(std::isfinite(rec.critic_loss));
  }
}

TEST_CASE("non-finite parameters abort the step") {
  Dataset ds = tiny_data();
  std::vector<int> idx = all_indices(ds);
  TrainState<float> st = tiny_state(55);
  st.critic_params.at("head.w")[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_step(st, ds, idx), std::runtime_error);
}

// --- checkpointing ---

TEST_CASE("checkpoint round trip is bit-exact") {
  Dataset ds = tiny_data();
  std::vector<int> idx = all_indices(ds);
  TrainState<float> st = tiny_state(42);
  for (int i = 0; i < 2; ++i) train_step(st, ds, idx);

  fs::path p = fs::temp_directory_path() / "gau_test_ckpt.bin";
  save_checkpoint(st, p.string());
  TrainState<float> back = load_checkpoint(p.string());

  CHECK(back.step == st.step);
  CHECK(back.num_classes == st.num_classes);
  CHECK(back.rng.serialize() == st.rng.serialize());
  CHECK(back.config.batch_size == st.config.batch_size);
  CHECK(back.config.lambda_gp == st.config.lambda_gp);
  for (const auto& n : st.gen_params.names()) CHECK(back.gen_params.at(n).data == st.gen_params.at(n).data);
  for (const auto& n : st.critic_params.names())
    CHECK(back.critic_params.at(n).data == st.critic_params.at(n).data);
  for (auto& [name, s] : st.critic_opt.states()) {
    if (s.step_count == 0) continue;
    AdamState<float>& bs = back.critic_opt.states()[name];
    CHECK(bs.step_count == s.step_count);
    CHECK(bs.first_moment.data == s.first_moment.data);
    CHECK(bs.second_moment.data == s.second_moment.data);
  }
  CHECK(back.history.size() == st.history.size());
}

TEST_CASE("resume from checkpoint reproduces the uninterrupted run exactly") {
  Dataset ds = tiny_data();
  std::vector<int> idx = all_indices(ds);

  TrainState<float> full = tiny_state(7, 6);
  train(full, ds, idx);

  TrainState<float> part = tiny_state(7, 6);
  for (int i = 0; i < 3; ++i) train_step(part, ds, idx);
  fs::path p = fs::temp_directory_path() / "gau_test_resume.bin";
  save_checkpoint(part, p.string());
  TrainState<float> resumed = load_checkpoint(p.string());
  train(resumed, ds, idx);

  REQUIRE(resumed.history.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(resumed.history[i].critic_loss == full.history[i].critic_loss);
    CHECK(resumed.history[i].gp == full.history[i].gp);
    CHECK(resumed.history[i].gen_loss == full.history[i].gen_loss);
  }
  for (const auto& n : full.gen_params.names())
    CHECK(resumed.gen_params.at(n).data == full.gen_params.at(n).data);
}

TEST_CASE("corrupt checkpoints are rejected with explicit errors") {
  Dataset ds = tiny_data();
  TrainState<float> st = tiny_state(3);
  fs::path p = fs::temp_directory_path() / "gau_test_corrupt.bin";
  save_checkpoint(st, p.string());

  // truncation
  {
    auto size = fs::file_size(p);
    fs::resize_file(p, size / 2);
    CHECK_THROWS_WITH_AS((void)load_checkpoint(p.string()), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  // future version
  save_checkpoint(st, p.string());
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    std::uint32_t v = 99;
    f.write((const char*)&v, 4);
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(p.string()), doctest::Contains("version"),
                       std::runtime_error);
  // wrong magic
  save_checkpoint(st, p.string());
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_WITH_AS((void)load_checkpoint(p.string()), doctest::Contains("not a checkpoint"),
                       std::runtime_error);
  CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);
}
