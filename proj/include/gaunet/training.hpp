#pragma once

#include <functional>

#include "gaunet/critic.hpp"
#include "gaunet/dataset.hpp"
#include "gaunet/generator.hpp"

namespace gau {

enum class LossMode { kWganGp, kCgan };

inline std::string loss_mode_name(LossMode m) {
  return m == LossMode::kWganGp ? "wgan_gp" : "cgan";
}
inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "wgan_gp") return LossMode::kWganGp;
  if (s == "cgan") return LossMode::kCgan;
  throw std::invalid_argument("unknown loss_mode '" + s + "' (wgan_gp|cgan)");
}

struct TrainConfig {
  double lambda_gp = 10.0;
  double alpha = 0.0001;
  double beta1 = 0.0;
  double beta2 = 0.9;
  int batch_size = 16;   // m
  int n_critic = 5;      // t
  int total_steps = 2000;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::kWganGp;
  int checkpoint_every = 500;
  // renorm corrections relax from (1,0) to (r_max_final, d_max_final) over the
  // first warmup_frac of total_steps
  double r_max_final = 3.0;
  double d_max_final = 5.0;
  double warmup_frac = 0.25;

  void validate() const {
    if (lambda_gp < 0) throw std::invalid_argument("lambda_gp must be >= 0");
    if (n_critic < 1) throw std::invalid_argument("n_critic must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  }
};

struct LossRecord {
  long step = 0;
  double critic_loss = 0, gp = 0, gen_loss = 0;
};

// Full resumable state of one training run.
template <typename S>
struct TrainState {
  GeneratorConfig gen_config;
  CriticConfig critic_config;
  TrainConfig config;
  int num_classes = 0;

  ParameterStore<S> gen_params;
  ParameterStore<S> critic_params;
  AdamOptimizer<S> gen_opt;
  AdamOptimizer<S> critic_opt;
  long step = 0;
  Rng rng;
  std::vector<LossRecord> history;
};

// --- Algorithm-1 pieces ---

// Convex combination with one epsilon per batch element.
template <typename S>
Tensor<S> interpolate(const Tensor<S>& x_i, const Tensor<S>& x_g,
                      const std::vector<double>& epsilon) {
  if (x_i.shape != x_g.shape)
    throw std::invalid_argument("interpolate: shape mismatch " + shape_str(x_i.shape) + " vs " +
                                shape_str(x_g.shape));
  int n = x_i.shape[0];
  if ((int)epsilon.size() != n) throw std::invalid_argument("interpolate: epsilon count mismatch");
  long per = x_i.size() / n;
  Tensor<S> out(x_i.shape);
  for (int b = 0; b < n; ++b) {
    double e = epsilon[b];
    if (e < 0 || e > 1) throw std::invalid_argument("interpolate: epsilon outside [0,1]");
    for (long i = 0; i < per; ++i)
      out[b * per + i] = (S)(e * (double)x_i[b * per + i] + (1 - e) * (double)x_g[b * per + i]);
  }
  return out;
}

template <typename S>
Tensor<S> interpolate(const Tensor<S>& x_i, const Tensor<S>& x_g, double epsilon) {
  return interpolate(x_i, x_g, std::vector<double>(x_i.shape[0], epsilon));
}

// lambda * mean_b (||d score_b / d x_hat_b||_2 - 1)^2, built as a graph so the
// penalty itself is differentiable w.r.t. the critic parameters. `score`
// must map an {N,H,W,C} batch to per-sample {N,1} scores.
template <typename S>
Var<S> gradient_penalty_term(const std::function<Var<S>(const Var<S>&)>& score,
                             const Tensor<S>& x_hat, S lambda_gp) {
  Var<S> x = Var<S>::leaf(x_hat, true);
  Var<S> scores = score(x);
  if (scores.shape() != Shape{x_hat.shape[0], 1})
    throw std::invalid_argument("gradient_penalty: score must return {N,1}, got " +
                                shape_str(scores.shape()));
  // per-sample scores depend only on their own input row, so one backward of
  // the sum recovers every per-sample input gradient
  Var<S> g = ad::grad(ad::sum_all(scores), {x})[0];
  if (!g.value().all_finite())
    throw std::runtime_error("gradient_penalty: non-finite critic input gradient");
  Var<S> sq = ad::sum_to(ad::square(g), Shape{x_hat.shape[0], 1, 1, 1});
  Var<S> norm = ad::pow_scalar(sq, S(0.5));
  Var<S> dev = ad::square(ad::add_scalar(norm, S(-1)));
  return ad::scale(ad::mean_all(dev), lambda_gp);
}

template <typename S>
S gradient_penalty(const std::function<Var<S>(const Var<S>&)>& score, const Tensor<S>& x_hat,
                   S lambda_gp) {
  return gradient_penalty_term(score, x_hat, lambda_gp).value()[0];
}

// Scalar loss helpers matching Algorithm 1 / Eq. (2).
inline double critic_loss(const std::vector<double>& scores_fake,
                          const std::vector<double>& scores_real) {
  if (scores_fake.empty() || scores_fake.size() != scores_real.size())
    throw std::invalid_argument("critic_loss: batches must be nonempty and equal length");
  double f = 0, r = 0;
  for (double v : scores_fake) f += v;
  for (double v : scores_real) r += v;
  return f / scores_fake.size() - r / scores_real.size();
}

inline double generator_loss(const std::vector<double>& scores_fake) {
  if (scores_fake.empty()) throw std::invalid_argument("generator_loss: empty batch");
  double f = 0;
  for (double v : scores_fake) f += v;
  return -f / scores_fake.size();
}

inline constexpr double kProbClamp = 1e-7;

inline std::pair<double, double> cgan_losses(const std::vector<double>& d_real_prob,
                                             const std::vector<double>& d_fake_prob) {
  if (d_real_prob.empty() || d_fake_prob.empty())
    throw std::invalid_argument("cgan_losses: empty batch");
  auto cl = [](double p) { return std::min(1.0 - kProbClamp, std::max(kProbClamp, p)); };
  double d_loss = 0, g_loss = 0;
  for (double p : d_real_prob) d_loss -= std::log(cl(p));
  d_loss /= d_real_prob.size();
  double df = 0;
  for (double p : d_fake_prob) {
    df -= std::log(1.0 - cl(p));
    g_loss -= std::log(cl(p));
  }
  d_loss += df / d_fake_prob.size();
  g_loss /= d_fake_prob.size();
  return {d_loss, g_loss};
}

// --- the training loop ---

namespace detail {

template <typename S>
std::unordered_map<std::string, Tensor<S>> grads_by_name(
    const Var<S>& loss, std::vector<std::pair<std::string, Var<S>>>& trainables) {
  std::vector<Var<S>> wrt;
  for (auto& [name, v] : trainables) wrt.push_back(v);
  std::vector<Var<S>> gs = ad::grad(loss, wrt);
  std::unordered_map<std::string, Tensor<S>> out;
  for (size_t i = 0; i < trainables.size(); ++i) {
    if (!gs[i].value().all_finite())
      throw std::runtime_error("non-finite gradient for " + trainables[i].first);
    out.emplace(trainables[i].first, gs[i].value());
  }
  return out;
}

template <typename S>
Tensor<S> draw_latents(int n, int dim, Rng& rng) {
  Tensor<S> z(Shape{n, dim});
  for (S& v : z.data) v = (S)rng.normal();
  return z;
}

}  // namespace detail

template <typename S>
TrainState<S> init_train_state(const TrainConfig& cfg, const GeneratorConfig& gen_cfg,
                               const CriticConfig& critic_cfg, int num_classes) {
  cfg.validate();
  gen_cfg.validate();
  critic_cfg.validate();
  TrainState<S> st;
  st.gen_config = gen_cfg;
  st.critic_config = critic_cfg;
  st.config = cfg;
  st.num_classes = num_classes;
  st.rng = Rng(cfg.seed);
  st.gen_params = init_generator<S>(gen_cfg, st.rng);
  st.critic_params = init_critic<S>(critic_cfg, st.rng);
  st.gen_opt = AdamOptimizer<S>((S)cfg.alpha, (S)cfg.beta1, (S)cfg.beta2);
  st.critic_opt = AdamOptimizer<S>((S)cfg.alpha, (S)cfg.beta1, (S)cfg.beta2);
  return st;
}

// One outer Algorithm-1 step: n_critic critic updates, then one generator
// update. Appends a LossRecord and advances st.step.
template <typename S>
void train_step(TrainState<S>& st, const Dataset& data, const std::vector<int>& train_split) {
  const TrainConfig& cfg = st.config;
  const GeneratorConfig& gcfg = st.gen_config;
  const CriticConfig& ccfg = st.critic_config;
  int m = cfg.batch_size;

  // renorm correction schedule over the warmup window
  double warm = std::max(1.0, cfg.warmup_frac * cfg.total_steps);
  double prog = std::min(1.0, (double)st.step / warm);
  S r_max = (S)(1.0 + (cfg.r_max_final - 1.0) * prog);
  S d_max = (S)(cfg.d_max_final * prog);

  double last_c_loss = 0, last_gp = 0;

  for (int inner = 0; inner < cfg.n_critic; ++inner) {
    int cls = (int)st.rng.uniform_int(st.num_classes);
    ConditionalBatch batch = sample_conditional_batch(data, train_split, cls, m, st.rng);
    Tensor<S> x_i = stack_images(data, batch.i_idx).template cast<S>();
    Tensor<S> x_j = stack_images(data, batch.j_idx).template cast<S>();
    Tensor<S> z = detail::draw_latents<S>(m, gcfg.latent_dim, st.rng);

    // generator runs frozen for the critic update
    NetRun<S> gen_run(st.gen_params, /*train=*/true);
    gen_run.params_require_grad = false;
    gen_run.r_max = r_max;
    gen_run.d_max = d_max;
    gen_run.rng = &st.rng;
    Tensor<S> x_g = generator_forward(ad::constant(x_j), ad::constant(z), gen_run, gcfg).value();

    std::vector<double> eps(m);
    for (double& e : eps) e = st.rng.uniform();
    Tensor<S> x_hat = interpolate(x_i, x_g, eps);

    NetRun<S> crit_run(st.critic_params, /*train=*/true);
    crit_run.rng = &st.rng;
    Var<S> xi_v = ad::constant(x_i);

    Var<S> loss;
    S gp_value = S(0);
    if (cfg.loss_mode == LossMode::kWganGp) {
      // real and fake pairs scored in one forward (per-sample network); the
      // Wasserstein difference is a signed-weight sum over the 2m scores
      Tensor<S> comp(Shape{2 * m, x_i.shape[1], x_i.shape[2], x_i.shape[3]});
      Tensor<S> scored(comp.shape);
      std::copy(x_i.data.begin(), x_i.data.end(), comp.data.begin());
      std::copy(x_i.data.begin(), x_i.data.end(), comp.data.begin() + x_i.size());
      std::copy(x_j.data.begin(), x_j.data.end(), scored.data.begin());
      std::copy(x_g.data.begin(), x_g.data.end(), scored.data.begin() + x_j.size());
      Var<S> scores =
          critic_forward(ad::constant(std::move(comp)), ad::constant(std::move(scored)), crit_run,
                         ccfg);  // {2m,1}: first m real, last m fake
      Tensor<S> sign(Shape{2 * m, 1});
      for (int i = 0; i < m; ++i) sign[i] = S(-1) / (S)m;
      for (int i = m; i < 2 * m; ++i) sign[i] = S(1) / (S)m;
      loss = ad::sum_to(ad::mul(scores, ad::constant(std::move(sign))), Shape{1});
      Var<S> gp = gradient_penalty_term<S>(
          [&](const Var<S>& xh) { return critic_forward(xi_v, xh, crit_run, ccfg); }, x_hat,
          (S)cfg.lambda_gp);
      gp_value = gp.value()[0];
      loss = ad::add(loss, gp);
    } else {
      Var<S> s_real = critic_forward(xi_v, ad::constant(x_j), crit_run, ccfg);
      Var<S> s_fake = critic_forward(xi_v, ad::constant(x_g), crit_run, ccfg);
      S c = (S)kProbClamp;
      Var<S> p_real = ad::clamp(ad::sigmoid(s_real), c, S(1) - c);
      Var<S> p_fake = ad::clamp(ad::sigmoid(s_fake), c, S(1) - c);
      loss = ad::sub(ad::neg(ad::mean_all(ad::log_(p_real))),
                     ad::mean_all(ad::log_(ad::neg(ad::add_scalar(p_fake, S(-1))))));
    }
    if (!loss.value().all_finite()) throw std::runtime_error("non-finite critic loss");
    auto trainables = crit_run.trainables();
    st.critic_opt.update(st.critic_params, detail::grads_by_name(loss, trainables));
    last_c_loss = (double)loss.value()[0] - (double)gp_value;
    last_gp = (double)gp_value;
  }

  // generator update on a fresh batch
  int cls = (int)st.rng.uniform_int(st.num_classes);
  ConditionalBatch batch = sample_conditional_batch(data, train_split, cls, m, st.rng);
  Tensor<S> x_i = stack_images(data, batch.i_idx).template cast<S>();
  Tensor<S> x_j = stack_images(data, batch.j_idx).template cast<S>();
  Tensor<S> z = detail::draw_latents<S>(m, gcfg.latent_dim, st.rng);

  NetRun<S> gen_run(st.gen_params, /*train=*/true);
  gen_run.r_max = r_max;
  gen_run.d_max = d_max;
  gen_run.rng = &st.rng;
  Var<S> x_g = generator_forward(ad::constant(x_j), ad::constant(z), gen_run, gcfg);

  NetRun<S> crit_run(st.critic_params, /*train=*/true);
  crit_run.params_require_grad = false;
  crit_run.rng = &st.rng;
  Var<S> s_fake = critic_forward(ad::constant(x_i), x_g, crit_run, ccfg);

  Var<S> g_loss;
  if (cfg.loss_mode == LossMode::kWganGp) {
    g_loss = ad::neg(ad::mean_all(s_fake));
  } else {
    S c = (S)kProbClamp;
    Var<S> p_fake = ad::clamp(ad::sigmoid(s_fake), c, S(1) - c);
    g_loss = ad::neg(ad::mean_all(ad::log_(p_fake)));
  }
  if (!g_loss.value().all_finite()) throw std::runtime_error("non-finite generator loss");
  auto trainables = gen_run.trainables();
  st.gen_opt.update(st.gen_params, detail::grads_by_name(g_loss, trainables));

  st.history.push_back({st.step, last_c_loss, last_gp, (double)g_loss.value()[0]});
  ++st.step;
}

// Runs until total_steps, invoking `on_step` after each outer step (e.g. for
// logging/checkpointing). Throws on non-finite losses.
template <typename S>
void train(TrainState<S>& st, const Dataset& data, const std::vector<int>& train_split,
           const std::function<void(const TrainState<S>&)>& on_step = nullptr) {
  if (train_split.empty()) throw std::invalid_argument("train: empty split");
  while (st.step < st.config.total_steps) {
    train_step(st, data, train_split);
    if (on_step) on_step(st);
  }
}

// Eval-mode batch generation from a trained state: conditions on x_j, draws z.
template <typename S>
Tensor<S> generate_batch(TrainState<S>& st, const Tensor<S>& x_j, Rng& rng) {
  NetRun<S> run(st.gen_params);
  run.params_require_grad = false;
  Tensor<S> z = detail::draw_latents<S>(x_j.shape[0], st.gen_config.latent_dim, rng);
  return generator_forward(ad::constant(x_j), ad::constant(z), run, st.gen_config).value();
}

// --- checkpoint I/O (implemented in checkpoint.cpp) ---
void save_checkpoint(const TrainState<float>& state, const std::string& path);
TrainState<float> load_checkpoint(const std::string& path);

}  // namespace gau
