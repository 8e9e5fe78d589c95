#pragma once

#include "gaunet/layers.hpp"

namespace gau {

// DenseNet Wasserstein critic over conditioned image pairs. The pair
// (x_i, x) is channel-concatenated at the input; the head is a global average
// pool into a single linear unit with no squashing activation.
struct CriticConfig {
  int input_size = 64;
  int growth_rate = 64;
  int num_dense_blocks = 4;
  int layers_per_block = 4;
  double dropout_rate = 0.25;

  void validate() const {
    if (growth_rate < 1) throw std::invalid_argument("growth_rate must be positive");
    if (input_size < (1 << num_dense_blocks))
      throw std::invalid_argument("input_size too small for " +
                                  std::to_string(num_dense_blocks) + " transitions");
  }

  // channels after dense block b (before its transition), 0-indexed
  int block_out_channels(int b) const {
    int c = 6;
    for (int i = 0; i <= b; ++i) {
      c += layers_per_block * growth_rate;
      if (i < b) c /= 2;
    }
    return c;
  }
  int head_channels() const {
    int c = 6;
    for (int i = 0; i < num_dense_blocks; ++i) c = (c + layers_per_block * growth_rate) / 2;
    return c;
  }
};

namespace detail {

// pre-activation dense unit: layer_norm -> leaky_relu -> conv
template <typename S>
Var<S> dense_unit(NetRun<S>& run, const std::string& name, const Var<S>& x, int stride) {
  Var<S> t = layer_norm(x, run.p(name + ".ln.gamma"), run.p(name + ".ln.beta"));
  t = ad::leaky_relu(t);
  return conv2d(t, run.p(name + ".w"), run.p(name + ".b"), stride);
}

template <typename S>
void add_dense_unit(ParameterStore<S>& ps, const std::string& name, int k, int cin, int cout,
                    Rng& rng) {
  ps.add(name + ".ln.gamma", Tensor<S>::full({cin}, S(1)));
  ps.add(name + ".ln.beta", Tensor<S>::zeros({cin}));
  ps.add(name + ".w", he_init<S>({k, k, cin, cout}, (long)k * k * cin, rng));
  ps.add(name + ".b", Tensor<S>::zeros({cout}));
}

}  // namespace detail

template <typename S>
ParameterStore<S> init_critic(const CriticConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterStore<S> ps;
  int c = 6;
  for (int b = 0; b < cfg.num_dense_blocks; ++b) {
    for (int j = 0; j < cfg.layers_per_block; ++j) {
      detail::add_dense_unit(ps, "db" + std::to_string(b) + ".l" + std::to_string(j), 3,
                             c + j * cfg.growth_rate, cfg.growth_rate, rng);
    }
    c += cfg.layers_per_block * cfg.growth_rate;
    detail::add_dense_unit(ps, "tr" + std::to_string(b), 1, c, c / 2, rng);
    c /= 2;
  }
  ps.add("head.w", he_init<S>({c, 1}, c, rng));
  ps.add("head.b", Tensor<S>::zeros({1}));
  return ps;
}

// Batched critic scores, one unbounded real per pair; order-preserving.
template <typename S>
Var<S> critic_forward(const Var<S>& x_i, const Var<S>& x, NetRun<S>& run,
                      const CriticConfig& cfg) {
  const Shape& a = x_i.shape();
  if (a != x.shape())
    throw std::invalid_argument("critic: pair shape mismatch " + shape_str(a) + " vs " +
                                shape_str(x.shape()));
  if (a.size() != 4 || a[1] != cfg.input_size || a[2] != cfg.input_size || a[3] != 3)
    throw std::invalid_argument("critic: expected {N," + std::to_string(cfg.input_size) + "," +
                                std::to_string(cfg.input_size) + ",3}, got " + shape_str(a));
  Var<S> h = ad::concat_last<S>({x_i, x});
  for (int b = 0; b < cfg.num_dense_blocks; ++b) {
    for (int j = 0; j < cfg.layers_per_block; ++j) {
      Var<S> t = detail::dense_unit(run, "db" + std::to_string(b) + ".l" + std::to_string(j), h, 1);
      h = ad::concat_last<S>({h, t});
    }
    if (run.train && run.rng) h = dropout(h, cfg.dropout_rate, Mode::kTrain, *run.rng);
    h = detail::dense_unit(run, "tr" + std::to_string(b), h, 1);
    h = ad::avg_pool2x2(h);
  }
  h = ad::mean_axes(h, {1, 2});
  h = ad::reshape(h, Shape{a[0], h.shape().back()});
  return ad::add(ad::matmul(h, run.p("head.w")), run.p("head.b"));  // {N,1}
}

// Scalar convenience wrapper for a single pair.
template <typename S>
S critic_score(const Tensor<S>& x_i, const Tensor<S>& x, ParameterStore<S>& params,
               const CriticConfig& cfg, Mode mode, Rng* rng = nullptr) {
  NetRun<S> run(params, mode == Mode::kTrain);
  run.params_require_grad = false;
  run.rng = rng;
  Shape s = x_i.shape;
  s.insert(s.begin(), 1);
  Var<S> a = ad::constant(Tensor<S>(s, x_i.data));
  Var<S> b = ad::constant(Tensor<S>(s, x.data));
  return critic_forward(a, b, run, cfg).value()[0];
}

}  // namespace gau
