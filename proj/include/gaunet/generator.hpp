#pragma once

#include "gaunet/layers.hpp"

namespace gau {

// U-Net generator split into encoder and decoder. The encoder maps the
// conditioning image to a bottleneck representation; a linearly projected
// Gaussian latent is channel-concatenated there; the decoder mirrors the
// encoder with skip crossings routed through 1x1 convolutions and ends in a
// sigmoid layer.
struct GeneratorConfig {
  int input_size = 64;    // spatial extent, power of two
  int base_filters = 32;  // width of the first block body
  int num_blocks = 8;     // total blocks, half down / half up
  int latent_dim = 128;
  int latent_channels = 64;  // channels of the projected latent at the bottleneck
  double dropout_rate = 0.25;
  bool class_conditioning = false;  // optional one-hot embedding at the bottleneck
  int num_classes = 0;
  int class_channels = 16;

  int down_blocks() const { return num_blocks / 2; }
  int block_width(int d) const { return base_filters << d; }
  int bottleneck_size() const { return input_size >> down_blocks(); }
  int bottleneck_channels() const { return base_filters << down_blocks(); }

  void validate() const {
    if (num_blocks < 2 || num_blocks % 2)
      throw std::invalid_argument("num_blocks must be even and >= 2");
    if (input_size < 4 || (input_size & (input_size - 1)))
      throw std::invalid_argument("input_size must be a power of two >= 4");
    if (bottleneck_size() < 2)
      throw std::invalid_argument("input_size / 2^(num_blocks/2) must be >= 2");
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");
    if (class_conditioning && num_classes < 2)
      throw std::invalid_argument("class conditioning needs num_classes >= 2");
  }
};

// Pre-scaling feature map of each down block, waiting to cross to the
// mirrored up block.
template <typename S>
using SkipState = std::vector<Var<S>>;

namespace detail {

// conv -> batch_renorm -> leaky_relu
template <typename S>
Var<S> gen_conv_unit(NetRun<S>& run, const std::string& name, const Var<S>& x, int stride) {
  Var<S> h = conv2d(x, run.p(name + ".w"), run.p(name + ".b"), stride);
  ParameterStore<S>& st = *run.store;
  h = batch_renorm(h, run.p(name + ".rn.gamma"), run.p(name + ".rn.beta"),
                   st.at(name + ".rn.rmean"), st.at(name + ".rn.rvar"),
                   run.train ? Mode::kTrain : Mode::kInfer, run.r_max, run.d_max,
                   run.bn_momentum);
  return ad::leaky_relu(h);
}

// Four 3x3 conv units plus a residual path (1x1 projection when the channel
// counts differ).
template <typename S>
Var<S> resnet_body(NetRun<S>& run, const std::string& prefix, const Var<S>& x, int width) {
  Var<S> h = x;
  for (int j = 1; j <= 4; ++j) h = gen_conv_unit(run, prefix + ".conv" + std::to_string(j), h, 1);
  Var<S> res = x;
  if (x.shape().back() != width)
    res = conv2d(x, run.p(prefix + ".proj.w"), Var<S>(), 1);
  return ad::add(h, res);
}

template <typename S>
Var<S> scale_tail(NetRun<S>& run, const std::string& name, Var<S> h, double dropout_rate) {
  // scaling conv itself is applied by the caller; this is lrelu -> renorm -> dropout
  h = ad::leaky_relu(h);
  ParameterStore<S>& st = *run.store;
  h = batch_renorm(h, run.p(name + ".rn.gamma"), run.p(name + ".rn.beta"),
                   st.at(name + ".rn.rmean"), st.at(name + ".rn.rvar"),
                   run.train ? Mode::kTrain : Mode::kInfer, run.r_max, run.d_max,
                   run.bn_momentum);
  if (run.train && run.rng) h = dropout(h, dropout_rate, Mode::kTrain, *run.rng);
  return h;
}

template <typename S>
void add_renorm_params(ParameterStore<S>& ps, const std::string& name, int c) {
  ps.add(name + ".rn.gamma", Tensor<S>::full({c}, S(1)));
  ps.add(name + ".rn.beta", Tensor<S>::zeros({c}));
  ps.add(name + ".rn.rmean", Tensor<S>::zeros({c}), false);
  ps.add(name + ".rn.rvar", Tensor<S>::full({c}, S(1)), false);
}

template <typename S>
void add_conv(ParameterStore<S>& ps, const std::string& name, int k, int cin, int cout,
              Rng& rng, bool renorm = true) {
  ps.add(name + ".w", he_init<S>({k, k, cin, cout}, (long)k * k * cin, rng));
  ps.add(name + ".b", Tensor<S>::zeros({cout}));
  if (renorm) add_renorm_params(ps, name, cout);
}

}  // namespace detail

template <typename S>
ParameterStore<S> init_generator(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterStore<S> ps;
  int nd = cfg.down_blocks();
  for (int d = 0; d < nd; ++d) {
    std::string p = "enc" + std::to_string(d);
    int w = cfg.block_width(d);
    int cin = d == 0 ? 3 : cfg.block_width(d);  // previous down conv emits 2*width(d-1)
    for (int j = 1; j <= 4; ++j)
      detail::add_conv(ps, p + ".conv" + std::to_string(j), 3, j == 1 ? cin : w, w, rng);
    if (cin != w) ps.add(p + ".proj.w", he_init<S>({1, 1, cin, w}, cin, rng));
    detail::add_conv(ps, p + ".down", 3, w, 2 * w, rng);
    // skip crossing 1x1
    ps.add("skip" + std::to_string(d) + ".w", he_init<S>({1, 1, w, w}, w, rng));
    ps.add("skip" + std::to_string(d) + ".b", Tensor<S>::zeros({w}));
  }
  ps.add("latent.w", he_init<S>({cfg.latent_dim, cfg.latent_channels}, cfg.latent_dim, rng));
  ps.add("latent.b", Tensor<S>::zeros({cfg.latent_channels}));
  if (cfg.class_conditioning) {
    ps.add("class.w", he_init<S>({cfg.num_classes, cfg.class_channels}, cfg.num_classes, rng));
    ps.add("class.b", Tensor<S>::zeros({cfg.class_channels}));
  }
  for (int u = 0; u < nd; ++u) {
    std::string p = "dec" + std::to_string(u);
    int m = nd - 1 - u;
    int w = cfg.block_width(m);
    int cin = u == 0 ? cfg.bottleneck_channels() + cfg.latent_channels +
                           (cfg.class_conditioning ? cfg.class_channels : 0)
                     : cfg.block_width(m + 1);
    // deconv weights are {k,k,out,in}: adjoint of a stride-2 conv
    ps.add(p + ".up.w", he_init<S>({3, 3, w, cin}, (long)9 * cin, rng));
    ps.add(p + ".up.b", Tensor<S>::zeros({w}));
    detail::add_renorm_params(ps, p + ".up", w);
    for (int j = 1; j <= 4; ++j)
      detail::add_conv(ps, p + ".conv" + std::to_string(j), 3, j == 1 ? 2 * w : w, w, rng);
    ps.add(p + ".proj.w", he_init<S>({1, 1, 2 * w, w}, 2 * w, rng));
  }
  detail::add_conv(ps, "out", 3, cfg.base_filters, 3, rng, /*renorm=*/false);
  return ps;
}

// Encoder: conditioning image -> bottleneck representation + skip features.
template <typename S>
std::pair<Var<S>, SkipState<S>> encode(const Var<S>& x, NetRun<S>& run,
                                       const GeneratorConfig& cfg) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.input_size || s[2] != cfg.input_size || s[3] != 3)
    throw std::invalid_argument("encode: expected {N," + std::to_string(cfg.input_size) + "," +
                                std::to_string(cfg.input_size) + ",3}, got " + shape_str(s));
  SkipState<S> skips;
  Var<S> h = x;
  for (int d = 0; d < cfg.down_blocks(); ++d) {
    std::string p = "enc" + std::to_string(d);
    h = detail::resnet_body(run, p, h, cfg.block_width(d));
    skips.push_back(h);  // pre-scaling feature
    h = conv2d(h, run.p(p + ".down.w"), run.p(p + ".down.b"), 2);
    h = detail::scale_tail(run, p + ".down", h, cfg.dropout_rate);
  }
  return {h, skips};
}

// Linear projection of the Gaussian latent, broadcast over the bottleneck grid.
template <typename S>
Var<S> project_latent(const Var<S>& z, NetRun<S>& run, const GeneratorConfig& cfg) {
  const Shape& s = z.shape();
  if (s.size() != 2 || s[1] != cfg.latent_dim)
    throw std::invalid_argument("project_latent: expected {N," + std::to_string(cfg.latent_dim) +
                                "}, got " + shape_str(s));
  Var<S> v = ad::add(ad::matmul(z, run.p("latent.w")), run.p("latent.b"));
  int hs = cfg.bottleneck_size();
  v = ad::reshape(v, Shape{s[0], 1, 1, cfg.latent_channels});
  return ad::broadcast_to(v, Shape{s[0], hs, hs, cfg.latent_channels});
}

// One-hot class embedding broadcast over the bottleneck grid (optional).
template <typename S>
Var<S> project_class(const std::vector<int>& class_ids, NetRun<S>& run,
                     const GeneratorConfig& cfg) {
  int n = (int)class_ids.size();
  Tensor<S> onehot(Shape{n, cfg.num_classes});
  for (int i = 0; i < n; ++i) onehot[(long)i * cfg.num_classes + class_ids[i]] = S(1);
  Var<S> v = ad::add(ad::matmul(ad::constant(std::move(onehot)), run.p("class.w")),
                     run.p("class.b"));
  int hs = cfg.bottleneck_size();
  v = ad::reshape(v, Shape{n, 1, 1, cfg.class_channels});
  return ad::broadcast_to(v, Shape{n, hs, hs, cfg.class_channels});
}

// Decoder: bottleneck + latent (+ optional class embedding) -> image in (0,1).
template <typename S>
Var<S> generate(const Var<S>& r_x, const Var<S>& latent, const SkipState<S>& skips,
                NetRun<S>& run, const GeneratorConfig& cfg,
                const Var<S>& class_emb = Var<S>()) {
  if (r_x.shape()[1] != latent.shape()[1] || r_x.shape()[2] != latent.shape()[2])
    throw std::invalid_argument("generate: bottleneck/latent spatial mismatch");
  int nd = cfg.down_blocks();
  if ((int)skips.size() != nd) throw std::invalid_argument("generate: wrong skip count");
  std::vector<Var<S>> cat{r_x, latent};
  if (class_emb.defined()) cat.push_back(class_emb);
  Var<S> h = ad::concat_last(cat);
  for (int u = 0; u < nd; ++u) {
    std::string p = "dec" + std::to_string(u);
    int m = nd - 1 - u;
    h = deconv2d(h, run.p(p + ".up.w"), run.p(p + ".up.b"));
    h = detail::scale_tail(run, p + ".up", h, cfg.dropout_rate);
    Var<S> sk = conv2d(skips[m], run.p("skip" + std::to_string(m) + ".w"),
                       run.p("skip" + std::to_string(m) + ".b"), 1);
    h = ad::concat_last<S>({h, sk});
    h = detail::resnet_body(run, p, h, cfg.block_width(m));
  }
  return ad::sigmoid(conv2d(h, run.p("out.w"), run.p("out.b"), 1));
}

// Full pass: encode -> project latent -> concat -> decode.
template <typename S>
Var<S> generator_forward(const Var<S>& x_j, const Var<S>& z, NetRun<S>& run,
                         const GeneratorConfig& cfg,
                         const std::vector<int>* class_ids = nullptr) {
  auto [r_x, skips] = encode(x_j, run, cfg);
  Var<S> latent = project_latent(z, run, cfg);
  Var<S> cls;
  if (cfg.class_conditioning) {
    if (!class_ids) throw std::invalid_argument("class_conditioning requires class ids");
    cls = project_class(*class_ids, run, cfg);
  }
  return generate(r_x, latent, skips, run, cfg, cls);
}

}  // namespace gau
