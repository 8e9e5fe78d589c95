#pragma once

#include "gaunet/layers.hpp"

namespace gau {

// Small convolutional classifier used three ways: as the downstream model of
// the augmentation study, as the desk-scale feature embedder behind FID, and
// as the trained-on-real oracle for conditional accuracy.
struct ClassifierConfig {
  int input_size = 64;
  int num_classes = 2;
  int width = 8;          // channels double per stage
  int num_stages = 3;     // stride-2 convs
  double alpha = 0.001;   // Adam defaults for classifier training
  double beta1 = 0.9;
  double beta2 = 0.99;
  int train_steps = 400;
  int batch_size = 32;

  int feature_dim() const { return width << (num_stages - 1); }
};

template <typename S>
ParameterStore<S> init_classifier(const ClassifierConfig& cfg, Rng& rng) {
  ParameterStore<S> ps;
  int cin = 3;
  for (int i = 0; i < cfg.num_stages; ++i) {
    int cout = cfg.width << i;
    ps.add("conv" + std::to_string(i) + ".w", he_init<S>({3, 3, cin, cout}, 9L * cin, rng));
    ps.add("conv" + std::to_string(i) + ".b", Tensor<S>::zeros({cout}));
    cin = cout;
  }
  ps.add("fc.w", he_init<S>({cfg.feature_dim(), cfg.num_classes}, cfg.feature_dim(), rng));
  ps.add("fc.b", Tensor<S>::zeros({cfg.num_classes}));
  return ps;
}

// Penultimate features: stacked stride-2 convs + global average pool.
template <typename S>
Var<S> classifier_features(const Var<S>& x, NetRun<S>& run, const ClassifierConfig& cfg) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.input_size || s[2] != cfg.input_size || s[3] != 3)
    throw std::invalid_argument("classifier: expected {N," + std::to_string(cfg.input_size) +
                                "," + std::to_string(cfg.input_size) + ",3}, got " + shape_str(s));
  Var<S> h = x;
  for (int i = 0; i < cfg.num_stages; ++i) {
    h = conv2d(h, run.p("conv" + std::to_string(i) + ".w"),
               run.p("conv" + std::to_string(i) + ".b"), 2);
    h = ad::leaky_relu(h);
  }
  h = ad::mean_axes(h, {1, 2});
  return ad::reshape(h, Shape{s[0], cfg.feature_dim()});
}

template <typename S>
Var<S> classifier_logits(const Var<S>& x, NetRun<S>& run, const ClassifierConfig& cfg) {
  Var<S> f = classifier_features(x, run, cfg);
  return ad::add(ad::matmul(f, run.p("fc.w")), run.p("fc.b"));
}

}  // namespace gau
