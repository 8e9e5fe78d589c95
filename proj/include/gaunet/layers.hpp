#pragma once

#include <optional>
#include <unordered_map>

#include "gaunet/ops.hpp"
#include "gaunet/rng.hpp"

namespace gau {

using ad::Var;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename S>
struct ParamEntry {
  Tensor<S> value;
  bool trainable = true;
};

// Named, ordered parameter arrays for one network. Running statistics of
// normalization layers live here too, as non-trainable entries.
template <typename S>
class ParameterStore {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = order_.size();
    order_.push_back(name);
    entries_.push_back(ParamEntry<S>{std::move(value), trainable});
    return entries_.back().value;
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  ParamEntry<S>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second];
  }
  const ParamEntry<S>& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second];
  }
  Tensor<S>& at(const std::string& name) { return entry(name).value; }
  const Tensor<S>& at(const std::string& name) const { return entry(name).value; }

  const std::vector<std::string>& names() const { return order_; }
  long total_params(bool trainable_only = true) const {
    long n = 0;
    for (size_t i = 0; i < order_.size(); ++i)
      if (!trainable_only || entries_[i].trainable) n += (long)entries_[i].value.size();
    return n;
  }

  template <typename T>
  ParameterStore<T> cast() const {
    ParameterStore<T> out;
    for (size_t i = 0; i < order_.size(); ++i)
      out.add(order_[i], entries_[i].value.template cast<T>(), entries_[i].trainable);
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::vector<ParamEntry<S>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// He-style fan-in Gaussian init for leaky-ReLU stacks.
template <typename S>
Tensor<S> he_init(Shape shape, long fan_in, Rng& rng) {
  Tensor<S> t(std::move(shape));
  double std = std::sqrt(2.0 / (double)fan_in);
  for (S& v : t.data) v = (S)(rng.normal() * std);
  return t;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
  long step_count = 0;
  Tensor<S> first_moment, second_moment;  // zero-initialized lazily
  S alpha = S(1e-4), beta1 = S(0), beta2 = S(0.9), epsilon_hat = S(1e-8);
};

template <typename S>
void adam_step(Tensor<S>& param, const Tensor<S>& grad, AdamState<S>& st) {
  if (grad.shape != param.shape)
    throw std::invalid_argument("adam_step: gradient shape " + shape_str(grad.shape) +
                                " != parameter shape " + shape_str(param.shape));
  if (st.first_moment.size() == 0) {
    st.first_moment = Tensor<S>::zeros(param.shape);
    st.second_moment = Tensor<S>::zeros(param.shape);
  }
  ++st.step_count;
  double b1 = (double)st.beta1, b2 = (double)st.beta2;
  double c1 = 1.0 - std::pow(b1, (double)st.step_count);
  double c2 = 1.0 - std::pow(b2, (double)st.step_count);
  for (long i = 0; i < param.size(); ++i) {
    double g = (double)grad[i];
    double m = b1 * (double)st.first_moment[i] + (1.0 - b1) * g;
    double v = b2 * (double)st.second_moment[i] + (1.0 - b2) * g * g;
    st.first_moment[i] = (S)m;
    st.second_moment[i] = (S)v;
    param[i] -= (S)((double)st.alpha * (m / c1) / (std::sqrt(v / c2) + (double)st.epsilon_hat));
  }
}

template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(S alpha, S beta1, S beta2, S eps = S(1e-8))
      : alpha_(alpha), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(ParameterStore<S>& store, const std::unordered_map<std::string, Tensor<S>>& grads) {
    for (const std::string& name : store.names()) {
      auto g = grads.find(name);
      if (g == grads.end()) continue;
      AdamState<S>& st = states_[name];
      st.alpha = alpha_; st.beta1 = beta1_; st.beta2 = beta2_; st.epsilon_hat = eps_;
      adam_step(store.at(name), g->second, st);
    }
  }

  std::unordered_map<std::string, AdamState<S>>& states() { return states_; }
  S alpha() const { return alpha_; }
  S beta1() const { return beta1_; }
  S beta2() const { return beta2_; }

 private:
  S alpha_ = S(1e-4), beta1_ = S(0), beta2_ = S(0.9), eps_ = S(1e-8);
  std::unordered_map<std::string, AdamState<S>> states_;
};

// ---------------------------------------------------------------------------
// Forward-pass context
// ---------------------------------------------------------------------------

// Ties a parameter store to one forward build: lifts parameters into graph
// leaves (cached per name), carries train/infer mode, the renorm correction
// limits and the rng used for dropout masks.
template <typename S>
struct NetRun {
  ParameterStore<S>* store = nullptr;
  bool train = false;
  bool params_require_grad = true;
  S r_max = S(1), d_max = S(0);
  S bn_momentum = S(0.99);
  Rng* rng = nullptr;
  std::unordered_map<std::string, Var<S>> lifted;

  NetRun(ParameterStore<S>& s, bool train_mode = false) : store(&s), train(train_mode) {}

  Var<S> p(const std::string& name) {
    auto it = lifted.find(name);
    if (it != lifted.end()) return it->second;
    ParamEntry<S>& e = store->entry(name);
    Var<S> v = Var<S>::leaf(e.value, params_require_grad && e.trainable);
    lifted.emplace(name, v);
    return v;
  }

  // All trainable parameters, lifted, in store order.
  std::vector<std::pair<std::string, Var<S>>> trainables() {
    std::vector<std::pair<std::string, Var<S>>> out;
    for (const std::string& name : store->names())
      if (store->entry(name).trainable) out.emplace_back(name, p(name));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Layer ops (the differentiable primitives of the artifact)
// ---------------------------------------------------------------------------

inline constexpr double kNormEps = 1e-5;

// Same-padded convolution; kernel in {1,3}, stride in {1,2}.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride) {
  int k = w.shape()[0];
  if (k != 1 && k != 3) throw std::invalid_argument("conv2d kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d stride must be 1 or 2");
  Var<S> y = ad::conv2d_raw(x, w, stride);
  if (b.defined()) y = ad::add(y, b);
  return y;
}

// Stride-1/2 deconvolution: doubles the spatial extents. Weights {k,k,co,ci}
// act as the adjoint of a stride-2 convolution from the output grid.
template <typename S>
Var<S> deconv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const Shape& s = x.shape();
  Var<S> y = ad::conv2d_transpose_raw(x, w, 2, 2 * s[1], 2 * s[2]);
  if (b.defined()) y = ad::add(y, b);
  return y;
}

enum class Mode { kTrain, kInfer };

// Batch renormalization over NHWC with per-channel affine. Correction factors
// r, d are clipped to [1/r_max, r_max] / [-d_max, d_max] and treated as
// constants in the backward pass. r_max=1, d_max=0 recovers batch norm.
template <typename S>
Var<S> batch_renorm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, Mode mode,
                    S r_max = S(1), S d_max = S(0), S momentum = S(0.99)) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("batch_renorm expects NHWC");
  int c = s[3];
  S eps = (S)kNormEps;
  if (mode == Mode::kInfer) {
    Tensor<S> inv(Shape{c}), mean = running_mean;
    for (int i = 0; i < c; ++i) inv[i] = (S)(1.0 / std::sqrt((double)running_var[i] + (double)eps));
    Var<S> xc = ad::sub(x, ad::constant(std::move(mean)));
    Var<S> xhat = ad::mul(xc, ad::constant(std::move(inv)));
    return ad::add(ad::mul(xhat, gamma), beta);
  }
  if (s[0] < 2) throw std::invalid_argument("batch_renorm needs batch extent >= 2 in train mode");
  long nhw = (long)s[0] * s[1] * s[2];
  Var<S> mu = ad::mean_axes(x, {0, 1, 2});                       // {1,1,1,C}
  Var<S> var = ad::mean_axes(ad::square(ad::sub(x, mu)), {0, 1, 2});
  Var<S> sigma = ad::pow_scalar(ad::add_scalar(var, eps), S(0.5));

  // correction toward running stats, clipped; constant w.r.t. the graph
  Tensor<S> r(Shape{1, 1, 1, c}), d(Shape{1, 1, 1, c});
  for (int i = 0; i < c; ++i) {
    double sb = (double)sigma.value()[i];
    double sr = std::sqrt((double)running_var[i] + (double)eps);
    double ri = std::min((double)r_max, std::max(1.0 / (double)r_max, sb / sr));
    double di = ((double)mu.value()[i] - (double)running_mean[i]) / sr;
    di = std::min((double)d_max, std::max(-(double)d_max, di));
    r[i] = (S)ri;
    d[i] = (S)di;
  }
  Var<S> xhat = ad::add(ad::mul(ad::mul(ad::sub(x, mu), ad::pow_scalar(sigma, S(-1))),
                                ad::constant(std::move(r))),
                        ad::constant(std::move(d)));
  // EMA update of running stats (unbiased variance for the running estimate)
  double unbias = nhw > 1 ? (double)nhw / (double)(nhw - 1) : 1.0;
  for (int i = 0; i < c; ++i) {
    running_mean[i] = (S)((double)momentum * (double)running_mean[i] +
                          (1.0 - (double)momentum) * (double)mu.value()[i]);
    running_var[i] = (S)((double)momentum * (double)running_var[i] +
                         (1.0 - (double)momentum) * unbias * (double)var.value()[i]);
  }
  return ad::add(ad::mul(xhat, gamma), beta);
}

// Per-sample normalization over all non-batch axes, per-channel affine.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta) {
  const Shape& s = x.shape();
  std::vector<int> axes;
  for (int i = 1; i < (int)s.size(); ++i) axes.push_back(i);
  Var<S> mu = ad::mean_axes(x, axes);
  Var<S> var = ad::mean_axes(ad::square(ad::sub(x, mu)), axes);
  Var<S> inv = ad::pow_scalar(ad::add_scalar(var, (S)kNormEps), S(-0.5));
  Var<S> xhat = ad::mul(ad::sub(x, mu), inv);
  return ad::add(ad::mul(xhat, gamma), beta);
}

// Inverted dropout: train mode zeroes with probability `rate` and rescales
// survivors; infer mode is the identity (bit-exact).
template <typename S>
Var<S> dropout(const Var<S>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (mode == Mode::kInfer || rate == 0) return x;
  Tensor<S> mask(x.shape());
  S keep = (S)(1.0 / (1.0 - rate));
  for (S& m : mask.data) m = rng.uniform() < rate ? S(0) : keep;
  return ad::mul(x, ad::constant(std::move(mask)));
}

// Row-wise log-softmax for {N,C} logits.
template <typename S>
Var<S> log_softmax(const Var<S>& x) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("log_softmax expects {N,C}");
  Tensor<S> mx(Shape{s[0], 1});
  for (int n = 0; n < s[0]; ++n) {
    S m = x.value()[(long)n * s[1]];
    for (int c = 1; c < s[1]; ++c) m = std::max(m, x.value()[(long)n * s[1] + c]);
    mx[n] = m;
  }
  Var<S> xs = ad::sub(x, ad::constant(std::move(mx)));
  Var<S> lse = ad::log_(ad::sum_to(ad::exp_(xs), Shape{s[0], 1}));
  return ad::sub(xs, lse);
}

// Mean negative log-likelihood of integer labels under {N,C} logits.
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if ((int)labels.size() != s[0]) throw std::invalid_argument("cross_entropy label count mismatch");
  Tensor<S> onehot(Shape{s[0], s[1]});
  for (int n = 0; n < s[0]; ++n) {
    if (labels[n] < 0 || labels[n] >= s[1]) throw std::invalid_argument("label out of range");
    onehot[(long)n * s[1] + labels[n]] = S(1);
  }
  Var<S> ls = log_softmax(logits);
  return ad::neg(ad::scale(ad::sum_all(ad::mul(ls, ad::constant(std::move(onehot)))),
                           S(1.0 / (double)s[0])));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0;
  bool ok = true;
  long probes = 0;
};

// Compares the engine gradient of a scalar-valued function against central
// finite differences. Reports, never throws, on tolerance violations.
// max_probes > 0 checks a random subset of elements (FD is O(2 evals/element)).
template <typename S>
GradCheckReport grad_check(const std::function<Var<S>(const std::vector<Var<S>>&)>& f,
                           const std::vector<Tensor<S>>& inputs, double tol,
                           double h = 1e-5, long max_probes = 0, Rng* rng = nullptr) {
  std::vector<Var<S>> leaves;
  for (const auto& t : inputs) leaves.push_back(Var<S>::leaf(t, true));
  Var<S> y = f(leaves);
  if (numel(y.shape()) != 1) y = ad::sum_all(y);
  std::vector<Var<S>> analytic = ad::grad(y, leaves);

  auto eval = [&](const std::vector<Tensor<S>>& in) -> double {
    std::vector<Var<S>> ls;
    for (const auto& t : in) ls.push_back(ad::constant(t));
    Var<S> out = f(ls);
    double s = 0;
    for (const S& v : out.value().data) s += (double)v;
    return s;
  };

  GradCheckReport rep;
  std::vector<Tensor<S>> work = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    long n = inputs[k].size();
    std::vector<long> probe_idx;
    if (max_probes > 0 && n > max_probes && rng) {
      for (long j = 0; j < max_probes; ++j) probe_idx.push_back(rng->uniform_int(n));
    } else {
      probe_idx.resize(n);
      for (long j = 0; j < n; ++j) probe_idx[j] = j;
    }
    for (long j : probe_idx) {
      S orig = work[k][j];
      work[k][j] = orig + (S)h;
      double up = eval(work);
      work[k][j] = orig - (S)h;
      double down = eval(work);
      work[k][j] = orig;
      double fd = (up - down) / (2 * h);
      double an = (double)analytic[k].value()[j];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.probes;
    }
  }
  rep.ok = rep.max_rel_err < tol;
  return rep;
}

}  // namespace gau
