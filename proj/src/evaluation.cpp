#include "gaunet/evaluation.hpp"

#include <algorithm>
#include <numeric>

namespace gau {

namespace {

// uniform-with-replacement batch indices
std::vector<int> draw_batch(const std::vector<int>& pool, int m, Rng& rng) {
  std::vector<int> out(m);
  for (int i = 0; i < m; ++i) out[i] = pool[rng.uniform_int((long)pool.size())];
  return out;
}

ParameterStore<float> run_classifier_training(ParameterStore<float> params,
                                              const std::vector<Tensor<float>>& images,
                                              const std::vector<int>& labels,
                                              const ClassifierConfig& cfg, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("classifier training: empty data");
  AdamOptimizer<float> opt((float)cfg.alpha, (float)cfg.beta1, (float)cfg.beta2);
  std::vector<int> pool(images.size());
  std::iota(pool.begin(), pool.end(), 0);
  int m = std::min<int>(cfg.batch_size, (int)images.size());
  for (int step = 0; step < cfg.train_steps; ++step) {
    std::vector<int> idx = draw_batch(pool, m, rng);
    std::vector<Tensor<float>> batch;
    std::vector<int> y;
    for (int i : idx) {
      batch.push_back(images[i]);
      y.push_back(labels[i]);
    }
    NetRun<float> run(params, /*train=*/true);
    Var<float> logits = classifier_logits(ad::constant(stack_images(batch)), run, cfg);
    Var<float> loss = cross_entropy(logits, y);
    if (!loss.value().all_finite()) throw std::runtime_error("non-finite classifier loss");
    auto trainables = run.trainables();
    std::vector<Var<float>> wrt;
    for (auto& [n, v] : trainables) wrt.push_back(v);
    std::vector<Var<float>> gs = ad::grad(loss, wrt);
    std::unordered_map<std::string, Tensor<float>> grads;
    for (size_t i = 0; i < trainables.size(); ++i) grads.emplace(trainables[i].first, gs[i].value());
    opt.update(params, grads);
  }
  return params;
}

constexpr int kEmbedChunk = 64;

}  // namespace

ParameterStore<float> train_classifier(const Dataset& data, const std::vector<int>& train_idx,
                                       const ClassifierConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore<float> params = init_classifier<float>(cfg, rng);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int i : train_idx) {
    images.push_back(data.images[i]);
    labels.push_back(data.records[i].class_id);
  }
  return run_classifier_training(std::move(params), images, labels, cfg, rng);
}

ParameterStore<float> train_classifier_on(const ParameterStore<float>& init,
                                          const std::vector<Tensor<float>>& images,
                                          const std::vector<int>& labels,
                                          const ClassifierConfig& cfg, std::uint64_t seed) {
  if (images.size() != labels.size())
    throw std::invalid_argument("classifier training: image/label count mismatch");
  Rng rng(seed);
  return run_classifier_training(init, images, labels, cfg, rng);
}

namespace {

Eigen::MatrixXd forward_rows(const Tensor<float>& images, ParameterStore<float>& params,
                             const ClassifierConfig& cfg, bool features) {
  if (images.rank() != 4 || images.shape[1] != cfg.input_size || images.shape[2] != cfg.input_size)
    throw std::invalid_argument("embed: image batch " + shape_str(images.shape) +
                                " does not match classifier input size " +
                                std::to_string(cfg.input_size));
  int n = images.shape[0];
  int dim = features ? cfg.feature_dim() : cfg.num_classes;
  Eigen::MatrixXd out(n, dim);
  long per = images.size() / n;
  for (int start = 0; start < n; start += kEmbedChunk) {
    int count = std::min(kEmbedChunk, n - start);
    Tensor<float> chunk(Shape{count, images.shape[1], images.shape[2], images.shape[3]},
                        std::vector<float>(images.data.begin() + start * per,
                                           images.data.begin() + (start + count) * per));
    NetRun<float> run(params);
    run.params_require_grad = false;
    Var<float> rows = features ? classifier_features(ad::constant(chunk), run, cfg)
                               : classifier_logits(ad::constant(chunk), run, cfg);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < dim; ++j) out(start + i, j) = rows.value()[(long)i * dim + j];
  }
  return out;
}

}  // namespace

Eigen::MatrixXd embed(const Tensor<float>& images, ParameterStore<float>& params,
                      const ClassifierConfig& cfg) {
  return forward_rows(images, params, cfg, /*features=*/true);
}

Eigen::MatrixXd classify_scores(const Tensor<float>& images, ParameterStore<float>& params,
                                const ClassifierConfig& cfg) {
  return forward_rows(images, params, cfg, /*features=*/false);
}

FeatureMoments feature_moments(const Eigen::MatrixXd& features) {
  long n = features.rows();
  if (n < 2) throw std::invalid_argument("feature_moments: need at least 2 samples");
  FeatureMoments m;
  m.n = n;
  m.mu = features.colwise().mean();
  Eigen::MatrixXd centered = features.rowwise() - m.mu.transpose();
  m.sigma = centered.transpose() * centered / double(n - 1);
  m.sigma = 0.5 * (m.sigma + m.sigma.transpose().eval());
  if (n <= features.cols())
    m.sigma += 1e-6 * Eigen::MatrixXd::Identity(features.cols(), features.cols());
  return m;
}

Eigen::MatrixXd sqrt_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("sqrt_spd: matrix must be square");
  double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).norm() > 1e-8 * scale)
    throw std::invalid_argument("sqrt_spd: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("sqrt_spd: eigensolver failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (long i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * scale)
      throw std::invalid_argument("sqrt_spd: matrix has negative eigenvalue " +
                                  std::to_string(ev[i]));
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double fid(const FeatureMoments& real, const FeatureMoments& fake) {
  if (real.mu.size() != fake.mu.size())
    throw std::invalid_argument("fid: feature dimension mismatch");
  Eigen::MatrixXd sr = sqrt_spd(real.sigma);
  // Tr sqrt(Sr Sf) computed through the symmetric product sqrt(Sr) Sf sqrt(Sr)
  Eigen::MatrixXd inner = sr * fake.sigma * sr;
  double tr_sqrt = sqrt_spd(inner).trace();
  double d2 = (real.mu - fake.mu).squaredNorm() + real.sigma.trace() + fake.sigma.trace() -
              2.0 * tr_sqrt;
  if (d2 < -1e-6) throw std::runtime_error("fid: negative distance " + std::to_string(d2));
  return d2;
}

double conditional_accuracy(const Tensor<float>& generated, const std::vector<int>& intended,
                            ParameterStore<float>& oracle, const ClassifierConfig& oracle_cfg,
                            std::vector<double>* per_class) {
  if (intended.empty()) throw std::invalid_argument("conditional_accuracy: empty input");
  if ((int)intended.size() != generated.shape[0])
    throw std::invalid_argument("conditional_accuracy: image/class count mismatch");
  for (int c : intended)
    if (c < 0 || c >= oracle_cfg.num_classes)
      throw std::invalid_argument("conditional_accuracy: class " + std::to_string(c) +
                                  " outside the oracle's label set");
  Eigen::MatrixXd scores = classify_scores(generated, oracle, oracle_cfg);
  std::vector<long> correct(oracle_cfg.num_classes, 0), total(oracle_cfg.num_classes, 0);
  long hits = 0;
  for (long i = 0; i < scores.rows(); ++i) {
    long pred;
    scores.row(i).maxCoeff(&pred);
    ++total[intended[i]];
    if ((int)pred == intended[i]) {
      ++hits;
      ++correct[intended[i]];
    }
  }
  if (per_class) {
    per_class->assign(oracle_cfg.num_classes, 0.0);
    for (int c = 0; c < oracle_cfg.num_classes; ++c)
      if (total[c] > 0) (*per_class)[c] = (double)correct[c] / (double)total[c];
  }
  return (double)hits / (double)intended.size();
}

ClassificationMetrics classification_metrics(const Eigen::MatrixXd& scores,
                                             const std::vector<int>& labels) {
  long n = scores.rows();
  int c = (int)scores.cols();
  if ((long)labels.size() != n)
    throw std::invalid_argument("classification_metrics: label count mismatch");
  if (n == 0) throw std::invalid_argument("classification_metrics: empty input");
  for (int y : labels)
    if (y < 0 || y >= c) throw std::invalid_argument("classification_metrics: label out of range");

  std::vector<int> pred(n);
  for (long i = 0; i < n; ++i) {
    long p;
    scores.row(i).maxCoeff(&p);
    pred[i] = (int)p;
  }

  std::vector<long> tp(c, 0), fp(c, 0), fn(c, 0), support(c, 0);
  long correct = 0;
  for (long i = 0; i < n; ++i) {
    ++support[labels[i]];
    if (pred[i] == labels[i]) {
      ++correct;
      ++tp[labels[i]];
    } else {
      ++fp[pred[i]];
      ++fn[labels[i]];
    }
  }

  ClassificationMetrics m;
  m.accuracy = (double)correct / (double)n;

  // macro averages over classes present in the labels; precision of an
  // unpredicted class counts as 0
  int present = 0;
  for (int k = 0; k < c; ++k) {
    if (support[k] == 0) continue;
    ++present;
    double prec = tp[k] + fp[k] > 0 ? (double)tp[k] / (double)(tp[k] + fp[k]) : 0.0;
    double rec = (double)tp[k] / (double)support[k];
    m.precision += prec;
    m.recall += rec;
  }
  if (present == 0) throw std::invalid_argument("classification_metrics: no labels");
  m.precision /= present;
  m.recall /= present;

  if (present < 2)
    throw std::invalid_argument("classification_metrics: AUC needs at least two label classes");
  // macro one-vs-rest AUC by pairwise rank comparison, ties at half credit
  double auc_sum = 0;
  for (int k = 0; k < c; ++k) {
    if (support[k] == 0 || support[k] == n) continue;
    double wins = 0;
    long pairs = 0;
    for (long i = 0; i < n; ++i) {
      if (labels[i] != k) continue;
      for (long j = 0; j < n; ++j) {
        if (labels[j] == k) continue;
        ++pairs;
        if (scores(i, k) > scores(j, k)) wins += 1.0;
        else if (scores(i, k) == scores(j, k)) wins += 0.5;
      }
    }
    auc_sum += wins / (double)pairs;
  }
  m.auc = auc_sum / present;
  return m;
}

StudyArm bootstrap_metrics(const Eigen::MatrixXd& scores, const std::vector<int>& labels, int B,
                           Rng& rng) {
  ClassificationMetrics point = classification_metrics(scores, labels);
  StudyArm arm;
  arm.accuracy.value = point.accuracy;
  arm.precision.value = point.precision;
  arm.recall.value = point.recall;
  arm.auc.value = point.auc;

  long n = scores.rows();
  std::vector<double> acc, prec, rec, auc;
  for (int b = 0; b < B; ++b) {
    Eigen::MatrixXd s(n, scores.cols());
    std::vector<int> y(n);
    for (long i = 0; i < n; ++i) {
      long j = rng.uniform_int(n);
      s.row(i) = scores.row(j);
      y[i] = labels[j];
    }
    ClassificationMetrics m;
    try {
      m = classification_metrics(s, y);
    } catch (const std::invalid_argument&) {
      continue;  // degenerate resample (single class); skip
    }
    acc.push_back(m.accuracy);
    prec.push_back(m.precision);
    rec.push_back(m.recall);
    auc.push_back(m.auc);
  }
  auto pct = [](std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    long i = (long)std::llround(q * (double)(v.size() - 1));
    return v[i];
  };
  arm.accuracy.lo = pct(acc, 0.025);
  arm.accuracy.hi = pct(acc, 0.975);
  arm.precision.lo = pct(prec, 0.025);
  arm.precision.hi = pct(prec, 0.975);
  arm.recall.lo = pct(rec, 0.025);
  arm.recall.hi = pct(rec, 0.975);
  arm.auc.lo = pct(auc, 0.025);
  arm.auc.hi = pct(auc, 0.975);
  return arm;
}

AugmentationStudy augmentation_study(const Dataset& data, const DatasetSplit& split,
                                     TrainState<float>& checkpoint,
                                     const ClassifierConfig& classifier_cfg,
                                     int n_generated_per_class, std::uint64_t seed,
                                     int bootstrap_reps) {
  if (checkpoint.gen_config.input_size != classifier_cfg.input_size ||
      data.image_size != classifier_cfg.input_size)
    throw std::invalid_argument("augmentation_study: checkpoint/classifier resolution mismatch");
  if (classifier_cfg.num_classes != data.num_classes)
    throw std::invalid_argument("augmentation_study: classifier class count mismatch");

  Rng rng(seed);
  ParameterStore<float> init = init_classifier<float>(classifier_cfg, rng);

  std::vector<Tensor<float>> real_images;
  std::vector<int> real_labels;
  for (int i : split.train) {
    real_images.push_back(data.images[i]);
    real_labels.push_back(data.records[i].class_id);
  }

  std::vector<Tensor<float>> aug_images = real_images;
  std::vector<int> aug_labels = real_labels;
  if (n_generated_per_class > 0) {
    for (int c = 0; c < data.num_classes; ++c) {
      std::vector<int> pool;
      for (int i : split.train)
        if (data.records[i].class_id == c) pool.push_back(i);
      if (pool.empty())
        throw std::invalid_argument("augmentation_study: class " + std::to_string(c) +
                                    " missing from the train split");
      for (int k = 0; k < n_generated_per_class; ++k) {
        int cond = pool[rng.uniform_int((long)pool.size())];
        Tensor<float> x_j(Shape{1, data.image_size, data.image_size, 3}, data.images[cond].data);
        Tensor<float> gen = generate_batch(checkpoint, x_j, rng);
        aug_images.push_back(Tensor<float>(Shape{data.image_size, data.image_size, 3}, gen.data));
        aug_labels.push_back(c);
      }
    }
  }

  std::uint64_t train_seed = rng.uniform_int(1L << 62);
  ParameterStore<float> without =
      train_classifier_on(init, real_images, real_labels, classifier_cfg, train_seed);
  ParameterStore<float> with =
      train_classifier_on(init, aug_images, aug_labels, classifier_cfg, train_seed);

  Tensor<float> test_images = stack_images(data, split.test);
  std::vector<int> test_labels;
  for (int i : split.test) test_labels.push_back(data.records[i].class_id);

  Eigen::MatrixXd s_without = classify_scores(test_images, without, classifier_cfg);
  Eigen::MatrixXd s_with = classify_scores(test_images, with, classifier_cfg);

  AugmentationStudy study;
  study.n_generated_per_class = n_generated_per_class;
  Rng boot1(seed ^ 0x9e3779b97f4a7c15ULL), boot2(seed ^ 0x9e3779b97f4a7c15ULL);
  study.without_aug = bootstrap_metrics(s_without, test_labels, bootstrap_reps, boot1);
  study.with_aug = bootstrap_metrics(s_with, test_labels, bootstrap_reps, boot2);
  return study;
}

}  // namespace gau
