#pragma once

#include <Eigen/Dense>

#include "gaunet/classifier.hpp"
#include "gaunet/dataset.hpp"
#include "gaunet/training.hpp"

namespace gau {

// Gaussian fit of an embedding cloud.
struct FeatureMoments {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  long n = 0;
};

struct ClassificationMetrics {
  double accuracy = 0, precision = 0, recall = 0, auc = 0;
};

struct Interval {
  double value = 0, lo = 0, hi = 0;
};

// One arm of the augmentation study: point metrics plus bootstrap intervals.
struct StudyArm {
  Interval accuracy, precision, recall, auc;
};

struct AugmentationStudy {
  StudyArm without_aug, with_aug;
  int n_generated_per_class = 0;
};

// --- small-CNN training (downstream classifier, FID embedder, oracle) ---

ParameterStore<float> train_classifier(const Dataset& data, const std::vector<int>& train_idx,
                                       const ClassifierConfig& cfg, std::uint64_t seed);

// Continues training from a given initialization on an explicit image/label set.
ParameterStore<float> train_classifier_on(const ParameterStore<float>& init,
                                          const std::vector<Tensor<float>>& images,
                                          const std::vector<int>& labels,
                                          const ClassifierConfig& cfg, std::uint64_t seed);

// Per-image penultimate features, {N, feature_dim}, infer mode.
Eigen::MatrixXd embed(const Tensor<float>& images, ParameterStore<float>& params,
                      const ClassifierConfig& cfg);

// Per-image class scores (logits), {N, num_classes}, infer mode.
Eigen::MatrixXd classify_scores(const Tensor<float>& images, ParameterStore<float>& params,
                                const ClassifierConfig& cfg);

// --- FID ---

// Gaussian moments; a ridge of 1e-6 I is applied when n <= feature dim.
FeatureMoments feature_moments(const Eigen::MatrixXd& features);

// Symmetric PSD square root; rejects asymmetry and genuinely negative spectra.
Eigen::MatrixXd sqrt_spd(const Eigen::MatrixXd& m);

double fid(const FeatureMoments& real, const FeatureMoments& fake);

// --- conditional accuracy (the PA stand-in) ---

double conditional_accuracy(const Tensor<float>& generated, const std::vector<int>& intended,
                            ParameterStore<float>& oracle, const ClassifierConfig& oracle_cfg,
                            std::vector<double>* per_class = nullptr);

// --- classification metrics ---

// Macro one-vs-rest precision/recall/AUC over {N, C} scores; labels in [0, C).
ClassificationMetrics classification_metrics(const Eigen::MatrixXd& scores,
                                             const std::vector<int>& labels);

// Percentile bootstrap over samples (B resamples).
StudyArm bootstrap_metrics(const Eigen::MatrixXd& scores, const std::vector<int>& labels, int B,
                           Rng& rng);

// --- the Table-III style harness ---

AugmentationStudy augmentation_study(const Dataset& data, const DatasetSplit& split,
                                     TrainState<float>& checkpoint,
                                     const ClassifierConfig& classifier_cfg,
                                     int n_generated_per_class, std::uint64_t seed,
                                     int bootstrap_reps = 200);

}  // namespace gau
