#pragma once

#include <string>
#include <vector>

#include "gaunet/rng.hpp"
#include "gaunet/tensor.hpp"

namespace gau {

struct SampleRecord {
  std::string image_path;
  int class_id = 0;
  std::string patient_id;
};

// Records plus decoded images ({H,W,3} float tensors in [0,1]).
struct Dataset {
  std::vector<SampleRecord> records;
  std::vector<Tensor<float>> images;
  int num_classes = 0;
  int image_size = 0;
};

struct SplitRatios {
  double train = 0.7, val = 0.1, test = 0.2;
};

// Index lists into a Dataset; patient ids are pairwise disjoint across splits.
struct DatasetSplit {
  std::vector<int> train, val, test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

// Same-class sample pairs: x_i shown to the critic, x_j encoded by the
// generator; indices are distinct within each pair.
struct ConditionalBatch {
  int class_id = 0;
  std::vector<int> i_idx, j_idx;
};

// --- image / manifest I/O (PNG, bilinear resize, grayscale replicated) ---
Tensor<float> load_image(const std::string& path, int image_size);
void save_image_png(const std::string& path, const Tensor<float>& image);
Dataset load_manifest(const std::string& manifest_path, int image_size);
void write_manifest(const std::string& manifest_path, const std::vector<SampleRecord>& records);

// --- splitting / sampling ---
DatasetSplit split_patient_level(const std::vector<SampleRecord>& records,
                                 const SplitRatios& ratios, std::uint64_t seed);
ConditionalBatch sample_conditional_batch(const Dataset& data, const std::vector<int>& split,
                                          int class_id, int m, Rng& rng);

// Batch tensor {N,H,W,C} from dataset indices.
Tensor<float> stack_images(const Dataset& data, const std::vector<int>& indices);
Tensor<float> stack_images(const std::vector<Tensor<float>>& images);

// --- synthetic desk-scale dataset ---
struct SyntheticSpec {
  int num_classes = 2;       // in [2, 10]
  int n_per_class = 500;
  int image_size = 64;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

// Deterministic parametric shape per class at a randomized position/scale.
Tensor<float> render_shape(int class_id, double cx, double cy, double radius, int image_size);
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

// Analytic template-matching classifier; >= 0.99 accuracy on clean renders.
class TemplateOracle {
 public:
  TemplateOracle(int num_classes, int image_size);
  int classify(const Tensor<float>& image) const;
  double accuracy(const Dataset& data, const std::vector<int>& indices) const;

 private:
  int num_classes_, image_size_;
  std::vector<std::vector<Tensor<float>>> banks_;  // zero-mean unit-norm, per class
};

}  // namespace gau
