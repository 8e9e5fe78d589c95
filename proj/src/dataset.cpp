#include "gaunet/dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace gau {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Tensor<float> load_image(const std::string& path, int image_size) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw std::runtime_error("cannot decode image: " + path);
  cv::Mat img;
  if (raw.channels() == 1) {
    cv::cvtColor(raw, img, cv::COLOR_GRAY2BGR);  // grayscale replicated
  } else if (raw.channels() == 4) {
    cv::cvtColor(raw, img, cv::COLOR_BGRA2BGR);
  } else {
    img = raw;
  }
  if (img.rows != image_size || img.cols != image_size)
    cv::resize(img, img, cv::Size(image_size, image_size), 0, 0, cv::INTER_LINEAR);
  img.convertTo(img, CV_32FC3, 1.0 / 255.0);
  Tensor<float> t(Shape{image_size, image_size, 3});
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      cv::Vec3f px = img.at<cv::Vec3f>(y, x);  // BGR
      t.data[((long)y * image_size + x) * 3 + 0] = px[2];
      t.data[((long)y * image_size + x) * 3 + 1] = px[1];
      t.data[((long)y * image_size + x) * 3 + 2] = px[0];
    }
  return t;
}

void save_image_png(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw std::invalid_argument("save_image_png expects {H,W,3}, got " + shape_str(image.shape));
  int h = image.shape[0], w = image.shape[1];
  cv::Mat img(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto q = [&](int c) {
        float v = image.data[((long)y * w + x) * 3 + c];
        return (unsigned char)std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f);
      };
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));  // BGR
    }
  if (!cv::imwrite(path, img)) throw std::runtime_error("cannot write image: " + path);
}

Dataset load_manifest(const std::string& manifest_path, int image_size) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + manifest_path);
  {
    std::string h = trim(line);
    h.erase(std::remove(h.begin(), h.end(), ' '), h.end());
    if (h != "path,class,patient_id")
      throw std::runtime_error("manifest header must be 'path,class,patient_id', got '" + line +
                               "' in " + manifest_path);
  }
  // manifest-relative paths resolve against the manifest directory
  std::string dir;
  size_t slash = manifest_path.find_last_of('/');
  if (slash != std::string::npos) dir = manifest_path.substr(0, slash + 1);

  Dataset ds;
  ds.image_size = image_size;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string path, cls, patient;
    if (!std::getline(ss, path, ',') || !std::getline(ss, cls, ',') ||
        !std::getline(ss, patient, ','))
      throw std::runtime_error("manifest row " + std::to_string(row) + ": expected 3 columns");
    path = trim(path);
    cls = trim(cls);
    patient = trim(patient);
    int class_id;
    try {
      size_t pos;
      class_id = std::stoi(cls, &pos);
      if (pos != cls.size()) throw std::invalid_argument("");
    } catch (...) {
      throw std::runtime_error("manifest row " + std::to_string(row) + ": unknown class '" + cls +
                               "' (integer class ids expected)");
    }
    if (class_id < 0)
      throw std::runtime_error("manifest row " + std::to_string(row) + ": negative class id");
    std::string full = path;
    if (!path.empty() && path[0] != '/') full = dir + path;
    std::ifstream probe(full);
    if (!probe)
      throw std::runtime_error("manifest row " + std::to_string(row) + ": missing file " + full);
    probe.close();
    Tensor<float> img;
    try {
      img = load_image(full, image_size);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest row " + std::to_string(row) + ": " + e.what());
    }
    ds.records.push_back(SampleRecord{full, class_id, patient});
    ds.images.push_back(std::move(img));
    ds.num_classes = std::max(ds.num_classes, class_id + 1);
  }
  return ds;
}

void write_manifest(const std::string& manifest_path, const std::vector<SampleRecord>& records) {
  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot write manifest: " + manifest_path);
  out << "path,class,patient_id\n";
  for (const auto& r : records)
    out << r.image_path << "," << r.class_id << "," << r.patient_id << "\n";
}

DatasetSplit split_patient_level(const std::vector<SampleRecord>& records,
                                 const SplitRatios& ratios, std::uint64_t seed) {
  double rsum = ratios.train + ratios.val + ratios.test;
  if (std::abs(rsum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
    throw std::invalid_argument("split ratios must be positive");

  // group record indices by patient
  std::map<std::string, std::vector<int>> patients;
  for (size_t i = 0; i < records.size(); ++i)
    patients[records[i].patient_id].push_back((int)i);
  if (patients.size() < 3)
    throw std::invalid_argument("need at least 3 distinct patients, have " +
                                std::to_string(patients.size()));

  std::vector<const std::vector<int>*> order;
  for (const auto& [id, idx] : patients) order.push_back(&idx);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());

  // greedy assignment to the split with the largest relative record deficit
  double total = (double)records.size();
  double target[3] = {ratios.train * total, ratios.val * total, ratios.test * total};
  double count[3] = {0, 0, 0};
  DatasetSplit split;
  split.ratios = ratios;
  split.seed = seed;
  std::vector<int>* out[3] = {&split.train, &split.val, &split.test};
  for (const auto* p : order) {
    int best = 0;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      double deficit = (target[s] - count[s]) / target[s];
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = s;
      }
    }
    for (int i : *p) out[best]->push_back(i);
    count[best] += (double)p->size();
  }
  return split;
}

ConditionalBatch sample_conditional_batch(const Dataset& data, const std::vector<int>& split,
                                          int class_id, int m, Rng& rng) {
  std::vector<int> pool;
  for (int i : split)
    if (data.records[i].class_id == class_id) pool.push_back(i);
  if (pool.size() < 2)
    throw std::runtime_error("class " + std::to_string(class_id) +
                             " has fewer than 2 samples in the split");
  ConditionalBatch batch;
  batch.class_id = class_id;
  for (int k = 0; k < m; ++k) {
    long a = rng.uniform_int((long)pool.size());
    long b = rng.uniform_int((long)pool.size() - 1);
    if (b >= a) ++b;  // distinct indices, uniform over ordered pairs
    batch.i_idx.push_back(pool[a]);
    batch.j_idx.push_back(pool[b]);
  }
  return batch;
}

Tensor<float> stack_images(const Dataset& data, const std::vector<int>& indices) {
  std::vector<Tensor<float>> imgs;
  imgs.reserve(indices.size());
  for (int i : indices) imgs.push_back(data.images[i]);
  return stack_images(imgs);
}

Tensor<float> stack_images(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  Shape s = images[0].shape;
  Shape out = {(int)images.size(), s[0], s[1], s[2]};
  Tensor<float> t(out);
  long per = numel(s);
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape != s) throw std::invalid_argument("stack_images: shape mismatch");
    std::copy(images[i].data.begin(), images[i].data.end(), t.data.begin() + (long)i * per);
  }
  return t;
}

// --- synthetic shapes ---

namespace {

// signed membership of a pixel in the class shape; 1 inside, 0 outside
double shape_mask(int class_id, double dx, double dy, double r) {
  double ax = std::abs(dx), ay = std::abs(dy);
  switch (class_id % 10) {
    case 0:  // disc
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return ax <= r * 0.95 && ay <= r * 0.95;
    case 2:  // cross
      return (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r);
    case 3: {  // ring
      double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.55 * 0.55 * r * r;
    }
    case 4:  // triangle (upward)
      return dy >= -r && dy <= r && ax <= (dy + r) * 0.5;
    case 5:  // diamond
      return ax + ay <= r * 1.1;
    case 6:  // horizontal bar
      return ax <= r && ay <= 0.35 * r;
    case 7:  // vertical bar
      return ay <= r && ax <= 0.35 * r;
    case 8:  // X
      return (std::abs(dx - dy) <= 0.45 * r || std::abs(dx + dy) <= 0.45 * r) && ax <= r &&
             ay <= r;
    case 9:  // checker quad
      return ax <= r * 0.9 && ay <= r * 0.9 && (dx * dy > 0);
  }
  return 0;
}

constexpr double kBackground = 0.15;

// per-class foreground tint; classes differ in shape AND color so class
// identity is visible both globally and in any local window (the analog of
// modality/stain intensity differences in the real task)
constexpr double kClassColor[10][3] = {
    {0.85, 0.35, 0.25}, {0.35, 0.45, 0.85}, {0.35, 0.80, 0.35}, {0.85, 0.75, 0.25},
    {0.75, 0.35, 0.80}, {0.35, 0.80, 0.80}, {0.85, 0.55, 0.25}, {0.55, 0.35, 0.85},
    {0.60, 0.80, 0.30}, {0.80, 0.40, 0.55}};

}  // namespace

Tensor<float> render_shape(int class_id, double cx, double cy, double radius, int image_size) {
  Tensor<float> t(Shape{image_size, image_size, 3});
  const double* fg = kClassColor[class_id % 10];
  // 4x4 supersampling: sub-pixel positions matter to the template oracle
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      double cover = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx)
          cover += shape_mask(class_id, x + (sx + 0.5) / 4.0 - 0.5 - cx,
                              y + (sy + 0.5) / 4.0 - 0.5 - cy, radius);
      for (int c = 0; c < 3; ++c)
        t.data[((long)y * image_size + x) * 3 + c] =
            (float)(kBackground + (fg[c] - kBackground) * cover / 16.0);
    }
  return t;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.num_classes > 10)
    throw std::invalid_argument("synthetic num_classes must be in [2,10]");
  Rng rng(spec.seed);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.image_size = spec.image_size;
  int n = 0;
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.n_per_class; ++i) {
      double cx = spec.image_size / 2.0 + rng.uniform(-spec.image_size / 8.0, spec.image_size / 8.0);
      double cy = spec.image_size / 2.0 + rng.uniform(-spec.image_size / 8.0, spec.image_size / 8.0);
      double r = rng.uniform(0.45, 0.7) * spec.image_size / 4.0 * 1.4;
      Tensor<float> img = render_shape(c, cx, cy, r, spec.image_size);
      if (spec.noise_sigma > 0) {
        for (int y = 0; y < spec.image_size; ++y)
          for (int x = 0; x < spec.image_size; ++x) {
            float noise = (float)(rng.normal() * spec.noise_sigma);  // shared across channels
            for (int ch = 0; ch < 3; ++ch) {
              float& v = img.data[((long)y * spec.image_size + x) * 3 + ch];
              v = std::min(1.0f, std::max(0.0f, v + noise));
            }
          }
      }
      char patient[32], path[64];
      std::snprintf(patient, sizeof patient, "p%06d", n);
      std::snprintf(path, sizeof path, "%d_%05d.png", c, i);
      ds.records.push_back(SampleRecord{path, c, patient});
      ds.images.push_back(std::move(img));
      ++n;
    }
  return ds;
}

TemplateOracle::TemplateOracle(int num_classes, int image_size)
    : num_classes_(num_classes), image_size_(image_size) {
  double mid = image_size / 2.0;
  std::vector<double> offsets;
  for (int k = -4; k <= 4; ++k) offsets.push_back(k * image_size / 32.0);
  std::vector<double> fracs = {0.45, 0.4875, 0.525, 0.5625, 0.6, 0.6375, 0.675, 0.7};
  banks_.resize(num_classes);
  for (int c = 0; c < num_classes; ++c)
    for (double oy : offsets)
      for (double ox : offsets)
        for (double f : fracs) {
          double r = f * image_size / 4.0 * 1.4;
          Tensor<float> t = render_shape(c, mid + ox, mid + oy, r, image_size);
          // keep first channel, zero-mean, unit-norm
          Tensor<float> z(Shape{image_size, image_size});
          double mean = 0;
          for (int i = 0; i < image_size * image_size; ++i) mean += t.data[(long)i * 3];
          mean /= image_size * image_size;
          double norm = 0;
          for (int i = 0; i < image_size * image_size; ++i) {
            z.data[i] = (float)(t.data[(long)i * 3] - mean);
            norm += (double)z.data[i] * z.data[i];
          }
          norm = std::sqrt(std::max(norm, 1e-12));
          for (auto& v : z.data) v = (float)(v / norm);
          banks_[c].push_back(std::move(z));
        }
}

int TemplateOracle::classify(const Tensor<float>& image) const {
  int hw = image_size_ * image_size_;
  std::vector<float> z(hw);
  double mean = 0;
  for (int i = 0; i < hw; ++i) mean += image.data[(long)i * 3];
  mean /= hw;
  double norm = 0;
  for (int i = 0; i < hw; ++i) {
    z[i] = (float)(image.data[(long)i * 3] - mean);
    norm += (double)z[i] * z[i];
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  int best_class = 0;
  double best_score = -1e300;
  for (int c = 0; c < num_classes_; ++c)
    for (const auto& tmpl : banks_[c]) {
      double dot = 0;
      for (int i = 0; i < hw; ++i) dot += (double)z[i] * tmpl.data[i];
      double score = dot / norm;
      if (score > best_score) {
        best_score = score;
        best_class = c;
      }
    }
  return best_class;
}

double TemplateOracle::accuracy(const Dataset& data, const std::vector<int>& indices) const {
  if (indices.empty()) throw std::invalid_argument("oracle accuracy: empty index list");
  long correct = 0;
  for (int i : indices)
    if (classify(data.images[i]) == data.records[i].class_id) ++correct;
  return (double)correct / (double)indices.size();
}

}  // namespace gau
