#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "gaunet/dataset.hpp"

using namespace gau;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("gau_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<SampleRecord> uniform_patients(int n_patients, int per_patient) {
  std::vector<SampleRecord> recs;
  for (int p = 0; p < n_patients; ++p)
    for (int i = 0; i < per_patient; ++i)
      recs.push_back({"img" + std::to_string(p) + "_" + std::to_string(i) + ".png", 0,
                      "pat" + std::to_string(p)});
  return recs;
}

}  // namespace

// --- synthetic data ---

TEST_CASE("synthetic dataset is bit-identical for a fixed seed") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.n_per_class = 5;
  spec.image_size = 32;
  spec.seed = 42;
  Dataset a = make_synthetic_dataset(spec);
  Dataset b = make_synthetic_dataset(spec);
  REQUIRE(a.images.size() == 15);
  for (size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].data == b.images[i].data);
    CHECK(a.records[i].patient_id == b.records[i].patient_id);
  }
}

TEST_CASE("synthetic patient ids are unique and pixels stay in range") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.n_per_class = 10;
  spec.image_size = 32;
  spec.seed = 7;
  Dataset ds = make_synthetic_dataset(spec);
  std::set<std::string> ids;
  for (const auto& r : ds.records) ids.insert(r.patient_id);
  CHECK(ids.size() == ds.records.size());
  for (const auto& img : ds.images)
    for (float v : img.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
}

TEST_CASE("template oracle is perfect on noiseless renders") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.n_per_class = 25;
  spec.image_size = 32;
  spec.noise_sigma = 0.0;
  spec.seed = 3;
  Dataset ds = make_synthetic_dataset(spec);
  TemplateOracle oracle(spec.num_classes, spec.image_size);
  std::vector<int> all(ds.records.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = (int)i;
  CHECK(oracle.accuracy(ds, all) == doctest::Approx(1.0));
}

TEST_CASE("2 classes x 500 at 64x64 with noise 0.05: 1000 records, oracle >= 0.99") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 500;
  spec.image_size = 64;
  spec.noise_sigma = 0.05;
  spec.seed = 12;
  Dataset ds = make_synthetic_dataset(spec);
  CHECK(ds.records.size() == 1000);
  TemplateOracle oracle(2, 64);
  std::vector<int> all(1000);
  for (int i = 0; i < 1000; ++i) all[i] = i;
  double acc = oracle.accuracy(ds, all);
  INFO("oracle accuracy = ", acc);
  CHECK(acc >= 0.99);
}

TEST_CASE("synthetic class count bounds are enforced") {
  SyntheticSpec spec;
  spec.num_classes = 1;
  CHECK_THROWS_AS((void)make_synthetic_dataset(spec), std::invalid_argument);
  spec.num_classes = 11;
  CHECK_THROWS_AS((void)make_synthetic_dataset(spec), std::invalid_argument);
}

// --- splitting ---

TEST_CASE("ten equal patients split 7/1/2 at patient granularity") {
  auto recs = uniform_patients(10, 3);
  DatasetSplit s = split_patient_level(recs, SplitRatios{}, 5);
  auto patients_of = [&](const std::vector<int>& idx) {
    std::set<std::string> p;
    for (int i : idx) p.insert(recs[i].patient_id);
    return p;
  };
  CHECK(patients_of(s.train).size() == 7);
  CHECK(patients_of(s.val).size() == 1);
  CHECK(patients_of(s.test).size() == 2);
}

TEST_CASE("100000 single-record patients split exactly 70000/10000/20000") {
  auto recs = uniform_patients(100000, 1);
  DatasetSplit s = split_patient_level(recs, SplitRatios{}, 9);
  CHECK(s.train.size() == 70000);
  CHECK(s.val.size() == 10000);
  CHECK(s.test.size() == 20000);
}

TEST_CASE("splits are deterministic per seed and differ across seeds") {
  auto recs = uniform_patients(50, 4);
  DatasetSplit a = split_patient_level(recs, SplitRatios{}, 21);
  DatasetSplit b = split_patient_level(recs, SplitRatios{}, 21);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  DatasetSplit c = split_patient_level(recs, SplitRatios{}, 22);
  CHECK(a.train != c.train);
}

TEST_CASE("split property sweep: patient disjointness, exact cover, proportion bound") {
  Rng meta(99);
  for (int trial = 0; trial < 10; ++trial) {
    int n_patients = 3 + (int)meta.uniform_int(40);
    std::vector<SampleRecord> recs;
    int max_per = 1;
    for (int p = 0; p < n_patients; ++p) {
      int per = 1 + (int)meta.uniform_int(8);
      max_per = std::max(max_per, per);
      for (int i = 0; i < per; ++i)
        recs.push_back({"x.png", 0, "p" + std::to_string(p)});
    }
    DatasetSplit s = split_patient_level(recs, SplitRatios{}, (std::uint64_t)trial);

    auto patients_of = [&](const std::vector<int>& idx) {
      std::set<std::string> out;
      for (int i : idx) out.insert(recs[i].patient_id);
      return out;
    };
    std::set<std::string> tr = patients_of(s.train), va = patients_of(s.val),
                          te = patients_of(s.test);
    for (const auto& p : tr) {
      CHECK(va.count(p) == 0);
      CHECK(te.count(p) == 0);
    }
    for (const auto& p : va) CHECK(te.count(p) == 0);

    std::vector<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
      all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    CHECK(all.size() == recs.size());
    for (size_t i = 0; i < all.size(); ++i) CHECK(all[i] == (int)i);

    double total = (double)recs.size();
    double bound = (double)max_per / total + 1e-12;
    double targets[3] = {0.7, 0.1, 0.2};
    const std::vector<int>* parts[3] = {&s.train, &s.val, &s.test};
    for (int k = 0; k < 3; ++k)
      CHECK(std::abs((double)parts[k]->size() / total - targets[k]) <= bound);
  }
}

TEST_CASE("split rejects bad ratios and too few patients") {
  auto recs = uniform_patients(10, 1);
  CHECK_THROWS_AS((void)split_patient_level(recs, SplitRatios{0.5, 0.2, 0.2}, 0),
                  std::invalid_argument);
  auto two = uniform_patients(2, 5);
  CHECK_THROWS_AS((void)split_patient_level(two, SplitRatios{}, 0), std::invalid_argument);
}

// --- conditional pair sampling ---

TEST_CASE("a class of exactly two yields the only unordered pair") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 2;
  spec.image_size = 16;
  spec.seed = 1;
  Dataset ds = make_synthetic_dataset(spec);
  std::vector<int> split = {0, 1, 2, 3};
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    ConditionalBatch b = sample_conditional_batch(ds, split, 0, 4, rng);
    for (size_t k = 0; k < b.i_idx.size(); ++k) {
      CHECK(b.i_idx[k] != b.j_idx[k]);
      CHECK((b.i_idx[k] == 0 || b.i_idx[k] == 1));
      CHECK((b.j_idx[k] == 0 || b.j_idx[k] == 1));
      CHECK(ds.records[b.i_idx[k]].class_id == 0);
    }
  }
}

TEST_CASE("a class with fewer than two samples is an error") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 2;
  spec.image_size = 16;
  spec.seed = 1;
  Dataset ds = make_synthetic_dataset(spec);
  std::vector<int> split = {0, 2, 3};  // class 0 has a single member here
  Rng rng(4);
  CHECK_THROWS_AS((void)sample_conditional_batch(ds, split, 0, 4, rng), std::runtime_error);
}

TEST_CASE("x_j slot draws are uniform over a 10-sample class") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 10;
  spec.image_size = 16;
  spec.seed = 2;
  Dataset ds = make_synthetic_dataset(spec);
  std::vector<int> split(20);
  for (int i = 0; i < 20; ++i) split[i] = i;
  Rng rng(8);
  std::map<int, long> freq;
  const long draws = 10000;
  ConditionalBatch b = sample_conditional_batch(ds, split, 0, (int)draws, rng);
  for (size_t k = 0; k < b.j_idx.size(); ++k) {
    CHECK(b.i_idx[k] != b.j_idx[k]);
    ++freq[b.j_idx[k]];
  }
  CHECK(freq.size() == 10);
  for (const auto& [idx, count] : freq)
    CHECK(std::abs((double)count / draws - 0.1) <= 0.02);
}

// --- image and manifest I/O ---

TEST_CASE("png round trip preserves pixels to quantization accuracy") {
  fs::path dir = scratch_dir("roundtrip");
  Rng rng(6);
  Tensor<float> img(Shape{16, 16, 3});
  for (float& v : img.data) v = (float)rng.uniform();
  std::string path = (dir / "a.png").string();
  save_image_png(path, img);
  Tensor<float> back = load_image(path, 16);
  REQUIRE(back.shape == img.shape);
  for (long i = 0; i < img.size(); ++i)
    CHECK(std::abs(back[i] - img[i]) <= 0.51f / 255.0f);
}

TEST_CASE("loading resizes to the requested extent") {
  fs::path dir = scratch_dir("resize");
  Tensor<float> img = render_shape(0, 16, 16, 10, 32);
  std::string path = (dir / "b.png").string();
  save_image_png(path, img);
  Tensor<float> small = load_image(path, 16);
  CHECK(small.shape == Shape{16, 16, 3});
  for (float v : small.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("grayscale sources are replicated into three identical channels") {
  fs::path dir = scratch_dir("gray");
  cv::Mat gray(8, 8, CV_8UC1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) gray.at<unsigned char>(y, x) = (unsigned char)(y * 8 + x * 3);
  std::string path = (dir / "g.png").string();
  REQUIRE(cv::imwrite(path, gray));
  Tensor<float> img = load_image(path, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      float r = img.at4(0, y, x, 0) * 0 + img.data[((long)y * 8 + x) * 3 + 0];
      CHECK(img.data[((long)y * 8 + x) * 3 + 1] == r);
      CHECK(img.data[((long)y * 8 + x) * 3 + 2] == r);
    }
}

TEST_CASE("manifest round trip: write, load, verify records") {
  fs::path dir = scratch_dir("manifest");
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 5;
  spec.image_size = 16;
  spec.seed = 9;
  Dataset ds = make_synthetic_dataset(spec);
  std::vector<SampleRecord> recs;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    std::string name = "s" + std::to_string(i) + ".png";
    save_image_png((dir / name).string(), ds.images[i]);
    recs.push_back({name, ds.records[i].class_id, ds.records[i].patient_id});
  }
  std::string mpath = (dir / "manifest.csv").string();
  write_manifest(mpath, recs);

  Dataset back = load_manifest(mpath, 16);
  REQUIRE(back.records.size() == 10);
  CHECK(back.num_classes == 2);
  for (size_t i = 0; i < back.records.size(); ++i) {
    CHECK(back.records[i].class_id == ds.records[i].class_id);
    CHECK(back.records[i].patient_id == ds.records[i].patient_id);
    for (long j = 0; j < back.images[i].size(); ++j) {
      CHECK(back.images[i][j] >= 0.0f);
      CHECK(back.images[i][j] <= 1.0f);
    }
  }
}

TEST_CASE("manifest errors name the offending row") {
  fs::path dir = scratch_dir("badmanifest");
  Tensor<float> img = render_shape(1, 8, 8, 5, 16);
  save_image_png((dir / "ok.png").string(), img);

  std::string mpath = (dir / "m.csv").string();
  {
    std::ofstream out(mpath);
    out << "path,class,patient_id\nok.png,0,p0\nmissing.png,1,p1\n";
  }
  CHECK_THROWS_WITH_AS((void)load_manifest(mpath, 16),
                       doctest::Contains("row 3"), std::runtime_error);

  {
    std::ofstream out(mpath);
    out << "path,class,patient_id\nok.png,not_a_class,p0\n";
  }
  CHECK_THROWS_WITH_AS((void)load_manifest(mpath, 16),
                       doctest::Contains("row 2"), std::runtime_error);

  {
    std::ofstream out(mpath);
    out << "wrong,header\n";
  }
  CHECK_THROWS_AS((void)load_manifest(mpath, 16), std::runtime_error);
}

TEST_CASE("stack_images packs dataset indices into an NHWC batch") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.n_per_class = 3;
  spec.image_size = 16;
  spec.seed = 5;
  Dataset ds = make_synthetic_dataset(spec);
  Tensor<float> batch = stack_images(ds, {1, 4});
  CHECK(batch.shape == Shape{2, 16, 16, 3});
  long per = 16 * 16 * 3;
  for (long i = 0; i < per; ++i) {
    CHECK(batch[i] == ds.images[1][i]);
    CHECK(batch[per + i] == ds.images[4][i]);
  }
  CHECK_THROWS_AS((void)stack_images(std::vector<Tensor<float>>{}), std::invalid_argument);
}
