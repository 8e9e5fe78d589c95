// gaunet: batch entry points for the augmentation pipeline.
// synth-data / train / generate / eval / classify; see --help per command.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "gaunet/config.hpp"
#include "gaunet/evaluation.hpp"
#include "gaunet/metrics_report.hpp"

namespace fs = std::filesystem;
using namespace gau;

namespace {

// GAU_SEED fills in any seed the command line left at its default
void env_seed_fallback(const CLI::Option* opt, std::uint64_t& seed) {
  const char* env = std::getenv("GAU_SEED");
  if (opt->count() == 0 && env) seed = std::stoull(env);
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016zx", std::hash<std::string>{}(serialize_config(cfg)));
  return buf;
}

std::string timestamp_utc() {
  char buf[32];
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Dataset load_config_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data.manifest.empty()) return load_manifest(cfg.data.manifest, cfg.data.image_size);
  SyntheticSpec spec = cfg.data.synthetic;
  spec.image_size = cfg.data.image_size;
  return make_synthetic_dataset(spec);
}

// A directory is either manifest-backed or a flat pile of `<class>_*.png`.
Dataset load_dir_dataset(const std::string& dir, int image_size) {
  fs::path manifest = fs::path(dir) / "manifest.csv";
  if (fs::exists(manifest)) return load_manifest(manifest.string(), image_size);
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  if (names.empty()) throw std::runtime_error("no .png images in " + dir);
  std::sort(names.begin(), names.end());

  Dataset ds;
  ds.image_size = image_size;
  for (const std::string& name : names) {
    size_t us = name.find('_');
    int cls = -1;
    try {
      cls = std::stoi(name.substr(0, us));
    } catch (const std::exception&) {
    }
    if (us == std::string::npos || cls < 0)
      throw std::runtime_error("cannot read class from filename (want <class>_*.png): " + name);
    ds.records.push_back({name, cls, name});
    ds.images.push_back(load_image((fs::path(dir) / name).string(), image_size));
    ds.num_classes = std::max(ds.num_classes, cls + 1);
  }
  return ds;
}

void write_loss_log(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log: " + path);
  char line[128];
  for (const LossRecord& r : history) {
    std::snprintf(line, sizeof line, "%ld %.17g %.17g %.17g\n", r.step, r.critic_loss, r.gp,
                  r.gen_loss);
    out << line;
  }
}

// generate `count` images of one class, conditioning on random train-pool
// members; chunked to bound peak memory
std::vector<Tensor<float>> generate_images(TrainState<float>& st, const Dataset& data,
                                           const std::vector<int>& pool, int class_id, int count,
                                           Rng& rng) {
  std::vector<int> of_class;
  for (int i : pool)
    if (data.records[i].class_id == class_id) of_class.push_back(i);
  if (of_class.empty())
    throw std::runtime_error("class " + std::to_string(class_id) + " has no conditioning images");

  std::vector<Tensor<float>> out;
  for (int done = 0; done < count;) {
    int chunk = std::min(16, count - done);
    std::vector<int> cond;
    for (int i = 0; i < chunk; ++i) cond.push_back(of_class[rng.uniform_int(of_class.size())]);
    Tensor<float> batch = generate_batch(st, stack_images(data, cond), rng);
    int h = batch.shape[1], w = batch.shape[2];
    for (int i = 0; i < chunk; ++i) {
      Tensor<float> img(Shape{h, w, 3});
      std::copy_n(batch.data.begin() + (long)i * h * w * 3, (long)h * w * 3, img.data.begin());
      out.push_back(std::move(img));
    }
    done += chunk;
  }
  return out;
}

void add_arm(MetricsReport& r, const std::string& prefix, const StudyArm& arm) {
  auto put = [&](const std::string& name, const Interval& iv) {
    r.set(prefix + "." + name, iv.value);
    r.set(prefix + "." + name + "_ci_lo", iv.lo);
    r.set(prefix + "." + name + "_ci_hi", iv.hi);
  };
  put("accuracy", arm.accuracy);
  put("precision", arm.precision);
  put("recall", arm.recall);
  put("auc", arm.auc);
}

// --- commands ---

int cmd_synth_data(int classes, int per_class, int size, double noise, std::uint64_t seed,
                   const std::string& out_dir) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.n_per_class = per_class;
  spec.image_size = size;
  spec.noise_sigma = noise;
  spec.seed = seed;
  Dataset ds = make_synthetic_dataset(spec);

  fs::create_directories(out_dir);
  for (size_t i = 0; i < ds.records.size(); ++i)
    save_image_png((fs::path(out_dir) / ds.records[i].image_path).string(), ds.images[i]);
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), ds.records);
  std::cout << "wrote " << ds.records.size() << " images + manifest to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              const CLI::Option* seed_opt, std::uint64_t seed_override) {
  ExperimentConfig cfg = read_config(config_path);
  if (seed_opt->count() > 0)
    cfg.training.seed = seed_override;
  else if (const char* env = std::getenv("GAU_SEED"))
    cfg.training.seed = std::stoull(env);
  cfg.validate();

  Dataset data = load_config_dataset(cfg);
  DatasetSplit split = split_patient_level(data.records, cfg.data.ratios, cfg.data.split_seed);

  TrainState<float> st;
  if (!resume_path.empty()) {
    st = load_checkpoint(resume_path);
    st.config.total_steps = cfg.training.total_steps;  // allow extending a run
  } else {
    st = init_train_state<float>(cfg.training, cfg.generator, cfg.critic, data.num_classes);
  }

  fs::create_directories(cfg.output_dir);
  write_config((fs::path(cfg.output_dir) / "resolved_config.ini").string(), cfg);
  std::string ckpt_path = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  std::string log_path = (fs::path(cfg.output_dir) / "loss_log.txt").string();

  train<float>(st, data, split.train, [&](const TrainState<float>& s) {
    const LossRecord& r = s.history.back();
    std::printf("%ld %.6g %.6g %.6g\n", r.step, r.critic_loss, r.gp, r.gen_loss);
    if (s.config.checkpoint_every > 0 && s.step % s.config.checkpoint_every == 0 &&
        s.step < s.config.total_steps) {
      save_checkpoint(s, ckpt_path);
      write_loss_log(log_path, s.history);
    }
  });
  save_checkpoint(st, ckpt_path);
  write_loss_log(log_path, st.history);
  std::cout << "checkpoint: " << ckpt_path << "\nloss log: " << log_path << "\n";
  return 0;
}

int cmd_generate(const std::string& config_path, const std::string& ckpt_path, int class_id,
                 int count, std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig cfg = read_config(config_path);
  TrainState<float> st = load_checkpoint(ckpt_path);
  if (class_id < 0 || class_id >= st.num_classes)
    throw std::runtime_error("class " + std::to_string(class_id) +
                             " outside checkpoint's class set [0, " +
                             std::to_string(st.num_classes) + ")");

  Dataset data = load_config_dataset(cfg);
  DatasetSplit split = split_patient_level(data.records, cfg.data.ratios, cfg.data.split_seed);
  Rng rng(seed);
  std::vector<Tensor<float>> imgs = generate_images(st, data, split.train, class_id, count, rng);

  fs::create_directories(out_dir);
  char name[64];
  for (size_t i = 0; i < imgs.size(); ++i) {
    std::snprintf(name, sizeof name, "%d_%05zu.png", class_id, i);
    save_image_png((fs::path(out_dir) / name).string(), imgs[i]);
  }
  std::cout << "wrote " << imgs.size() << " images to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& real_dir,
             const std::string& fake_dir, const std::string& ckpt_path, std::uint64_t seed,
             const std::string& out_override) {
  ExperimentConfig cfg = read_config(config_path);
  std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;

  Dataset real = load_dir_dataset(real_dir, cfg.data.image_size);
  ClassifierConfig ccfg = cfg.evaluation.classifier;
  ccfg.input_size = cfg.data.image_size;
  ccfg.num_classes = real.num_classes;

  // one small CNN, trained on real only: embedder for FID and oracle for
  // conditional accuracy
  std::vector<int> all_real(real.records.size());
  for (size_t i = 0; i < all_real.size(); ++i) all_real[i] = (int)i;
  ParameterStore<float> oracle = train_classifier(real, all_real, ccfg, seed);

  std::vector<Tensor<float>> fake_imgs;
  std::vector<int> fake_labels;
  std::string fake_source;
  if (!fake_dir.empty()) {
    Dataset fake = load_dir_dataset(fake_dir, cfg.data.image_size);
    if (fake.num_classes > real.num_classes)
      throw std::runtime_error("fake set has classes outside the real label set");
    fake_imgs = fake.images;
    for (const SampleRecord& r : fake.records) fake_labels.push_back(r.class_id);
    fake_source = fake_dir;
  } else {
    TrainState<float> st = load_checkpoint(ckpt_path);
    Rng rng(seed);
    for (int c = 0; c < real.num_classes; ++c) {
      std::vector<Tensor<float>> gen = generate_images(st, real, all_real, c,
                                                       cfg.evaluation.n_generated_per_class, rng);
      for (auto& g : gen) {
        fake_imgs.push_back(std::move(g));
        fake_labels.push_back(c);
      }
    }
    fake_source = ckpt_path + " (step " + std::to_string(st.step) + ")";
  }

  Tensor<float> real_batch = stack_images(real, all_real);
  Tensor<float> fake_batch = stack_images(fake_imgs);
  FeatureMoments mr = feature_moments(embed(real_batch, oracle, ccfg));
  FeatureMoments mf = feature_moments(embed(fake_batch, oracle, ccfg));
  std::vector<double> per_class;
  double cond_acc = conditional_accuracy(fake_batch, fake_labels, oracle, ccfg, &per_class);

  MetricsReport rep;
  rep.set("fid", fid(mr, mf));
  rep.set("conditional_accuracy", cond_acc);  // the paper's PA, oracle-agreement stand-in
  rep.set("pa", cond_acc);
  for (size_t c = 0; c < per_class.size(); ++c)
    rep.set("conditional_accuracy_class_" + std::to_string(c), per_class[c]);
  rep.set("n_real", (long)real.records.size());
  rep.set("n_fake", (long)fake_imgs.size());
  rep.set("fake_source", fake_source);
  rep.set("seed", (long)seed);
  rep.set("config_hash", config_hash(cfg));
  rep.generated_at = timestamp_utc();

  fs::create_directories(out_dir);
  write_report((fs::path(out_dir) / "eval_report.txt").string(), rep);
  std::vector<Tensor<float>> grid(fake_imgs.begin(),
                                  fake_imgs.begin() + std::min<size_t>(64, fake_imgs.size()));
  write_sample_grid((fs::path(out_dir) / "eval_samples.png").string(), grid);
  std::cout << rep.serialize();
  return 0;
}

int cmd_classify(const std::string& config_path, const std::string& ckpt_path, int n_generated,
                 std::uint64_t seed, const std::string& out_override) {
  ExperimentConfig cfg = read_config(config_path);
  std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;
  if (n_generated < 0) n_generated = cfg.evaluation.n_generated_per_class;

  Dataset data = load_config_dataset(cfg);
  DatasetSplit split = split_patient_level(data.records, cfg.data.ratios, cfg.data.split_seed);
  TrainState<float> st = load_checkpoint(ckpt_path);

  ClassifierConfig ccfg = cfg.evaluation.classifier;
  ccfg.input_size = cfg.data.image_size;
  ccfg.num_classes = data.num_classes;

  AugmentationStudy study =
      augmentation_study(data, split, st, ccfg, n_generated, seed, cfg.evaluation.bootstrap_reps);

  MetricsReport rep;
  add_arm(rep, "without_aug", study.without_aug);
  add_arm(rep, "with_aug", study.with_aug);
  rep.set("n_generated_per_class", (long)study.n_generated_per_class);
  rep.set("averaging", std::string("macro one-vs-rest"));
  rep.set("ci_method", std::string("percentile bootstrap over test samples"));
  rep.set("checkpoint_step", (long)st.step);
  rep.set("seed", (long)seed);
  rep.set("config_hash", config_hash(cfg));
  rep.generated_at = timestamp_utc();

  fs::create_directories(out_dir);
  write_report((fs::path(out_dir) / "classify_report.txt").string(), rep);

  // small per-class grid of what the checkpoint generates
  Rng grid_rng(seed);
  std::vector<Tensor<float>> grid;
  int per = std::max(1, std::min(8, 64 / data.num_classes));
  for (int c = 0; c < data.num_classes; ++c) {
    std::vector<Tensor<float>> gen = generate_images(st, data, split.train, c, per, grid_rng);
    for (auto& g : gen) grid.push_back(std::move(g));
  }
  write_sample_grid((fs::path(out_dir) / "classify_samples.png").string(), grid, per);
  std::cout << rep.serialize();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional image augmentation: adversarial U-Net training & evaluation"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "render a synthetic labeled dataset");
  int classes = 2, per_class = 500, size = 64;
  double noise = 0.05;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--classes", classes, "number of shape classes")->check(CLI::Range(2, 10));
  synth->add_option("--per-class", per_class, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "image edge length")->check(CLI::PositiveNumber);
  synth->add_option("--noise", noise, "gaussian pixel noise sigma");
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "render seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "run the adversarial training loop");
  std::string train_config, resume_path;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--config", train_config, "experiment config file")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to continue from");
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "override training seed");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "sample images from a checkpoint");
  std::string gen_config, gen_ckpt, gen_out;
  int gen_class = 0, gen_count = 64;
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--config", gen_config, "experiment config file")->required();
  gen_cmd->add_option("--checkpoint", gen_ckpt, "trained checkpoint")->required();
  gen_cmd->add_option("--class-id", gen_class, "conditioning class")->required();
  gen_cmd->add_option("--count", gen_count, "images to generate")->check(CLI::PositiveNumber);
  auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "sampling seed");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "FID + conditional accuracy report");
  std::string eval_config, eval_real, eval_fake, eval_ckpt, eval_out;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--config", eval_config, "experiment config file")->required();
  eval_cmd->add_option("--real", eval_real, "directory of real images")->required();
  auto* fake_opt = eval_cmd->add_option("--fake", eval_fake, "directory of generated images");
  auto* ckpt_opt =
      eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to generate the fake set from");
  fake_opt->excludes(ckpt_opt);
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "embedder/sampling seed");
  eval_cmd->add_option("--out", eval_out, "report directory (default: config output dir)");

  // classify
  auto* cls_cmd = app.add_subcommand("classify", "with/without-augmentation study");
  std::string cls_config, cls_ckpt, cls_out;
  int cls_n_generated = -1;
  std::uint64_t cls_seed = 0;
  cls_cmd->add_option("--config", cls_config, "experiment config file")->required();
  cls_cmd->add_option("--checkpoint", cls_ckpt, "trained checkpoint")->required();
  cls_cmd->add_option("--n-generated", cls_n_generated,
                      "generated images per class (default from config)");
  auto* cls_seed_opt = cls_cmd->add_option("--seed", cls_seed, "study seed");
  cls_cmd->add_option("--out", cls_out, "report directory (default: config output dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      env_seed_fallback(synth_seed_opt, synth_seed);
      return cmd_synth_data(classes, per_class, size, noise, synth_seed, synth_out);
    }
    if (*train_cmd) return cmd_train(train_config, resume_path, train_seed_opt, train_seed);
    if (*gen_cmd) {
      env_seed_fallback(gen_seed_opt, gen_seed);
      return cmd_generate(gen_config, gen_ckpt, gen_class, gen_count, gen_seed, gen_out);
    }
    if (*eval_cmd) {
      if (eval_fake.empty() && eval_ckpt.empty())
        throw std::runtime_error("eval needs --fake or --checkpoint");
      env_seed_fallback(eval_seed_opt, eval_seed);
      return cmd_eval(eval_config, eval_real, eval_fake, eval_ckpt, eval_seed, eval_out);
    }
    env_seed_fallback(cls_seed_opt, cls_seed);
    return cmd_classify(cls_config, cls_ckpt, cls_n_generated, cls_seed, cls_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
