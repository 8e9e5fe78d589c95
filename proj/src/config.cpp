#include "gaunet/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <variant>
#include <vector>

namespace gau {

namespace {

using Slot = std::variant<int*, double*, bool*, std::uint64_t*, std::string*, LossMode*>;

struct Field {
  std::string section, key;
  Slot slot;
};

// one table drives parsing, serialization and unknown-key rejection
std::vector<Field> field_table(ExperimentConfig& c) {
  std::vector<Field> f;
  auto add = [&](const char* s, const char* k, Slot slot) { f.push_back({s, k, slot}); };

  add("data", "manifest", &c.data.manifest);
  add("data", "image_size", &c.data.image_size);
  add("data", "classes", &c.data.synthetic.num_classes);
  add("data", "per_class", &c.data.synthetic.n_per_class);
  add("data", "noise_sigma", &c.data.synthetic.noise_sigma);
  add("data", "data_seed", &c.data.synthetic.seed);
  add("data", "split_seed", &c.data.split_seed);
  add("data", "train_ratio", &c.data.ratios.train);
  add("data", "val_ratio", &c.data.ratios.val);
  add("data", "test_ratio", &c.data.ratios.test);

  add("generator", "base_filters", &c.generator.base_filters);
  add("generator", "num_blocks", &c.generator.num_blocks);
  add("generator", "latent_dim", &c.generator.latent_dim);
  add("generator", "latent_channels", &c.generator.latent_channels);
  add("generator", "dropout_rate", &c.generator.dropout_rate);
  add("generator", "class_conditioning", &c.generator.class_conditioning);
  add("generator", "class_channels", &c.generator.class_channels);

  add("critic", "growth_rate", &c.critic.growth_rate);
  add("critic", "num_dense_blocks", &c.critic.num_dense_blocks);
  add("critic", "layers_per_block", &c.critic.layers_per_block);
  add("critic", "dropout_rate", &c.critic.dropout_rate);

  add("training", "lambda_gp", &c.training.lambda_gp);
  add("training", "alpha", &c.training.alpha);
  add("training", "beta1", &c.training.beta1);
  add("training", "beta2", &c.training.beta2);
  add("training", "batch_size", &c.training.batch_size);
  add("training", "n_critic", &c.training.n_critic);
  add("training", "total_steps", &c.training.total_steps);
  add("training", "seed", &c.training.seed);
  add("training", "loss_mode", &c.training.loss_mode);
  add("training", "checkpoint_every", &c.training.checkpoint_every);
  add("training", "r_max_final", &c.training.r_max_final);
  add("training", "d_max_final", &c.training.d_max_final);
  add("training", "warmup_frac", &c.training.warmup_frac);

  add("evaluation", "classifier_width", &c.evaluation.classifier.width);
  add("evaluation", "classifier_stages", &c.evaluation.classifier.num_stages);
  add("evaluation", "classifier_alpha", &c.evaluation.classifier.alpha);
  add("evaluation", "classifier_beta1", &c.evaluation.classifier.beta1);
  add("evaluation", "classifier_beta2", &c.evaluation.classifier.beta2);
  add("evaluation", "classifier_steps", &c.evaluation.classifier.train_steps);
  add("evaluation", "classifier_batch", &c.evaluation.classifier.batch_size);
  add("evaluation", "n_generated", &c.evaluation.n_generated_per_class);
  add("evaluation", "bootstrap_reps", &c.evaluation.bootstrap_reps);
  add("evaluation", "seed", &c.evaluation.seed);

  add("output", "dir", &c.output_dir);
  return f;
}

std::string format_value(const Slot& slot) {
  char buf[64];
  if (auto p = std::get_if<int*>(&slot)) return std::to_string(**p);
  if (auto p = std::get_if<std::uint64_t*>(&slot)) return std::to_string(**p);
  if (auto p = std::get_if<bool*>(&slot)) return **p ? "true" : "false";
  if (auto p = std::get_if<std::string*>(&slot)) return **p;
  if (auto p = std::get_if<LossMode*>(&slot)) return loss_mode_name(**p);
  std::snprintf(buf, sizeof buf, "%.17g", **std::get_if<double*>(&slot));
  return buf;
}

void assign_value(const Slot& slot, const std::string& raw, const std::string& where) {
  try {
    if (auto p = std::get_if<int*>(&slot)) {
      size_t pos;
      **p = std::stoi(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
    } else if (auto p = std::get_if<std::uint64_t*>(&slot)) {
      size_t pos;
      **p = std::stoull(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
    } else if (auto p = std::get_if<double*>(&slot)) {
      size_t pos;
      **p = std::stod(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument(raw);
    } else if (auto p = std::get_if<bool*>(&slot)) {
      if (raw == "true")
        **p = true;
      else if (raw == "false")
        **p = false;
      else
        throw std::invalid_argument(raw);
    } else if (auto p = std::get_if<LossMode*>(&slot)) {
      **p = parse_loss_mode(raw);
    } else {
      **std::get_if<std::string*>(&slot) = raw;
    }
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad value '" + raw + "' for " + where);
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  generator.validate();
  critic.validate();
  training.validate();
  if (generator.input_size != data.image_size || critic.input_size != data.image_size)
    throw std::invalid_argument("config: network input_size must equal data image_size");
  if (data.manifest.empty()) {
    if (data.synthetic.num_classes < 2 || data.synthetic.num_classes > 10)
      throw std::invalid_argument("config: classes must be in [2, 10]");
    if (data.synthetic.n_per_class < 1)
      throw std::invalid_argument("config: per_class must be positive");
  }
  if (evaluation.n_generated_per_class < 0)
    throw std::invalid_argument("config: n_generated must be >= 0");
  if (evaluation.bootstrap_reps < 1)
    throw std::invalid_argument("config: bootstrap_reps must be positive");
  if (output_dir.empty()) throw std::invalid_argument("config: output dir must be set");
}

std::string serialize_config(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  std::vector<Field> fields = field_table(copy);
  std::ostringstream os;
  std::string section;
  for (const Field& f : fields) {
    if (f.section != section) {
      if (!section.empty()) os << "\n";
      os << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << format_value(f.slot) << "\n";
  }
  return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  // derived sizes are kept coherent after parsing (see below)
  std::vector<Field> fields = field_table(cfg);

  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": malformed section header: " + t);
      section = t.substr(1, t.size() - 2);
      bool known = false;
      for (const Field& f : fields) known |= f.section == section;
      if (!known)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": unknown section [" + section + "]");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected 'key = value': " + t);
    std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (section.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": key before any [section]: " + key);
    const Field* match = nullptr;
    for (const Field& f : fields)
      if (f.section == section && f.key == key) match = &f;
    if (!match)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key +
                               "' in section [" + section + "]");
    assign_value(match->slot, value, "[" + section + "] " + key);
  }

  // image_size fans out to every consumer
  cfg.generator.input_size = cfg.data.image_size;
  cfg.critic.input_size = cfg.data.image_size;
  cfg.data.synthetic.image_size = cfg.data.image_size;
  cfg.evaluation.classifier.input_size = cfg.data.image_size;
  return cfg;
}

void write_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config: " + path);
  out << serialize_config(cfg);
}

ExperimentConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

}  // namespace gau
