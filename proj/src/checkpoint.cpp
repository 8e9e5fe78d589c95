#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "gaunet/training.hpp"

namespace gau {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'U', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

// dtype tags
constexpr std::uint8_t kF32 = 0;
constexpr std::uint8_t kI64 = 2;
constexpr std::uint8_t kText = 3;

struct Entry {
  std::uint8_t dtype = kF32;
  Shape shape;
  std::vector<float> f32;
  std::int64_t i64 = 0;
  std::string text;
};

void put_u32(std::ostream& os, std::uint32_t v) { os.write((const char*)&v, 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write((const char*)&v, 8); }

void write_entry(std::ostream& os, const std::string& name, const Entry& e) {
  put_u32(os, (std::uint32_t)name.size());
  os.write(name.data(), (long)name.size());
  os.write((const char*)&e.dtype, 1);
  if (e.dtype == kF32) {
    put_u32(os, (std::uint32_t)e.shape.size());
    for (int ext : e.shape) put_u64(os, (std::uint64_t)ext);
    os.write((const char*)e.f32.data(), (long)e.f32.size() * 4);
  } else if (e.dtype == kI64) {
    os.write((const char*)&e.i64, 8);
  } else {
    put_u64(os, (std::uint64_t)e.text.size());
    os.write(e.text.data(), (long)e.text.size());
  }
}

void need(std::istream& is, const std::string& what) {
  if (!is) throw std::runtime_error("truncated checkpoint while reading " + what);
}
std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v;
  is.read((char*)&v, 4);
  need(is, what);
  return v;
}
std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t v;
  is.read((char*)&v, 8);
  need(is, what);
  return v;
}

std::pair<std::string, Entry> read_entry(std::istream& is) {
  std::uint32_t nl = get_u32(is, "entry name length");
  if (nl > 4096) throw std::runtime_error("corrupt checkpoint: entry name length " + std::to_string(nl));
  std::string name(nl, '\0');
  is.read(name.data(), nl);
  need(is, "entry name");
  Entry e;
  is.read((char*)&e.dtype, 1);
  need(is, name + " dtype");
  if (e.dtype == kF32) {
    std::uint32_t rank = get_u32(is, name + " rank");
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: rank " + std::to_string(rank));
    long n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint64_t ext = get_u64(is, name + " extent");
      if (ext == 0 || ext > (1u << 30)) throw std::runtime_error("corrupt checkpoint extent in " + name);
      e.shape.push_back((int)ext);
      n *= (long)ext;
    }
    e.f32.resize(n);
    is.read((char*)e.f32.data(), n * 4);
    need(is, name + " payload");
  } else if (e.dtype == kI64) {
    is.read((char*)&e.i64, 8);
    need(is, name + " value");
  } else if (e.dtype == kText) {
    std::uint64_t len = get_u64(is, name + " text length");
    if (len > (1u << 28)) throw std::runtime_error("corrupt checkpoint: text length in " + name);
    e.text.resize(len);
    is.read(e.text.data(), (long)len);
    need(is, name + " text");
  } else {
    throw std::runtime_error("corrupt checkpoint: unknown dtype tag in " + name);
  }
  return {name, e};
}

Entry tensor_entry(const Tensor<float>& t) {
  Entry e;
  e.dtype = kF32;
  e.shape = t.shape;
  e.f32 = t.data;
  return e;
}
Entry int_entry(std::int64_t v) {
  Entry e;
  e.dtype = kI64;
  e.i64 = v;
  return e;
}
Entry text_entry(std::string s) {
  Entry e;
  e.dtype = kText;
  e.text = std::move(s);
  return e;
}

std::string config_text(const TrainState<float>& st) {
  std::ostringstream os;
  os.precision(17);
  const TrainConfig& t = st.config;
  os << "train.lambda_gp=" << t.lambda_gp << "\ntrain.alpha=" << t.alpha
     << "\ntrain.beta1=" << t.beta1 << "\ntrain.beta2=" << t.beta2
     << "\ntrain.batch_size=" << t.batch_size << "\ntrain.n_critic=" << t.n_critic
     << "\ntrain.total_steps=" << t.total_steps << "\ntrain.seed=" << t.seed
     << "\ntrain.loss_mode=" << loss_mode_name(t.loss_mode)
     << "\ntrain.checkpoint_every=" << t.checkpoint_every
     << "\ntrain.r_max_final=" << t.r_max_final << "\ntrain.d_max_final=" << t.d_max_final
     << "\ntrain.warmup_frac=" << t.warmup_frac << "\n";
  const GeneratorConfig& g = st.gen_config;
  os << "gen.input_size=" << g.input_size << "\ngen.base_filters=" << g.base_filters
     << "\ngen.num_blocks=" << g.num_blocks << "\ngen.latent_dim=" << g.latent_dim
     << "\ngen.latent_channels=" << g.latent_channels << "\ngen.dropout_rate=" << g.dropout_rate
     << "\ngen.class_conditioning=" << (g.class_conditioning ? 1 : 0)
     << "\ngen.num_classes=" << g.num_classes << "\ngen.class_channels=" << g.class_channels
     << "\n";
  const CriticConfig& c = st.critic_config;
  os << "critic.input_size=" << c.input_size << "\ncritic.growth_rate=" << c.growth_rate
     << "\ncritic.num_dense_blocks=" << c.num_dense_blocks
     << "\ncritic.layers_per_block=" << c.layers_per_block
     << "\ncritic.dropout_rate=" << c.dropout_rate << "\n";
  os << "meta.num_classes=" << st.num_classes << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

double kv_num(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("checkpoint config missing key " + key);
  return std::stod(it->second);
}

void save_adam(std::ostream& os, const std::string& prefix, AdamOptimizer<float>& opt,
               const ParameterStore<float>& params) {
  for (const auto& name : params.names()) {
    auto it = opt.states().find(name);
    if (it == opt.states().end() || it->second.step_count == 0) continue;
    write_entry(os, prefix + name + "/m", tensor_entry(it->second.first_moment));
    write_entry(os, prefix + name + "/v", tensor_entry(it->second.second_moment));
    write_entry(os, prefix + name + "/t", int_entry(it->second.step_count));
  }
}

long count_adam(AdamOptimizer<float>& opt) {
  long n = 0;
  for (auto& [name, stt] : opt.states())
    if (stt.step_count > 0) n += 3;
  return n;
}

void restore_params(ParameterStore<float>& ps, const std::map<std::string, Entry>& entries,
                    const std::string& prefix) {
  for (const auto& name : ps.names()) {
    auto it = entries.find(prefix + name);
    if (it == entries.end()) throw std::runtime_error("checkpoint missing parameter " + prefix + name);
    if (it->second.shape != ps.at(name).shape)
      throw std::runtime_error("checkpoint shape mismatch for " + prefix + name + ": " +
                               shape_str(it->second.shape) + " vs " + shape_str(ps.at(name).shape));
    ps.at(name).data = it->second.f32;
  }
}

void restore_adam(AdamOptimizer<float>& opt, const ParameterStore<float>& params,
                  const std::map<std::string, Entry>& entries, const std::string& prefix) {
  for (const auto& name : params.names()) {
    auto m = entries.find(prefix + name + "/m");
    if (m == entries.end()) continue;
    auto v = entries.find(prefix + name + "/v");
    auto t = entries.find(prefix + name + "/t");
    if (v == entries.end() || t == entries.end())
      throw std::runtime_error("checkpoint has partial optimizer state for " + name);
    AdamState<float>& stt = opt.states()[name];
    stt.first_moment = Tensor<float>(m->second.shape, m->second.f32);
    stt.second_moment = Tensor<float>(v->second.shape, v->second.f32);
    stt.step_count = t->second.i64;
  }
}

}  // namespace

void save_checkpoint(const TrainState<float>& state, const std::string& path) {
  TrainState<float>& st = const_cast<TrainState<float>&>(state);  // map access only
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);

  long n_entries = 4;  // config, rng, step, history
  n_entries += (long)st.gen_params.names().size() + (long)st.critic_params.names().size();
  n_entries += count_adam(st.gen_opt) + count_adam(st.critic_opt);
  put_u64(os, (std::uint64_t)n_entries);

  write_entry(os, "config", text_entry(config_text(st)));
  write_entry(os, "rng", text_entry(st.rng.serialize()));
  write_entry(os, "step", int_entry(st.step));

  Tensor<float> hist(Shape{std::max<int>(1, (int)st.history.size()), 4});
  if (st.history.empty()) hist = Tensor<float>(Shape{1, 4});  // sentinel row for an empty history
  for (size_t i = 0; i < st.history.size(); ++i) {
    hist[(long)i * 4 + 0] = (float)st.history[i].step;
    hist[(long)i * 4 + 1] = (float)st.history[i].critic_loss;
    hist[(long)i * 4 + 2] = (float)st.history[i].gp;
    hist[(long)i * 4 + 3] = (float)st.history[i].gen_loss;
  }
  Entry he = tensor_entry(hist);
  he.shape = hist.shape;
  write_entry(os, st.history.empty() ? "history_empty" : "history", he);

  for (const auto& name : st.gen_params.names())
    write_entry(os, "gen/" + name, tensor_entry(st.gen_params.at(name)));
  for (const auto& name : st.critic_params.names())
    write_entry(os, "critic/" + name, tensor_entry(st.critic_params.at(name)));
  save_adam(os, "adam_gen/", st.gen_opt, st.gen_params);
  save_adam(os, "adam_critic/", st.critic_opt, st.critic_params);
  if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

TrainState<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  need(is, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " (expected " + std::to_string(kVersion) + ")");
  std::uint64_t n = get_u64(is, "entry count");
  std::map<std::string, Entry> entries;
  for (std::uint64_t i = 0; i < n; ++i) {
    auto [name, e] = read_entry(is);
    entries[name] = std::move(e);
  }

  auto text = entries.find("config");
  if (text == entries.end()) throw std::runtime_error("checkpoint missing config block");
  auto kv = parse_kv(text->second.text);

  TrainConfig tc;
  tc.lambda_gp = kv_num(kv, "train.lambda_gp");
  tc.alpha = kv_num(kv, "train.alpha");
  tc.beta1 = kv_num(kv, "train.beta1");
  tc.beta2 = kv_num(kv, "train.beta2");
  tc.batch_size = (int)kv_num(kv, "train.batch_size");
  tc.n_critic = (int)kv_num(kv, "train.n_critic");
  tc.total_steps = (int)kv_num(kv, "train.total_steps");
  tc.seed = (std::uint64_t)kv_num(kv, "train.seed");
  tc.loss_mode = parse_loss_mode(kv.at("train.loss_mode"));
  tc.checkpoint_every = (int)kv_num(kv, "train.checkpoint_every");
  tc.r_max_final = kv_num(kv, "train.r_max_final");
  tc.d_max_final = kv_num(kv, "train.d_max_final");
  tc.warmup_frac = kv_num(kv, "train.warmup_frac");

  GeneratorConfig gc;
  gc.input_size = (int)kv_num(kv, "gen.input_size");
  gc.base_filters = (int)kv_num(kv, "gen.base_filters");
  gc.num_blocks = (int)kv_num(kv, "gen.num_blocks");
  gc.latent_dim = (int)kv_num(kv, "gen.latent_dim");
  gc.latent_channels = (int)kv_num(kv, "gen.latent_channels");
  gc.dropout_rate = kv_num(kv, "gen.dropout_rate");
  gc.class_conditioning = kv_num(kv, "gen.class_conditioning") != 0;
  gc.num_classes = (int)kv_num(kv, "gen.num_classes");
  gc.class_channels = (int)kv_num(kv, "gen.class_channels");

  CriticConfig cc;
  cc.input_size = (int)kv_num(kv, "critic.input_size");
  cc.growth_rate = (int)kv_num(kv, "critic.growth_rate");
  cc.num_dense_blocks = (int)kv_num(kv, "critic.num_dense_blocks");
  cc.layers_per_block = (int)kv_num(kv, "critic.layers_per_block");
  cc.dropout_rate = kv_num(kv, "critic.dropout_rate");

  TrainState<float> st = init_train_state<float>(tc, gc, cc, (int)kv_num(kv, "meta.num_classes"));
  restore_params(st.gen_params, entries, "gen/");
  restore_params(st.critic_params, entries, "critic/");
  restore_adam(st.gen_opt, st.gen_params, entries, "adam_gen/");
  restore_adam(st.critic_opt, st.critic_params, entries, "adam_critic/");
  st.step = entries.at("step").i64;
  st.rng.deserialize(entries.at("rng").text);

  auto hist = entries.find("history");
  if (hist != entries.end()) {
    const Entry& h = hist->second;
    for (int i = 0; i < h.shape[0]; ++i)
      st.history.push_back({(long)h.f32[(long)i * 4 + 0], (double)h.f32[(long)i * 4 + 1],
                            (double)h.f32[(long)i * 4 + 2], (double)h.f32[(long)i * 4 + 3]});
  }
  return st;
}

}  // namespace gau
