#include "gaunet/metrics_report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gaunet/dataset.hpp"

namespace gau {

namespace {
constexpr const char* kFooterMarker = "# footer";
}

void MetricsReport::set(const std::string& key, const std::string& value) {
  if (key.find(':') != std::string::npos || key.find('\n') != std::string::npos)
    throw std::invalid_argument("report key may not contain ':' or newlines: " + key);
  if (value.find('\n') != std::string::npos)
    throw std::invalid_argument("report value may not contain newlines (key " + key + ")");
  for (auto& [k, v] : entries)
    if (k == key) {
      v = value;
      return;
    }
  entries.emplace_back(key, value);
}

void MetricsReport::set(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  set(key, std::string(buf));
}

void MetricsReport::set(const std::string& key, long value) {
  set(key, std::to_string(value));
}

bool MetricsReport::has(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return true;
  return false;
}

const std::string& MetricsReport::get(const std::string& key) const {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  throw std::out_of_range("report has no key '" + key + "'");
}

double MetricsReport::get_number(const std::string& key) const {
  const std::string& v = get(key);
  size_t pos = 0;
  double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("report key '" + key + "' is not numeric: " + v);
  return d;
}

std::string MetricsReport::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries) os << k << ": " << v << "\n";
  if (!generated_at.empty()) os << kFooterMarker << "\ngenerated_at: " << generated_at << "\n";
  return os.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
  MetricsReport r;
  std::istringstream is(text);
  std::string line;
  bool footer = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == kFooterMarker) {
      footer = true;
      continue;
    }
    size_t colon = line.find(": ");
    if (colon == std::string::npos)
      throw std::runtime_error("report line " + std::to_string(lineno) +
                               " is not 'key: value': " + line);
    std::string key = line.substr(0, colon), value = line.substr(colon + 2);
    if (footer) {
      if (key == "generated_at") r.generated_at = value;
    } else {
      r.entries.emplace_back(key, value);
    }
  }
  return r;
}

void write_report(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << report.serialize();
}

MetricsReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return MetricsReport::parse(os.str());
}

void write_sample_grid(const std::string& path, const std::vector<Tensor<float>>& images,
                       int cols) {
  if (images.empty()) throw std::invalid_argument("sample grid: no images");
  if (cols < 1) throw std::invalid_argument("sample grid: cols must be positive");
  const Shape& s = images[0].shape;
  if (s.size() != 3 || s[2] != 3)
    throw std::invalid_argument("sample grid: images must be {H,W,3}");
  int h = s[0], w = s[1];
  int rows = ((int)images.size() + cols - 1) / cols;
  Tensor<float> grid(Shape{rows * h, cols * w, 3});
  for (size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape != s) throw std::invalid_argument("sample grid: image size mismatch");
    int r = (int)i / cols, c = (int)i % cols;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < 3; ++ch)
          grid.data[(((long)(r * h + y) * cols * w) + c * w + x) * 3 + ch] =
              images[i].data[((long)y * w + x) * 3 + ch];
  }
  save_image_png(path, grid);
}

}  // namespace gau
