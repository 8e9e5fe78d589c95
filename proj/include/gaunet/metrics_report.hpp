#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gaunet/tensor.hpp"

namespace gau {

// Ordered key:value metric document. Everything in `entries` is deterministic;
// the timestamp lives in a footer excluded from determinism comparisons.
struct MetricsReport {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string generated_at;  // footer; may be empty

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_number(const std::string& key) const;

  std::string serialize() const;
  static MetricsReport parse(const std::string& text);
};

void write_report(const std::string& path, const MetricsReport& report);
MetricsReport read_report(const std::string& path);

// 8-wide tile grid of equally-sized {H,W,3} images, written as one PNG.
void write_sample_grid(const std::string& path, const std::vector<Tensor<float>>& images,
                       int cols = 8);

}  // namespace gau
