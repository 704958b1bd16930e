// SPDX-License-Identifier: Apache-2.0
#include "tramark/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tramark {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' has non-integer value '" + value + "'");
  }
  if (pos != value.size()) {
    throw std::invalid_argument("config key '" + key + "' has non-integer value '" + value + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' has non-numeric value '" + value + "'");
  }
  if (pos != value.size()) {
    throw std::invalid_argument("config key '" + key + "' has non-numeric value '" + value + "'");
  }
  return v;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_int(key, item)));
  }
  if (out.empty()) {
    throw std::invalid_argument("config key '" + key + "' needs at least one value");
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "clients") cfg.clients = static_cast<int>(parse_int(key, value));
  else if (key == "rounds") cfg.rounds = static_cast<int>(parse_int(key, value));
  else if (key == "warmup_ratio") cfg.warmup_ratio = parse_double(key, value);
  else if (key == "local_iters") cfg.local_iters = static_cast<int>(parse_int(key, value));
  else if (key == "local_lr") cfg.local_lr = parse_double(key, value);
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "sampling_fraction") cfg.sampling_fraction = parse_double(key, value);
  else if (key == "partition_ratio") cfg.partition_ratio = parse_double(key, value);
  else if (key == "wm_iters") cfg.wm_iters = static_cast<int>(parse_int(key, value));
  else if (key == "wm_lr") cfg.wm_lr = parse_double(key, value);
  else if (key == "wm_size") cfg.wm_size = static_cast<int>(parse_int(key, value));
  else if (key == "wm_source") {
    if (value == "noise_pattern") cfg.wm_source = WatermarkSource::NoisePattern;
    else if (value == "ood_idx") cfg.wm_source = WatermarkSource::OodIdx;
    else throw std::invalid_argument("config key 'wm_source' must be noise_pattern or ood_idx");
  } else if (key == "wm_images") cfg.wm_images = value;
  else if (key == "wm_labels") cfg.wm_labels = value;
  else if (key == "wm_jitter") cfg.wm_jitter = parse_double(key, value);
  else if (key == "collision_sigma") cfg.collision_sigma = parse_double(key, value);
  else if (key == "ownership_nu") cfg.ownership_nu = parse_double(key, value);
  else if (key == "hidden_sizes") cfg.hidden_sizes = parse_int_list(key, value);
  else if (key == "classes") cfg.classes = static_cast<int>(parse_int(key, value));
  else if (key == "input_dim") cfg.input_dim = static_cast<int>(parse_int(key, value));
  else if (key == "per_class") cfg.per_class = static_cast<int>(parse_int(key, value));
  else if (key == "test_per_class") cfg.test_per_class = static_cast<int>(parse_int(key, value));
  else if (key == "noise_std") cfg.noise_std = parse_double(key, value);
  else if (key == "dirichlet_gamma") cfg.dirichlet_gamma = parse_double(key, value);
  else if (key == "data_images") cfg.data_images = value;
  else if (key == "data_labels") cfg.data_labels = value;
  else if (key == "test_images") cfg.test_images = value;
  else if (key == "test_labels") cfg.test_labels = value;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  " is not of the form key = value");
    }
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# federation\n";
  out << "clients = " << cfg.clients << "\n";
  out << "rounds = " << cfg.rounds << "\n";
  out << "warmup_ratio = " << fmt_double(cfg.warmup_ratio) << "\n";
  out << "local_iters = " << cfg.local_iters << "\n";
  out << "local_lr = " << fmt_double(cfg.local_lr) << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "sampling_fraction = " << fmt_double(cfg.sampling_fraction) << "\n";
  out << "# watermarking\n";
  out << "partition_ratio = " << fmt_double(cfg.partition_ratio) << "\n";
  out << "wm_iters = " << cfg.wm_iters << "\n";
  out << "wm_lr = " << fmt_double(cfg.wm_lr) << "\n";
  out << "wm_size = " << cfg.wm_size << "\n";
  out << "wm_source = "
      << (cfg.wm_source == WatermarkSource::NoisePattern ? "noise_pattern" : "ood_idx") << "\n";
  if (!cfg.wm_images.empty()) out << "wm_images = " << cfg.wm_images << "\n";
  if (!cfg.wm_labels.empty()) out << "wm_labels = " << cfg.wm_labels << "\n";
  out << "wm_jitter = " << fmt_double(cfg.wm_jitter) << "\n";
  out << "collision_sigma = " << fmt_double(cfg.collision_sigma) << "\n";
  out << "ownership_nu = " << fmt_double(cfg.ownership_nu) << "\n";
  out << "# model\n";
  out << "hidden_sizes = ";
  for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
    if (i) out << ",";
    out << cfg.hidden_sizes[i];
  }
  out << "\n";
  out << "# data\n";
  out << "classes = " << cfg.classes << "\n";
  out << "input_dim = " << cfg.input_dim << "\n";
  out << "per_class = " << cfg.per_class << "\n";
  out << "test_per_class = " << cfg.test_per_class << "\n";
  out << "noise_std = " << fmt_double(cfg.noise_std) << "\n";
  out << "dirichlet_gamma = " << fmt_double(cfg.dirichlet_gamma) << "\n";
  if (!cfg.data_images.empty()) out << "data_images = " << cfg.data_images << "\n";
  if (!cfg.data_labels.empty()) out << "data_labels = " << cfg.data_labels << "\n";
  if (!cfg.test_images.empty()) out << "test_images = " << cfg.test_images << "\n";
  if (!cfg.test_labels.empty()) out << "test_labels = " << cfg.test_labels << "\n";
  out << "seed = " << cfg.seed << "\n";
  return out.str();
}

}  // namespace tramark
