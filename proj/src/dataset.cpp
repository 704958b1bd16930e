// SPDX-License-Identifier: Apache-2.0
#include "tramark/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "tramark/errors.hpp"
#include "tramark/rng.hpp"

namespace tramark {

namespace {

constexpr std::uint64_t kTemplateSalt = 0x74656d70;
constexpr std::uint64_t kSampleSalt = 0x73616d70;
constexpr std::uint64_t kPartitionSalt = 0x70617274;
constexpr std::uint64_t kPatternSalt = 0x70617474;
constexpr std::uint64_t kJitterSalt = 0x6a697474;

float clamp01(double v) {
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

// Canvas geometry shared by the synthetic task and the noise triggers. Main
// task content lives in a centered region (the inner half per side for square
// canvases, the first half for flat vectors); the surrounding margin stays
// dark in every main-task template, like the border of a centered object
// photo. Triggers use the margin, keeping them out of distribution.
struct CanvasLayout {
  int dim = 0;
  int side = 0;  // 0 when the canvas is not square

  explicit CanvasLayout(int input_dim) : dim(input_dim) {
    const int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(input_dim))));
    if (s * s == input_dim && s >= 4) side = s;
  }

  bool in_main_region(int p) const {
    if (side > 0) {
      const int row = p / side, col = p % side;
      const int lo = side / 4, hi = side - side / 4;
      return row >= lo && row < hi && col >= lo && col < hi;
    }
    return p < dim / 2;
  }
};

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path, std::size_t& offset) {
  unsigned char buf[4];
  f.read(reinterpret_cast<char*>(buf), 4);
  if (!f) throw FormatError(path + ": truncated header", offset);
  offset += 4;
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

std::uint64_t row_hash(const float* row, std::size_t cols) {
  // FNV-1a over the raw float bytes.
  std::uint64_t h = 0xcbf29ce484222325ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(row);
  for (std::size_t i = 0; i < cols * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

LabeledDataset generate_synthetic(int classes, int per_class, int input_dim,
                                  double noise_std, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("classes must be at least 2");
  if (per_class < 1) throw std::invalid_argument("per_class must be at least 1");
  if (input_dim < 1) throw std::invalid_argument("input_dim must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("noise_std must be non-negative");

  LabeledDataset ds;
  ds.class_count = classes;
  ds.inputs = Matrix(static_cast<std::size_t>(classes) * per_class, input_dim);
  ds.labels.resize(ds.inputs.rows);

  const CanvasLayout canvas(input_dim);
  std::vector<int> active;
  for (int j = 0; j < input_dim; ++j) {
    if (canvas.in_main_region(j)) active.push_back(j);
  }

  // Mid-gray two-level patterns inside the content region, dark margin. The
  // per-pixel contrast is comparable to the noise level, so classification
  // has to pool many pixels instead of reading single bright ones. Classes
  // are redrawn until their patterns differ in enough active pixels.
  std::vector<std::vector<float>> templates;
  templates.reserve(classes);
  for (int c = 0; c < classes; ++c) {
    int min_diff = std::max<int>(1, static_cast<int>(active.size()) / 3);
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 64 == 0) min_diff /= 2;  // degenerate canvases
      Rng trng(derive_seed(seed, kTemplateSalt, c, attempt));
      std::vector<float> cand(input_dim, 0.0f);
      for (int j : active) cand[j] = trng.next_double() < 0.5 ? 0.25f : 0.75f;
      bool ok = true;
      for (const auto& prev : templates) {
        int diff = 0;
        for (int j : active) {
          if (cand[j] != prev[j]) ++diff;
        }
        if (diff < min_diff && min_diff > 0) {
          ok = false;
          break;
        }
      }
      if (ok) {
        templates.push_back(std::move(cand));
        break;
      }
    }
  }

  std::size_t r = 0;
  for (int c = 0; c < classes; ++c) {
    const std::vector<float>& tmpl = templates[c];
    for (int s = 0; s < per_class; ++s, ++r) {
      Rng srng(derive_seed(seed, kSampleSalt, c, s));
      float* row = ds.inputs.row(r);
      for (int j = 0; j < input_dim; ++j) {
        row[j] = noise_std == 0.0 ? tmpl[j] : clamp01(tmpl[j] + noise_std * srng.normal());
      }
      ds.labels[r] = c;
    }
  }
  return ds;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw IoError("cannot open " + images_path);
  std::size_t off = 0;
  const std::uint32_t img_magic = read_u32_be(imgf, images_path, off);
  if (img_magic != 0x00000803u) {
    throw FormatError(images_path + ": bad image magic", 0);
  }
  const std::uint32_t count = read_u32_be(imgf, images_path, off);
  const std::uint32_t rows = read_u32_be(imgf, images_path, off);
  const std::uint32_t cols = read_u32_be(imgf, images_path, off);
  if (count == 0 || rows == 0 || cols == 0) {
    throw FormatError(images_path + ": empty image file", 4);
  }
  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(count) * dim);
  imgf.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (static_cast<std::size_t>(imgf.gcount()) != pixels.size()) {
    throw FormatError(images_path + ": truncated pixel data",
                      off + static_cast<std::size_t>(imgf.gcount()));
  }

  std::ifstream lblf(labels_path, std::ios::binary);
  if (!lblf) throw IoError("cannot open " + labels_path);
  std::size_t loff = 0;
  const std::uint32_t lbl_magic = read_u32_be(lblf, labels_path, loff);
  if (lbl_magic != 0x00000801u) {
    throw FormatError(labels_path + ": bad label magic", 0);
  }
  const std::uint32_t lbl_count = read_u32_be(lblf, labels_path, loff);
  if (lbl_count != count) {
    throw FormatError(labels_path + ": label count " + std::to_string(lbl_count) +
                          " does not match image count " + std::to_string(count),
                      4);
  }
  std::vector<unsigned char> raw_labels(count);
  lblf.read(reinterpret_cast<char*>(raw_labels.data()), count);
  if (static_cast<std::size_t>(lblf.gcount()) != raw_labels.size()) {
    throw FormatError(labels_path + ": truncated label data",
                      loff + static_cast<std::size_t>(lblf.gcount()));
  }

  LabeledDataset ds;
  ds.inputs = Matrix(count, dim);
  ds.labels.resize(count);
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    float* row = ds.inputs.row(i);
    const unsigned char* src = pixels.data() + static_cast<std::size_t>(i) * dim;
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(src[j]) / 255.0f;
    ds.labels[i] = raw_labels[i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

PartitionPlan dirichlet_partition(const LabeledDataset& dataset, int n, double gamma,
                                  std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("need at least 2 clients");
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
  if (dataset.size() < static_cast<std::size_t>(n)) {
    throw std::invalid_argument("dataset smaller than client count");
  }

  PartitionPlan plan;
  plan.concentration = gamma;
  plan.client_indices.assign(n, {});

  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[dataset.labels[i]].push_back(static_cast<int>(i));
  }

  for (auto& [cls, indices] : by_class) {
    Rng rng(derive_seed(seed, kPartitionSalt, static_cast<std::uint64_t>(cls)));
    rng.shuffle(indices);
    std::vector<double> props(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      props[i] = rng.gamma(gamma);
      total += props[i];
    }
    const std::size_t count = indices.size();
    double cum = 0.0;
    std::size_t prev = 0;
    for (int i = 0; i < n; ++i) {
      cum += props[i] / total;
      const std::size_t cut =
          (i == n - 1) ? count
                       : std::min<std::size_t>(count, static_cast<std::size_t>(
                                                          std::llround(cum * count)));
      for (std::size_t j = prev; j < cut; ++j) {
        plan.client_indices[i].push_back(indices[j]);
      }
      prev = std::max(prev, cut);
    }
  }

  // An empty client steals one sample from the currently largest client.
  for (;;) {
    int empty = -1;
    for (int i = 0; i < n; ++i) {
      if (plan.client_indices[i].empty()) {
        empty = i;
        break;
      }
    }
    if (empty < 0) break;
    int largest = 0;
    for (int i = 1; i < n; ++i) {
      if (plan.client_indices[i].size() > plan.client_indices[largest].size()) largest = i;
    }
    plan.client_indices[empty].push_back(plan.client_indices[largest].back());
    plan.client_indices[largest].pop_back();
  }
  return plan;
}

LabeledDataset extract_shard(const LabeledDataset& dataset, const std::vector<int>& indices) {
  LabeledDataset shard;
  shard.class_count = dataset.class_count;
  shard.inputs = Matrix(indices.size(), dataset.inputs.cols);
  shard.labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const float* src = dataset.inputs.row(indices[r]);
    std::copy(src, src + dataset.inputs.cols, shard.inputs.row(r));
    shard.labels[r] = dataset.labels[indices[r]];
  }
  return shard;
}

namespace {

constexpr int kPatternGrid = 4;

// Cell index of a pixel on the 4x4 block grid. Square inputs get true spatial
// blocks, anything else contiguous chunks.
int pattern_cell(const CanvasLayout& canvas, int p) {
  if (canvas.side > 0) {
    const int row = p / canvas.side, col = p % canvas.side;
    return (row * kPatternGrid / canvas.side) * kPatternGrid +
           (col * kPatternGrid / canvas.side);
  }
  return static_cast<int>(static_cast<std::int64_t>(p) * kPatternGrid * kPatternGrid /
                          canvas.dim);
}

// Coarse noise image: uniform noise quantized to binary levels on the 4x4
// block grid, rendered only onto the canvas margin so triggers stay out of
// the main task's content region.
std::vector<float> cells_to_pattern(const CanvasLayout& canvas,
                                    const std::vector<float>& cells) {
  std::vector<float> pattern(canvas.dim, 0.0f);
  for (int p = 0; p < canvas.dim; ++p) {
    if (canvas.in_main_region(p)) continue;  // margin only
    pattern[p] = cells[pattern_cell(canvas, p)];
  }
  return pattern;
}

std::vector<float> draw_binary_cells(Rng& rng) {
  std::vector<float> cells(kPatternGrid * kPatternGrid);
  for (float& c : cells) c = rng.next_double() < 0.5 ? 0.0f : 1.0f;
  return cells;
}

// Hamming distance over the cells that actually render onto the margin.
int margin_cell_distance(const CanvasLayout& canvas, const std::vector<float>& a,
                         const std::vector<float>& b) {
  std::vector<bool> on_margin(kPatternGrid * kPatternGrid, false);
  for (int p = 0; p < canvas.dim; ++p) {
    if (!canvas.in_main_region(p)) on_margin[pattern_cell(canvas, p)] = true;
  }
  int dist = 0;
  for (int c = 0; c < kPatternGrid * kPatternGrid; ++c) {
    if (on_margin[c] && a[c] != b[c]) ++dist;
  }
  return dist;
}

int margin_cell_count(const CanvasLayout& canvas) {
  std::vector<bool> on_margin(kPatternGrid * kPatternGrid, false);
  for (int p = 0; p < canvas.dim; ++p) {
    if (!canvas.in_main_region(p)) on_margin[pattern_cell(canvas, p)] = true;
  }
  int count = 0;
  for (bool b : on_margin) count += b ? 1 : 0;
  return count;
}

}  // namespace

std::vector<WatermarkDataset> build_watermark_datasets(int n, WatermarkSource source,
                                                       int size, int input_dim, int classes,
                                                       std::uint64_t seed,
                                                       const LabeledDataset* ood,
                                                       double jitter_std) {
  if (n < 1) throw std::invalid_argument("need at least one watermark dataset");
  if (size < 1) throw std::invalid_argument("watermark size must be at least 1");
  if (classes < 2) throw std::invalid_argument("classes must be at least 2");

  std::vector<WatermarkDataset> wms(n);

  if (source == WatermarkSource::NoisePattern) {
    const CanvasLayout canvas(input_dim);
    // Base patterns must stay pairwise far apart: the traceability margin
    // rides on them, so demand that roughly half of the rendered cells
    // differ. The threshold relaxes when the canvas cannot host that many
    // distinct patterns.
    std::vector<std::vector<float>> cell_sets;
    cell_sets.reserve(n);
    for (int i = 0; i < n; ++i) {
      int min_dist = std::max(1, margin_cell_count(canvas) / 2 - 1);
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 0 && attempt % 64 == 0 && min_dist > 1) --min_dist;
        Rng rng(derive_seed(seed, kPatternSalt, i, attempt));
        std::vector<float> cand = draw_binary_cells(rng);
        bool ok = true;
        for (const auto& prev : cell_sets) {
          if (margin_cell_distance(canvas, cand, prev) < min_dist) {
            ok = false;
            break;
          }
        }
        if (ok) {
          cell_sets.push_back(std::move(cand));
          break;
        }
      }
    }
    std::vector<std::vector<float>> bases;
    bases.reserve(n);
    for (int i = 0; i < n; ++i) bases.push_back(cells_to_pattern(canvas, cell_sets[i]));
    for (int i = 0; i < n; ++i) {
      WatermarkDataset& wm = wms[i];
      wm.owner = i;
      wm.target_label = i % classes;
      wm.triggers = Matrix(size, input_dim);
      wm.holdout_triggers = Matrix(size, input_dim);
      for (int r = 0; r < 2 * size; ++r) {
        Rng rng(derive_seed(seed, kJitterSalt, i, r));
        float* row = r < size ? wm.triggers.row(r) : wm.holdout_triggers.row(r - size);
        for (int j = 0; j < input_dim; ++j) {
          row[j] = clamp01(static_cast<double>(bases[i][j]) + jitter_std * rng.normal());
        }
      }
    }
  } else {
    if (ood == nullptr) throw std::invalid_argument("ood source requires a loaded dataset");
    if (ood->input_dim() != input_dim) {
      throw std::invalid_argument("ood input dimension does not match");
    }
    std::map<int, std::vector<int>> by_label;
    for (std::size_t i = 0; i < ood->size(); ++i) {
      by_label[ood->labels[i]].push_back(static_cast<int>(i));
    }
    if (static_cast<int>(by_label.size()) < n) {
      throw std::invalid_argument("more clients than distinct OOD labels");
    }
    auto it = by_label.begin();
    for (int i = 0; i < n; ++i, ++it) {
      const std::vector<int>& rows = it->second;
      if (rows.size() < static_cast<std::size_t>(2 * size)) {
        throw std::invalid_argument("OOD label " + std::to_string(it->first) +
                                    " has fewer than 2*size samples");
      }
      WatermarkDataset& wm = wms[i];
      wm.owner = i;
      wm.target_label = i % classes;
      wm.triggers = Matrix(size, input_dim);
      wm.holdout_triggers = Matrix(size, input_dim);
      for (int r = 0; r < 2 * size; ++r) {
        const float* src = ood->inputs.row(rows[r]);
        float* dst = r < size ? wm.triggers.row(r) : wm.holdout_triggers.row(r - size);
        std::copy(src, src + input_dim, dst);
      }
    }
  }

  if (!triggers_disjoint(wms)) {
    throw std::runtime_error("watermark trigger sets are not disjoint");
  }
  return wms;
}

bool triggers_disjoint(const std::vector<WatermarkDataset>& wms) {
  // hash -> (owner, pointer) of the first row seen; byte-compare on hash hits.
  std::unordered_map<std::uint64_t, std::pair<int, const float*>> seen;
  const std::size_t cols = wms.empty() ? 0 : wms[0].triggers.cols;
  for (const WatermarkDataset& wm : wms) {
    for (const Matrix* m : {&wm.triggers, &wm.holdout_triggers}) {
      for (std::size_t r = 0; r < m->rows; ++r) {
        const float* row = m->row(r);
        const std::uint64_t h = row_hash(row, cols);
        auto [it, inserted] = seen.emplace(h, std::make_pair(wm.owner, row));
        if (!inserted && it->second.first != wm.owner &&
            std::memcmp(it->second.second, row, cols * sizeof(float)) == 0) {
          return false;
        }
      }
    }
  }
  return true;
}

}  // namespace tramark
