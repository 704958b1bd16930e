// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tramark/matrix.hpp"

namespace tramark {

struct LabeledDataset {
  Matrix inputs;            // N x input_dim, values in [0, 1]
  std::vector<int> labels;  // class ids in [0, class_count)
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  int input_dim() const { return static_cast<int>(inputs.cols); }
};

// Per-client trigger set with a designated target label. The holdout half is
// reserved for verification and never used during injection.
struct WatermarkDataset {
  int owner = 0;
  Matrix triggers;
  Matrix holdout_triggers;
  int target_label = 0;
};

struct PartitionPlan {
  std::vector<std::vector<int>> client_indices;
  double concentration = 0.0;
};

enum class WatermarkSource { NoisePattern, OodIdx };

// Synthetic classification task: one seeded template pattern per class,
// samples are clamp(template + gaussian noise, 0, 1). Sample (c, s) depends
// only on (seed, c, s), so growing per_class extends a dataset in place.
LabeledDataset generate_synthetic(int classes, int per_class, int input_dim,
                                  double noise_std, std::uint64_t seed);

// IDX image/label pair (big-endian header), pixels scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Per class, proportions ~ Dirichlet(gamma * 1_n); empty clients are fixed by
// stealing one sample from the largest client.
PartitionPlan dirichlet_partition(const LabeledDataset& dataset, int n, double gamma,
                                  std::uint64_t seed);

LabeledDataset extract_shard(const LabeledDataset& dataset, const std::vector<int>& indices);

// n mutually distinct watermark datasets. noise_pattern draws a coarse-grid
// noise image per client and jitters it; ood_idx slices one out-of-distribution
// label per client. Target labels are i mod classes. Each client receives
// `size` injection triggers plus an equally sized holdout set.
std::vector<WatermarkDataset> build_watermark_datasets(int n, WatermarkSource source,
                                                       int size, int input_dim, int classes,
                                                       std::uint64_t seed,
                                                       const LabeledDataset* ood = nullptr,
                                                       double jitter_std = 0.25);

// True when no trigger row (injection or holdout) appears in two different
// clients' datasets, compared by exact content.
bool triggers_disjoint(const std::vector<WatermarkDataset>& wms);

}  // namespace tramark
