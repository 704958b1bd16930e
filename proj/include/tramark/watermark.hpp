// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tramark/dataset.hpp"
#include "tramark/network.hpp"

namespace tramark {

// Complementary binary masks over the flat parameter space. wm_mask marks the
// watermarking region, main_mask its complement; exactly round(ratio * d)
// coordinates belong to the watermarking region.
struct RegionMasks {
  std::vector<std::uint8_t> wm_mask;
  std::vector<std::uint8_t> main_mask;
  double ratio = 0.0;

  std::size_t size() const { return wm_mask.size(); }
  std::size_t wm_count() const;
};

// Marks the `count` coordinates with smallest |values[j]|, ties broken by
// lower index. Shared by region partitioning and magnitude pruning.
std::vector<std::uint8_t> smallest_magnitude_mask(std::span<const float> values,
                                                  std::size_t count);

// Assigns the round(ratio * d) smallest-magnitude parameters of the global
// model to the watermarking region and the rest to the main task region.
RegionMasks partition_masks(const ParameterVector& global_model, double ratio);

// Personalized aggregation: main-region coordinates take the mean of
// (model_i + update_i) over participants (all clients when participants is
// empty); watermark-region coordinates keep each client's own model + update
// bit-exactly.
std::vector<ParameterVector> masked_aggregate(const std::vector<ParameterVector>& models,
                                              const std::vector<ParameterVector>& updates,
                                              const RegionMasks& masks,
                                              std::span<const int> participants = {});

// Elementwise mean of (model_i + update_i), accumulated in double in client
// order. participants restricts the mean to a sampled subset (empty = all).
ParameterVector fedavg_aggregate(const std::vector<ParameterVector>& models,
                                 const std::vector<ParameterVector>& updates,
                                 std::span<const int> participants = {});

// wm_iters full-batch cross-entropy steps on the trigger set, gradient
// multiplied by the watermarking mask before each step. Main-region
// coordinates come back bit-identical.
ParameterVector inject_watermark(const ParameterVector& model, const WatermarkDataset& wm,
                                 const RegionMasks& masks, double wm_lr, int wm_iters);

// Baseline injection over the whole parameter space with a shared trigger set.
ParameterVector waffle_inject(const ParameterVector& model, const WatermarkDataset& wm,
                              double wm_lr, int iters);

}  // namespace tramark
