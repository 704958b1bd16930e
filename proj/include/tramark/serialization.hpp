// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "tramark/dataset.hpp"
#include "tramark/network.hpp"
#include "tramark/watermark.hpp"

namespace tramark {

// Binary container formats, all little-endian:
//
//   checkpoint "TRMK1": 5-byte magic, u32 layer_count, u32 layer_sizes[],
//                       u64 d, f32 payload[d]
//   mask       "TMMK1": 5-byte magic, u32 d, ceil(d/8) bytes of wm-mask bits
//                       (bit j of the mask at byte j/8, bit j%8); the main
//                       mask is the complement
//   dataset    "TMDS1": 5-byte magic, u32 N, u32 dim, u32 C,
//                       f32 inputs[N*dim] row-major, u32 labels[N]

void save_checkpoint(const std::string& path, const ParameterVector& params);
ParameterVector load_checkpoint(const std::string& path);

void save_mask(const std::string& path, const RegionMasks& masks);
RegionMasks load_mask(const std::string& path);

void save_dataset(const std::string& path, const LabeledDataset& dataset);
LabeledDataset load_dataset(const std::string& path);

}  // namespace tramark
