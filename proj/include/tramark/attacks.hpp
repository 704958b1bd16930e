// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tramark/dataset.hpp"
#include "tramark/network.hpp"
#include "tramark/rng.hpp"

namespace tramark {

enum class AttackKind { Prune, Finetune, Quantize };

struct AttackConfig {
  AttackKind kind = AttackKind::Prune;
  double prune_ratio = 0.5;
  int finetune_epochs = 30;
  double finetune_lr = 0.01;
  int finetune_batch_size = 32;
  int quant_bits = 8;
};

// Global unstructured magnitude pruning: zeroes the round(ratio * d)
// smallest-magnitude coordinates, ties by lower index.
ParameterVector prune(const ParameterVector& params, double ratio);

// Plain SGD over the attacker's own shard; epoch order reshuffled per epoch.
ParameterVector finetune(const ParameterVector& model, const LabeledDataset& shard,
                         int epochs, double lr, int batch_size, Rng& rng);

// Symmetric per-model quantization: s = max|v| / (2^(bits-1) - 1), values
// snapped to round(v / s) * s and dequantized back to float.
ParameterVector quantize(const ParameterVector& params, int bits);

}  // namespace tramark
