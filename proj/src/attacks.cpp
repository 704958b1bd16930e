// SPDX-License-Identifier: Apache-2.0
#include "tramark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tramark/watermark.hpp"

namespace tramark {

ParameterVector prune(const ParameterVector& params, double ratio) {
  if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("prune ratio must lie in [0, 1)");
  const std::size_t d = params.values.size();
  const std::size_t count =
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(d)));
  ParameterVector out = params;
  if (count == 0) return out;
  const std::vector<std::uint8_t> victims = smallest_magnitude_mask(params.values, count);
  for (std::size_t j = 0; j < d; ++j) {
    if (victims[j]) out.values[j] = 0.0f;
  }
  return out;
}

ParameterVector finetune(const ParameterVector& model, const LabeledDataset& shard,
                         int epochs, double lr, int batch_size, Rng& rng) {
  if (shard.size() == 0) throw std::invalid_argument("empty fine-tuning shard");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (epochs == 0 || lr == 0.0) return model;

  const std::size_t n = shard.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  ParameterVector current = model;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(n, start + batch_size);
      Batch batch;
      batch.inputs = Matrix(stop - start, shard.inputs.cols);
      batch.labels.resize(stop - start);
      for (std::size_t r = start; r < stop; ++r) {
        const float* src = shard.inputs.row(order[r]);
        std::copy(src, src + shard.inputs.cols, batch.inputs.row(r - start));
        batch.labels[r - start] = shard.labels[order[r]];
      }
      auto [loss, grad] = loss_and_gradient(current, batch);
      (void)loss;
      current = sgd_step(current, grad, lr);
    }
  }
  return current;
}

ParameterVector quantize(const ParameterVector& params, int bits) {
  if (bits < 2 || bits > 16) throw std::invalid_argument("quantization bits must lie in [2, 16]");
  float max_abs = 0.0f;
  for (float v : params.values) max_abs = std::max(max_abs, std::fabs(v));
  if (max_abs == 0.0f) return params;  // scale undefined -> identity

  const double levels = static_cast<double>((1 << (bits - 1)) - 1);
  const double scale = static_cast<double>(max_abs) / levels;
  ParameterVector out = params;
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    const double v = params.values[j];
    double k = std::nearbyint(v / scale);
    k = std::clamp(k, -levels, levels);
    // The extreme bucket dequantizes to the exact input maximum so that the
    // scale is recoverable and quantization is idempotent.
    if (std::fabs(k) == levels) {
      out.values[j] = std::copysign(max_abs, params.values[j]);
    } else {
      out.values[j] = static_cast<float>(k * scale);
    }
  }
  return out;
}

}  // namespace tramark
