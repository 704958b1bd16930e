// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tramark/matrix.hpp"

namespace tramark {

// Fully connected classifier topology. layer_sizes = {input, hidden..., output};
// hidden layers use ReLU, the output layer a softmax.
struct NetworkSpec {
  std::vector<int> layer_sizes;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }

  // Total trainable parameters: sum over layers of (fan_in + 1) * fan_out.
  std::size_t param_count() const;

  // Flat layout: per layer, fan_out x fan_in weights row-major, then fan_out
  // biases. Fixed so masks and checkpoints stay portable.
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;

  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

// Flat float32 parameter vector tied to a topology.
struct ParameterVector {
  NetworkSpec spec;
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;
};

// Scaled uniform init: weights in +-sqrt(6 / (fan_in + fan_out)), biases zero.
ParameterVector init_parameters(const NetworkSpec& spec, std::uint64_t seed);

// Softmax class probabilities, one row per input row. Internally computed in
// double with max-subtraction.
Matrix forward(const ParameterVector& params, const Matrix& inputs);

// Mean cross-entropy over the batch and its gradient w.r.t. every parameter.
// Probabilities are clamped to [1e-12, 1] before the log.
std::pair<double, ParameterVector> loss_and_gradient(const ParameterVector& params,
                                                     const Batch& batch);

// p' = p - lr * g, restricted to coordinates where mask != 0 when a mask is
// given. Masked-out coordinates are bit-identical to the input.
ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& gradient,
                         double lr, std::span<const std::uint8_t> mask = {});

std::vector<int> predict(const ParameterVector& params, const Matrix& inputs);
double accuracy(const ParameterVector& params, const Matrix& inputs,
                const std::vector<int>& labels);

bool all_finite(const ParameterVector& params);

}  // namespace tramark
