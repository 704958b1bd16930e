// SPDX-License-Identifier: Apache-2.0
#include "tramark/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tramark/rng.hpp"

namespace tramark {

namespace {

constexpr double kProbFloor = 1e-12;

// Forward pass for one sample in double precision. activations[l] holds the
// post-nonlinearity output of layer l; activations.back() is the softmax row.
void forward_row(const NetworkSpec& spec, const float* params, const float* input,
                 std::vector<std::vector<double>>& activations) {
  const int layers = spec.layer_count();
  activations.resize(layers + 1);
  activations[0].assign(input, input + spec.input_dim());
  for (int l = 0; l < layers; ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const float* w = params + spec.weight_offset(l);
    const float* b = params + spec.bias_offset(l);
    const std::vector<double>& in = activations[l];
    std::vector<double>& out = activations[l + 1];
    out.resize(fan_out);
    for (int o = 0; o < fan_out; ++o) {
      double acc = b[o];
      const float* wrow = w + static_cast<std::size_t>(o) * fan_in;
      for (int i = 0; i < fan_in; ++i) acc += static_cast<double>(wrow[i]) * in[i];
      out[o] = acc;
    }
    if (l + 1 < layers) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;
    }
  }
  // Softmax with max-subtraction; normalization accumulated in double.
  std::vector<double>& logits = activations[layers];
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : logits) v /= sum;
}

}  // namespace

std::size_t NetworkSpec::param_count() const {
  std::size_t d = 0;
  for (int l = 0; l < layer_count(); ++l) {
    d += static_cast<std::size_t>(layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return d;
}

std::size_t NetworkSpec::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(layer_sizes[l] + 1) * layer_sizes[l + 1];
  }
  return off;
}

std::size_t NetworkSpec::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(layer_sizes[layer]) * layer_sizes[layer + 1];
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("network needs at least input and output layers");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  }
  if (layer_sizes.back() < 2) {
    throw std::invalid_argument("output dimension must be at least 2");
  }
}

ParameterVector init_parameters(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParameterVector p{spec, std::vector<float>(spec.param_count(), 0.0f)};
  Rng rng(seed);
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    float* w = p.values.data() + spec.weight_offset(l);
    const std::size_t n = static_cast<std::size_t>(fan_in) * fan_out;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    // biases stay zero
  }
  return p;
}

Matrix forward(const ParameterVector& params, const Matrix& inputs) {
  if (inputs.cols != static_cast<std::size_t>(params.spec.input_dim())) {
    throw std::invalid_argument("input dimension does not match network spec");
  }
  if (params.values.size() != params.spec.param_count()) {
    throw std::invalid_argument("parameter vector length does not match spec");
  }
  const int classes = params.spec.output_dim();
  Matrix probs(inputs.rows, classes);
  std::vector<std::vector<double>> acts;
  for (std::size_t r = 0; r < inputs.rows; ++r) {
    forward_row(params.spec, params.values.data(), inputs.row(r), acts);
    const std::vector<double>& p = acts.back();
    for (int c = 0; c < classes; ++c) probs.at(r, c) = static_cast<float>(p[c]);
  }
  return probs;
}

std::pair<double, ParameterVector> loss_and_gradient(const ParameterVector& params,
                                                     const Batch& batch) {
  if (batch.inputs.rows == 0) throw std::invalid_argument("empty batch");
  if (batch.inputs.rows != batch.labels.size()) {
    throw std::invalid_argument("input rows and label count differ");
  }
  if (batch.inputs.cols != static_cast<std::size_t>(params.spec.input_dim())) {
    throw std::invalid_argument("input dimension does not match network spec");
  }
  const NetworkSpec& spec = params.spec;
  const int layers = spec.layer_count();
  const int classes = spec.output_dim();
  const std::size_t d = spec.param_count();
  const std::size_t rows = batch.inputs.rows;

  std::vector<double> grad(d, 0.0);
  std::vector<std::vector<double>> acts;
  std::vector<double> delta, delta_prev;
  double loss_sum = 0.0;

  for (std::size_t r = 0; r < rows; ++r) {
    const int label = batch.labels[r];
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("label outside [0, classes)");
    }
    forward_row(spec, params.values.data(), batch.inputs.row(r), acts);
    const std::vector<double>& probs = acts.back();
    loss_sum += -std::log(std::clamp(probs[label], kProbFloor, 1.0));

    // delta = dL/dlogits for this sample (mean scaling applied at the end).
    delta.assign(probs.begin(), probs.end());
    delta[label] -= 1.0;

    for (int l = layers - 1; l >= 0; --l) {
      const int fan_in = spec.layer_sizes[l];
      const int fan_out = spec.layer_sizes[l + 1];
      const float* w = params.values.data() + spec.weight_offset(l);
      double* gw = grad.data() + spec.weight_offset(l);
      double* gb = grad.data() + spec.bias_offset(l);
      const std::vector<double>& in = acts[l];
      for (int o = 0; o < fan_out; ++o) {
        const double dz = delta[o];
        double* gw_row = gw + static_cast<std::size_t>(o) * fan_in;
        for (int i = 0; i < fan_in; ++i) gw_row[i] += dz * in[i];
        gb[o] += dz;
      }
      if (l > 0) {
        delta_prev.assign(fan_in, 0.0);
        for (int o = 0; o < fan_out; ++o) {
          const double dz = delta[o];
          const float* wrow = w + static_cast<std::size_t>(o) * fan_in;
          for (int i = 0; i < fan_in; ++i) delta_prev[i] += dz * wrow[i];
        }
        // ReLU gate: activation zero means the unit was clamped.
        for (int i = 0; i < fan_in; ++i) {
          if (in[i] <= 0.0) delta_prev[i] = 0.0;
        }
        delta.swap(delta_prev);
      }
    }
  }

  ParameterVector g{spec, std::vector<float>(d)};
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t j = 0; j < d; ++j) g.values[j] = static_cast<float>(grad[j] * inv);
  return {loss_sum * inv, g};
}

ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& gradient,
                         double lr, std::span<const std::uint8_t> mask) {
  if (lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (params.values.size() != gradient.values.size()) {
    throw std::invalid_argument("parameter and gradient lengths differ");
  }
  if (!mask.empty() && mask.size() != params.values.size()) {
    throw std::invalid_argument("mask length differs from parameter length");
  }
  ParameterVector out = params;
  const std::size_t d = out.values.size();
  for (std::size_t j = 0; j < d; ++j) {
    if (!mask.empty() && mask[j] == 0) continue;
    out.values[j] = static_cast<float>(static_cast<double>(params.values[j]) -
                                       lr * static_cast<double>(gradient.values[j]));
  }
  return out;
}

std::vector<int> predict(const ParameterVector& params, const Matrix& inputs) {
  const Matrix probs = forward(params, inputs);
  std::vector<int> labels(inputs.rows);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const float* row = probs.row(r);
    labels[r] = static_cast<int>(std::max_element(row, row + probs.cols) - row);
  }
  return labels;
}

double accuracy(const ParameterVector& params, const Matrix& inputs,
                const std::vector<int>& labels) {
  if (inputs.rows == 0) throw std::invalid_argument("empty evaluation set");
  const std::vector<int> predicted = predict(params, inputs);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (predicted[r] == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

bool all_finite(const ParameterVector& params) {
  for (float v : params.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace tramark
