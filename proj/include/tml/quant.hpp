/**
 * Copyright 2026 The tripletml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tml/embedder.hpp"
#include "tml/tensor.hpp"

namespace tml {

enum class QuantScheme : std::uint8_t { symmetric = 0, affine = 1 };

/// Real value x maps to int8 code q with x ~= scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  QuantScheme scheme = QuantScheme::symmetric;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline constexpr double kMinScale = 1e-12;

/// symmetric: scale = max(|min|, |max|) / 127, zero_point 0.
/// affine:    scale = (max - min) / 255, zero_point = round(-128 - min/scale)
///            clamped to [-128, 127].
/// The scale is floored at 1e-12 so degenerate ranges stay usable.
QuantParams compute_qparams(double min, double max, QuantScheme scheme);

/// Round half away from zero, shift by zero_point, saturate to int8.
std::int8_t quantize_value(double x, const QuantParams& qp);

inline double dequantize_value(std::int8_t q, const QuantParams& qp) {
  return qp.scale * (double(q) - double(qp.zero_point));
}

struct QTensor {
  Shape shape;
  std::vector<std::int8_t> data;

  friend bool operator==(const QTensor&, const QTensor&) = default;
};

QTensor quantize_tensor(const TensorF& x, const QuantParams& qp);
TensorF dequantize_tensor(const QTensor& q, const QuantParams& qp);

struct ValueRange {
  float min = 0.0f;
  float max = 0.0f;

  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

/// Observed (min, max) at each activation site. Site i is the input of
/// quantized layer i: the image for the first conv, each pooled block output
/// for the next conv, and the flattened features for the final dense layer.
struct CalibrationRanges {
  std::vector<ValueRange> sites;

  /// Elementwise union with another observation of the same net.
  void merge(const CalibrationRanges& other);

  friend bool operator==(const CalibrationRanges&, const CalibrationRanges&) = default;
};

/// Forward-only pass over `images`; every range is widened to contain 0.
/// Parameters are not touched.
CalibrationRanges calibrate_static(const EmbedderNet& net, const TensorF& images, std::size_t chunk = 64);

enum class QuantMode : std::uint8_t { dynamic = 0, static_ranges = 1 };

std::string to_string(QuantMode mode);
QuantMode parse_quant_mode(const std::string& name);

struct QuantizedLayer {
  QTensor weight;         // conv: FxCx3x3, dense: IxO
  QuantParams weight_qp;  // symmetric, per tensor
  TensorF bias;           // kept in 32-bit float

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

/// Same topology as the source EmbedderNet with int8 weights. Static mode
/// carries one fixed affine QuantParams per activation site; dynamic mode
/// derives them from each batch at inference time.
struct QuantizedNet {
  EmbedderConfig config;
  QuantMode mode = QuantMode::dynamic;
  std::vector<QuantizedLayer> layers;
  std::vector<QuantParams> activation_qp;      // static only
  std::optional<CalibrationRanges> ranges;     // static only

  friend bool operator==(const QuantizedNet&, const QuantizedNet&) = default;
};

/// Throws ConfigError for static mode without ranges.
QuantizedNet quantize_net(const EmbedderNet& net, QuantMode mode, const CalibrationRanges* ranges = nullptr);

/// Conv and dense layers run on int8 codes with int32 accumulation, then
/// rescale by input_scale * weight_scale and add the float bias.
TensorF quantized_embed(const QuantizedNet& qnet, const TensorF& images);

struct BenchmarkReport {
  double float_total_s = 0.0;
  double quant_total_s = 0.0;
  double ratio = 0.0;
  std::size_t repeats = 0;
  std::size_t images = 0;
  std::vector<double> float_runs;
  std::vector<double> quant_runs;

  /// First line: float_total_s=<v> quant_total_s=<v> ratio=<v> repeats=<n>
  std::string format() const;
};

/// Median of the values; for even counts the lower middle element, so the
/// result is always one of the measured runs.
double median_of(std::vector<double> values);

/// Times `images.dim(0)` consecutive batch-of-one inferences on each path,
/// `repeats` times, and reports the median totals. Single-threaded.
BenchmarkReport benchmark_inference(const EmbedderNet& net, const QuantizedNet& qnet, const TensorF& images,
                                    std::size_t repeats);

}  // namespace tml
