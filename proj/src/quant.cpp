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

#include "tml/quant.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "tml/detail/im2col.hpp"
#include "tml/ops.hpp"

namespace tml {

QuantParams compute_qparams(double min, double max, QuantScheme scheme) {
  if (min > max) throw ContractError("compute_qparams: min > max");
  QuantParams qp;
  qp.scheme = scheme;
  if (scheme == QuantScheme::symmetric) {
    qp.scale = std::max(std::max(std::abs(min), std::abs(max)) / 127.0, kMinScale);
    qp.zero_point = 0;
  } else {
    qp.scale = std::max((max - min) / 255.0, kMinScale);
    const double zp = std::round(-128.0 - min / qp.scale);
    qp.zero_point = std::int32_t(std::clamp(zp, -128.0, 127.0));
  }
  return qp;
}

std::int8_t quantize_value(double x, const QuantParams& qp) {
  // std::round rounds halfway cases away from zero.
  const double q = std::round(x / qp.scale) + double(qp.zero_point);
  return std::int8_t(std::clamp(q, -128.0, 127.0));
}

QTensor quantize_tensor(const TensorF& x, const QuantParams& qp) {
  QTensor out{x.shape(), std::vector<std::int8_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = quantize_value(x[i], qp);
  return out;
}

TensorF dequantize_tensor(const QTensor& q, const QuantParams& qp) {
  TensorF out(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i) out[i] = float(dequantize_value(q.data[i], qp));
  return out;
}

void CalibrationRanges::merge(const CalibrationRanges& other) {
  if (sites.empty()) {
    sites = other.sites;
    return;
  }
  if (other.sites.size() != sites.size()) throw ContractError("cannot merge ranges from different topologies");
  for (std::size_t i = 0; i < sites.size(); ++i) {
    sites[i].min = std::min(sites[i].min, other.sites[i].min);
    sites[i].max = std::max(sites[i].max, other.sites[i].max);
  }
}

namespace {

ValueRange observe(const TensorF& t) {
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  return {std::min(*lo, 0.0f), std::max(*hi, 0.0f)};
}

// Float forward pass reporting each quantization site's input.
template <typename Observer>
void float_forward_sites(const EmbedderNet& net, const TensorF& images, Observer&& on_site) {
  GradTape<float> tape;
  std::vector<Var> p;
  for (const auto& t : net.parameters()) p.push_back(tape.constant_ref(t));
  const std::size_t blocks = net.config().conv_channels.size();
  Var h = tape.constant_ref(images);
  for (std::size_t i = 0; i < blocks; ++i) {
    on_site(i, tape.value(h));
    h = maxpool2(tape, relu(tape, conv2d(tape, h, p[2 * i], p[2 * i + 1])));
  }
  h = flatten(tape, h);
  on_site(blocks, tape.value(h));
}

void check_images(const EmbedderConfig& cfg, const TensorF& images) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.input_c || s[2] != cfg.input_h || s[3] != cfg.input_w) {
    throw DimensionError("quantized embedder expects Bx" + std::to_string(cfg.input_c) + "x" +
                         std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) + " images, got " +
                         shape_string(s));
  }
}

using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::int32_t> shifted_codes(const TensorF& x, const QuantParams& qp) {
  std::vector<std::int32_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::int32_t(quantize_value(x[i], qp)) - qp.zero_point;
  return out;
}

IntMatrix weight_matrix(const QTensor& w, std::size_t rows, std::size_t cols) {
  IntMatrix m{Eigen::Index(rows), Eigen::Index(cols)};
  for (std::size_t i = 0; i < w.data.size(); ++i) m.data()[i] = w.data[i];
  return m;
}

TensorF quantized_conv(const TensorF& x, const QuantizedLayer& layer, const QuantParams& in_qp) {
  const std::size_t batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t filters = layer.weight.shape[0], plane = height * width, patch = channels * 9;
  const auto codes = shifted_codes(x, in_qp);
  const IntMatrix kmat = weight_matrix(layer.weight, filters, patch);
  const float rescale = float(in_qp.scale * layer.weight_qp.scale);
  IntMatrix cols{Eigen::Index(patch), Eigen::Index(plane)};
  IntMatrix acc;
  TensorF y({batch, filters, height, width});
  for (std::size_t n = 0; n < batch; ++n) {
    // Zero padding is the real value 0, i.e. code zero_point, i.e. 0 after the shift.
    detail::im2col3x3(codes.data() + n * channels * plane, channels, height, width, cols.data(), std::int32_t(0));
    acc.noalias() = kmat * cols;
    float* out = y.data().data() + n * filters * plane;
    for (std::size_t f = 0; f < filters; ++f) {
      for (std::size_t i = 0; i < plane; ++i) {
        out[f * plane + i] = float(acc(Eigen::Index(f), Eigen::Index(i))) * rescale + layer.bias[f];
      }
    }
  }
  return y;
}

TensorF quantized_dense(const TensorF& x, const QuantizedLayer& layer, const QuantParams& in_qp) {
  const std::size_t batch = x.dim(0), in = layer.weight.shape[0], out_dim = layer.weight.shape[1];
  const auto codes = shifted_codes(x, in_qp);
  const IntMatrix w = weight_matrix(layer.weight, in, out_dim);
  const IntMatrix acc = Eigen::Map<const IntMatrix>(codes.data(), Eigen::Index(batch), Eigen::Index(in)) * w;
  const float rescale = float(in_qp.scale * layer.weight_qp.scale);
  TensorF y({batch, out_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      y(b, o) = float(acc(Eigen::Index(b), Eigen::Index(o))) * rescale + layer.bias[o];
    }
  }
  return y;
}

TensorF relu_pool(TensorF x) {
  for (float& v : x.data()) v = std::max(v, 0.0f);
  GradTape<float> tape;
  return tape.value(maxpool2(tape, tape.constant_ref(x)));
}

}  // namespace

CalibrationRanges calibrate_static(const EmbedderNet& net, const TensorF& images, std::size_t chunk) {
  if (images.empty() || images.rank() != 4) throw ContractError("calibration set must be a nonempty image batch");
  if (chunk == 0) throw ContractError("calibration chunk size must be positive");
  check_images(net.config(), images);
  CalibrationRanges ranges;
  ranges.sites.resize(net.config().conv_channels.size() + 1);
  bool first = true;
  for (std::size_t begin = 0; begin < images.dim(0); begin += chunk) {
    const TensorF part = slice_rows(images, begin, std::min(images.dim(0), begin + chunk));
    float_forward_sites(net, part, [&](std::size_t site, const TensorF& value) {
      const ValueRange r = observe(value);
      auto& s = ranges.sites[site];
      s.min = first ? r.min : std::min(s.min, r.min);
      s.max = first ? r.max : std::max(s.max, r.max);
    });
    first = false;
  }
  return ranges;
}

std::string to_string(QuantMode mode) { return mode == QuantMode::dynamic ? "dynamic" : "static"; }

QuantMode parse_quant_mode(const std::string& name) {
  if (name == "dynamic") return QuantMode::dynamic;
  if (name == "static") return QuantMode::static_ranges;
  throw ConfigError("unknown quantization mode '" + name + "' (expected dynamic or static)");
}

QuantizedNet quantize_net(const EmbedderNet& net, QuantMode mode, const CalibrationRanges* ranges) {
  const std::size_t layers = net.config().conv_channels.size() + 1;
  if (mode == QuantMode::static_ranges) {
    if (!ranges) throw ConfigError("static quantization requires calibration ranges");
    if (ranges->sites.size() != layers) {
      throw ConfigError("calibration ranges have " + std::to_string(ranges->sites.size()) + " sites, net has " +
                        std::to_string(layers));
    }
  }
  QuantizedNet q;
  q.config = net.config();
  q.mode = mode;
  const auto params = net.parameters();
  for (std::size_t i = 0; i < layers; ++i) {
    const TensorF& w = params[2 * i];
    const auto [lo, hi] = std::minmax_element(w.data().begin(), w.data().end());
    const QuantParams qp = compute_qparams(*lo, *hi, QuantScheme::symmetric);
    q.layers.push_back({quantize_tensor(w, qp), qp, params[2 * i + 1]});
  }
  if (mode == QuantMode::static_ranges) {
    q.ranges = *ranges;
    for (const auto& r : ranges->sites) {
      q.activation_qp.push_back(compute_qparams(std::min(r.min, 0.0f), std::max(r.max, 0.0f), QuantScheme::affine));
    }
  }
  return q;
}

TensorF quantized_embed(const QuantizedNet& qnet, const TensorF& images) {
  check_images(qnet.config, images);
  const std::size_t blocks = qnet.config.conv_channels.size();
  if (qnet.layers.size() != blocks + 1) throw ContractError("quantized net topology does not match its config");
  if (qnet.mode == QuantMode::static_ranges && qnet.activation_qp.size() != blocks + 1) {
    throw ContractError("static quantized net is missing activation parameters");
  }
  auto site_qp = [&](std::size_t site, const TensorF& x) {
    if (qnet.mode == QuantMode::static_ranges) return qnet.activation_qp[site];
    const ValueRange r = observe(x);
    return compute_qparams(r.min, r.max, QuantScheme::affine);
  };

  TensorF h = images;
  for (std::size_t i = 0; i < blocks; ++i) {
    h = relu_pool(quantized_conv(h, qnet.layers[i], site_qp(i, h)));
  }
  h = h.reshaped({h.dim(0), h.size() / h.dim(0)});
  h = quantized_dense(h, qnet.layers[blocks], site_qp(blocks, h));
  if (qnet.config.normalize) {
    GradTape<float> tape;
    h = tape.value(l2_normalize(tape, tape.constant_ref(h)));
  }
  return h;
}

// ---- benchmark ----------------------------------------------------------------

double median_of(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

std::string BenchmarkReport::format() const {
  char line[256];
  std::snprintf(line, sizeof line, "float_total_s=%.6f quant_total_s=%.6f ratio=%.4f repeats=%zu\n", float_total_s,
                quant_total_s, ratio, repeats);
  char detail[128];
  std::snprintf(detail, sizeof detail, "images=%zu batch=1 threads=%d\n", images, Eigen::nbThreads());
  return std::string(line) + detail;
}

BenchmarkReport benchmark_inference(const EmbedderNet& net, const QuantizedNet& qnet, const TensorF& images,
                                    std::size_t repeats) {
  if (repeats == 0) throw ConfigError("benchmark needs at least one repeat");
  check_images(net.config(), images);
  Eigen::setNbThreads(1);
  using Clock = std::chrono::steady_clock;
  BenchmarkReport report;
  report.repeats = repeats;
  report.images = images.dim(0);
  std::vector<TensorF> singles;
  for (std::size_t i = 0; i < images.dim(0); ++i) singles.push_back(slice_rows(images, i, i + 1));

  volatile float sink = 0.0f;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto t0 = Clock::now();
    for (const auto& img : singles) sink = sink + embed_batch(net, img)[0];
    auto t1 = Clock::now();
    for (const auto& img : singles) sink = sink + quantized_embed(qnet, img)[0];
    auto t2 = Clock::now();
    report.float_runs.push_back(std::chrono::duration<double>(t1 - t0).count());
    report.quant_runs.push_back(std::chrono::duration<double>(t2 - t1).count());
  }
  report.float_total_s = median_of(report.float_runs);
  report.quant_total_s = median_of(report.quant_runs);
  report.ratio = report.quant_total_s > 0.0 ? report.float_total_s / report.quant_total_s : 0.0;
  return report;
}

}  // namespace tml
