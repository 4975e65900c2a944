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
#include <span>
#include <vector>

#include "tml/ops.hpp"
#include "tml/tape.hpp"
#include "tml/tensor.hpp"

namespace tml {

struct EmbedderConfig {
  std::size_t input_c = 3;
  std::size_t input_h = 64;
  std::size_t input_w = 64;
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t embedding_dim = 64;
  bool normalize = true;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError when spatial dims are not divisible by
  /// 2^len(conv_channels) or embedding_dim < 2.
  void validate() const;

  /// Length of the flattened feature vector fed to the final dense layer.
  std::size_t flat_features() const;

  /// Conv kernel/bias pairs in block order, then dense weight and bias.
  std::vector<Shape> parameter_shapes() const;

  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

/// The shared-weight encoder. One parameter set serves every triplet slot;
/// anchors, positives and negatives all go through the same embed call.
class EmbedderNet {
 public:
  /// Adopts existing parameters (e.g. from a model file); shapes are checked
  /// against the config.
  EmbedderNet(EmbedderConfig config, std::vector<TensorF> params);

  const EmbedderConfig& config() const noexcept { return config_; }
  std::span<const TensorF> parameters() const noexcept { return params_; }
  std::span<TensorF> parameters() noexcept { return params_; }

  friend bool operator==(const EmbedderNet&, const EmbedderNet&) = default;

 private:
  EmbedderConfig config_;
  std::vector<TensorF> params_;
};

/// Deterministic construction: He-style uniform weights in
/// [-sqrt(6/fan_in), sqrt(6/fan_in)] drawn from init_seed, zero biases.
EmbedderNet build_embedder(const EmbedderConfig& config);

/// Records conv->relu->pool blocks, flatten, dense and (optionally) row
/// normalization. `params` follows EmbedderConfig::parameter_shapes order.
template <typename Scalar>
Var embed_on_tape(GradTape<Scalar>& tape, const EmbedderConfig& config, std::span<const Var> params, Var images) {
  const auto& shape = tape.value(images).shape();
  if (shape.size() != 4 || shape[1] != config.input_c || shape[2] != config.input_h || shape[3] != config.input_w) {
    throw DimensionError("embedder expects Bx" + std::to_string(config.input_c) + "x" +
                         std::to_string(config.input_h) + "x" + std::to_string(config.input_w) + " images, got " +
                         shape_string(shape));
  }
  const std::size_t blocks = config.conv_channels.size();
  if (params.size() != 2 * blocks + 2) throw ContractError("embedder parameter count does not match config");
  Var h = images;
  for (std::size_t i = 0; i < blocks; ++i) {
    h = conv2d(tape, h, params[2 * i], params[2 * i + 1]);
    h = relu(tape, h);
    h = maxpool2(tape, h);
  }
  h = flatten(tape, h);
  h = dense(tape, h, params[2 * blocks], params[2 * blocks + 1]);
  if (config.normalize) h = l2_normalize(tape, h);
  return h;
}

/// Registers the net's parameters on `tape` and records a forward pass.
template <typename Scalar>
Var embed_on_tape(GradTape<Scalar>& tape, const EmbedderNet& net, std::span<const Tensor<Scalar>> params,
                  Var images) {
  std::vector<Var> handles;
  handles.reserve(params.size());
  for (const auto& p : params) handles.push_back(tape.parameter(p));
  return embed_on_tape(tape, net.config(), handles, images);
}

/// Pure forward pass: BxCxHxW images -> BxD embeddings.
TensorF embed_batch(const EmbedderNet& net, const TensorF& images);

/// embed_batch over a large set, `chunk` images at a time.
TensorF embed_all(const EmbedderNet& net, const TensorF& images, std::size_t chunk = 64);

}  // namespace tml
