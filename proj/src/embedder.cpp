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

#include "tml/embedder.hpp"

#include <cmath>
#include <string>

#include "tml/random.hpp"

namespace tml {

void EmbedderConfig::validate() const {
  if (input_c == 0 || input_h == 0 || input_w == 0) throw ConfigError("embedder input dims must be positive");
  if (conv_channels.empty()) throw ConfigError("embedder needs at least one conv block");
  for (std::size_t c : conv_channels) {
    if (c == 0) throw ConfigError("conv channel counts must be positive");
  }
  const std::size_t factor = std::size_t{1} << conv_channels.size();
  if (input_h % factor != 0 || input_w % factor != 0) {
    throw ConfigError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " is not divisible by 2^" + std::to_string(conv_channels.size()));
  }
  if (embedding_dim < 2) throw ConfigError("embedding dimension must be at least 2");
}

std::size_t EmbedderConfig::flat_features() const {
  const std::size_t factor = std::size_t{1} << conv_channels.size();
  return conv_channels.back() * (input_h / factor) * (input_w / factor);
}

std::vector<Shape> EmbedderConfig::parameter_shapes() const {
  validate();
  std::vector<Shape> shapes;
  std::size_t in = input_c;
  for (std::size_t out : conv_channels) {
    shapes.push_back({out, in, 3, 3});
    shapes.push_back({out});
    in = out;
  }
  shapes.push_back({flat_features(), embedding_dim});
  shapes.push_back({embedding_dim});
  return shapes;
}

EmbedderNet::EmbedderNet(EmbedderConfig config, std::vector<TensorF> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto shapes = config_.parameter_shapes();
  if (shapes.size() != params_.size()) {
    throw DimensionError("embedder expects " + std::to_string(shapes.size()) + " parameter tensors, got " +
                         std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params_[i].shape() != shapes[i]) {
      throw DimensionError("embedder parameter " + std::to_string(i) + " has shape " +
                           shape_string(params_[i].shape()) + ", expected " + shape_string(shapes[i]));
    }
  }
}

EmbedderNet build_embedder(const EmbedderConfig& config) {
  const auto shapes = config.parameter_shapes();
  Rng rng(config.init_seed);
  std::vector<TensorF> params;
  params.reserve(shapes.size());
  for (const auto& shape : shapes) {
    TensorF t(shape);
    if (shape.size() > 1) {
      const std::size_t fan_in = t.size() / (shape.size() == 4 ? shape[0] : shape[1]);
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (float& v : t.data()) v = float(rng.uniform(-bound, bound));
    }
    params.push_back(std::move(t));
  }
  return EmbedderNet(config, std::move(params));
}

TensorF embed_batch(const EmbedderNet& net, const TensorF& images) {
  GradTape<float> tape;
  Var x = tape.constant_ref(images);
  std::vector<Var> handles;
  for (const auto& p : net.parameters()) handles.push_back(tape.constant_ref(p));
  return tape.value(embed_on_tape(tape, net.config(), handles, x));
}

TensorF embed_all(const EmbedderNet& net, const TensorF& images, std::size_t chunk) {
  if (chunk == 0) throw ContractError("embed_all chunk size must be positive");
  const std::size_t n = images.dim(0);
  std::vector<TensorF> parts;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    parts.push_back(embed_batch(net, slice_rows(images, begin, std::min(n, begin + chunk))));
  }
  return concat_rows<float>(parts);
}

}  // namespace tml
