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
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "tml/classifier.hpp"
#include "tml/embedder.hpp"
#include "tml/quant.hpp"

namespace tml {

/// Chunk type tags of the TMLM container, version 1.
enum class ChunkType : std::uint8_t {
  weights_f32 = 0,
  weights_i8 = 1,
  qparams = 2,
  knn_index = 3,
  mlp_head = 4,
  activation_ranges = 5,
};

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// What one model file holds: a float or quantized embedder, plus an
/// optional classifier head and/or KNN index built on top of it.
struct ModelBundle {
  std::variant<EmbedderNet, QuantizedNet> embedder;
  std::optional<MlpHead> head;
  std::optional<KnnIndex> index;

  bool quantized() const { return std::holds_alternative<QuantizedNet>(embedder); }
  const EmbedderConfig& config() const;

  /// Embeds with whichever embedder the bundle carries.
  TensorF embed(const TensorF& images) const;
};

std::vector<std::uint8_t> serialize_model(const ModelBundle& bundle);

/// Throws FormatError on bad magic, unsupported version, truncation,
/// trailing bytes or an unknown chunk type; nothing is returned partially.
ModelBundle deserialize_model(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written.
std::size_t save_model(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace tml
