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
#include <string>
#include <vector>

#include "tml/tensor.hpp"

namespace tml {

struct LabeledImage {
  TensorF pixels;  // 3xHxW, values in [0, 1]
  std::size_t label = 0;
  std::string source;
};

/// Images plus an ordered class-name table; labels index class_names.
struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return images.size(); }
  std::size_t num_classes() const noexcept { return class_names.size(); }

  /// Throws DatasetError on an out-of-range label or mixed image shapes.
  void validate() const;

  std::vector<std::size_t> labels() const;
  std::vector<std::vector<std::size_t>> indices_by_class() const;

  /// Stacks the selected images into an NxCxHxW batch.
  TensorF stack(std::span<const std::size_t> indices) const;
  TensorF stack_all() const;

  /// Same class table, selected images.
  Dataset subset(std::span<const std::size_t> indices) const;
};

// ---- PPM ------------------------------------------------------------------

/// Binary P6 with maxval 255; header whitespace and '#' comments allowed.
TensorF decode_ppm(std::span<const std::uint8_t> bytes);

/// Inverse of decode_ppm with values clamped to [0,1] and rounded to 8 bits.
std::vector<std::uint8_t> encode_ppm(const TensorF& pixels);

TensorF read_ppm_file(const std::filesystem::path& path);
void write_ppm_file(const std::filesystem::path& path, const TensorF& pixels);

/// Bilinear resampling of a CxHxW image (align-corners = false).
TensorF resize_bilinear(const TensorF& image, std::size_t height, std::size_t width);

struct LoadOptions {
  /// Resize every image to this size when set.
  std::optional<std::size_t> height;
  std::optional<std::size_t> width;
};

/// <root>/<class_name>/<image files>. Class ids follow sorted directory
/// names; images within a class follow sorted file names.
Dataset load_dataset_dir(const std::filesystem::path& root, const LoadOptions& options = {});

/// Writes a dataset back out in the directory-per-class layout as PPM.
void write_dataset_dir(const Dataset& dataset, const std::filesystem::path& root);

// ---- synthetic textures ---------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t per_class = 40;
  std::size_t size = 32;
  double noise = 0.1;
  /// Shift each image's grating by a random phase, so position carries no
  /// class information.
  bool phase_jitter = true;
  std::uint64_t seed = 0;
};

/// Class c is a sinusoidal grating with its own spatial frequency, tinted by
/// its own hue, plus N(0, noise^2) pixel noise clamped to [0,1]. A class's
/// appearance depends only on c and classes draw from the generator in
/// order, so a 7-class set extends the 5-class set of the same seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace tml
