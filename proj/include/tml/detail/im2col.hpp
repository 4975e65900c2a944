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

#include <cstddef>

namespace tml::detail {

// 3x3 / stride 1 / pad 1 patch extraction for one image. `src` is C*H*W,
// `cols` is (C*9) x (H*W) row-major. Out-of-bounds taps read `pad`.
template <typename In, typename Out>
void im2col3x3(const In* src, std::size_t channels, std::size_t height, std::size_t width, Out* cols,
               Out pad = Out(0)) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        Out* row = cols + ((c * 9) + ky * 3 + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const long sy = long(y) + long(ky) - 1;
          for (std::size_t x = 0; x < width; ++x) {
            const long sx = long(x) + long(kx) - 1;
            const bool inside = sy >= 0 && sy < long(height) && sx >= 0 && sx < long(width);
            row[y * width + x] = inside ? Out(src[(c * height + std::size_t(sy)) * width + std::size_t(sx)]) : pad;
          }
        }
      }
    }
  }
}

// Adjoint of im2col3x3: scatters column gradients back onto the image.
template <typename Scalar>
void col2im3x3(const Scalar* cols, std::size_t channels, std::size_t height, std::size_t width, Scalar* dst) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const Scalar* row = cols + ((c * 9) + ky * 3 + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const long sy = long(y) + long(ky) - 1;
          if (sy < 0 || sy >= long(height)) continue;
          for (std::size_t x = 0; x < width; ++x) {
            const long sx = long(x) + long(kx) - 1;
            if (sx < 0 || sx >= long(width)) continue;
            dst[(c * height + std::size_t(sy)) * width + std::size_t(sx)] += row[y * width + x];
          }
        }
      }
    }
  }
}

}  // namespace tml::detail
