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

// Malformed-header corpus for the PPM decoder. Samples flagged must_fail
// are invalid by construction; the rest are mutations whose validity is not
// predicted, only that decoding never crashes.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tml/random.hpp"

namespace ppm_fuzz {

struct Sample {
  std::string label;
  std::vector<std::uint8_t> bytes;
  bool must_fail = false;
};

inline std::vector<std::uint8_t> make(const std::string& header, std::size_t payload, std::uint8_t fill = 7) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload, fill);
  return out;
}

inline std::vector<Sample> corpus(std::uint64_t seed) {
  std::vector<Sample> out;
  const auto valid = make("P6\n# ok\n3 2\n255\n", 18);

  // Every proper prefix of a valid file is truncated somewhere.
  for (std::size_t n = 0; n < valid.size(); ++n) {
    out.push_back({"prefix " + std::to_string(n), {valid.begin(), valid.begin() + long(n)}, true});
  }

  const std::vector<std::pair<std::string, std::vector<std::uint8_t>>> hand = {
      {"empty", {}},
      {"P5 magic", make("P5\n3 2\n255\n", 6)},
      {"P3 magic", make("P3\n1 1\n255\n0 0 0\n", 0)},
      {"lowercase magic", make("p6\n1 1\n255\n", 3)},
      {"no space after magic", make("P61 1\n255\n", 3)},
      {"negative width", make("P6\n-1 1\n255\n", 3)},
      {"zero width", make("P6\n0 1\n255\n", 3)},
      {"zero height", make("P6\n1 0\n255\n", 3)},
      {"huge dims", make("P6\n9999999 9999999\n255\n", 16)},
      {"overlong width", make("P6\n123456789012345678901234567890 1\n255\n", 3)},
      {"maxval 65535", make("P6\n1 1\n65535\n", 6)},
      {"maxval 0", make("P6\n1 1\n0\n", 3)},
      {"maxval 254", make("P6\n1 1\n254\n", 3)},
      {"missing maxval", make("P6\n1 1\n", 3)},
      {"maxval no separator", make("P6\n1 1\n255", 0)},
      {"hex width", make("P6\n0x1 1\n255\n", 3)},
      {"float width", make("P6\n1.0 1\n255\n", 3)},
      {"comment eats header", make("P6\n# 1 1 255\n", 3)},
      {"unterminated comment", make("P6\n#", 0)},
      {"short payload", make("P6\n2 2\n255\n", 11)},
      {"letters", make("P6\nab cd\n255\n", 3)},
      {"nul in header", make(std::string("P6\n1\0 1\n255\n", 11), 3)},
  };
  for (const auto& [label, bytes] : hand) out.push_back({label, bytes, true});

  // Single-byte substitutions across the header.
  const std::string header = "P6\n# ok\n3 2\n255\n";
  const std::uint8_t subs[] = {'#', ' ', '\n', '\t', '0', '1', '9', 'a', '-', '+', 0x00, 0xff, 'P', '6'};
  for (std::size_t i = 0; i < header.size(); ++i) {
    for (std::uint8_t s : subs) {
      auto b = valid;
      b[i] = s;
      out.push_back({"sub " + std::to_string(i) + "=" + std::to_string(s), b, false});
    }
    auto del = valid;
    del.erase(del.begin() + long(i));
    out.push_back({"del " + std::to_string(i), del, false});
  }

  // Random bytes after a correct magic.
  tml::Rng rng(seed);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::uint8_t> b{'P', '6'};
    const std::size_t n = rng.index(40);
    for (std::size_t j = 0; j < n; ++j) {
      // Bias towards header-ish characters so parsing goes deeper.
      const char alphabet[] = "0123456789 \n#\t255";
      b.push_back(rng.uniform() < 0.8 ? std::uint8_t(alphabet[rng.index(sizeof alphabet - 1)])
                                      : std::uint8_t(rng.index(256)));
    }
    out.push_back({"random " + std::to_string(i), b, false});
  }
  return out;
}

}  // namespace ppm_fuzz
