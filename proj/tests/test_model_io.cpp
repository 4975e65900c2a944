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

#include <gtest/gtest.h>

#include <filesystem>
#include <unistd.h>

#include "oracles.hpp"
#include "tml/model_io.hpp"

using namespace tml;
namespace fs = std::filesystem;

namespace {

EmbedderConfig small_config() {
  EmbedderConfig cfg;
  cfg.input_h = cfg.input_w = 16;
  cfg.conv_channels = {4, 8};
  cfg.embedding_dim = 8;
  cfg.init_seed = 11;
  return cfg;
}

TensorF probe(std::size_t n, std::size_t hw) {
  Rng rng(99);
  return oracle::random_tensor<float>({n, 3, hw, hw}, rng, 0.0, 1.0);
}

ModelBundle full_bundle() {
  const auto net = build_embedder(small_config());
  ModelBundle b{net, build_mlp_head(8, 6, {"x", "y", "z"}, 2), KnnIndex(8)};
  b.index->enroll(embed_batch(net, probe(3, 16)), "x");
  b.index->enroll(embed_batch(net, slice_rows(probe(5, 16), 3, 5)), "y");
  return b;
}

ModelBundle round_trip(const ModelBundle& b) { return deserialize_model(serialize_model(b)); }

}  // namespace

TEST(ModelIo, FloatRoundTripIsBitExact) {
  const auto b = full_bundle();
  const auto back = round_trip(b);
  EXPECT_FALSE(back.quantized());
  EXPECT_EQ(std::get<EmbedderNet>(back.embedder), std::get<EmbedderNet>(b.embedder));
  EXPECT_EQ(back.config(), small_config());
  const TensorF x = probe(4, 16);
  EXPECT_EQ(back.embed(x), b.embed(x));
  ASSERT_TRUE(back.head && back.index);
  EXPECT_EQ(*back.head, *b.head);
  EXPECT_EQ(*back.index, *b.index);
  EXPECT_EQ(mlp_forward(*back.head, b.embed(x)), mlp_forward(*b.head, b.embed(x)));
  EXPECT_EQ(serialize_model(back), serialize_model(b));
}

TEST(ModelIo, QuantizedRoundTripsBothModes) {
  const auto net = build_embedder(small_config());
  const auto ranges = calibrate_static(net, probe(6, 16));
  for (const auto& q : {quantize_net(net, QuantMode::dynamic), quantize_net(net, QuantMode::static_ranges, &ranges)}) {
    ModelBundle b{q, std::nullopt, std::nullopt};
    const auto back = round_trip(b);
    ASSERT_TRUE(back.quantized());
    EXPECT_EQ(std::get<QuantizedNet>(back.embedder), q);
    const TensorF x = probe(3, 16);
    EXPECT_EQ(back.embed(x), quantized_embed(q, x));
    EXPECT_FALSE(back.head.has_value());
  }
}

TEST(ModelIo, EmptyIndexRoundTrips) {
  ModelBundle b{build_embedder(small_config()), std::nullopt, KnnIndex(8)};
  b.index->register_class("only");
  const auto back = round_trip(b);
  ASSERT_TRUE(back.index);
  EXPECT_TRUE(back.index->empty());
  EXPECT_EQ(back.index->class_names(), b.index->class_names());
}

TEST(ModelIo, HeaderLayout) {
  const auto bytes = serialize_model(full_bundle());
  ASSERT_GT(bytes.size(), 9u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TMLM");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 0);  // flags: float
}

TEST(ModelIo, CorruptMagicVersionAndTrailingBytes) {
  auto bytes = serialize_model(full_bundle());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(deserialize_model(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(deserialize_model(bad), FormatError);
}

TEST(ModelIo, EveryTruncationIsAFormatError) {
  ModelBundle b{build_embedder(small_config()), build_mlp_head(8, 3, {"a", "b"}, 1), std::nullopt};
  const auto bytes = serialize_model(b);
  for (std::size_t n = 0; n < bytes.size(); n += (n < 200 ? 1 : 97)) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + long(n));
    EXPECT_THROW(deserialize_model(cut), FormatError) << "length " << n;
  }
}

TEST(ModelIo, UnknownChunkTypeRejected) {
  ModelBundle b{build_embedder(small_config()), std::nullopt, std::nullopt};
  auto bytes = serialize_model(b);
  // Append a chunk of type 9 and bump the chunk count.
  const std::size_t config_len = 4 + 4 + 1 + 4 * 4 + 4 * 2 + 4 + 1 + 8;
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= std::uint32_t(bytes[config_len + std::size_t(i)]) << (8 * i);
  ++count;
  for (int i = 0; i < 4; ++i) bytes[config_len + std::size_t(i)] = std::uint8_t(count >> (8 * i));
  const std::uint8_t chunk[] = {9, 0, 0, 0, 0, 0, 0, 0, 0};
  bytes.insert(bytes.end(), std::begin(chunk), std::end(chunk));
  try {
    deserialize_model(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown chunk type 9"), std::string::npos);
  }
}

TEST(ModelIo, FlippedBiasByteChangesOutputs) {
  auto net = build_embedder(small_config());
  auto& bias = net.parameters().back();
  for (std::size_t j = 0; j < bias.size(); ++j) bias[j] = 0.3f + 0.01f * float(j);
  ModelBundle b{net, std::nullopt, std::nullopt};
  const auto bytes = serialize_model(b);
  const TensorF x = probe(2, 16);
  const TensorF ref = b.embed(x);
  // The dense bias is the final 8 floats of the file.
  for (std::size_t k = 1; k <= 32; k += 3) {
    auto bad = bytes;
    bad[bad.size() - k] ^= 0x40;
    try {
      const auto m = deserialize_model(bad);
      EXPECT_FALSE(m.embed(x) == ref) << "byte " << k;
    } catch (const Error&) {
      SUCCEED();
    }
  }
}

TEST(ModelIo, QuantizedFileAtMostFortyPercentForDefaultConfig) {
  const EmbedderConfig cfg;  // default desk-scale config
  const auto net = build_embedder(cfg);
  Rng rng(1);
  const auto ranges = calibrate_static(net, oracle::random_tensor<float>({4, 3, 64, 64}, rng, 0.0, 1.0));
  const auto f = serialize_model({net, std::nullopt, std::nullopt});
  const auto q = serialize_model({quantize_net(net, QuantMode::static_ranges, &ranges), std::nullopt, std::nullopt});
  EXPECT_LE(double(q.size()), 0.4 * double(f.size())) << q.size() << " vs " << f.size();
}

TEST(ModelIo, SaveAndLoadFile) {
  const auto path = fs::temp_directory_path() / ("tml_model_" + std::to_string(::getpid()) + ".tmlm");
  const auto b = full_bundle();
  const std::size_t n = save_model(path, b);
  EXPECT_EQ(n, fs::file_size(path));
  const auto back = load_model(path);
  EXPECT_EQ(back.embed(probe(2, 16)), b.embed(probe(2, 16)));
  fs::remove(path);
  EXPECT_THROW(load_model(path), IoError);
}
