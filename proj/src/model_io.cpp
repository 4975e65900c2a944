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

#include "tml/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tml {

namespace {

constexpr char kMagic[4] = {'T', 'M', 'L', 'M'};
constexpr std::uint8_t kFlagQuantized = 0x01;
constexpr std::uint8_t kFlagStatic = 0x02;
constexpr std::uint8_t kRoleWeights = 0;
constexpr std::uint8_t kRoleActivations = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    bytes(s.data(), s.size());
  }
  void dims(const Shape& shape) {
    u32(std::uint32_t(shape.size()));
    for (std::size_t d : shape) u32(std::uint32_t(d));
  }
  void tensor(const TensorF& t) {
    dims(t.shape());
    for (float v : t.data()) f32(v);
  }
  void qtensor(const QTensor& t) {
    dims(t.shape);
    bytes(t.data.data(), t.data.size());
  }
  void chunk(ChunkType type, const Writer& payload) {
    u8(std::uint8_t(type));
    u64(payload.buf_.size());
    bytes(payload.buf_.data(), payload.buf_.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("model file truncated while reading ") + what);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  std::int32_t i32(const char* what) { return std::bit_cast<std::int32_t>(u32(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    auto b = take(n, what);
    return std::string(b.begin(), b.end());
  }
  Shape dims(const char* what, bool allow_zero = false) {
    const std::uint32_t rank = u32(what);
    if (rank == 0 || rank > 8) throw FormatError(std::string("bad tensor rank in ") + what);
    Shape shape;
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::size_t d = u32(what);
      if (d == 0 && !allow_zero) throw FormatError(std::string("zero tensor dimension in ") + what);
      shape.push_back(d);
      total *= d;
      if (total > remaining()) throw FormatError(std::string("tensor in ") + what + " exceeds the payload");
    }
    return shape;
  }
  TensorF tensor(const char* what) {
    Shape shape = dims(what);
    std::vector<float> data(shape_size(shape));
    for (float& v : data) v = f32(what);
    return TensorF(std::move(shape), std::move(data));
  }
  QTensor qtensor(const char* what) {
    QTensor t;
    t.shape = dims(what);
    auto b = take(shape_size(t.shape), what);
    t.data.resize(b.size());
    std::memcpy(t.data.data(), b.data(), b.size());
    return t;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const EmbedderConfig& c) {
  w.u32(std::uint32_t(c.input_c));
  w.u32(std::uint32_t(c.input_h));
  w.u32(std::uint32_t(c.input_w));
  w.u32(std::uint32_t(c.conv_channels.size()));
  for (std::size_t ch : c.conv_channels) w.u32(std::uint32_t(ch));
  w.u32(std::uint32_t(c.embedding_dim));
  w.u8(c.normalize ? 1 : 0);
  w.u64(c.init_seed);
}

EmbedderConfig read_config(Reader& r) {
  EmbedderConfig c;
  c.input_c = r.u32("config");
  c.input_h = r.u32("config");
  c.input_w = r.u32("config");
  const std::uint32_t blocks = r.u32("config");
  if (blocks == 0 || blocks > 16) throw FormatError("model config has an invalid conv block count");
  c.conv_channels.clear();
  for (std::uint32_t i = 0; i < blocks; ++i) c.conv_channels.push_back(r.u32("config"));
  c.embedding_dim = r.u32("config");
  const std::uint8_t norm = r.u8("config");
  if (norm > 1) throw FormatError("model config has an invalid normalize flag");
  c.normalize = norm == 1;
  c.init_seed = r.u64("config");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model config is invalid: ") + e.what());
  }
  return c;
}

void write_qparams(Writer& w, std::uint8_t role, const std::vector<QuantParams>& qps) {
  w.u8(role);
  w.u32(std::uint32_t(qps.size()));
  for (const auto& qp : qps) {
    w.f64(qp.scale);
    w.i32(qp.zero_point);
    w.u8(std::uint8_t(qp.scheme));
  }
}

void write_names(Writer& w, const std::vector<std::string>& names) {
  w.u32(std::uint32_t(names.size()));
  for (const auto& n : names) w.str(n);
}

std::vector<std::string> read_names(Reader& r, const char* what) {
  const std::uint32_t n = r.u32(what);
  if (n > r.remaining()) throw FormatError(std::string("name table too long in ") + what);
  std::vector<std::string> names;
  for (std::uint32_t i = 0; i < n; ++i) names.push_back(r.str(what));
  return names;
}

}  // namespace

const EmbedderConfig& ModelBundle::config() const {
  return std::visit(
      [](const auto& e) -> const EmbedderConfig& {
        if constexpr (std::is_same_v<std::decay_t<decltype(e)>, EmbedderNet>) {
          return e.config();
        } else {
          return e.config;
        }
      },
      embedder);
}

TensorF ModelBundle::embed(const TensorF& images) const {
  if (const auto* net = std::get_if<EmbedderNet>(&embedder)) return embed_all(*net, images);
  return quantized_embed(std::get<QuantizedNet>(embedder), images);
}

std::vector<std::uint8_t> serialize_model(const ModelBundle& bundle) {
  std::vector<std::pair<ChunkType, Writer>> chunks;
  auto add = [&chunks](ChunkType type) -> Writer& { return chunks.emplace_back(type, Writer{}).second; };

  std::uint8_t flags = 0;
  if (const auto* net = std::get_if<EmbedderNet>(&bundle.embedder)) {
    for (const auto& p : net->parameters()) add(ChunkType::weights_f32).tensor(p);
  } else {
    const auto& q = std::get<QuantizedNet>(bundle.embedder);
    flags |= kFlagQuantized;
    std::vector<QuantParams> weight_qp;
    for (const auto& layer : q.layers) {
      add(ChunkType::weights_i8).qtensor(layer.weight);
      add(ChunkType::weights_f32).tensor(layer.bias);
      weight_qp.push_back(layer.weight_qp);
    }
    write_qparams(add(ChunkType::qparams), kRoleWeights, weight_qp);
    if (q.mode == QuantMode::static_ranges) {
      flags |= kFlagStatic;
      write_qparams(add(ChunkType::qparams), kRoleActivations, q.activation_qp);
      Writer& w = add(ChunkType::activation_ranges);
      const auto& sites = q.ranges.value().sites;
      w.u32(std::uint32_t(sites.size()));
      for (const auto& r : sites) {
        w.f32(r.min);
        w.f32(r.max);
      }
    }
  }
  if (bundle.head) {
    Writer& w = add(ChunkType::mlp_head);
    write_names(w, bundle.head->class_names());
    for (const auto& p : bundle.head->parameters()) w.tensor(p);
  }
  if (bundle.index) {
    const auto& idx = *bundle.index;
    Writer& w = add(ChunkType::knn_index);
    w.dims({idx.size(), idx.dim()});
    for (float v : idx.rows()) w.f32(v);
    w.u32(std::uint32_t(idx.size()));
    for (std::size_t l : idx.labels()) w.u32(std::uint32_t(l));
    write_names(w, idx.class_names());
  }

  Writer out;
  out.bytes(kMagic, 4);
  out.u32(kModelFormatVersion);
  out.u8(flags);
  write_config(out, bundle.config());
  out.u32(std::uint32_t(chunks.size()));
  for (const auto& [type, payload] : chunks) out.chunk(type, payload);
  return std::move(out.buffer());
}

ModelBundle deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a TMLM model file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version) + " (expected 1)");
  }
  const std::uint8_t flags = r.u8("flags");
  if (flags & ~(kFlagQuantized | kFlagStatic)) throw FormatError("model file has unknown flag bits");
  const bool quantized = flags & kFlagQuantized;
  const bool is_static = flags & kFlagStatic;
  if (is_static && !quantized) throw FormatError("static flag set on a float model");
  const EmbedderConfig config = read_config(r);
  const std::uint32_t count = r.u32("chunk count");

  std::vector<TensorF> f32s;
  std::vector<QTensor> i8s;
  std::optional<std::vector<QuantParams>> weight_qp, act_qp;
  std::optional<CalibrationRanges> ranges;
  std::optional<MlpHead> head;
  std::optional<KnnIndex> index;

  for (std::uint32_t c = 0; c < count; ++c) {
    const std::uint8_t type = r.u8("chunk type");
    const std::uint64_t len = r.u64("chunk length");
    if (len > r.remaining()) throw FormatError("chunk " + std::to_string(c) + " is truncated");
    Reader p(r.take(std::size_t(len), "chunk payload"));
    switch (ChunkType(type)) {
      case ChunkType::weights_f32:
        f32s.push_back(p.tensor("weights-f32 chunk"));
        break;
      case ChunkType::weights_i8:
        i8s.push_back(p.qtensor("weights-i8 chunk"));
        break;
      case ChunkType::qparams: {
        const std::uint8_t role = p.u8("qparams chunk");
        const std::uint32_t n = p.u32("qparams chunk");
        if (n > p.remaining()) throw FormatError("qparams chunk count exceeds payload");
        std::vector<QuantParams> qps;
        for (std::uint32_t i = 0; i < n; ++i) {
          QuantParams qp;
          qp.scale = p.f64("qparams chunk");
          qp.zero_point = p.i32("qparams chunk");
          const std::uint8_t scheme = p.u8("qparams chunk");
          if (scheme > 1 || !(qp.scale > 0.0) || qp.zero_point < -128 || qp.zero_point > 127) {
            throw FormatError("qparams chunk holds invalid parameters");
          }
          qp.scheme = QuantScheme(scheme);
          qps.push_back(qp);
        }
        if (role == kRoleWeights && !weight_qp) {
          weight_qp = std::move(qps);
        } else if (role == kRoleActivations && !act_qp) {
          act_qp = std::move(qps);
        } else {
          throw FormatError("unexpected qparams chunk role " + std::to_string(role));
        }
        break;
      }
      case ChunkType::activation_ranges: {
        const std::uint32_t n = p.u32("activation-ranges chunk");
        if (n > p.remaining()) throw FormatError("activation-ranges count exceeds payload");
        CalibrationRanges cr;
        for (std::uint32_t i = 0; i < n; ++i) {
          ValueRange v;
          v.min = p.f32("activation-ranges chunk");
          v.max = p.f32("activation-ranges chunk");
          cr.sites.push_back(v);
        }
        ranges = std::move(cr);
        break;
      }
      case ChunkType::mlp_head: {
        auto names = read_names(p, "mlp-head chunk");
        std::vector<TensorF> params;
        for (int i = 0; i < 4; ++i) params.push_back(p.tensor("mlp-head chunk"));
        try {
          head.emplace(std::move(params), std::move(names));
        } catch (const Error& e) {
          throw FormatError(std::string("mlp-head chunk is inconsistent: ") + e.what());
        }
        break;
      }
      case ChunkType::knn_index: {
        const Shape shape = p.dims("knn-index chunk", true);
        if (shape.size() != 2 || shape[1] == 0) throw FormatError("knn-index chunk must hold an NxD matrix");
        std::vector<float> rows(shape[0] * shape[1]);
        for (float& v : rows) v = p.f32("knn-index chunk");
        const std::uint32_t n = p.u32("knn-index chunk");
        if (n != shape[0]) throw FormatError("knn-index label count does not match its rows");
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = p.u32("knn-index chunk");
        auto names = read_names(p, "knn-index chunk");
        try {
          index.emplace(shape[1], std::move(rows), std::move(labels), std::move(names));
        } catch (const Error& e) {
          throw FormatError(std::string("knn-index chunk is inconsistent: ") + e.what());
        }
        break;
      }
      default:
        throw FormatError("unknown chunk type " + std::to_string(type) + " in a version 1 file");
    }
    if (!p.done()) throw FormatError("chunk " + std::to_string(c) + " has trailing bytes");
  }
  if (!r.done()) throw FormatError("model file has trailing bytes after the last chunk");

  const std::size_t blocks = config.conv_channels.size();
  ModelBundle bundle{EmbedderNet(config, [&] {
                       auto shapes = config.parameter_shapes();
                       std::vector<TensorF> zeros;
                       for (auto& s : shapes) zeros.emplace_back(s);
                       return zeros;
                     }()),
                     std::move(head), std::move(index)};
  try {
    if (!quantized) {
      if (!i8s.empty() || weight_qp || act_qp || ranges) throw FormatError("float model carries quantization chunks");
      bundle.embedder = EmbedderNet(config, std::move(f32s));
    } else {
      const auto shapes = config.parameter_shapes();
      if (i8s.size() != blocks + 1 || f32s.size() != blocks + 1 || !weight_qp || weight_qp->size() != blocks + 1) {
        throw FormatError("quantized model has the wrong number of layer chunks");
      }
      QuantizedNet q;
      q.config = config;
      q.mode = is_static ? QuantMode::static_ranges : QuantMode::dynamic;
      for (std::size_t i = 0; i <= blocks; ++i) {
        if (i8s[i].shape != shapes[2 * i] || f32s[i].shape() != shapes[2 * i + 1]) {
          throw FormatError("quantized layer " + std::to_string(i) + " does not match the model config");
        }
        q.layers.push_back({std::move(i8s[i]), (*weight_qp)[i], std::move(f32s[i])});
      }
      if (is_static) {
        if (!act_qp || act_qp->size() != blocks + 1 || !ranges || ranges->sites.size() != blocks + 1) {
          throw FormatError("static quantized model is missing activation parameters");
        }
        q.activation_qp = std::move(*act_qp);
        q.ranges = std::move(ranges);
      } else if (act_qp || ranges) {
        throw FormatError("dynamic quantized model carries activation chunks");
      }
      bundle.embedder = std::move(q);
    }
  } catch (const DimensionError& e) {
    throw FormatError(std::string("model weights do not match the config: ") + e.what());
  }
  return bundle;
}

std::size_t save_model(const std::filesystem::path& path, const ModelBundle& bundle) {
  const auto bytes = serialize_model(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing model file " + path.string());
  return bytes.size();
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading model file " + path.string());
  return deserialize_model(bytes);
}

}  // namespace tml
