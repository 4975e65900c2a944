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

#include "tml/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

#include "tml/error.hpp"
#include "tml/random.hpp"

namespace fs = std::filesystem;

namespace tml {

void Dataset::validate() const {
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.label >= class_names.size()) {
      throw DatasetError("image " + std::to_string(i) + " has label " + std::to_string(img.label) + " but only " +
                         std::to_string(class_names.size()) + " classes exist");
    }
    if (img.pixels.shape() != images.front().pixels.shape()) {
      throw DatasetError("image " + img.source + " has shape " + shape_string(img.pixels.shape()) +
                         ", expected " + shape_string(images.front().pixels.shape()));
    }
  }
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.label);
  return out;
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(class_names.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.at(images[i].label).push_back(i);
  return out;
}

TensorF Dataset::stack(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DatasetError("cannot stack an empty image selection");
  const Shape& first = images.at(indices.front()).pixels.shape();
  Shape shape{indices.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  std::vector<float> data;
  data.reserve(shape_size(shape));
  for (std::size_t idx : indices) {
    const auto& px = images.at(idx).pixels;
    if (px.shape() != first) throw DatasetError("cannot stack images of different shapes");
    data.insert(data.end(), px.data().begin(), px.data().end());
  }
  return TensorF(std::move(shape), std::move(data));
}

TensorF Dataset::stack_all() const {
  std::vector<std::size_t> all(images.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack(all);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_names = class_names;
  out.images.reserve(indices.size());
  for (std::size_t idx : indices) out.images.push_back(images.at(idx));
  return out;
}

// ---- PPM ------------------------------------------------------------------

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = char(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + std::size_t(bytes_[pos_] - '0');
      ++pos_;
      if (++digits > 7) throw FormatError(std::string("PPM ") + what + " is too large");
    }
    if (digits == 0) throw FormatError(std::string("PPM header: expected ") + what);
    return value;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

}  // namespace

TensorF decode_ppm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("not a binary PPM (missing P6 magic)");
  HeaderReader reader(bytes);
  reader.pos() = 2;
  if (reader.pos() < bytes.size() && !is_space(bytes[reader.pos()]) && bytes[reader.pos()] != '#') {
    throw FormatError("PPM header: expected whitespace after magic");
  }
  const std::size_t width = reader.number("width");
  const std::size_t height = reader.number("height");
  const std::size_t maxval = reader.number("maxval");
  if (width == 0 || height == 0) throw FormatError("PPM dimensions must be positive");
  if (maxval != 255) throw FormatError("PPM maxval must be 255, got " + std::to_string(maxval));
  std::size_t& pos = reader.pos();
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("PPM header: expected whitespace after maxval");
  ++pos;
  const std::size_t plane = width * height;
  if (bytes.size() - pos < plane * 3) {
    throw FormatError("PPM payload truncated: need " + std::to_string(plane * 3) + " bytes, have " +
                      std::to_string(bytes.size() - pos));
  }
  TensorF out({3, height, width});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = float(bytes[pos + 3 * i + c]) / 255.0f;
  }
  return out;
}

std::vector<std::uint8_t> encode_ppm(const TensorF& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw DimensionError("encode_ppm expects a 3xHxW image, got " + shape_string(pixels.shape()));
  }
  const std::size_t height = pixels.dim(1), width = pixels.dim(2), plane = height * width;
  const std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(pixels[c * plane + i], 0.0f, 1.0f);
      out.push_back(std::uint8_t(std::lround(v * 255.0f)));
    }
  }
  return out;
}

TensorF read_ppm_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading image " + path.string());
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_ppm_file(const fs::path& path, const TensorF& pixels) {
  const auto bytes = encode_ppm(pixels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

TensorF resize_bilinear(const TensorF& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear expects CxHxW, got " + shape_string(image.shape()));
  const std::size_t channels = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
  if (in_h == height && in_w == width) return image;
  TensorF out({channels, height, width});
  const double sy = double(in_h) / double(height);
  const double sx = double(in_w) / double(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(in_h - 1));
    const std::size_t y0 = std::size_t(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(in_w - 1));
      const std::size_t x0 = std::size_t(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const float* p = image.data().data() + c * in_h * in_w;
        const double top = p[y0 * in_w + x0] * (1 - wx) + p[y0 * in_w + x1] * wx;
        const double bottom = p[y1 * in_w + x0] * (1 - wx) + p[y1 * in_w + x1] * wx;
        out[(c * height + y) * width + x] = float(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().filename().string().starts_with(".")) continue;
    if (directories ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  if (ec) throw IoError("cannot list directory " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Dataset load_dataset_dir(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  for (const auto& class_dir : sorted_entries(root, true)) {
    const std::size_t label = ds.class_names.size();
    ds.class_names.push_back(class_dir.filename().string());
    const auto files = sorted_entries(class_dir, false);
    if (files.empty()) throw DatasetError("class directory " + class_dir.string() + " contains no images");
    for (const auto& file : files) {
      std::string ext = file.extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
      if (ext != ".ppm") {
        throw FormatError("unsupported image format " + file.string() + " (supported: .ppm binary P6)");
      }
      TensorF px = read_ppm_file(file);
      if (options.height || options.width) {
        px = resize_bilinear(px, options.height.value_or(px.dim(1)), options.width.value_or(px.dim(2)));
      }
      ds.images.push_back(LabeledImage{std::move(px), label, file.string()});
    }
  }
  if (ds.class_names.empty()) throw DatasetError("dataset root " + root.string() + " has no class directories");
  ds.validate();
  return ds;
}

void write_dataset_dir(const Dataset& dataset, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::vector<std::size_t> counter(dataset.num_classes(), 0);
  for (const auto& name : dataset.class_names) {
    fs::create_directories(root / name, ec);
    if (ec) throw IoError("cannot create " + (root / name).string() + ": " + ec.message());
  }
  for (const auto& img : dataset.images) {
    char file[32];
    std::snprintf(file, sizeof file, "img_%04zu.ppm", counter[img.label]++);
    write_ppm_file(root / dataset.class_names.at(img.label) / file, img.pixels);
  }
}

// ---- synthetic textures ---------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hue_to_rgb(double hue, double saturation) {
  const double h = hue * 6.0;
  const int sector = int(h) % 6;
  const double f = h - std::floor(h);
  const double p = 1.0 - saturation;
  const double q = 1.0 - saturation * f;
  const double t = 1.0 - saturation * (1.0 - f);
  switch (sector) {
    case 0: return {1.0, t, p};
    case 1: return {q, 1.0, p};
    case 2: return {p, 1.0, t};
    case 3: return {p, q, 1.0};
    case 4: return {t, p, 1.0};
    default: return {1.0, p, q};
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (spec.per_class < 4) throw ConfigError("synthetic dataset needs at least 4 images per class");
  if (spec.size == 0) throw ConfigError("synthetic image size must be positive");
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");

  Rng rng(spec.seed);
  Dataset ds;
  const std::size_t n = spec.size;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof name, "class_%02zu", c);
    ds.class_names.emplace_back(name);

    // Golden-ratio hue spacing keeps every class's hue distinct and
    // independent of the class count.
    const double hue = std::fmod(double(c) * 0.6180339887498949, 1.0);
    const double cycles = 1.0 + double(c % 4);
    const Rgb tint = hue_to_rgb(hue, 0.8);
    const double channel[3] = {tint.r, tint.g, tint.b};

    // `shift` is in grating periods.
    auto render = [&](double shift) {
      TensorF img({3, n, n});
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double phase = 2.0 * std::numbers::pi * (cycles * (double(x) + double(y)) / double(n) + shift);
          const double wave = 0.5 + 0.5 * std::sin(phase);
          for (std::size_t ch = 0; ch < 3; ++ch) img[(ch * n + y) * n + x] = float(channel[ch] * (0.25 + 0.75 * wave));
        }
      }
      return img;
    };
    const TensorF clean = render(0.0);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      TensorF px = spec.phase_jitter ? render(rng.uniform()) : clean;
      if (spec.noise > 0.0) {
        for (float& v : px.data()) v = float(std::clamp(double(v) + spec.noise * rng.normal(), 0.0, 1.0));
      }
      ds.images.push_back(LabeledImage{std::move(px), c, "synthetic:" + std::to_string(c) + ":" + std::to_string(i)});
    }
  }
  return ds;
}

}  // namespace tml
