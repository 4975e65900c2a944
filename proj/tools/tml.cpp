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

// tml: command-line front end. Results go to stdout, diagnostics and the
// effective config to stderr.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "tml/eval.hpp"
#include "tml/model_io.hpp"

namespace fs = std::filesystem;
using namespace tml;

namespace {

// ---- options shared across subcommands -------------------------------------------

struct EmbedderOpts {
  std::vector<std::size_t> channels{8, 16};
  std::size_t dim = 64;
  bool normalize = true;
};

struct TrainOpts {
  std::size_t epochs = 300;
  std::size_t batch = 32;
  std::size_t P = 0;  // 0: largest divisor of batch that fits the class count
  double lr = 0.001;
  double margin = 0.2;
  std::string mining = "batch_hard";
};

struct HeadOpts {
  std::size_t hidden = 128;
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 0.001;
};

void add_embedder_opts(CLI::App* app, EmbedderOpts& o) {
  app->add_option("--channels", o.channels, "conv block widths")->delimiter(',');
  app->add_option("--dim", o.dim, "embedding dimension");
  app->add_option("--normalize", o.normalize, "L2-normalise embeddings (true/false)");
}

void add_train_opts(CLI::App* app, TrainOpts& o) {
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--batch", o.batch, "images per batch, P*K");
  app->add_option("--P", o.P, "classes per batch (0 = auto)");
  app->add_option("--lr", o.lr, "Adam learning rate");
  app->add_option("--margin", o.margin, "triplet margin");
  app->add_option("--mining", o.mining, "batch_hard or batch_all");
}

void add_head_opts(CLI::App* app, HeadOpts& o) {
  app->add_option("--hidden", o.hidden, "MLP hidden width");
  app->add_option("--head-epochs", o.epochs, "MLP head epochs");
  app->add_option("--head-batch", o.batch, "MLP head batch size");
  app->add_option("--head-lr", o.lr, "MLP head learning rate");
}

TrainConfig make_train_config(const TrainOpts& o, std::size_t n_classes, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.P = o.P;
  if (cfg.P == 0) {
    for (std::size_t p = std::min(o.batch, n_classes); p >= 1; --p) {
      if (o.batch % p == 0) {
        cfg.P = p;
        break;
      }
    }
  }
  if (cfg.P == 0 || o.batch % cfg.P != 0) {
    throw ConfigError("--P " + std::to_string(cfg.P) + " does not divide --batch " + std::to_string(o.batch));
  }
  cfg.K = o.batch / cfg.P;
  cfg.seed = seed;
  cfg.adam.lr = o.lr;
  cfg.triplet = {o.margin, parse_mining(o.mining)};
  return cfg;
}

EmbedderConfig make_embedder_config(const EmbedderOpts& o, const Dataset& data, std::uint64_t seed) {
  EmbedderConfig cfg;
  const auto& px = data.images.at(0).pixels;
  cfg.input_c = px.dim(0);
  cfg.input_h = px.dim(1);
  cfg.input_w = px.dim(2);
  cfg.conv_channels = o.channels;
  cfg.embedding_dim = o.dim;
  cfg.normalize = o.normalize;
  cfg.init_seed = seed;
  return cfg;
}

HeadConfig make_head_config(const HeadOpts& o, std::uint64_t seed) {
  HeadConfig cfg;
  cfg.hidden = o.hidden;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.adam.lr = o.lr;
  cfg.seed = seed;
  return cfg;
}

// ---- helpers -------------------------------------------------------------------

Dataset load_for(const fs::path& dir, const EmbedderConfig& cfg) {
  LoadOptions opts;
  opts.height = cfg.input_h;
  opts.width = cfg.input_w;
  return load_dataset_dir(dir, opts);
}

Dataset load_native(const fs::path& dir) {
  Dataset ds = load_dataset_dir(dir);
  std::fprintf(stderr, "loaded %zu images in %zu classes from %s\n", ds.size(), ds.num_classes(), dir.c_str());
  return ds;
}

EmbedFn bundle_embed(const ModelBundle& bundle) {
  return [&bundle](const TensorF& images) { return bundle.embed(images); };
}

const EmbedderNet& float_net(const ModelBundle& bundle, const char* what) {
  if (bundle.quantized()) throw ConfigError(std::string(what) + " needs a float model, got a quantized one");
  return std::get<EmbedderNet>(bundle.embedder);
}

ClassifierKind pick_classifier(const ModelBundle& bundle, const std::string& requested) {
  if (!requested.empty()) return parse_classifier(requested);
  if (bundle.index) return ClassifierKind::knn;
  if (bundle.head) return ClassifierKind::mlp;
  throw StateError("model has neither a KNN index nor an MLP head; run train-head first");
}

EvalReport evaluate_bundle(const ModelBundle& bundle, ClassifierKind kind, std::size_t k, const Dataset& test) {
  if (kind == ClassifierKind::mlp) {
    if (!bundle.head) throw StateError("model has no MLP head; run train-head --classifier mlp");
    return evaluate(bundle_embed(bundle), *bundle.head, test);
  }
  if (!bundle.index) throw StateError("model has no KNN index; run train-head --classifier knn");
  return evaluate(bundle_embed(bundle), *bundle.index, k, test);
}

void print_report(const EvalReport& r) {
  std::printf("accuracy=%.6f correct=%lld total=%lld\n", r.accuracy, static_cast<long long>(r.confusion.trace()),
              static_cast<long long>(r.total()));
  std::fputs(confusion_csv(r).c_str(), stdout);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// key=value lines, '#' comments, blank lines ignored.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

bool flag_given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

// Config-file values become flags unless the command line already sets them.
std::vector<std::string> merge_config(CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  CLI::App* sub = nullptr;
  for (auto* s : app.get_subcommands({})) {
    if (s->get_name() == args[0]) sub = s;
  }
  if (sub == nullptr) return args;
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : read_config_file(path)) {
    const std::string flag = "--" + key;
    if (key == "config" || sub->get_option_no_throw(flag) == nullptr) {
      throw ConfigError("unknown config key '" + key + "' for " + sub->get_name());
    }
    if (!flag_given(args, flag)) args.push_back(flag + "=" + value);
  }
  return args;
}

void echo_effective_config(const CLI::App* sub) {
  std::fprintf(stderr, "# effective config: %s\n", sub->get_name().c_str());
  for (const auto* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    std::fprintf(stderr, "%s=%s\n", name.c_str(), value.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"triplet-loss metric learning: train, quantize, evaluate", "tml"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::uint64_t seed = 0;
  std::string config_path;
  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--seed", seed, "seed for every random choice");
    sub->add_option("--config", config_path, "key=value file of flag defaults");
    return sub;
  };

  fs::path data, out, model, calib, image, novel, base, csv_out;
  EmbedderOpts eopts;
  TrainOpts topts;
  HeadOpts hopts;
  std::string classifier, mode = "static";
  std::size_t k = 1, runs = 16, shots = 2, repeats = 3, n_images = 100, image_size = 0;
  double split = 0.8;
  SyntheticSpec synth_spec;

  auto* synth = command("synth", "write a synthetic texture dataset");
  synth->add_option("--classes", synth_spec.classes, "number of classes");
  synth->add_option("--per-class", synth_spec.per_class, "images per class");
  synth->add_option("--size", synth_spec.size, "image side in pixels");
  synth->add_option("--noise", synth_spec.noise, "pixel noise sigma");
  synth->add_option("--phase-jitter", synth_spec.phase_jitter, "random grating phase per image (true/false)");
  synth->add_option("--out", out, "output directory")->required();

  auto* train_emb = command("train-embedder", "train the embedder with the triplet loss");
  train_emb->add_option("--data", data, "dataset directory")->required();
  train_emb->add_option("--out", out, "model file to write")->required();
  train_emb->add_option("--image-size", image_size, "resize images to this square size (0 = native)");
  add_embedder_opts(train_emb, eopts);
  add_train_opts(train_emb, topts);

  auto* train_head = command("train-head", "fit a KNN index or an MLP head on frozen embeddings");
  train_head->add_option("--model", model, "embedder model file")->required();
  train_head->add_option("--data", data, "dataset directory")->required();
  train_head->add_option("--out", out, "model file to write (default: overwrite --model)");
  train_head->add_option("--classifier", classifier, "knn or mlp")->default_str("knn");
  add_head_opts(train_head, hopts);

  auto* evaluate_cmd = command("evaluate", "accuracy and confusion matrix on a labelled directory");
  evaluate_cmd->add_option("--model", model, "model file")->required();
  evaluate_cmd->add_option("--data", data, "test dataset directory")->required();
  evaluate_cmd->add_option("--classifier", classifier, "knn or mlp (default: what the model has)");
  evaluate_cmd->add_option("--k", k, "KNN neighbours");
  evaluate_cmd->add_option("--confusion-csv", csv_out, "also write the confusion matrix here");

  auto* repeated = command("repeated-eval", "repeated stratified splits, retraining each run");
  repeated->add_option("--data", data, "dataset directory")->required();
  repeated->add_option("--runs", runs, "number of runs");
  repeated->add_option("--split", split, "train fraction per class");
  repeated->add_option("--classifier", classifier, "knn or mlp")->default_str("knn");
  repeated->add_option("--k", k, "KNN neighbours");
  repeated->add_option("--summary-csv", csv_out, "write the summary CSV here instead of stdout");
  add_embedder_opts(repeated, eopts);
  add_train_opts(repeated, topts);
  add_head_opts(repeated, hopts);

  auto* enroll = command("enroll-eval", "few-shot enrollment of novel classes");
  enroll->add_option("--model", model, "model file")->required();
  enroll->add_option("--novel", novel, "directory of novel classes")->required();
  enroll->add_option("--base", base, "also enroll every image of these classes");
  enroll->add_option("--shots", shots, "images enrolled per novel class");
  enroll->add_option("--k", k, "KNN neighbours");
  enroll->add_option("--confusion-csv", csv_out, "also write the confusion matrix here");

  auto* quantize = command("quantize", "post-training int8 quantization");
  quantize->add_option("--model", model, "float model file")->required();
  quantize->add_option("--mode", mode, "static or dynamic");
  quantize->add_option("--calib", calib, "calibration images (static mode)");
  quantize->add_option("--out", out, "quantized model file")->required();

  auto* bench = command("benchmark", "time batch-of-one inference, float vs int8");
  bench->add_option("--model", model, "float model file")->required();
  bench->add_option("--data", data, "images to run")->required();
  bench->add_option("--images", n_images, "number of images (cycled if the set is smaller)");
  bench->add_option("--repeats", repeats, "timed repetitions; the median is reported");
  bench->add_option("--mode", mode, "static or dynamic");

  auto* embed_cmd = command("embed", "write embeddings as CSV");
  embed_cmd->add_option("--model", model, "model file")->required();
  embed_cmd->add_option("--data", data, "dataset directory")->required();
  embed_cmd->add_option("--out", out, "CSV file (default: stdout)");

  auto* predict = command("predict", "classify one image; prints name<TAB>confidence");
  predict->add_option("--model", model, "model file")->required();
  predict->add_option("--image", image, "PPM image")->required();
  predict->add_option("--classifier", classifier, "knn or mlp (default: what the model has)");
  predict->add_option("--k", k, "KNN neighbours");

  auto* project = command("project", "2-D PCA of embeddings as CSV");
  project->add_option("--model", model, "model file")->required();
  project->add_option("--data", data, "dataset directory")->required();
  project->add_option("--out", out, "CSV file")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    echo_effective_config(sub);

    if (sub == synth) {
      synth_spec.seed = seed;
      const Dataset ds = generate_synthetic(synth_spec);
      write_dataset_dir(ds, out);
      std::printf("wrote %zu images in %zu classes to %s\n", ds.size(), ds.num_classes(), out.c_str());
    } else if (sub == train_emb) {
      Dataset ds;
      if (image_size > 0) {
        LoadOptions lo;
        lo.height = lo.width = image_size;
        ds = load_dataset_dir(data, lo);
      } else {
        ds = load_native(data);
      }
      const auto ecfg = make_embedder_config(eopts, ds, seed);
      const auto tcfg = make_train_config(topts, ds.num_classes(), seed);
      std::fprintf(stderr, "P=%zu K=%zu steps/epoch=%zu\n", tcfg.P, tcfg.K, (ds.size() + tcfg.batch - 1) / tcfg.batch);
      auto trained = train_embedder(ds, ecfg, tcfg, [](std::size_t epoch, double loss, double active) {
        std::fprintf(stderr, "epoch %zu loss=%.6f active=%.4f\n", epoch, loss, active);
      });
      const std::size_t bytes = save_model(out, {std::move(trained.net), std::nullopt, std::nullopt});
      std::printf("wrote %s (%zu bytes)\n", out.c_str(), bytes);
    } else if (sub == train_head) {
      ModelBundle bundle = load_model(model);
      const Dataset ds = load_for(data, bundle.config());
      if (parse_classifier(classifier.empty() ? "knn" : classifier) == ClassifierKind::knn) {
        bundle.index = build_index(bundle_embed(bundle), ds);
      } else {
        const TensorF e = bundle.embed(ds.stack_all());
        bundle.head = train_head_on_embeddings(e, ds.labels(), ds.class_names, make_head_config(hopts, seed));
      }
      const fs::path dest = out.empty() ? model : out;
      const std::size_t bytes = save_model(dest, bundle);
      std::printf("wrote %s (%zu bytes)\n", dest.c_str(), bytes);
    } else if (sub == evaluate_cmd) {
      const ModelBundle bundle = load_model(model);
      const Dataset ds = load_for(data, bundle.config());
      const auto report = evaluate_bundle(bundle, pick_classifier(bundle, classifier), k, ds);
      print_report(report);
      if (!csv_out.empty()) export_confusion_csv(report, csv_out);
    } else if (sub == repeated) {
      const Dataset ds = load_native(data);
      RepeatedEvalConfig cfg;
      cfg.split = split;
      cfg.embedder = make_embedder_config(eopts, ds, seed);
      // Split ratio reduces per-class counts but not the class count.
      cfg.train = make_train_config(topts, ds.num_classes(), seed);
      cfg.classifier = parse_classifier(classifier.empty() ? "knn" : classifier);
      cfg.k = k;
      cfg.head = make_head_config(hopts, seed);
      const auto seeds = derive_run_seeds(seed, runs);
      const auto summary = repeated_splits(ds, cfg, seeds, [](std::size_t run, std::uint64_t s, const EvalReport& r) {
        std::fprintf(stderr, "run %zu seed=%llu accuracy=%.6f\n", run, static_cast<unsigned long long>(s), r.accuracy);
      });
      if (csv_out.empty()) {
        std::fputs(summary_csv(summary).c_str(), stdout);
      } else {
        export_summary_csv(summary, csv_out);
        std::printf("mean=%.6f max=%.6f runs=%zu\n", summary.mean, summary.max, summary.accuracies.size());
      }
    } else if (sub == enroll) {
      const ModelBundle bundle = load_model(model);
      const Dataset nov = load_for(novel, bundle.config());
      std::optional<Dataset> base_ds;
      if (!base.empty()) base_ds = load_for(base, bundle.config());
      FewShotConfig cfg;
      cfg.shots = shots;
      cfg.k = k;
      const auto report = fewshot_enroll_eval(bundle_embed(bundle), nov, cfg, base_ds ? &*base_ds : nullptr);
      print_report(report);
      if (!csv_out.empty()) export_confusion_csv(report, csv_out);
    } else if (sub == quantize) {
      const ModelBundle bundle = load_model(model);
      const EmbedderNet& net = float_net(bundle, "quantize");
      const QuantMode qm = parse_quant_mode(mode);
      std::optional<CalibrationRanges> ranges;
      if (qm == QuantMode::static_ranges) {
        if (calib.empty()) throw ConfigError("static quantization needs --calib <dir>");
        ranges = calibrate_static(net, load_for(calib, bundle.config()).stack_all());
      }
      ModelBundle q{quantize_net(net, qm, ranges ? &*ranges : nullptr), bundle.head, bundle.index};
      const std::size_t fbytes = serialize_model(bundle).size();
      const std::size_t qbytes = save_model(out, q);
      std::printf("wrote %s (%zu bytes, %.4f of float %zu bytes)\n", out.c_str(), qbytes,
                  double(qbytes) / double(fbytes), fbytes);
    } else if (sub == bench) {
      const ModelBundle bundle = load_model(model);
      const EmbedderNet& net = float_net(bundle, "benchmark");
      const Dataset ds = load_for(data, bundle.config());
      std::vector<std::size_t> pick(n_images);
      for (std::size_t i = 0; i < n_images; ++i) pick[i] = i % ds.size();
      const TensorF x = ds.stack(pick);
      const QuantMode qm = parse_quant_mode(mode);
      std::optional<CalibrationRanges> ranges;
      if (qm == QuantMode::static_ranges) ranges = calibrate_static(net, ds.stack_all());
      const auto qnet = quantize_net(net, qm, ranges ? &*ranges : nullptr);
      std::fputs(benchmark_inference(net, qnet, x, repeats).format().c_str(), stdout);
    } else if (sub == embed_cmd) {
      const ModelBundle bundle = load_model(model);
      const Dataset ds = load_for(data, bundle.config());
      const TensorF e = bundle.embed(ds.stack_all());
      std::ostringstream s;
      s << "label";
      for (std::size_t j = 0; j < e.dim(1); ++j) s << ",e" << j;
      s << "\n";
      char buf[32];
      for (std::size_t i = 0; i < e.dim(0); ++i) {
        s << ds.class_names[ds.images[i].label];
        for (std::size_t j = 0; j < e.dim(1); ++j) {
          std::snprintf(buf, sizeof buf, ",%.9g", double(e(i, j)));
          s << buf;
        }
        s << "\n";
      }
      if (out.empty()) {
        std::fputs(s.str().c_str(), stdout);
      } else {
        std::ofstream f(out, std::ios::binary);
        if (!(f << s.str())) throw IoError("cannot write " + out.string());
      }
    } else if (sub == predict) {
      const ModelBundle bundle = load_model(model);
      const auto cfg = bundle.config();
      TensorF px = read_ppm_file(image);
      if (px.dim(1) != cfg.input_h || px.dim(2) != cfg.input_w) px = resize_bilinear(px, cfg.input_h, cfg.input_w);
      const TensorF e = bundle.embed(px.reshaped({1, px.dim(0), px.dim(1), px.dim(2)}));
      Prediction p;
      std::string name;
      if (pick_classifier(bundle, classifier) == ClassifierKind::mlp) {
        if (!bundle.head) throw StateError("model has no MLP head");
        p = mlp_predict(*bundle.head, e).front();
        name = bundle.head->class_names()[p.label];
      } else {
        if (!bundle.index || bundle.index->empty()) throw StateError("model has no enrolled KNN index");
        p = knn_predict(*bundle.index, e, k).predictions.front();
        name = bundle.index->class_names()[p.label];
      }
      std::printf("%s\t%.6f\n", name.c_str(), p.confidence);
    } else if (sub == project) {
      const ModelBundle bundle = load_model(model);
      const Dataset ds = load_for(data, bundle.config());
      const auto labels = ds.labels();
      const auto proj = pca_project(bundle.embed(ds.stack_all()), labels);
      export_projection_csv(proj, ds.class_names, out);
      std::printf("wrote %s explained=%.6f,%.6f\n", out.c_str(), proj.explained[0], proj.explained[1]);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
