// Command-line front end: dataset generation, training, embedding and the
// evaluation protocols. Run `rwm --help` or `rwm <command> --help`.

#include "rwm/data.hpp"
#include "rwm/harness.hpp"
#include "rwm/io.hpp"
#include "rwm/metrics.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace rwm;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

struct Global {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string format = "csv";
};

struct ArchOptions {
  std::vector<Index> widths{16, 32, 64};
  std::vector<int> strides{1, 2, 2};
  int kernel = 3;
  std::uint64_t init_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--widths", widths, "Channel widths per block");
    app->add_option("--strides", strides, "Stride per block");
    app->add_option("--kernel", kernel, "Kernel size");
    app->add_option("--init-seed", init_seed, "Weight initialization seed");
  }
  DetectorConfig config(const Shape& item, Index head) const {
    DetectorConfig c;
    c.channels = item.at(0);
    c.height = item.at(1);
    c.width = item.at(2);
    c.channel_widths = widths;
    c.strides = strides;
    c.kernel_size = kernel;
    c.head_dim = head;
    c.seed = init_seed;
    return c;
  }
};

struct WatermarkOptions {
  double epsilon = 20.0 / 255.0;
  int steps = 5;
  double step_size = 0.0;
  int samples = 1;
  std::string pipeline;  // file

  void add(CLI::App* app, bool with_pipeline = true) {
    app->add_option("--epsilon", epsilon, "l-inf watermark budget");
    app->add_option("--pgd-steps", steps, "PGD steps");
    app->add_option("--step-size", step_size, "PGD step size (0: 2.5 epsilon / steps)");
    app->add_option("--embed-samples", samples, "Transformations sampled per PGD step");
    if (with_pipeline) app->add_option("--pipeline", pipeline, "Transformation pipeline file")->check(CLI::ExistingFile);
  }
  WatermarkConfig config(std::uint64_t seed) const {
    WatermarkConfig w;
    w.epsilon = epsilon;
    w.steps = steps;
    w.step_size = step_size;
    w.transform_samples = samples;
    w.seed = seed;
    return w;
  }
};

struct TrainOptions {
  std::string data;
  int steps = 5000;
  int batch = 32;
  double lr = 0.1;
  double lr_decay = 0.1;
  int lr_decay_every = 20000;
  double momentum = 0.0;
  int samples_per_step = 1;
  double adaptive_delta = 0.0;
  int adaptive_window = 100;
  ArchOptions arch;
  WatermarkOptions wm;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset file with a `train` tensor")->required()->check(CLI::ExistingFile);
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--lr-decay", lr_decay, "Learning-rate decay factor");
    app->add_option("--lr-decay-every", lr_decay_every, "Steps between decays");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--samples-per-step", samples_per_step, "Transformations sampled per step");
    app->add_option("--adaptive-delta", adaptive_delta, "Adaptive epsilon decrement (0: off)");
    app->add_option("--adaptive-window", adaptive_window, "Adaptive epsilon window");
    arch.add(app);
    wm.add(app);
  }
  TrainConfig config(std::uint64_t seed) const;
};

std::string read_text(const std::string& path) { return read_file(path); }

TransformPipeline load_pipeline(const std::string& path) {
  if (path.empty()) return {};
  return parse_pipeline(read_text(path));
}

TrainConfig TrainOptions::config(std::uint64_t seed) const {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = batch;
  c.lr = lr;
  c.lr_decay_factor = lr_decay;
  c.lr_decay_every = lr_decay_every;
  c.momentum = momentum;
  c.wm = wm.config(seed);
  c.pipe = load_pipeline(wm.pipeline);
  c.transform_samples_per_step = samples_per_step;
  if (adaptive_delta > 0.0) c.adaptive_epsilon = AdaptiveEpsilon{adaptive_delta, adaptive_window};
  c.seed = seed;
  return c;
}

struct Loaded {
  Tensor<Real> train, test;
  bool has_test = false;
};

Loaded load_dataset(const std::string& path) {
  Loaded d;
  const auto tensors = load_tensor_file(path);
  d.train = find_tensor(tensors, "train");
  for (const auto& t : tensors)
    if (t.name == "test") {
      d.test = t.value;
      d.has_test = true;
    }
  return d;
}

/// Batch from `path`; `name` selects a tensor, else the only one (or
/// `test` in a dataset file). Single signals become batches of one.
Tensor<Real> load_signals(const std::string& path, const std::string& name) {
  const auto tensors = load_tensor_file(path);
  Tensor<Real> t;
  if (!name.empty() || tensors.size() == 1) {
    t = find_tensor(tensors, name);
  } else {
    t = find_tensor(tensors, "test");
  }
  if (t.ndim() == 3) return as_batch(t);
  if (t.ndim() != 4) throw FormatError(path + ": expected a (C,H,W) signal or an (N,C,H,W) batch");
  return t;
}

Tensor<Real> limit(const Tensor<Real>& batch, Index n) {
  if (n <= 0 || n >= batch.dim(0)) return batch;
  return slice(batch, 0, n);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string code_string(const BitCode& c) {
  std::string s;
  for (auto b : c) s += b ? '1' : '0';
  return s;
}

BitCode parse_code(const std::string& s) {
  BitCode c;
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw InvalidArgument("code must be a string of 0 and 1, got '" + s + "'");
    c.push_back(static_cast<std::uint8_t>(ch == '1'));
  }
  if (c.empty()) throw InvalidArgument("empty code");
  return c;
}

class Runner {
 public:
  explicit Runner(Global& g) : g_(g) {}

  fs::path out(const std::string& file) const { return fs::path(g_.out) / file; }

  void prepare() const { fs::create_directories(g_.out); }

  void manifest(const CLI::App* cmd) const {
    nlohmann::ordered_json j;
    j["command"] = cmd->get_name();
    j["seed"] = g_.seed;
    j["out"] = g_.out;
    j["format"] = g_.format;
    nlohmann::ordered_json opts = nlohmann::ordered_json::object();
    for (const CLI::Option* opt : cmd->get_options()) {
      if (opt == cmd->get_help_ptr() || opt->get_lnames().empty()) continue;
      const std::string key = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& r = opt->results();
        if (opt->get_expected_max() > 1) opts[key] = r;
        else opts[key] = r.empty() ? std::string() : r.back();
      } else {
        opts[key] = opt->get_default_str();
      }
    }
    j["options"] = opts;
    write_file(out(cmd->get_name() + ".manifest.json"), j.dump(2) + "\n");
  }

  void table(const ReportTable& t, const std::string& file) const { write_report_csv(t, out(file)); }

 private:
  Global& g_;
};

std::map<std::string, std::string> train_metadata(const std::string& command, const TrainConfig& c,
                                                  const TrainReport& report) {
  std::map<std::string, std::string> m{{"command", command},
                                       {"steps", std::to_string(c.steps)},
                                       {"batch_size", std::to_string(c.batch_size)},
                                       {"lr", fmt(c.lr)},
                                       {"epsilon", fmt(c.wm.epsilon)},
                                       {"final_epsilon", fmt(report.steps.empty() ? c.wm.epsilon : report.steps.back().epsilon)},
                                       {"pgd_steps", std::to_string(c.wm.steps)},
                                       {"pipeline", pipeline_label(c.pipe)},
                                       {"seed", std::to_string(c.seed)}};
  if (report.test_accuracy) m["test_accuracy"] = fmt(*report.test_accuracy);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Transformation-resilient watermark detectors: training, embedding and evaluation."};
  app.option_defaults()->always_capture_default()->delimiter(',');
  Global g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"csv"}));
  app.require_subcommand(1);
  app.fallthrough();
  Runner run(g);
  std::function<void()> action;

  // gen-data
  SynthDatasetSpec ds;
  std::string generator = "mixed";
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (data.rtns)");
  gen->add_option("--count", ds.count, "Number of signals");
  gen->add_option("--channels", ds.channels);
  gen->add_option("--height", ds.height);
  gen->add_option("--width", ds.width);
  gen->add_option("--generator", generator)->check(CLI::IsMember({"gaussian_field", "shapes", "mixed"}));
  gen->add_option("--correlation-length", ds.correlation_length);
  gen->add_option("--max-shapes", ds.max_shapes);
  gen->add_option("--train-fraction", ds.train_fraction);
  gen->callback([&] {
    action = [&] {
      ds.generator = parse_generator(generator);
      ds.seed = g.seed;
      const Dataset d = synth_dataset(ds);
      save_tensor_file(run.out("data.rtns"), {{"train", d.train}, {"test", d.test}});
      run.manifest(gen);
    };
  });

  // train
  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a zero-bit detector (model.rswt, train.csv)");
  tr.add(train_cmd);
  train_cmd->callback([&] {
    action = [&] {
      const Loaded d = load_dataset(tr.data);
      const TrainConfig cfg = tr.config(g.seed);
      const auto model = build_detector<Real>(tr.arch.config(Shape(d.train.shape().begin() + 1, d.train.shape().end()), 1));
      const auto res = train(model, d.train, cfg, d.has_test ? &d.test : nullptr);
      save_checkpoint(res.model, run.out("model.rswt"), train_metadata("train", cfg, res.report));
      run.table(train_table(res.report), "train.csv");
      if (res.report.test_accuracy) std::printf("test_accuracy %s\n", fmt(*res.report.test_accuracy).c_str());
      run.manifest(train_cmd);
    };
  });

  // train-multibit
  TrainOptions trm;
  Index bits = 16;
  auto* trmb = app.add_subcommand("train-multibit", "Train a multi-bit detector (model.rswt, train.csv)");
  trm.add(trmb);
  trmb->add_option("--bits", bits, "Code length");
  trmb->callback([&] {
    action = [&] {
      const Loaded d = load_dataset(trm.data);
      TrainConfig cfg = trm.config(g.seed);
      const auto model =
          build_detector<Real>(trm.arch.config(Shape(d.train.shape().begin() + 1, d.train.shape().end()), bits));
      const auto res = train_multibit(model, d.train, cfg);
      save_checkpoint(res.model, run.out("model.rswt"), train_metadata("train-multibit", cfg, res.report));
      run.table(train_table(res.report), "train.csv");
      run.manifest(trmb);
    };
  });

  // train-ensemble
  TrainOptions tre;
  std::vector<std::uint64_t> member_seeds{1, 2, 3};
  auto* tens = app.add_subcommand("train-ensemble", "Train detectors differing only in init seed (member_<seed>.rswt)");
  tre.add(tens);
  tens->add_option("--member-seeds", member_seeds, "Init seed per member");
  tens->callback([&] {
    action = [&] {
      const Loaded d = load_dataset(tre.data);
      const TrainConfig cfg = tre.config(g.seed);
      const auto arch = tre.arch.config(Shape(d.train.shape().begin() + 1, d.train.shape().end()), 1);
      const auto members = train_ensemble(arch, member_seeds, d.train, cfg);
      for (std::size_t i = 0; i < members.size(); ++i)
        save_checkpoint(members[i], run.out("member_" + std::to_string(member_seeds[i]) + ".rswt"),
                        train_metadata("train-ensemble", cfg, {}));
      run.manifest(tens);
    };
  });

  // train-hardened
  TrainOptions trh;
  std::vector<std::string> ensemble_files;
  auto* thard = app.add_subcommand("train-hardened", "Train against a frozen ensemble (model.rswt, train.csv)");
  trh.add(thard);
  thard->add_option("--ensemble", ensemble_files, "Ensemble checkpoints")->required()->check(CLI::ExistingFile);
  thard->callback([&] {
    action = [&] {
      const Loaded d = load_dataset(trh.data);
      const TrainConfig cfg = trh.config(g.seed);
      std::vector<DetectorModel<Real>> ensemble;
      for (const auto& f : ensemble_files) ensemble.push_back(load_checkpoint(f).model);
      const auto model = build_detector<Real>(trh.arch.config(Shape(d.train.shape().begin() + 1, d.train.shape().end()), 1));
      const auto res = train_specificity_hardened(model, ensemble, d.train, cfg, d.has_test ? &d.test : nullptr);
      save_checkpoint(res.model, run.out("model.rswt"), train_metadata("train-hardened", cfg, res.report));
      run.table(train_table(res.report), "train.csv");
      run.manifest(thard);
    };
  });

  // Shared model/input options for the evaluation commands.
  std::string model_file, input_file, tensor_name;
  Index max_signals = 0;
  double threshold = 0.0;
  auto model_input = [&](CLI::App* cmd) {
    cmd->add_option("--model", model_file, "Detector checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--input", input_file, "RTNS file with signals")->required()->check(CLI::ExistingFile);
    cmd->add_option("--tensor", tensor_name, "Tensor name inside the input file");
    cmd->add_option("--limit", max_signals, "Use the first N signals (0: all)");
  };

  // embed
  WatermarkOptions em;
  std::vector<std::string> codes_arg;
  auto* embed_cmd = app.add_subcommand("embed", "Watermark signals (watermarked.rtns)");
  model_input(embed_cmd);
  em.add(embed_cmd);
  embed_cmd->add_option("--code", codes_arg, "Bit string(s) for a multi-bit model: one, or one per signal");
  embed_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      const auto pipe = load_pipeline(em.pipeline);
      const auto emb = differentiable_part(pipe);
      const auto* p = pipe.specs.empty() || !emb ? nullptr : &*emb;
      Tensor<Real> y;
      if (model.is_multibit()) {
        std::vector<BitCode> codes;
        for (const auto& s : codes_arg) codes.push_back(parse_code(s));
        if (codes.empty()) throw InvalidArgument("--code is required for a multi-bit model");
        y = embed_multibit(model, x, codes, em.config(g.seed), p);
      } else {
        y = pgd_embed(model, x, em.config(g.seed), p);
      }
      save_tensor_file(run.out("watermarked.rtns"), {{"watermarked", y}});
      run.manifest(embed_cmd);
    };
  });

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Print 1 (watermarked) or 0 per signal");
  model_input(detect_cmd);
  detect_cmd->add_option("--threshold", threshold, "Logit threshold");
  detect_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      NoGradGuard ng;
      for (int label : predict(model, x, threshold)) std::printf("%d\n", label);
    };
  });

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "Print the decoded bit string per signal");
  model_input(decode_cmd);
  decode_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      for (const auto& c : decode_multibit(model, x)) std::printf("%s\n", code_string(c).c_str());
    };
  });

  // attack-curve
  WatermarkOptions atk_wm;
  std::vector<double> epsilons{1.0 / 255, 12.0 / 255, 23.0 / 255, 33.0 / 255};
  Index variants = 100;
  bool plain_embed = false;
  auto* attack_cmd = app.add_subcommand("attack-curve", "Attack success per epsilon (attack_curve.csv)");
  model_input(attack_cmd);
  atk_wm.add(attack_cmd);
  attack_cmd->add_option("--epsilons", epsilons, "Epsilon sweep");
  attack_cmd->add_option("--variants", variants, "Transformed copies per signal");
  attack_cmd->add_option("--threshold", threshold, "Logit threshold");
  attack_cmd->add_flag("--plain-embed", plain_embed, "Embed without sampling the attack transformations");
  attack_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      AttackOptions o{atk_wm.config(g.seed), variants, threshold, !plain_embed};
      Rng rng(g.seed);
      const auto res = transformation_attack_curve(model, x, load_pipeline(atk_wm.pipeline), epsilons, o, rng);
      run.table(attack_table(res), "attack_curve.csv");
      run.manifest(attack_cmd);
    };
  });

  // min-eps
  WatermarkOptions me_wm;
  std::vector<double> eps_grid;
  for (int k = 1; k <= 33; ++k) eps_grid.push_back(k / 255.0);
  double target = 0.99;
  auto* mineps_cmd = app.add_subcommand("min-eps", "Smallest epsilon with detection above a target (min_eps.csv)");
  model_input(mineps_cmd);
  me_wm.add(mineps_cmd);
  mineps_cmd->add_option("--grid", eps_grid, "Ascending epsilon grid");
  mineps_cmd->add_option("--target", target, "Detection accuracy to exceed");
  mineps_cmd->add_option("--variants", variants, "Transformed copies per signal");
  mineps_cmd->add_option("--threshold", threshold, "Logit threshold");
  mineps_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      AttackOptions o{me_wm.config(g.seed), variants, threshold, true};
      Rng rng(g.seed);
      const auto res = min_epsilon_full_detection(model, x, load_pipeline(me_wm.pipeline), eps_grid, o, rng, target);
      run.table(attack_table(res.evaluated), "min_eps.csv");
      if (res.found) std::printf("epsilon %s\n", fmt(res.epsilon).c_str());
      else std::printf("not_found best_accuracy %s\n", fmt(res.best_accuracy).c_str());
      run.manifest(mineps_cmd);
    };
  });

  // specificity
  WatermarkOptions sp_wm;
  std::vector<std::string> source_files;
  std::vector<double> sp_eps{4.0 / 255, 8.0 / 255, 12.0 / 255, 16.0 / 255, 20.0 / 255};
  auto* spec_cmd = app.add_subcommand("specificity", "Transfer of source-model watermarks to a target (specificity.csv)");
  model_input(spec_cmd);
  sp_wm.add(spec_cmd);
  spec_cmd->add_option("--sources", source_files, "Source checkpoints")->required()->check(CLI::ExistingFile);
  spec_cmd->add_option("--epsilons", sp_eps, "Epsilon sweep");
  spec_cmd->add_option("--threshold", threshold, "Logit threshold");
  spec_cmd->callback([&] {
    action = [&] {
      const auto target_model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      std::vector<DetectorModel<Real>> sources;
      for (const auto& f : source_files) sources.push_back(load_checkpoint(f).model);
      const auto pipe = load_pipeline(sp_wm.pipeline);
      Rng rng(g.seed);
      const auto res = specificity_transfer_eval(sources, target_model, x, sp_eps, sp_wm.config(g.seed), rng,
                                                 pipe.specs.empty() ? nullptr : &pipe, threshold);
      run.table(transfer_table(res), "specificity.csv");
      run.manifest(spec_cmd);
    };
  });

  // ood-matrix
  TrainOptions ood_tr;
  Index ood_variants = 1, ood_test = 0;
  std::string ood_mode = "single_random";
  auto* ood_cmd = app.add_subcommand("ood-matrix", "Hold-one-out transformation matrix (ood_matrix.csv)");
  ood_tr.add(ood_cmd);
  ood_cmd->add_option("--variants", ood_variants, "Transformed copies per test signal");
  ood_cmd->add_option("--test-limit", ood_test, "Use the first N test signals (0: all)");
  ood_cmd->add_option("--mode", ood_mode, "Training pipeline mode")->check(CLI::IsMember({"single_random", "composition"}));
  ood_cmd->callback([&] {
    action = [&] {
      const Loaded d = load_dataset(ood_tr.data);
      if (!d.has_test) throw FormatError(ood_tr.data + ": no `test` tensor");
      OodOptions o;
      o.train = ood_tr.config(g.seed);
      o.train.pipe.mode = ood_mode == "composition" ? PipelineMode::composition : PipelineMode::single_random;
      o.arch = ood_tr.arch.config(Shape(d.train.shape().begin() + 1, d.train.shape().end()), 1);
      o.embed = o.train.wm;
      o.n_variants = ood_variants;
      Rng rng(g.seed);
      const auto m = ood_holdout_eval({d.train, limit(d.test, ood_test)}, ood_transforms(), o, rng);
      run.table(ood_table(m), "ood_matrix.csv");
      run.manifest(ood_cmd);
    };
  });

  // certify / certified-curve
  double sigma = 0.0, alpha = 0.99;
  Index noise_samples = 1000;
  auto* cert_cmd = app.add_subcommand("certify", "Randomized-smoothing certificate per signal (certificates.csv)");
  model_input(cert_cmd);
  cert_cmd->add_option("--sigma", sigma, "Noise standard deviation")->required()->always_capture_default(false)->default_str("");
  cert_cmd->add_option("--samples", noise_samples, "Monte Carlo samples");
  cert_cmd->add_option("--alpha", alpha, "Confidence level");
  cert_cmd->add_option("--threshold", threshold, "Logit threshold");
  cert_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      Rng rng(g.seed);
      const auto certs = certify_all(as_classifier(model, threshold), x, sigma, noise_samples, alpha, rng);
      run.table(certificate_table(certs), "certificates.csv");
      run.manifest(cert_cmd);
    };
  });

  std::vector<double> radii{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0};
  auto* curve_cmd = app.add_subcommand("certified-curve", "Certified accuracy per l2 radius (certified_curve.csv)");
  model_input(curve_cmd);
  curve_cmd->add_option("--sigma", sigma, "Noise standard deviation")->required()->always_capture_default(false)->default_str("");
  curve_cmd->add_option("--samples", noise_samples, "Monte Carlo samples");
  curve_cmd->add_option("--alpha", alpha, "Confidence level");
  curve_cmd->add_option("--radii", radii, "Ascending radii");
  curve_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      Rng rng(g.seed);
      run.table(certified_table(certified_accuracy_curve(model, x, sigma, noise_samples, alpha, radii, rng)),
                "certified_curve.csv");
      run.manifest(curve_cmd);
    };
  });

  // multibit-curve
  WatermarkOptions mb_wm;
  std::vector<std::string> sweep_args{"identity", "blur sigma=0.5", "blur sigma=1", "pixel_dropout keep_percent=30"};
  auto* mb_cmd = app.add_subcommand("multibit-curve", "Bit recovery per transformation (multibit_curve.csv)");
  model_input(mb_cmd);
  mb_wm.add(mb_cmd);
  mb_cmd->add_option("--sweep", sweep_args, "Transformations, one spec each (`identity` for none)");
  mb_cmd->add_option("--variants", variants, "Transformed copies per signal");
  mb_cmd->callback([&] {
    action = [&] {
      const auto model = load_checkpoint(model_file).model;
      const auto x = limit(load_signals(input_file, tensor_name), max_signals);
      std::vector<TransformPipeline> sweep;
      for (const auto& s : sweep_args) sweep.push_back(s == "identity" ? TransformPipeline{} : single_transform(parse_spec(s)));
      Rng rng(g.seed);
      const auto codes = random_codes(x.dim(0), model.head_dim(), rng);
      const auto pipe = load_pipeline(mb_wm.pipeline);
      const auto res = multibit_robustness_curve(model, x, codes, sweep, mb_wm.config(g.seed), variants, rng,
                                                 pipe.specs.empty() ? nullptr : &pipe);
      run.table(bit_recovery_table(res), "multibit_curve.csv");
      run.manifest(mb_cmd);
    };
  });

  // metrics
  std::string a_file, b_file;
  auto* metrics_cmd = app.add_subcommand("metrics", "Per-signal SSIM and PSNR between two batches (metrics.csv)");
  metrics_cmd->add_option("--a", a_file, "First RTNS file")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--b", b_file, "Second RTNS file")->required()->check(CLI::ExistingFile);
  std::string tensor_a, tensor_b;
  metrics_cmd->add_option("--tensor-a", tensor_a, "Tensor name in the first file");
  metrics_cmd->add_option("--tensor-b", tensor_b, "Tensor name in the second file");
  metrics_cmd->add_option("--limit", max_signals, "Use the first N signals of each (0: all)");
  metrics_cmd->callback([&] {
    action = [&] {
      const auto a = limit(load_signals(a_file, tensor_a), max_signals);
      const auto b = limit(load_signals(b_file, tensor_b), max_signals);
      if (a.shape() != b.shape()) throw InvalidArgument("metrics: shapes differ");
      const auto s = batch_ssim(a, b);
      const auto p = batch_psnr(a, b);
      ReportTable t;
      t.columns = {"index", "ssim", "psnr"};
      for (Index i = 0; i < s.size(); ++i) t.add_row({std::int64_t(i), s[i], p[i]});
      run.table(t, "metrics.csv");
      std::printf("mean_ssim %s\n", fmt(s.size() ? s.mean() : 1.0).c_str());
      run.manifest(metrics_cmd);
    };
  });

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsageError;
  }
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.empty() || a[0] == '-') {
      if (a == "--seed" || a == "--out" || a == "--format") ++i;
      continue;
    }
    if (!app.get_subcommand_no_throw(a)) {
      std::cerr << "unknown subcommand '" << a << "'\n" << app.help();
      return kUsageError;
    }
    break;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  try {
    run.prepare();
    action();
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return 0;
}
