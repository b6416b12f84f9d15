// samamba: dataset generation, training, evaluation, prediction,
// verification and benchmarking for the segmentation network.
//
// Exit codes: 0 success, 1 verification or training failure, 2 usage or
// config error, 3 I/O error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "samamba/train.hpp"
#include "samamba/verify.hpp"

namespace fs = std::filesystem;
using namespace samamba;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string precision;
  std::optional<std::string> out;

  std::string out_dir() const { return out.value_or("runs/default"); }
};

RunConfig resolve_run(const Globals& g) {
  RunConfig run;
  if (!g.config.empty()) {
    const auto bytes = read_file(g.config);
    run = parse_run_config(std::string(bytes.begin(), bytes.end()));
  }
  if (g.seed) run.seed = *g.seed;
  if (!g.precision.empty()) run.precision = g.precision;
  if (g.out) run.out_dir = *g.out;
  if (run.out_dir.empty()) run.out_dir = g.out_dir();
  run.model.seed = run.seed;
  run.validate();
  return run;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p.string(), {text.begin(), text.end()});
}

std::vector<SampleRecord> take(std::vector<SampleRecord> v, std::size_t n) {
  if (n && v.size() > n) v.resize(n);
  return v;
}

void check_extents(std::size_t size) {
  if (size == 0 || size % 32) throw UsageError("--size must be a positive multiple of 32, got " + std::to_string(size));
}

std::size_t thread_cap() {
  const char* env = std::getenv("SAMAMBA_THREADS");
  if (!env) return 1;
  try {
    const long v = std::stol(env);
    if (v > 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw UsageError(std::string("SAMAMBA_THREADS must be a positive integer, got '") + env + "'");
}

// --- generate -------------------------------------------------------------------

struct GenerateArgs {
  std::string counts = "8,2,2";
  std::size_t size = 256;
  std::string background = "mixed";
  bool force = false;
};

int cmd_generate(const Globals& g, const GenerateArgs& a) {
  check_extents(a.size);
  std::vector<std::size_t> n;
  std::stringstream ss(a.counts);
  for (std::string tok; std::getline(ss, tok, ',');) n.push_back(detail::parse_size("--n", detail::trim(tok)));
  if (n.size() != 3) throw UsageError("--n expects train,val,test counts, got '" + a.counts + "'");
  SceneConfig cfg;
  cfg.height = cfg.width = a.size;
  cfg.background = parse_background(a.background);
  cfg.seed = g.seed.value_or(0);
  const auto m = build_dataset(cfg, n[0], n[1], n[2], g.out_dir(), a.force);
  std::cout << "manifest=" << (fs::path(g.out_dir()) / kManifestName).string() << " samples=" << m.entries.size() << " hash=" << std::hex
            << m.hash << std::dec << "\n";
  return kOk;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::optional<std::size_t> epochs, batch, max_train, max_eval, max_steps;
  std::optional<double> lr;
  bool no_augment = false;
  std::string sweep;
};

template <typename T>
int train_impl(const RunConfig& run, const TrainArgs& a) {
  const Manifest m = read_manifest(run.data_root);
  const auto train_set = take(load_split(run.data_root, m, "train"), run.max_train);
  auto val_set = take(load_split(run.data_root, m, "val"), run.max_eval);
  const fs::path out(run.out_dir);
  fs::create_directories(out);
  write_text(out / "run.cfg", serialize(run));
  std::ofstream log(out / "train.log", std::ios::app);
  if (!log) throw DataError("cannot open " + (out / "train.log").string());
  if (!a.sweep.empty()) {
    const SweepKind kind = parse_sweep(a.sweep);
    auto eval_set = take(load_split(run.data_root, m, "test"), run.max_eval);
    if (eval_set.empty()) eval_set = val_set;
    if (eval_set.empty()) throw DataError("sweep needs a test or val split in " + run.data_root);
    const auto rows = run_sweep<T>(kind, run, train_set, eval_set, &log);
    const std::string table = sweep_table(kind, rows);
    write_text(out / ("sweep_" + a.sweep + ".tsv"), table);
    std::cout << table;
    return kOk;
  }
  SamambaNet<T> net(run.model);
  TrainOptions opt;
  opt.log = &log;
  opt.checkpoint_path = (out / "best.ckpt").string();
  opt.max_steps = a.max_steps.value_or(0);
  opt.on_epoch = [](const EpochRecord& r) { std::cout << to_log_line(r) << std::endl; };
  const auto res = train(net, run, train_set, val_set, opt);
  std::cout << "best_epoch=" << res.best_epoch << " best_score=" << res.best_score << " steps=" << res.steps
            << " checkpoint=" << opt.checkpoint_path << "\n";
  return kOk;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  RunConfig run = resolve_run(g);
  if (!a.data.empty()) run.data_root = a.data;
  if (a.epochs) run.epochs = *a.epochs;
  if (a.batch) run.batch = *a.batch;
  if (a.lr) run.lr = *a.lr;
  if (a.max_train) run.max_train = *a.max_train;
  if (a.max_eval) run.max_eval = *a.max_eval;
  if (a.no_augment) run.augment = false;
  run.validate();
  if (run.data_root.empty()) throw UsageError("train needs --data or a config with data = DIR");
  return run.precision == "f64" ? train_impl<double>(run, a) : train_impl<float>(run, a);
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool from_predictions = false;
};

fs::path prediction_path(const fs::path& image) {
  fs::path p = image;
  p.replace_extension(".pred.pgm");
  return p;
}

template <typename T>
EvalAccumulator eval_model(const Globals& g, const EvalArgs& a, const std::vector<SampleRecord>& samples) {
  const auto records = read_checkpoint(a.checkpoint);
  ModelConfig cfg = checkpoint_config(records);
  if (!g.config.empty()) cfg = resolve_run(g).model;
  SamambaNet<T> net(cfg);
  load_model(records, net);
  return evaluate(net, samples);
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const Manifest m = read_manifest(a.data);
  const auto entries = m.split(a.split);
  if (entries.empty()) throw DataError("split '" + a.split + "' is empty in " + a.data);
  const auto samples = load_split(a.data, m, a.split);
  EvalAccumulator acc;
  if (a.from_predictions) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const GrayImage p = load_pgm(prediction_path(fs::path(a.data) / entries[i].image).string());
      if (p.height != samples[i].height || p.width != samples[i].width)
        throw DataError("prediction extents differ for " + entries[i].image);
      std::vector<std::uint8_t> bin(p.pixels.size());
      for (std::size_t k = 0; k < bin.size(); ++k) bin[k] = p.pixels[k] > 127;
      acc.add(count_pixels<std::uint8_t, std::uint8_t>(bin, samples[i].mask));
    }
  } else {
    if (a.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --from-predictions)");
    const std::string precision = g.precision.empty() ? "f32" : g.precision;
    acc = precision == "f64" ? eval_model<double>(g, a, samples) : eval_model<float>(g, a, samples);
  }
  const MetricReport r = report(acc);
  const fs::path out(g.out_dir());
  write_text(out / "metrics.txt", to_key_value(r));
  write_text(out / "metrics_table.txt", to_table(r));
  std::cout << to_table(r);
  return kOk;
}

// --- predict --------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::vector<std::string> images;
};

template <typename T>
int predict_impl(const PredictArgs& a) {
  SamambaNet<T> net = load_model<T>(a.checkpoint);
  int failures = 0;
  NoGradScope<T> ng;
  for (const auto& path : a.images) {
    try {
      const GrayImage img = load_pgm(path);
      SamambaNet<T>::check_input({1, kInputChannels, img.height, img.width});
      std::vector<float> v(img.pixels.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(img.pixels[i]) / 255.0f;
      const Tensor<T> logits = net.forward(to_input<T>({&v}, img.height, img.width), false);
      const auto pred = binarize_logits<T>(logits.data());
      const fs::path out = prediction_path(path);
      save_pgm(out.string(), mask_to_gray(pred, img.height, img.width));
      std::cout << path << " -> " << out.string() << "\n";
    } catch (const std::exception& e) {
      std::cerr << "error: " << path << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures ? kIo : kOk;
}

int cmd_predict(const Globals& g, const PredictArgs& a) {
  return g.precision == "f64" ? predict_impl<double>(a) : predict_impl<float>(a);
}

// --- verify ---------------------------------------------------------------------

struct VerifyArgs {
  std::string inject_fault;
  bool skip_model = false;
  std::size_t seeds = 5;
  std::size_t model_seeds = 1;
};

int cmd_verify(const Globals& g, const VerifyArgs& a) {
  if (!a.inject_fault.empty()) {
    const auto op = op_from_name(a.inject_fault);
    if (!op) throw UsageError("unknown op '" + a.inject_fault + "' for --inject-fault");
    detail::flags().sign_flip = op;
  }
  detail::flags().check_finite = true;
  verify::Options o;
  o.seed = g.seed.value_or(0);
  o.seeds = a.seeds;
  o.include_model = !a.skip_model;
  o.model_seeds = a.model_seeds;
  bool ok = true;
  for (const auto& suite : verify::suites(o)) {
    verify::SuiteResult r;
    try {
      r = suite(o);
    } catch (const std::exception& e) {
      r.passed = false;
      r.failure = e.what();
    }
    std::cout << verify::format(r) << std::endl;
    ok = ok && r.passed;
  }
  std::cout << (ok ? "verify: all suites passed\n" : "verify: FAILED\n");
  return ok ? kOk : kFailure;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::size_t size = 256;
  std::size_t reps = 3;
};

template <typename T>
void bench_impl(const RunConfig& run, const BenchArgs& a) {
  SamambaNet<T> net(run.model);
  const ModelCost cost = count_params_flops(net, a.size, a.size);
  std::cout << "params=" << cost.params << " trainable=" << cost.trainable << " macs=" << cost.macs
            << " flops=" << 2 * cost.macs << " size=" << a.size << "\n";
  const auto input = Tensor<T>::zeros({1, kInputChannels, a.size, a.size});
  std::vector<double> ts;
  NoGradScope<T> ng;
  for (std::size_t k = 0; k < a.reps; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    net.forward(input, false);
    ts.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ts.begin(), ts.end());
  std::cout << "forward_seconds=" << ts[ts.size() / 2] << " precision=" << run.precision << "\n";
  for (const std::size_t c : {32, 64, 128}) {
    ModelConfig m = run.model;
    m.csi_width = c;
    SamambaNet<T> variant(m);
    std::cout << "csi_width=" << c << " params=" << count_parameters(variant.params()) << "\n";
  }
  for (const std::size_t s : {64, 128, 256})
    std::cout << "size=" << s << " macs=" << count_params_flops(net, s, s).macs << "\n";
}

int cmd_bench(const Globals& g, const BenchArgs& a) {
  check_extents(a.size);
  const RunConfig run = resolve_run(g);
  std::cout << "threads=" << thread_cap() << "\n";
  if (run.precision == "f64")
    bench_impl<double>(run, a);
  else
    bench_impl<float>(run, a);
  const auto s = verify::measure_scan_scaling();
  for (std::size_t i = 0; i < s.ratios.size(); ++i)
    std::cout << "scan M=" << s.lengths[i] << " seconds=" << s.seconds[i] << " ratio_2M_over_M=" << s.ratios[i] << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"samamba: small-target segmentation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "run config file (key = value)");
  app.add_option("--seed", g.seed, "seed");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "output directory");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset to --out")->fallthrough();
  gen->add_option("--n", ga.counts, "train,val,test counts");
  gen->add_option("--size", ga.size, "image extent (multiple of 32)");
  gen->add_option("--background", ga.background, "gradient, blob-clutter, banded-noise or mixed");
  gen->add_flag("--force", ga.force, "overwrite a non-empty directory");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model; writes run.cfg, train.log, best.ckpt")->fallthrough();
  tr->add_option("--data", ta.data, "dataset root");
  tr->add_option("--epochs", ta.epochs);
  tr->add_option("--batch", ta.batch);
  tr->add_option("--lr", ta.lr);
  tr->add_option("--max-train", ta.max_train, "use only the first N training samples");
  tr->add_option("--max-eval", ta.max_eval, "use only the first N evaluation samples");
  tr->add_option("--max-steps", ta.max_steps, "stop after N optimizer steps");
  tr->add_flag("--no-augment", ta.no_augment);
  tr->add_option("--sweep", ta.sweep, "heads, segments, fusion or ablation");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split")->fallthrough();
  ev->add_option("--checkpoint", ea.checkpoint);
  ev->add_option("--data", ea.data, "dataset root")->required();
  ev->add_option("--split", ea.split);
  ev->add_flag("--from-predictions", ea.from_predictions, "score existing .pred.pgm files instead of a model");

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "write <image>.pred.pgm masks")->fallthrough();
  pr->add_option("--checkpoint", pa.checkpoint)->required();
  pr->add_option("images", pa.images, "input PGM images")->required();

  VerifyArgs va;
  auto* ve = app.add_subcommand("verify", "run every property suite at f64")->fallthrough();
  ve->add_option("--inject-fault", va.inject_fault, "negate the backward of one op (mutation check)");
  ve->add_flag("--skip-model", va.skip_model, "skip the full-model gradient battery");
  ve->add_option("--seeds", va.seeds, "repetitions for randomized suites");
  ve->add_option("--model-seeds", va.model_seeds, "seeds for the full-model gradient battery");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "parameter/MAC counts, forward time, scan scaling")->fallthrough();
  be->add_option("--size", ba.size);
  be->add_option("--reps", ba.reps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    thread_cap();
    if (*gen) return cmd_generate(g, ga);
    if (*tr) return cmd_train(g, ta);
    if (*ev) return cmd_eval(g, ea);
    if (*pr) return cmd_predict(g, pa);
    if (*ve) return cmd_verify(g, va);
    if (*be) return cmd_bench(g, ba);
  } catch (const ConfigMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const CheckpointError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
