#pragma once

// Training, evaluation and sweep driver.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "samamba/data.hpp"
#include "samamba/losses.hpp"
#include "samamba/metrics.hpp"
#include "samamba/model.hpp"
#include "samamba/optim.hpp"

namespace samamba {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  std::string data_root;
  std::size_t epochs = 300;
  std::size_t batch = 2;
  double lr = 1e-4;
  double lr_decay = 0.1;
  std::size_t decay_every = 100;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  std::string out_dir;
  bool augment = true;
  std::size_t max_train = 0;  // 0 uses the whole train split
  std::size_t max_eval = 0;   // 0 uses the whole evaluation split

  double lr_at(std::size_t epoch) const { return step_lr(lr, epoch, decay_every, lr_decay); }

  void validate() const {
    model.validate();
    if (batch == 0) throw ConfigError("batch must be positive");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");
  }
};

inline std::string serialize(const RunConfig& r) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "data = " << r.data_root << "\nepochs = " << r.epochs << "\nbatch = " << r.batch << "\nlr = " << r.lr
    << "\nlr_decay = " << r.lr_decay << "\ndecay_every = " << r.decay_every << "\nprecision = " << r.precision
    << "\nout = " << r.out_dir << "\naugment = " << (r.augment ? "true" : "false") << "\nmax_train = " << r.max_train
    << "\nmax_eval = " << r.max_eval << "\n";
  ModelConfig m = r.model;
  m.seed = r.seed;
  return o.str() + serialize(m);
}

/// Parses run keys and model keys from one key=value text.
inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string model_text;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    std::string body = line;
    if (const auto hash = body.find('#'); hash != std::string::npos) body.erase(hash);
    body = detail::trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string k = detail::trim(body.substr(0, eq)), v = detail::trim(body.substr(eq + 1));
    auto number = [&] {
      try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
      } catch (const std::exception&) {
      }
      throw ConfigError("key '" + k + "': expected a number, got '" + v + "'");
    };
    if (k == "data") base.data_root = v;
    else if (k == "epochs") base.epochs = detail::parse_size(k, v);
    else if (k == "batch") base.batch = detail::parse_size(k, v);
    else if (k == "lr") base.lr = number();
    else if (k == "lr_decay") base.lr_decay = number();
    else if (k == "decay_every") base.decay_every = detail::parse_size(k, v);
    else if (k == "precision") base.precision = v;
    else if (k == "out") base.out_dir = v;
    else if (k == "augment") base.augment = detail::parse_bool(k, v);
    else if (k == "max_train") base.max_train = detail::parse_size(k, v);
    else if (k == "max_eval") base.max_eval = detail::parse_size(k, v);
    else if (k == "seed") base.seed = detail::parse_size(k, v);
    else model_text += line + "\n";
  }
  base.model = parse_config(model_text, base.model);
  base.model.seed = base.seed;
  base.validate();
  return base;
}

/// Seed of the augmentation applied to `sample` in `epoch`; independent of
/// batch composition and worker identity.
inline std::uint64_t augment_seed(std::uint64_t seed, std::size_t epoch, std::size_t sample) {
  return mix_seed(seed, 0xe90c00 + epoch, sample);
}

template <typename T>
struct Batch {
  Tensor<T> input;
  Tensor<T> target;
};

template <typename T>
Batch<T> make_batch(const std::vector<const SampleRecord*>& samples) {
  std::vector<const std::vector<float>*> imgs;
  std::vector<const std::vector<std::uint8_t>*> masks;
  for (const auto* s : samples) {
    if (s->height != samples[0]->height || s->width != samples[0]->width) throw ShapeError("batch samples differ in extents");
    imgs.push_back(&s->image);
    masks.push_back(&s->mask);
  }
  const std::size_t H = samples[0]->height, W = samples[0]->width;
  return {to_input<T>(imgs, H, W), to_target<T>(masks, H, W)};
}

/// Inference over `samples` in eval mode; also returns the logits when asked.
template <typename T>
EvalAccumulator evaluate(SamambaNet<T>& net, const std::vector<SampleRecord>& samples, std::size_t batch = 2,
                         std::vector<std::vector<std::uint8_t>>* predictions = nullptr) {
  EvalAccumulator acc;
  NoGradScope<T> ng;
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<const SampleRecord*> group;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch); ++j) group.push_back(&samples[j]);
    const auto b = make_batch<T>(group);
    const Tensor<T> logits = net.forward(b.input, false);
    const std::size_t hw = group[0]->height * group[0]->width;
    for (std::size_t k = 0; k < group.size(); ++k) {
      const auto pred = binarize_logits<T>(logits.data().subspan(k * hw, hw));
      acc.add(count_pixels<std::uint8_t, std::uint8_t>(pred, group[k]->mask));
      if (predictions) predictions->push_back(pred);
    }
  }
  return acc;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  double train_iou = 0;
  MetricReport val;
  double seconds = 0;
};

inline std::string to_log_line(const EpochRecord& r) {
  std::ostringstream o;
  o << std::setprecision(8) << "epoch=" << r.epoch << " lr=" << r.lr << " loss=" << r.loss << " train_iou=" << r.train_iou
    << " val_iou=" << r.val.iou << " val_niou=" << r.val.niou << " val_f1=" << r.val.f1 << " seconds=" << std::setprecision(4)
    << r.seconds;
  return o.str();
}

struct TrainOptions {
  std::ostream* log = nullptr;                 // one key=value line per epoch
  std::string checkpoint_path;                 // best-by-val-IoU checkpoint
  std::function<void(const EpochRecord&)> on_epoch;
  std::size_t max_steps = 0;                   // stop early after this many optimizer steps
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double best_score = 0;  // val IoU, or -loss without a validation split
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

/// Adam on SoftIoU + Dice + Focal with step learning-rate decay.
template <typename T>
TrainResult train(SamambaNet<T>& net, const RunConfig& run, const std::vector<SampleRecord>& train_set,
                  const std::vector<SampleRecord>& val_set, const TrainOptions& opt = {}) {
  run.validate();
  if (train_set.empty()) throw TrainingError("training split is empty");
  TrainResult res;
  AdamState<T> adam;
  auto params = net.trainable();
  std::vector<std::size_t> order(train_set.size());
  double best_loss = 0;
  for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(run.seed, 0x5f1e, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    adam.lr = static_cast<T>(run.lr_at(epoch));
    double loss_sum = 0;
    std::size_t batches = 0;
    EvalAccumulator train_acc;
    for (std::size_t i = 0; i < order.size(); i += run.batch) {
      std::vector<SampleRecord> augmented;
      std::vector<const SampleRecord*> group;
      std::vector<std::uint64_t> seeds;
      for (std::size_t j = i; j < std::min(order.size(), i + run.batch); ++j) {
        const auto& s = train_set[order[j]];
        seeds.push_back(augment_seed(run.seed, epoch, order[j]));
        if (run.augment) augmented.push_back(augment(s, seeds.back()));
        else group.push_back(&s);
      }
      for (const auto& s : augmented) group.push_back(&s);
      const auto b = make_batch<T>(group);
      net.zero_grad();
      Tape<T> tape;
      TapeScope<T> scope(tape);
      const Tensor<T> logits = net.forward(b.input, true);
      const Tensor<T> loss = total_loss(logits, b.target);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        std::ostringstream d;
        d << "non-finite loss at epoch " << epoch << " batch " << batches << "; samples";
        for (std::size_t j = 0; j < group.size(); ++j) d << " " << order[i + j] << "(augment_seed=" << seeds[j] << ")";
        throw TrainingError(d.str());
      }
      tape.backward(loss);
      adam_step(params, adam);
      loss_sum += static_cast<double>(loss.item());
      ++batches;
      ++res.steps;
      const std::size_t hw = group[0]->height * group[0]->width;
      for (std::size_t k = 0; k < group.size(); ++k)
        train_acc.add(count_pixels<std::uint8_t, std::uint8_t>(binarize_logits<T>(logits.data().subspan(k * hw, hw)),
                                                               group[k]->mask));
      if (opt.max_steps && res.steps >= opt.max_steps) break;
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = run.lr_at(epoch);
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.train_iou = train_acc.iou();
    if (!val_set.empty()) rec.val = report(evaluate(net, val_set, run.batch));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (opt.log) *opt.log << to_log_line(rec) << std::endl;
    if (opt.on_epoch) opt.on_epoch(rec);
    const double score = val_set.empty() ? -rec.loss : rec.val.iou;
    // Ties on validation IoU (common while it is still 0) go to the lower loss.
    if (res.best_epoch == 0 || score > res.best_score || (score == res.best_score && rec.loss < best_loss)) {
      res.best_score = score;
      best_loss = rec.loss;
      res.best_epoch = rec.epoch;
      if (!opt.checkpoint_path.empty()) save_model(opt.checkpoint_path, net);
    }
    if (opt.max_steps && res.steps >= opt.max_steps) break;
  }
  return res;
}

// --- sweeps -------------------------------------------------------------------

enum class SweepKind { kHeads, kSegments, kFusion, kAblation };

inline SweepKind parse_sweep(const std::string& s) {
  if (s == "heads") return SweepKind::kHeads;
  if (s == "segments") return SweepKind::kSegments;
  if (s == "fusion") return SweepKind::kFusion;
  if (s == "ablation") return SweepKind::kAblation;
  throw ConfigError("unknown sweep '" + s + "' (expected heads, segments, fusion or ablation)");
}

struct SweepRow {
  std::string label;
  ModelConfig model;
  MetricReport metrics;
  std::size_t params = 0;
};

/// Variants swept by each table: (a) CSI heads, (b) DPCF segments,
/// (c) fusion strategy, and the component ablation.
inline std::vector<SweepRow> sweep_variants(SweepKind kind, const ModelConfig& base) {
  std::vector<SweepRow> rows;
  auto add = [&](std::string label, auto&& edit) {
    ModelConfig m = base;
    edit(m);
    rows.push_back({std::move(label), m, {}, 0});
  };
  switch (kind) {
    case SweepKind::kHeads:
      for (std::size_t h : {1, 2, 4, 8}) add(std::to_string(h), [h](ModelConfig& m) { m.csi_heads = h; });
      break;
    case SweepKind::kSegments:
      for (std::size_t s : {1, 2, 4, 8}) add(std::to_string(s), [s](ModelConfig& m) { m.dpcf_segments = s; });
      break;
    case SweepKind::kFusion:
      add("Addition+Conv", [](ModelConfig& m) { m.fusion = Fusion::kAdd; });
      add("Concatenation+Conv", [](ModelConfig& m) { m.fusion = Fusion::kConcat; });
      add("Adaptive", [](ModelConfig& m) { m.fusion = Fusion::kAdaptive; });
      break;
    case SweepKind::kAblation:
      add("w/o CSI", [](ModelConfig& m) { m.use_csi = false; });
      add("w/o DPCF", [](ModelConfig& m) { m.fusion = Fusion::kConcat; });
      add("full", [](ModelConfig&) {});
      break;
  }
  return rows;
}

inline std::string sweep_title(SweepKind kind) {
  switch (kind) {
    case SweepKind::kHeads: return "(a) CSI head count";
    case SweepKind::kSegments: return "(b) DPCF segment count";
    case SweepKind::kFusion: return "(c) DPCF fusion strategy";
    case SweepKind::kAblation: return "component ablation";
  }
  return "";
}

inline std::string sweep_column(SweepKind kind) {
  switch (kind) {
    case SweepKind::kHeads: return "heads";
    case SweepKind::kSegments: return "segments";
    case SweepKind::kFusion: return "strategy";
    case SweepKind::kAblation: return "variant";
  }
  return "";
}

/// Tab-separated table: title comment, header, one row per variant.
inline std::string sweep_table(SweepKind kind, const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << "# " << sweep_title(kind) << "\n" << sweep_column(kind) << "\tiou\tniou\tf1\tparams\n";
  o << std::fixed << std::setprecision(2);
  for (const auto& r : rows)
    o << r.label << '\t' << 100 * r.metrics.iou << '\t' << 100 * r.metrics.niou << '\t' << 100 * r.metrics.f1 << '\t'
      << r.params << '\n';
  return o.str();
}

/// Trains every variant from the same seed and data, evaluating on `eval_set`.
template <typename T>
std::vector<SweepRow> run_sweep(SweepKind kind, const RunConfig& run, const std::vector<SampleRecord>& train_set,
                                const std::vector<SampleRecord>& eval_set, std::ostream* log = nullptr) {
  auto rows = sweep_variants(kind, run.model);
  for (auto& row : rows) {
    RunConfig r = run;
    r.model = row.model;
    r.model.seed = run.seed;
    SamambaNet<T> net(r.model);
    row.params = count_parameters(net.params());
    if (log) *log << "# variant " << sweep_column(kind) << "=" << row.label << std::endl;
    TrainOptions opt;
    opt.log = log;
    train(net, r, train_set, {}, opt);
    row.metrics = report(evaluate(net, eval_set, r.batch));
  }
  return rows;
}

}  // namespace samamba
