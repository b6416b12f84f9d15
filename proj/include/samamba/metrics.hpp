#pragma once

// Pixel-count metrics over binarized predictions.
//
//   IoU  = sum TP_i / sum (T_i + P_i - TP_i)
//   nIoU = mean_i TP_i / (T_i + P_i - TP_i)
//   F1   = mean_i 2 Prec_i Rec_i / (Prec_i + Rec_i)
//
// A sample with empty target and empty prediction scores 1 for nIoU and F1;
// a dataset whose masks and predictions are all empty has IoU 1.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "samamba/tensor.hpp"

namespace samamba {

struct SampleCounts {
  std::uint64_t tp = 0;  // predicted and true
  std::uint64_t t = 0;   // true pixels
  std::uint64_t p = 0;   // predicted pixels

  bool operator==(const SampleCounts&) const = default;
};

/// Counts for binary masks (nonzero = foreground).
template <typename A, typename B>
SampleCounts count_pixels(std::span<const A> pred, std::span<const B> truth) {
  if (pred.size() != truth.size()) throw ShapeError("prediction and mask sizes differ");
  SampleCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != A(0), t = truth[i] != B(0);
    c.tp += p && t;
    c.p += p;
    c.t += t;
  }
  return c;
}

/// Predictions are sigmoid(logit) > 0.5, i.e. logit > 0.
template <typename T>
std::vector<std::uint8_t> binarize_logits(std::span<const T> logits) {
  std::vector<std::uint8_t> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > T(0);
  return out;
}

class EvalAccumulator {
 public:
  void add(const SampleCounts& c) {
    if (c.tp > c.t || c.tp > c.p) throw DomainError("true positives exceed target or prediction count");
    samples_.push_back(c);
  }

  /// Appends `other`'s samples; dataset-level metrics do not depend on order.
  void merge(const EvalAccumulator& other) {
    samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
  }

  std::size_t size() const { return samples_.size(); }
  const std::vector<SampleCounts>& samples() const { return samples_; }

  double iou() const {
    std::uint64_t tp = 0, uni = 0;
    for (const auto& s : samples_) {
      tp += s.tp;
      uni += s.t + s.p - s.tp;
    }
    return uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
  }

  double niou() const {
    if (samples_.empty()) return 1.0;
    double acc = 0;
    for (const auto& s : samples_) {
      const auto uni = s.t + s.p - s.tp;
      acc += uni == 0 ? 1.0 : static_cast<double>(s.tp) / static_cast<double>(uni);
    }
    return acc / static_cast<double>(samples_.size());
  }

  double f1() const {
    if (samples_.empty()) return 1.0;
    double acc = 0;
    for (const auto& s : samples_) {
      if (s.t == 0 && s.p == 0) {
        acc += 1.0;
        continue;
      }
      if (s.t == 0 || s.p == 0 || s.tp == 0) continue;
      const double prec = static_cast<double>(s.tp) / static_cast<double>(s.p);
      const double rec = static_cast<double>(s.tp) / static_cast<double>(s.t);
      acc += 2 * prec * rec / (prec + rec);
    }
    return acc / static_cast<double>(samples_.size());
  }

 private:
  std::vector<SampleCounts> samples_;
};

struct MetricReport {
  double iou = 0, niou = 0, f1 = 0;
  std::size_t n_samples = 0;
};

inline MetricReport report(const EvalAccumulator& acc) { return {acc.iou(), acc.niou(), acc.f1(), acc.size()}; }

/// Machine-readable form: one key=value per line.
inline std::string to_key_value(const MetricReport& r) {
  std::ostringstream o;
  o << std::setprecision(17) << "iou=" << r.iou << "\nniou=" << r.niou << "\nf1=" << r.f1
    << "\nn_samples=" << r.n_samples << "\n";
  return o.str();
}

/// Tab-delimited table with a header row.
inline std::string to_table(const MetricReport& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4) << "iou\tniou\tf1\tn_samples\n"
    << r.iou << '\t' << r.niou << '\t' << r.f1 << '\t' << r.n_samples << '\n';
  return o.str();
}

}  // namespace samamba
