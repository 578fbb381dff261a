#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "vmunet/augment.hpp"
#include "vmunet/checkpoint.hpp"
#include "vmunet/config.hpp"
#include "vmunet/error.hpp"
#include "vmunet/losses.hpp"
#include "vmunet/metrics.hpp"
#include "vmunet/network.hpp"
#include "vmunet/optim.hpp"
#include "vmunet/random.hpp"
#include "vmunet/synth.hpp"

namespace vmunet {

/// Dataset-level scores. Confusion counts are pooled over all pixels of all samples;
/// hd95 is the mean over samples (and foreground classes) of the finite per-sample values.
struct MetricsReport {
  std::size_t num_classes = 1;
  BinaryMetrics scores;             // binary: class 1; multi-class: mean over foreground classes
  double hd95 = 0.0;
  std::vector<double> class_dsc;    // multi-class only, classes 1..K-1
};

namespace detail {

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string fmt_lr(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

}  // namespace detail

/// `miou=.. miou_2class=.. dsc=.. acc=.. spe=.. sen=.. hd95=..` and, for multi-class, `dsc_1=..` onwards.
inline std::string format_metrics(const MetricsReport& r) {
  const BinaryMetrics& m = r.scores;
  std::string out = "miou=" + detail::fmt(m.miou) + " miou_2class=" + detail::fmt(m.miou_2class) + " dsc=" + detail::fmt(m.dsc) +
                    " acc=" + detail::fmt(m.acc) + " spe=" + detail::fmt(m.spe) + " sen=" + detail::fmt(m.sen) +
                    " hd95=" + detail::fmt(r.hd95);
  for (std::size_t k = 0; k < r.class_dsc.size(); ++k) out += " dsc_" + std::to_string(k + 1) + "=" + detail::fmt(r.class_dsc[k]);
  return out;
}

inline void check_sample(const SegmentationSample& s, std::size_t index, std::size_t num_classes) {
  const std::size_t label_limit = num_classes == 1 ? 2 : num_classes;
  if (s.image.rank() != 3 || s.image.dim(2) != 3 || s.image.dim(0) != s.mask.height || s.image.dim(1) != s.mask.width) {
    throw DataError("sample " + std::to_string(index) + " (" + s.id + "): image " + to_string(s.image.shape()) +
                    " does not match mask " + std::to_string(s.mask.height) + "x" + std::to_string(s.mask.width));
  }
  if (s.mask.height % kSpatialDivisor != 0 || s.mask.width % kSpatialDivisor != 0) {
    throw DataError("sample " + std::to_string(index) + " (" + s.id + "): extents must be multiples of 32");
  }
  for (auto v : s.mask.labels)
    if (v >= label_limit) {
      throw DataError("sample " + std::to_string(index) + " (" + s.id + "): label " + std::to_string(v) + " >= " +
                      std::to_string(label_limit));
    }
}

inline MetricsReport evaluate(const VmUnet& net, const Dataset& data) {
  const std::size_t K = net.config().num_classes;
  const std::size_t fg = K == 1 ? 1 : K - 1;
  std::vector<ConfusionStats> stats(fg);
  std::vector<double> hd_sum(fg, 0.0);
  std::vector<std::size_t> hd_count(fg, 0);
  std::uint64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_sample(data[i], i, K);
    const LabelMap pred = predict_labels(net.forward(data[i].image, Mode::Eval));
    for (std::size_t p = 0; p < pred.size(); ++p) correct += pred.labels[p] == data[i].mask.labels[p];
    total += pred.size();
    for (std::size_t k = 0; k < fg; ++k) {
      const auto cls = static_cast<std::uint8_t>(k + 1);
      stats[k] += confusion(pred, data[i].mask, cls);
      const double h = hd95(pred, data[i].mask, cls);
      if (std::isfinite(h)) {
        hd_sum[k] += h;
        ++hd_count[k];
      }
    }
  }
  MetricsReport r;
  r.num_classes = K;
  double hd_total = 0.0;
  std::size_t hd_classes = 0;
  for (std::size_t k = 0; k < fg; ++k) {
    const BinaryMetrics m = metrics(stats[k]);
    r.scores.miou += m.miou / static_cast<double>(fg);
    r.scores.miou_2class += m.miou_2class / static_cast<double>(fg);
    r.scores.dsc += m.dsc / static_cast<double>(fg);
    r.scores.sen += m.sen / static_cast<double>(fg);
    r.scores.spe += m.spe / static_cast<double>(fg);
    if (K > 1) r.class_dsc.push_back(m.dsc);
    if (hd_count[k] > 0) {
      hd_total += hd_sum[k] / static_cast<double>(hd_count[k]);
      ++hd_classes;
    }
  }
  r.scores.acc = total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
  r.hd95 = hd_classes == 0 ? (data.empty() ? 0.0 : std::numeric_limits<double>::infinity()) : hd_total / static_cast<double>(hd_classes);
  return r;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps so far
  double lr = 0.0;
  double loss = 0.0;      // mean training loss over the epoch
  std::optional<MetricsReport> eval;
};

/// `epoch=<n> step=<n> lr=<e> loss=<f>` followed by the metric keys on evaluation epochs.
inline std::string format_record(const EpochRecord& r) {
  std::string out = "epoch=" + std::to_string(r.epoch) + " step=" + std::to_string(r.step) + " lr=" + detail::fmt_lr(r.lr) +
                    " loss=" + detail::fmt(r.loss);
  if (r.eval) out += " " + format_metrics(*r.eval);
  return out;
}

struct TrainOutputs {
  std::filesystem::path out_dir;               // empty: nothing written
  std::function<void(const std::string&)> log;  // receives each metrics record, may be empty
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_dsc = -1.0;
};

/// Per epoch: seeded shuffle, optional augmentation, per-sample forward/backward with gradients summed
/// over a batch and divided by its size, one AdamW step per batch at the epoch's cosine learning rate.
/// Training stops after `epochs` or `max_steps` optimizer steps, whichever comes first.
inline TrainResult train(VmUnet& net, const RunConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                         const TrainOutputs& io = {}) {
  const TrainSettings& ts = cfg.train;
  ts.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  const std::size_t K = cfg.network.num_classes;
  for (std::size_t i = 0; i < train_set.size(); ++i) check_sample(train_set[i], i, K);

  Rng shuffle_rng = derive_stream(ts.seed, "shuffle");
  Rng augment_rng = derive_stream(ts.seed, "augment");
  Rng dropout_rng = derive_stream(ts.seed, "dropout");
  ParamList params = net.parameters();
  OptimizerState opt = OptimizerState::for_params(params, ts.adamw());
  const Schedule sched = ts.schedule();

  if (!io.out_dir.empty()) std::filesystem::create_directories(io.out_dir);
  std::string log_text;
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  bool stop = false;
  for (std::size_t epoch = 0; epoch < ts.epochs && !stop; ++epoch) {
    const double lr = cosine_lr(epoch, sched);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += ts.batch_size) {
      const std::size_t end = std::min(order.size(), start + ts.batch_size);
      zero_grads(params);
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t idx = order[j];
        const SegmentationSample& s = train_set[idx];
        Tensor image = s.image;
        LabelMap mask = s.mask;
        if (ts.augment) std::tie(image, mask) = augment(image, mask, augment_rng);
        Tape tape;
        Tensor loss;
        {
          TapeScope scope(tape);
          try {
            loss = segmentation_loss(net.forward(image, Mode::Train, &dropout_rng), mask, ts.loss_weights);
          } catch (const ShapeError& e) {
            throw DataError("sample " + std::to_string(idx) + " (" + s.id + "): " + e.what());
          }
        }
        if (!std::isfinite(loss.item())) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " + std::to_string(idx));
        }
        loss_sum += loss.item();
        ++seen;
        backward(loss, tape);
      }
      adamw_step(params, opt, lr, 1.0 / static_cast<double>(end - start));
      ++result.steps;
      if (ts.max_steps != 0 && result.steps >= ts.max_steps) stop = true;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.step = result.steps;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(seen);
    const bool last = stop || epoch + 1 == ts.epochs;
    if ((epoch + 1) % ts.eval_every == 0 || last) {
      rec.eval = evaluate(net, eval_set.empty() ? train_set : eval_set);
      if (rec.eval->scores.dsc > result.best_dsc) {
        result.best_dsc = rec.eval->scores.dsc;
        result.best_epoch = rec.epoch;
        if (!io.out_dir.empty()) save_checkpoint(io.out_dir / "best.ckpt", make_checkpoint(cfg, params));
      }
    }
    const std::string line = format_record(rec);
    log_text += line + "\n";
    if (io.log) io.log(line);
    if (!io.out_dir.empty()) netpbm::write_file(io.out_dir / "metrics.log", log_text);
    result.history.push_back(std::move(rec));
  }
  if (!io.out_dir.empty()) save_checkpoint(io.out_dir / "last.ckpt", make_checkpoint(cfg, params, &opt));
  return result;
}

}  // namespace vmunet
