#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "atgn/clips.hpp"
#include "atgn/dataset.hpp"
#include "atgn/feature_file.hpp"
#include "atgn/loss.hpp"
#include "atgn/metrics.hpp"
#include "atgn/model.hpp"
#include "atgn/optim.hpp"

namespace atgn {

// Worker count: explicit value, else ATGN_THREADS, else 1.
inline std::size_t worker_count(std::size_t requested = 0) {
  if (requested) return requested;
  if (const char* env = std::getenv("ATGN_THREADS")) {
    const long n = std::atol(env);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return 1;
}

// Runs fn(i) for i in [0,n). Results must be written to per-index slots so
// the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 4;
  std::size_t clip_len = 200;
  std::uint64_t seed = 0;
  double base_lr = 1e-4;
  std::size_t warmup_iters = 2000;
  std::size_t plateau_patience = 5;
  double decay_factor = 0.1;
  double weight_decay = 0.01;
  double prob_clip = 1e-7;
  bool class_weighting = true;
  bool track_train_f1 = false;
  // stop once both mean F1 values (at 0.5) reach these; 0 disables
  double stop_train_f1 = 0.0;
  double stop_val_f1 = 0.0;
  std::size_t threads = 0;

  void validate() const {
    if (batch == 0) throw ConfigError("batch must be positive");
    if (clip_len == 0) throw ConfigError("clip_len must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (warmup_iters == 0) throw ConfigError("warmup_iters must be positive");
    if (plateau_patience == 0) throw ConfigError("plateau_patience must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must be in (0,1]");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_f1 = -1.0;  // only when tracked
  double val_f1 = 0.0;
  std::vector<double> val_per_au;
};

struct TrainResult {
  TrainState state;
  ParamStore best;
  double best_val_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<double> class_weights;
  std::vector<EpochLog> log;
};

struct Predictions {
  Tensor probs;   // [N×n_aus], all videos stacked
  Tensor labels;  // [N×n_aus]
  std::vector<std::pair<std::string, std::size_t>> spans;  // video id, frames
};

// Sigmoid probabilities for every frame of every video (evaluation clips,
// padding dropped).
inline Predictions predict(const ModelConfig& cfg, const ParamStore& params, const std::vector<VideoData>& videos,
                           std::size_t clip_len, std::size_t threads = 0) {
  Predictions out;
  std::vector<Clip> clips;
  for (const auto& v : videos) {
    auto c = build_clips(v, clip_len, ClipMode::eval);
    clips.insert(clips.end(), c.begin(), c.end());
    out.spans.emplace_back(v.id, v.frames());
  }
  std::vector<Tensor> probs(clips.size());
  parallel_for(clips.size(), worker_count(threads),
               [&](std::size_t i) { probs[i] = sigmoid(model_forward(cfg, params, clips[i].inputs)); });
  const std::size_t n_aus = cfg.fusion.n_aus;
  std::vector<double> p, y;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::size_t k = clips[i].valid * n_aus;
    p.insert(p.end(), probs[i].data().begin(), probs[i].data().begin() + static_cast<long>(k));
    y.insert(y.end(), clips[i].labels.data().begin(), clips[i].labels.data().begin() + static_cast<long>(k));
  }
  const std::size_t rows = p.size() / n_aus;
  out.probs = Tensor::from({rows, n_aus}, std::move(p));
  out.labels = Tensor::from({rows, n_aus}, std::move(y));
  return out;
}

inline metrics::F1Result evaluate(const ModelConfig& cfg, const ParamStore& params, const std::vector<VideoData>& videos,
                                  std::size_t clip_len, double threshold = 0.5, std::size_t threads = 0) {
  const auto pred = predict(cfg, params, videos, clip_len, threads);
  return metrics::f1_scores(pred.probs, pred.labels, threshold);
}

// Deterministic Fisher-Yates (std::shuffle is library-specific).
inline void shuffle_indices(std::vector<std::size_t>& idx, std::uint64_t seed) {
  std::uint64_t s = seed;
  for (std::size_t i = idx.size(); i > 1; --i) {
    s = mix_seed(s, i);
    std::swap(idx[i - 1], idx[s % i]);
  }
}

using EpochCallback = std::function<void(const EpochLog&)>;

// One optimizer step over a batch. Returns the batch loss.
inline double train_step(const ModelConfig& cfg, TrainState& st, const std::vector<const Clip*>& batch,
                         const LossConfig& loss_cfg, double lr, std::size_t threads) {
  double denom = 0.0;
  for (const Clip* c : batch) denom += static_cast<double>(count_labeled(c->labels, loss_cfg.ignore_label));
  if (denom == 0.0) return 0.0;

  std::vector<GradientSet> grads(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    ParamStore local = st.params.clone(true);
    ForwardOptions opt;
    opt.training = true;
    opt.dropout_seed = mix_seed(mix_seed(st.seed, st.step), i);
    const Tensor probs = sigmoid(model_forward(cfg, local, batch[i]->inputs, opt));
    const Tensor loss = weighted_bce(probs, batch[i]->labels, loss_cfg, denom);
    losses[i] = loss.item();
    if (!std::isfinite(losses[i])) return;
    const GradientMap g = backward(loss);
    for (const auto& e : local.entries()) {
      if (!e.trainable) continue;
      grads[i][e.name] = g.contains(e.value) ? g.at(e.value) : std::vector<double>(e.value.numel(), 0.0);
    }
  });

  double total = 0.0;
  for (double l : losses) total += l;
  if (!std::isfinite(total)) {
    std::string ids;
    for (const Clip* c : batch) ids += (ids.empty() ? "" : ", ") + c->video_id + "@" + std::to_string(c->start);
    throw NumericError("non-finite loss at iter " + std::to_string(st.schedule.iter) + " (lr " +
                       metrics::format_double(lr) + ", batch " + ids + ")");
  }
  GradientSet sum = std::move(grads[0]);
  for (std::size_t i = 1; i < grads.size(); ++i)
    for (auto& [name, g] : grads[i]) {
      auto& s = sum[name];
      for (std::size_t k = 0; k < g.size(); ++k) s[k] += g[k];
    }
  adamw_step(st, sum, lr);
  return total;
}

inline TrainResult train(const ModelConfig& cfg, const data::Dataset& ds, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  if (ds.train.empty()) throw ArgumentError("training split is empty");

  TrainResult res;
  res.state.params = init_model(cfg, tc.seed);
  res.state.seed = tc.seed;
  res.state.weight_decay = tc.weight_decay;
  res.state.schedule.base_lr = tc.base_lr;
  res.state.schedule.warmup_iters = tc.warmup_iters;
  res.state.schedule.plateau_patience = tc.plateau_patience;
  res.state.schedule.decay_factor = tc.decay_factor;
  res.state.reset_moments();
  res.best = res.state.params.clone();

  const auto stats = data::label_stats(ds.train);
  const std::size_t n_aus = cfg.fusion.n_aus;
  if (stats.positives.size() != n_aus)
    throw DimensionError("labels carry " + std::to_string(stats.positives.size()) + " AUs, model expects " +
                         std::to_string(n_aus));
  std::size_t labeled = 0;
  for (std::size_t l : stats.labeled) labeled = std::max(labeled, l);
  res.class_weights = tc.class_weighting ? compute_class_weights(stats.positives, labeled)
                                         : std::vector<double>(n_aus, 1.0);
  LossConfig loss_cfg;
  loss_cfg.class_weights = res.class_weights;
  loss_cfg.prob_clip = tc.prob_clip;

  const auto clips = build_clips(ds.train, tc.clip_len, ClipMode::train);
  if (tc.epochs > 0 && clips.empty())
    throw ArgumentError("no training clips: every training video is shorter than clip_len " +
                        std::to_string(tc.clip_len));
  const std::size_t threads = worker_count(tc.threads);
  const auto& monitor = ds.val.empty() ? ds.train : ds.val;

  auto& st = res.state;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, mix_seed(tc.seed, epoch));

    double loss_sum = 0.0;
    std::size_t batches = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch) {
      std::vector<const Clip*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + tc.batch); ++k) batch.push_back(&clips[order[k]]);
      lr = lr_at(st.schedule, st.schedule.iter);
      loss_sum += train_step(cfg, st, batch, loss_cfg, lr, threads);
      ++batches;
      ++st.schedule.iter;
    }
    st.epoch = epoch + 1;

    EpochLog log;
    log.epoch = epoch + 1;
    log.iter = st.schedule.iter;
    log.lr = lr;
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    const auto f1 = evaluate(cfg, st.params, monitor, tc.clip_len, 0.5, threads);
    log.val_f1 = f1.mean;
    log.val_per_au = f1.per_au;
    const bool want_train = tc.track_train_f1 || tc.stop_train_f1 > 0.0;
    if (want_train) log.train_f1 = evaluate(cfg, st.params, ds.train, tc.clip_len, 0.5, threads).mean;
    if (st.schedule.end_epoch(f1.mean)) {
      res.best = st.params.clone();
      res.best_val_f1 = f1.mean;
      res.best_epoch = epoch + 1;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    const bool stop_enabled = tc.stop_train_f1 > 0.0 || tc.stop_val_f1 > 0.0;
    if (stop_enabled && (tc.stop_train_f1 <= 0.0 || log.train_f1 >= tc.stop_train_f1) &&
        log.val_f1 >= tc.stop_val_f1)
      break;
  }
  return res;
}

// Checkpoint: every parameter as "param.<name>" (f64), the trainable mask,
// class weights and feature normalization.
inline io::TensorList checkpoint_sections(const ParamStore& params, const std::vector<double>& class_weights,
                                          const data::FeatureNorm& norm) {
  io::TensorList out;
  std::vector<double> mask;
  for (const auto& e : params.entries()) {
    out.push_back({"param." + e.name, e.value.clone(), io::DType::f64});
    mask.push_back(e.trainable ? 1.0 : 0.0);
  }
  const std::size_t n_entries = mask.size();
  out.push_back({"meta.trainable", Tensor::from({n_entries}, std::move(mask)), io::DType::f64});
  if (!class_weights.empty())
    out.push_back({"meta.class_weights", Tensor::from({class_weights.size()}, class_weights), io::DType::f64});
  for (auto& s : data::norm_sections(norm)) out.push_back(std::move(s));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                            const std::vector<double>& class_weights, const data::FeatureNorm& norm) {
  io::write_feature_file(path, checkpoint_sections(params, class_weights, norm));
}

struct Checkpoint {
  ParamStore params;
  std::vector<double> class_weights;
  data::FeatureNorm norm;
};

// Restores parameters into the layout `cfg` describes; names and shapes must
// match exactly.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  if (!std::filesystem::exists(path)) throw PathError("no checkpoint at '" + path.string() + "'; run `atgn train` first");
  const auto list = io::read_feature_file(path);
  Checkpoint ck;
  auto layout = cfg;
  layout.block_import.clear();  // values come from the checkpoint
  ck.params = init_model(layout, 0);
  std::size_t n_params = 0;
  for (const auto& s : list)
    if (s.name.rfind("param.", 0) == 0) ++n_params;
  if (n_params != ck.params.size())
    throw ConfigError("checkpoint holds " + std::to_string(n_params) + " parameters but the model config expects " +
                      std::to_string(ck.params.size()));
  for (auto& e : ck.params.entries()) {
    const auto* s = io::find(list, "param." + e.name);
    if (!s) throw ConfigError("checkpoint lacks parameter '" + e.name + "'");
    if (s->tensor.shape() != e.value.shape())
      throw ConfigError("parameter '" + e.name + "' has shape " + shape_str(s->tensor.shape()) + " in checkpoint, " +
                        shape_str(e.value.shape()) + " in model");
    e.value = s->tensor.clone();
  }
  if (const auto* w = io::find(list, "meta.class_weights")) ck.class_weights = w->tensor.values();
  ck.norm = data::norm_from_sections(list, cfg.branches);
  return ck;
}

}  // namespace atgn
