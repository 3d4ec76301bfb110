#pragma once

#include <functional>
#include <string>
#include <vector>

#include "atgn/config.hpp"
#include "atgn/dataset.hpp"
#include "atgn/metrics.hpp"
#include "atgn/train.hpp"

// Glue shared by the CLI and the end-to-end tests.
namespace atgn {

struct PreparedData {
  data::Dataset dataset;  // normalized
  data::FeatureNorm norm;
};

inline PreparedData prepare_data(const RunConfig& rc) {
  PreparedData p;
  p.dataset = data::load_dataset(rc.str("data_dir"), rc.list("branches"), rc.audio_pipeline());
  p.norm = data::fit_norm(p.dataset.train, p.dataset.branches);
  data::apply_norm(p.dataset.train, p.norm);
  data::apply_norm(p.dataset.val, p.norm);
  return p;
}

// Normalizes raw data with statistics stored in a checkpoint.
inline data::Dataset load_with_norm(const RunConfig& rc, const data::FeatureNorm& norm) {
  auto ds = data::load_dataset(rc.str("data_dir"), rc.list("branches"), rc.audio_pipeline());
  data::apply_norm(ds.train, norm);
  data::apply_norm(ds.val, norm);
  return ds;
}

struct ArmSpec {
  std::string method;
  bool tcn = false;
  bool fusion = false;
};

inline const std::vector<ArmSpec>& ablation_arms() {
  static const std::vector<ArmSpec> arms{
      {"baseline", false, false}, {"+tcn", true, false}, {"+fusion", false, true}, {"+tcn+fusion", true, true}};
  return arms;
}

struct AblationOutcome {
  std::vector<metrics::AblationRow> rows;
  std::vector<double> thresholds;  // from the post-process row
};

using ArmCallback = std::function<void(const std::string& method, const EpochLog&)>;

// Trains each arm with the shared seed, scores the best snapshot on the
// validation split at 0.5, then adds the threshold-swept full system.
inline AblationOutcome run_ablation(const RunConfig& rc, const PreparedData& data, const ArmCallback& cb = {}) {
  if (data.dataset.val.empty()) throw ConfigError("ablation needs a validation split (manifest val=...)");
  auto tc = rc.training();
  // every arm gets the same epoch budget
  tc.stop_train_f1 = tc.stop_val_f1 = 0.0;
  const std::string policy = rc.str("ablate.fusion_freeze_policy");
  AblationOutcome out;
  ParamStore full;
  ModelConfig full_cfg;
  for (const auto& arm : ablation_arms()) {
    RunConfig arm_rc = rc;
    arm_rc.set("use_tcn", arm.tcn ? "true" : "false");
    arm_rc.set("use_fusion_blocks", arm.fusion ? "true" : "false");
    arm_rc.set("freeze_policy", policy);
    const ModelConfig mc = arm_rc.model(data.dataset.branches);
    const auto res = train(mc, data.dataset, tc, [&](const EpochLog& l) {
      if (cb) cb(arm.method, l);
    });
    const auto f1 = evaluate(mc, res.best, data.dataset.val, tc.clip_len);
    out.rows.push_back({arm.method, arm.tcn, arm.fusion, policy, false, f1.mean});
    if (arm.tcn && arm.fusion) {
      full = res.best.clone();
      full_cfg = mc;
    }
  }
  const auto pred = predict(full_cfg, full, data.dataset.val, tc.clip_len);
  const auto sw = metrics::sweep_thresholds(pred.probs, pred.labels, rc.sweep_grid());
  out.rows.push_back({"+tcn+fusion+post", true, true, policy, true, sw.f1.mean});
  out.thresholds = sw.thresholds;
  return out;
}

}  // namespace atgn
