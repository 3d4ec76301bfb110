#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "atgn/dataset.hpp"
#include "atgn/metrics.hpp"
#include "atgn/model.hpp"
#include "atgn/train.hpp"

// key=value run configuration. Every key has a default; unknown keys are
// rejected. Lines starting with '#' are comments.
namespace atgn {

class RunConfig {
 public:
  struct Key {
    const char* name;
    const char* value;
    const char* help;
  };

  static const std::vector<Key>& keys() {
    static const std::vector<Key> k{
        {"data_dir", "data", "dataset directory"},
        {"out_dir", "runs/default", "output directory"},
        {"seed", "0", "seed for init, shuffling and dropout"},
        {"branches", "visual,audio,mfcc", "input branches in fusion order"},
        {"use_tcn", "true", "temporal convolution per branch"},
        {"use_fusion_blocks", "true", "transformer blocks after projection"},
        {"freeze_policy", "ln-only", "ln-only | freeze-none | freeze:<names>"},
        {"post_process", "false", "sweep per-AU thresholds on validation"},
        {"tcn.channels", "128", "C_t"},
        {"tcn.kernel", "3", "kernel size k"},
        {"tcn.dilations", "1,2,4,8", "one residual block per dilation"},
        {"tcn.convs_per_block", "2", "causal convs per block"},
        {"tcn.dropout", "0.1", "dropout after each conv"},
        {"fusion.width", "128", "C'"},
        {"fusion.proj_kernel", "1", "projection conv kernel"},
        {"fusion.n_blocks", "4", "transformer blocks"},
        {"fusion.n_heads", "4", "attention heads"},
        {"fusion.mlp_ratio", "4", "MLP hidden = ratio * width"},
        {"fusion.causal_mask", "true", "mask future frames in attention"},
        {"fusion.import", "", "feature file with exported block weights (names fusion.blocks.*)"},
        {"train.epochs", "50", ""},
        {"train.batch", "4", "clips per step"},
        {"train.clip_len", "200", "frames per clip"},
        {"train.base_lr", "0.0001", "peak learning rate"},
        {"train.warmup_iters", "2000", "linear warmup length"},
        {"train.plateau_patience", "5", "stagnant epochs before decay"},
        {"train.decay_factor", "0.1", "plateau decay"},
        {"train.weight_decay", "0.01", "AdamW decoupled decay"},
        {"train.prob_clip", "1e-7", "BCE probability clip"},
        {"train.class_weighting", "true", "inverse-frequency AU weights"},
        {"train.track_train_f1", "false", "log train F1 each epoch"},
        {"train.stop_train_f1", "0", "stop when train F1 reaches this (0 = off)"},
        {"train.stop_val_f1", "0", "stop when validation F1 reaches this (0 = off)"},
        {"audio.n_mels", "64", ""},
        {"audio.n_mfcc", "13", ""},
        {"audio.frame_len", "400", "samples"},
        {"audio.hop", "160", "samples"},
        {"audio.n_fft", "512", ""},
        {"audio.fmin", "125", "Hz"},
        {"audio.fmax", "7500", "Hz"},
        {"audio.embedding_dim", "128", "C_a"},
        {"audio.encoder_seed", "2024", "seed of the frozen audio encoder"},
        {"sweep.grid", "default", "comma list or 'default' (0.05..0.95 step 0.025)"},
        {"ablate.fusion_freeze_policy", "ln-only", "freeze policy of the fusion arms"},
    };
    return k;
  }

  RunConfig() {
    for (const auto& k : keys()) values_[k.name] = k.value;
  }

  bool known(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value"
  void set_assignment(const std::string& kv, const std::string& where = "--set") {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(where + ": expected key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(kv.substr(0, eq));
    if (!known(key)) throw ConfigError(where + ": unknown config key '" + key + "'");
    values_[key] = trim(kv.substr(eq + 1));
  }

  void merge_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto b = line.find_first_not_of(" \t");
      if (b == std::string::npos || line[b] == '#') continue;
      set_assignment(line, origin + ":" + std::to_string(lineno));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PathError("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  std::size_t size(const std::string& key) const {
    const auto& s = str(key);
    std::size_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    return v;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  std::vector<std::string> list(const std::string& key) const { return data::split_list(str(key)); }

  std::vector<std::size_t> size_list(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : list(key)) {
      std::size_t v = 0;
      const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
      if (r.ec != std::errc{} || r.ptr != item.data() + item.size())
        throw ConfigError(key + ": '" + item + "' is not a non-negative integer");
      out.push_back(v);
    }
    return out;
  }

  // Resolved configuration, one key=value per line in key order.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  data::AudioPipelineConfig audio_pipeline() const {
    data::AudioPipelineConfig a;
    a.spectrogram.n_mels = size("audio.n_mels");
    a.spectrogram.n_mfcc = size("audio.n_mfcc");
    a.spectrogram.frame_len = size("audio.frame_len");
    a.spectrogram.hop = size("audio.hop");
    a.spectrogram.n_fft = size("audio.n_fft");
    a.spectrogram.fmin = real("audio.fmin");
    a.spectrogram.fmax = real("audio.fmax");
    a.encoder.out_dim = size("audio.embedding_dim");
    a.encoder_seed = size("audio.encoder_seed");
    a.spectrogram.validate();
    return a;
  }

  // Branch widths come from the loaded data.
  ModelConfig model(const std::vector<BranchSpec>& branches) const {
    ModelConfig m;
    m.branches = branches;
    m.tcn.channels = size("tcn.channels");
    m.tcn.kernel = size("tcn.kernel");
    m.tcn.dilations = size_list("tcn.dilations");
    m.tcn.convs_per_block = size("tcn.convs_per_block");
    m.tcn.dropout = real("tcn.dropout");
    m.fusion.n_branches = branches.size();
    m.fusion.width = size("fusion.width");
    m.fusion.proj_kernel = size("fusion.proj_kernel");
    m.fusion.n_blocks = size("fusion.n_blocks");
    m.fusion.n_heads = size("fusion.n_heads");
    m.fusion.mlp_ratio = size("fusion.mlp_ratio");
    m.fusion.causal_mask = flag("fusion.causal_mask");
    m.use_tcn = flag("use_tcn");
    m.use_fusion_blocks = flag("use_fusion_blocks");
    m.freeze_policy = str("freeze_policy");
    m.block_import = str("fusion.import");
    fusion::FreezePolicy::parse(m.freeze_policy);
    m.validate();
    return m;
  }

  TrainConfig training() const {
    TrainConfig t;
    t.epochs = size("train.epochs");
    t.batch = size("train.batch");
    t.clip_len = size("train.clip_len");
    t.seed = size("seed");
    t.base_lr = real("train.base_lr");
    t.warmup_iters = size("train.warmup_iters");
    t.plateau_patience = size("train.plateau_patience");
    t.decay_factor = real("train.decay_factor");
    t.weight_decay = real("train.weight_decay");
    t.prob_clip = real("train.prob_clip");
    t.class_weighting = flag("train.class_weighting");
    t.track_train_f1 = flag("train.track_train_f1");
    t.stop_train_f1 = real("train.stop_train_f1");
    t.stop_val_f1 = real("train.stop_val_f1");
    t.validate();
    return t;
  }

  std::vector<double> sweep_grid() const {
    if (str("sweep.grid") == "default") return metrics::default_grid();
    std::vector<double> g;
    for (const auto& item : list("sweep.grid")) {
      double v = 0.0;
      const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
      if (r.ec != std::errc{} || r.ptr != item.data() + item.size() || !(v > 0.0 && v < 1.0))
        throw ConfigError("sweep.grid: '" + item + "' is not a threshold in (0,1)");
      g.push_back(v);
    }
    if (g.empty()) throw ConfigError("sweep.grid is empty");
    return g;
  }

  // Checks every typed accessor once so bad values fail before any work.
  void validate() const {
    audio_pipeline();
    training();
    sweep_grid();
    flag("post_process");
    fusion::FreezePolicy::parse(str("freeze_policy"));
    fusion::FreezePolicy::parse(str("ablate.fusion_freeze_policy"));
    const auto b = list("branches");
    model(std::vector<BranchSpec>(b.size(), BranchSpec{"x", 1}));
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace atgn
