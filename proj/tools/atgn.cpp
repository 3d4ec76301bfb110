// atgn command-line driver.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "atgn/atgn.hpp"
#include "atgn/experiment.hpp"
#include "atgn/selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config, "key=value config file");
  cmd->add_option("--set", o.sets, "override one key (key=value), repeatable");
}

atgn::RunConfig resolve(const CommonOpts& o) {
  atgn::RunConfig rc;
  if (!o.config.empty()) rc.merge_file(o.config);
  for (const auto& s : o.sets) rc.set_assignment(s);
  rc.validate();
  return rc;
}

fs::path prepare_out(const atgn::RunConfig& rc) {
  const fs::path out = rc.str("out_dir");
  fs::create_directories(out);
  std::ofstream(out / "config.resolved", std::ios::trunc) << rc.dump();
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw atgn::PathError("cannot write '" + p.string() + "'");
  f << s;
}

json epoch_json(const atgn::EpochLog& l) {
  json j{{"epoch", l.epoch}, {"iter", l.iter}, {"lr", l.lr}, {"train_loss", l.train_loss},
         {"val_mean_f1", l.val_f1}, {"val_per_au_f1", l.val_per_au}};
  if (l.train_f1 >= 0.0) j["train_mean_f1"] = l.train_f1;
  return j;
}

int cmd_extract(const std::string& wav, const std::string& out, double fps, std::size_t frames, const CommonOpts& o) {
  const auto rc = resolve(o);
  const auto cfg = rc.audio_pipeline();
  const auto sig = atgn::io::read_wav(wav);
  const auto spec = atgn::audio::extract(sig, cfg.spectrogram);
  atgn::io::TensorList list{{"logmel", spec.logmel, atgn::io::DType::f32}, {"mfcc", spec.mfcc, atgn::io::DType::f32}};
  if (fps > 0.0) {
    if (frames == 0)
      frames = static_cast<std::size_t>(static_cast<double>(sig.samples.size()) / sig.sample_rate * fps);
    const auto seq = atgn::data::audio_features_for_video(sig, cfg, fps, frames);
    list.push_back({"aligned.logmel", seq.logmel, atgn::io::DType::f32});
    list.push_back({"aligned.mfcc", seq.mfcc, atgn::io::DType::f32});
    list.push_back({"embedding", seq.embedding, atgn::io::DType::f32});
  }
  atgn::io::write_feature_file(out, list);
  std::cout << "logmel " << atgn::shape_str(spec.logmel.shape()) << ", mfcc " << atgn::shape_str(spec.mfcc.shape())
            << " -> " << out << "\n";
  return 0;
}

int cmd_gen(const std::string& spec_file, const std::vector<std::string>& sets, const std::string& out) {
  std::string text;
  if (!spec_file.empty()) {
    std::ifstream in(spec_file);
    if (!in) throw atgn::PathError("cannot read synthetic spec '" + spec_file + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (const auto& s : sets) text += "\n" + s;
  const auto spec = atgn::synth::parse_spec(text);
  const auto ds = atgn::synth::generate(spec);
  atgn::synth::write_dataset(out, ds);
  const auto rates = ds.positive_rates();
  std::cout << "wrote " << ds.videos.size() << " videos x " << spec.frames << " frames to " << out << "\npositive rates:";
  for (double r : rates) std::cout << ' ' << atgn::metrics::percent(r);
  std::cout << "\n";
  return 0;
}

int cmd_train(const CommonOpts& o) {
  const auto rc = resolve(o);
  const auto out = prepare_out(rc);
  const auto data = atgn::prepare_data(rc);
  const auto mc = rc.model(data.dataset.branches);
  std::ofstream log(out / "metrics.jsonl", std::ios::trunc);
  const auto res = atgn::train(mc, data.dataset, rc.training(), [&](const atgn::EpochLog& l) {
    log << epoch_json(l).dump() << "\n";
    log.flush();
    std::printf("epoch %3zu  lr %.2e  loss %.4f  val F1 %s\n", l.epoch, l.lr, l.train_loss,
                atgn::metrics::percent(l.val_f1).c_str());
  });
  atgn::save_checkpoint(out / "checkpoint.atgn", res.best, res.class_weights, data.norm);
  atgn::save_checkpoint(out / "last.atgn", res.state.params, res.class_weights, data.norm);
  std::cout << "trainable scalars " << res.state.params.trainable_scalars() << " of "
            << res.state.params.total_scalars() << "\n";
  if (!res.log.empty())
    std::cout << "best val F1 " << atgn::metrics::percent(res.best_val_f1) << " at epoch " << res.best_epoch << "\n";
  std::cout << "checkpoint " << (out / "checkpoint.atgn").string() << "\n";
  return 0;
}

struct Loaded {
  atgn::data::Dataset dataset;
  atgn::ModelConfig model;
  atgn::Checkpoint checkpoint;
};

Loaded load_for_eval(const atgn::RunConfig& rc, const std::string& ckpt_path) {
  // Branch widths come from the data; normalization from the checkpoint.
  auto raw = atgn::data::load_dataset(rc.str("data_dir"), rc.list("branches"), rc.audio_pipeline());
  Loaded l;
  l.model = rc.model(raw.branches);
  l.checkpoint = atgn::load_checkpoint(ckpt_path, l.model);
  atgn::data::apply_norm(raw.train, l.checkpoint.norm);
  atgn::data::apply_norm(raw.val, l.checkpoint.norm);
  l.dataset = std::move(raw);
  return l;
}

const std::vector<atgn::VideoData>& pick_split(const atgn::data::Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "val") {
    if (ds.val.empty()) throw atgn::ConfigError("dataset has no validation split");
    return ds.val;
  }
  throw atgn::ConfigError("split must be train or val");
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, const std::string& thr_file, const std::string& split) {
  const auto rc = resolve(o);
  const auto out = prepare_out(rc);
  const auto l = load_for_eval(rc, ckpt);
  const auto pred = atgn::predict(l.model, l.checkpoint.params, pick_split(l.dataset, split), rc.training().clip_len);
  const std::size_t n = l.model.fusion.n_aus;
  const auto thresholds = thr_file.empty() ? std::vector<double>(n, 0.5) : atgn::metrics::read_thresholds(thr_file, n);
  const auto f1 = atgn::metrics::f1_scores(pred.probs, pred.labels, thresholds);
  const auto rep = atgn::metrics::emit_metrics_report(f1, l.dataset.au_names, thresholds);
  write_text(out / "eval.txt", rep.text);
  write_text(out / "eval.csv", rep.csv);
  std::cout << rep.text;
  return 0;
}

int cmd_sweep(const CommonOpts& o, const std::string& ckpt) {
  const auto rc = resolve(o);
  const auto out = prepare_out(rc);
  const auto l = load_for_eval(rc, ckpt);
  const auto pred = atgn::predict(l.model, l.checkpoint.params, pick_split(l.dataset, "val"), rc.training().clip_len);
  const auto sw = atgn::metrics::sweep_thresholds(pred.probs, pred.labels, rc.sweep_grid());
  atgn::metrics::write_thresholds(out / "thresholds.txt", sw.thresholds);
  const auto rep = atgn::metrics::emit_metrics_report(sw.f1, l.dataset.au_names, sw.thresholds);
  write_text(out / "sweep.txt", rep.text);
  write_text(out / "sweep.csv", rep.csv);
  std::cout << rep.text << "thresholds " << (out / "thresholds.txt").string() << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o) {
  const auto rc = resolve(o);
  const auto out = prepare_out(rc);
  const auto data = atgn::prepare_data(rc);
  std::ofstream log(out / "ablation.jsonl", std::ios::trunc);
  const auto res = atgn::run_ablation(rc, data, [&](const std::string& method, const atgn::EpochLog& l) {
    auto j = epoch_json(l);
    j["method"] = method;
    log << j.dump() << "\n";
    log.flush();
  });
  const auto rep = atgn::metrics::emit_report(res.rows);
  write_text(out / "ablation.txt", rep.text);
  write_text(out / "ablation.csv", rep.csv);
  atgn::metrics::write_thresholds(out / "thresholds.txt", res.thresholds);
  std::cout << rep.text;
  return 0;
}

int cmd_selfcheck() {
  bool ok = true;
  for (const auto& line : atgn::selfcheck::run_all()) {
    std::printf("%-4s %-22s %s\n", line.ok ? "ok" : "FAIL", line.name.c_str(), line.detail.c_str());
    ok = ok && line.ok;
  }
  std::cout << (ok ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual action unit detection: TCN + transformer fusion"};
  app.require_subcommand(1);

  CommonOpts ext_o, train_o, eval_o, sweep_o, ablate_o;
  std::string wav, ext_out;
  double fps = 0.0;
  std::size_t frames = 0;
  auto* ext = app.add_subcommand("extract", "log-mel + MFCC features from a WAV file");
  ext->add_option("wav", wav, "input WAV")->required();
  ext->add_option("out", ext_out, "output feature file")->required();
  ext->add_option("--fps", fps, "also write features aligned to video frames at this rate");
  ext->add_option("--frames", frames, "video frame count for --fps (default: audio duration)");
  add_common(ext, ext_o);

  std::string spec_file, gen_out;
  std::vector<std::string> spec_sets;
  auto* gen = app.add_subcommand("gen", "generate a synthetic planted dataset");
  gen->add_option("out", gen_out, "output dataset directory")->required();
  gen->add_option("-s,--spec", spec_file, "key=value synthetic spec file");
  gen->add_option("--set", spec_sets, "override one spec key (key=value), repeatable");

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint and metrics log");
  add_common(tr, train_o);

  std::string ckpt, thr, split = "val";
  auto* ev = app.add_subcommand("eval", "per-AU F1 report for a checkpoint");
  add_common(ev, eval_o);
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--thresholds", thr, "thresholds file from `atgn sweep` (default 0.5)");
  ev->add_option("--split", split, "train or val");

  std::string sweep_ckpt;
  auto* sw = app.add_subcommand("sweep", "choose per-AU thresholds on the validation split");
  add_common(sw, sweep_o);
  sw->add_option("--checkpoint", sweep_ckpt, "checkpoint file")->required();

  auto* ab = app.add_subcommand("ablate", "train every ablation arm and print the table");
  add_common(ab, ablate_o);

  auto* sc = app.add_subcommand("selfcheck", "built-in gradient, DSP, receptive-field and freeze checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*ext) return cmd_extract(wav, ext_out, fps, frames, ext_o);
    if (*gen) return cmd_gen(spec_file, spec_sets, gen_out);
    if (*tr) return cmd_train(train_o);
    if (*ev) return cmd_eval(eval_o, ckpt, thr, split);
    if (*sw) return cmd_sweep(sweep_o, sweep_ckpt);
    if (*ab) return cmd_ablate(ablate_o);
    if (*sc) return cmd_selfcheck();
  } catch (const atgn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
