#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "atgn/clips.hpp"
#include "atgn/dataset.hpp"
#include "atgn/metrics.hpp"
#include "atgn/synthetic.hpp"
#include "support.hpp"

using namespace atgn;

namespace {

VideoData counting_video(std::size_t frames) {
  VideoData v;
  v.id = "v";
  std::vector<double> x(frames * 2), y(frames * 12, 0.0);
  for (std::size_t t = 0; t < frames; ++t) x[2 * t] = x[2 * t + 1] = static_cast<double>(t + 1);
  v.modalities = {Tensor::from({frames, 2}, x)};
  v.labels = Tensor::from({frames, 12}, y);
  return v;
}

synth::SyntheticSpec small_spec() {
  synth::SyntheticSpec s;
  s.n_videos = 3;
  s.frames = 150;
  s.n_val = 1;
  s.seed = 11;
  return s;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) { return io::read_bytes(p); }

// Solves (M Mᵀ) a = M vᵀ for every row v: least-squares latents from visual rows.
Tensor recover_latents(const Tensor& visual, const Tensor& mixing) {
  const std::size_t k = mixing.dim(0), d = mixing.dim(1), n = visual.dim(0);
  std::vector<double> g(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) g[i * k + j] += mixing[i * d + c] * mixing[j * d + c];
  std::vector<double> out(n * k);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> a = g, b(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t c = 0; c < d; ++c) b[i] += mixing[i * d + c] * visual[t * d + c];
    for (std::size_t col = 0; col < k; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < k; ++r)
        if (std::abs(a[r * k + col]) > std::abs(a[piv * k + col])) piv = r;
      for (std::size_t c = 0; c < k; ++c) std::swap(a[col * k + c], a[piv * k + c]);
      std::swap(b[col], b[piv]);
      for (std::size_t r = col + 1; r < k; ++r) {
        const double f = a[r * k + col] / a[col * k + col];
        for (std::size_t c = col; c < k; ++c) a[r * k + c] -= f * a[col * k + c];
        b[r] -= f * b[col];
      }
    }
    for (std::size_t i = k; i-- > 0;) {
      double s = b[i];
      for (std::size_t c = i + 1; c < k; ++c) s -= a[i * k + c] * out[t * k + c];
      out[t * k + i] = s / a[i * k + i];
    }
  }
  return Tensor::from({n, k}, out);
}

}  // namespace

TEST(Clips, WindowArithmetic) {
  const auto train450 = build_clips(counting_video(450), 200, ClipMode::train);
  ASSERT_EQ(train450.size(), 2u);
  EXPECT_EQ(train450[0].start, 0u);
  EXPECT_EQ(train450[1].start, 200u);
  const auto eval450 = build_clips(counting_video(450), 200, ClipMode::eval);
  ASSERT_EQ(eval450.size(), 3u);
  EXPECT_EQ(eval450[2].start, 400u);
  EXPECT_EQ(eval450[2].valid, 50u);
  EXPECT_EQ(eval450[2].inputs[0].dim(0), 200u);
  EXPECT_EQ(eval450[2].inputs[0].at(49, 0), 450.0);
  EXPECT_EQ(eval450[2].inputs[0].at(50, 0), 0.0);
  EXPECT_EQ(eval450[2].labels.at(49, 0), 0.0);
  for (std::size_t r = 50; r < 200; ++r) EXPECT_EQ(eval450[2].labels.at(r, 3), -1.0);

  EXPECT_EQ(build_clips(counting_video(200), 200, ClipMode::train).size(), 1u);
  EXPECT_EQ(build_clips(counting_video(200), 200, ClipMode::eval).size(), 1u);
  EXPECT_EQ(build_clips(counting_video(50), 200, ClipMode::train).size(), 0u);
  EXPECT_EQ(build_clips(counting_video(50), 200, ClipMode::eval).size(), 1u);
}

TEST(Clips, CoverEveryFrameExactlyOnce) {
  for (std::size_t n : {1u, 37u, 199u, 200u, 201u, 450u, 1000u}) {
    for (std::size_t len : {1u, 7u, 200u}) {
      std::vector<int> seen(n, 0), seen_train(n, 0);
      for (const auto& c : build_clips(counting_video(n), len, ClipMode::eval))
        for (std::size_t r = 0; r < c.valid; ++r) ++seen[static_cast<std::size_t>(c.inputs[0].at(r, 0)) - 1];
      for (const auto& c : build_clips(counting_video(n), len, ClipMode::train)) {
        EXPECT_EQ(c.valid, len);
        for (std::size_t r = 0; r < c.valid; ++r) ++seen_train[static_cast<std::size_t>(c.inputs[0].at(r, 0)) - 1];
      }
      for (std::size_t t = 0; t < n; ++t) {
        EXPECT_EQ(seen[t], 1);
        EXPECT_LE(seen_train[t], 1);
      }
      EXPECT_EQ(static_cast<std::size_t>(std::count(seen_train.begin(), seen_train.end(), 1)), n / len * len);
    }
  }
}

TEST(Clips, Errors) {
  auto v = counting_video(10);
  EXPECT_THROW(build_clips(v, 0, ClipMode::train), ArgumentError);
  v.modalities.push_back(Tensor::zeros({9, 3}));
  EXPECT_THROW(build_clips(v, 4, ClipMode::eval), AlignmentError);
}

TEST(Synthetic, DeterministicBytes) {
  const auto spec = small_spec();
  const auto a = testing_support::temp_dir("syn_a"), b = testing_support::temp_dir("syn_b");
  synth::write_dataset(a, synth::generate(spec));
  synth::write_dataset(b, synth::generate(spec));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 3u + 3u + 2u);

  auto other = spec;
  other.seed = 12;
  EXPECT_NE(synth::generate(other).videos[0].visual.values(), synth::generate(spec).videos[0].visual.values());
}

TEST(Synthetic, PositiveRatesWithinFivePoints) {
  synth::SyntheticSpec spec;  // 8 videos x 1000 frames
  const auto ds = synth::generate(spec);
  const auto rates = ds.positive_rates();
  ASSERT_EQ(rates.size(), 12u);
  for (std::size_t a = 0; a < 12; ++a) {
    EXPECT_GE(rates[a], spec.pos_rate_min - 0.05) << a;
    EXPECT_LE(rates[a], spec.pos_rate_max + 0.05) << a;
    EXPECT_NEAR(rates[a], ds.target_rates[a], 0.05) << a;
  }
}

TEST(Synthetic, PlantedRuleHoldsExactly) {
  for (double split : {0.0, 1.0}) {
    auto spec = small_spec();
    spec.modality_split = split;
    const auto ds = synth::generate(spec);
    const std::size_t hist = spec.lag + spec.min_run - 1;
    for (const auto& v : ds.videos)
      for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t a = 0; a < 12; ++a) {
          double expect = -1.0;
          if (t >= hist) {
            bool all = true;
            for (std::size_t j = 0; j < spec.min_run; ++j) all = all && v.latents.at(t - spec.lag - j, a) > ds.levels[a];
            expect = all ? 1.0 : 0.0;
          }
          ASSERT_EQ(v.labels.at(t, a), expect) << v.id << " t=" << t << " au=" << a;
        }
  }
}

TEST(Synthetic, SplitLatentIsNormalizedSum) {
  auto spec = small_spec();
  spec.modality_split = 0.6;
  const auto ds = synth::generate(spec);
  const auto& v = ds.videos[0];
  for (std::size_t i = 0; i < v.latents.numel(); ++i)
    EXPECT_NEAR(v.latents[i], (v.visual_latents[i] + v.audio_latents[i]) / std::sqrt(4.0 - 1.2), 1e-12);
  const auto plain = synth::generate(small_spec());
  EXPECT_EQ(plain.videos[0].visual_latents.values(), plain.videos[0].latents.values());
}

TEST(Synthetic, NoiselessLabelsAreRecoverableFromFeatures) {
  auto spec = small_spec();
  spec.sigma_v = 0.0;
  spec.sigma_a = 0.0;
  const auto ds = synth::generate(spec);
  for (const auto& v : ds.videos) {
    const Tensor z = recover_latents(v.visual, ds.mixing);
    for (std::size_t i = 0; i < z.numel(); ++i) ASSERT_NEAR(z[i], v.latents[i], 1e-9);
    // Steep logistic on min_j(z(t-lag-j) - level).
    std::vector<double> p(v.labels.numel(), 0.0);
    for (std::size_t t = spec.history(); t < spec.frames; ++t)
      for (std::size_t a = 0; a < 12; ++a) {
        double m = 1e9;
        for (std::size_t j = 0; j < spec.min_run; ++j) m = std::min(m, z.at(t - spec.lag - j, a) - ds.levels[a]);
        p[t * 12 + a] = 1.0 / (1.0 + std::exp(-1e6 * m));
      }
    const auto f1 = metrics::f1_scores(Tensor::from(v.labels.shape(), p), v.labels);
    for (std::size_t a = 0; a < 12; ++a) {
      if (f1.counts[a].tp + f1.counts[a].fn == 0) continue;
      EXPECT_EQ(f1.per_au[a], 1.0) << a;
    }
  }
}

TEST(Synthetic, LagZeroIsFrameRecoverable) {
  auto spec = small_spec();
  spec.lag = 0;
  spec.min_run = 1;
  spec.sigma_v = 0.0;
  const auto ds = synth::generate(spec);
  const auto& v = ds.videos[0];
  const Tensor z = recover_latents(v.visual, ds.mixing);
  std::vector<double> p(z.numel());
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t a = 0; a < 12; ++a) p[t * 12 + a] = z.at(t, a) > ds.levels[a] ? 1.0 : 0.0;
  const auto f1 = metrics::f1_scores(Tensor::from(z.shape(), p), v.labels);
  for (std::size_t a = 0; a < 12; ++a)
    if (f1.counts[a].tp + f1.counts[a].fn) {
      EXPECT_EQ(f1.per_au[a], 1.0);
    }
}

// With a lag, the current frame alone does not determine the label: even the
// best threshold on the exact current latent (the only per-frame evidence for
// that AU) stays well short of F1 = 1.
TEST(Synthetic, FrameIndependentReadingFallsShort) {
  synth::SyntheticSpec spec;
  spec.sigma_v = 0.0;
  const auto ds = synth::generate(spec);
  std::vector<double> z, y;
  for (const auto& v : ds.videos) {
    z.insert(z.end(), v.latents.data().begin(), v.latents.data().end());
    y.insert(y.end(), v.labels.data().begin(), v.labels.data().end());
  }
  const std::size_t n = z.size() / 12;
  std::vector<double> grid;
  for (int i = 1; i < 200; ++i) grid.push_back(i / 200.0);
  std::vector<double> sq(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) sq[i] = 1.0 / (1.0 + std::exp(-z[i]));  // monotone in z
  const auto best = metrics::sweep_thresholds(Tensor::from({n, 12}, sq), Tensor::from({n, 12}, y), grid);
  EXPECT_LT(best.f1.mean, 0.85);
  for (double f : best.f1.per_au) EXPECT_LT(f, 1.0);
}

TEST(Synthetic, SpecParsingAndValidation) {
  const auto s = synth::parse_spec("# comment\nframes = 300\n\nlag=5\nmodality_split=0.5\n");
  EXPECT_EQ(s.frames, 300u);
  EXPECT_EQ(s.lag, 5u);
  EXPECT_EQ(s.modality_split, 0.5);
  EXPECT_THROW(synth::parse_spec("bogus=1\n"), ConfigError);
  EXPECT_THROW(synth::parse_spec("frames=abc\n"), ConfigError);
  EXPECT_THROW(synth::parse_spec("lag=14\nmin_run=3\n").validate(), ConfigError);
  EXPECT_THROW(synth::parse_spec("n_val=9\n").validate(), ConfigError);
  EXPECT_THROW(synth::parse_spec("modality_split=2\n").validate(), ConfigError);
}

TEST(Dataset, LoadsSplitsAndCachesAudio) {
  const auto dir = testing_support::temp_dir("ds");
  synth::write_dataset(dir, synth::generate(small_spec()));
  const auto man = data::read_manifest(dir);
  EXPECT_EQ(man.train, (std::vector<std::string>{"vid000", "vid001"}));
  EXPECT_EQ(man.val, (std::vector<std::string>{"vid002"}));

  data::AudioPipelineConfig cfg;
  const auto ds = data::load_dataset(dir, {"visual", "audio", "mfcc"}, cfg);
  ASSERT_EQ(ds.train.size(), 2u);
  ASSERT_EQ(ds.val.size(), 1u);
  ASSERT_EQ(ds.branches.size(), 3u);
  EXPECT_EQ(ds.branches[0].in_dim, 64u);
  EXPECT_EQ(ds.branches[1].in_dim, 128u);
  EXPECT_EQ(ds.branches[2].in_dim, 13u);
  for (const auto& v : ds.train)
    for (const auto& m : v.modalities) EXPECT_EQ(m.dim(0), 150u);
  EXPECT_TRUE(std::filesystem::exists(dir / "audio" / "vid000.atgn"));

  // Second load reads the cache and sees the same numbers.
  const auto again = data::load_dataset(dir, {"visual", "audio", "mfcc"}, cfg);
  EXPECT_EQ(again.train[1].modalities[1].values(), ds.train[1].modalities[1].values());

  EXPECT_THROW(data::load_dataset(dir, {"visual", "video"}, cfg), ConfigError);
  EXPECT_THROW(data::load_dataset(dir, {}, cfg), ConfigError);
  EXPECT_THROW(data::load_dataset(dir / "nowhere", {"visual"}, cfg), PathError);
}

TEST(Dataset, NormalizationUsesTrainStatistics) {
  const auto dir = testing_support::temp_dir("norm");
  synth::write_dataset(dir, synth::generate(small_spec()));
  auto ds = data::load_dataset(dir, {"visual"}, {});
  const auto norm = data::fit_norm(ds.train, ds.branches);
  data::apply_norm(ds.train, norm);
  const std::size_t d = 64;
  for (std::size_t c = 0; c < d; c += 9) {
    double s = 0.0, s2 = 0.0, n = 0.0;
    for (const auto& v : ds.train)
      for (std::size_t t = 0; t < v.frames(); ++t) {
        const double x = v.modalities[0].at(t, c);
        s += x, s2 += x * x, n += 1.0;
      }
    EXPECT_NEAR(s / n, 0.0, 1e-9);
    EXPECT_NEAR(s2 / n, 1.0, 1e-6);
  }
  const auto back = data::norm_from_sections(data::norm_sections(norm), ds.branches);
  EXPECT_EQ(back.mean[0].values(), norm.mean[0].values());
  EXPECT_EQ(back.stddev[0].values(), norm.stddev[0].values());
}

TEST(Dataset, LabelStatsSkipIgnored) {
  VideoData v = counting_video(4);
  auto y = v.labels.mutable_data();
  y[0] = 1.0;
  y[12] = -1.0;
  y[24] = 1.0;
  const auto st = data::label_stats({v});
  EXPECT_EQ(st.positives[0], 2u);
  EXPECT_EQ(st.labeled[0], 3u);
  EXPECT_EQ(st.labeled[1], 4u);
}
