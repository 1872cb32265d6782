// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "spgim/checkpoint.hpp"
#include "spgim/config.hpp"
#include "spgim/metrics.hpp"
#include "spgim/pipeline.hpp"
#include "spgim/spgm.hpp"
#include "spgim/synthesis.hpp"
#include "spgim/synthetic.hpp"
#include "spgim/train.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace spgim;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// 1 ------------------------------------------------------------------------

Outcome compositing() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ImagePlane f = testing::random_image(16, 16, rng), b = testing::random_image(16, 16, rng);
    AlphaMatte a = testing::random_matte(16, 16, rng);
    for (double& v : f.data()) v = quantize8(v);
    for (double& v : b.data()) v = quantize8(v);
    for (double& v : a.data()) v = quantize8(v);
    const ImagePlane img = compose(f, a, b);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double want = a.at(y, x) * f.at(c, y, x) + (1 - a.at(y, x)) * b.at(c, y, x);
          worst = std::max(worst, std::abs(quantize8(img.at(c, y, x)) - want));
        }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1.0 / 255 + 1e-12 && secs < 5.0,
          fmt("1000 triples, max error %.6f (limit %.6f), %.2f s (limit 5 s)", worst, 1.0 / 255, secs)};
}

// 2 ------------------------------------------------------------------------

Outcome manifest() {
  const auto t0 = Clock::now();
  std::vector<std::string> fg, bg;
  for (int i = 0; i < 431; ++i) fg.push_back("fg" + std::to_string(i));
  for (int i = 0; i < 1000; ++i) bg.push_back("bg" + std::to_string(i));
  const auto a = build_manifest(fg, bg, 100, Split::kTrain, 7);
  const auto b = build_manifest(fg, bg, 100, Split::kTrain, 7);
  const std::string ja = a.to_jsonl(), jb = b.to_jsonl();
  const bool same = sha256_hex(ja.data(), ja.size()) == sha256_hex(jb.data(), jb.size());
  const double secs = seconds_since(t0);
  return {a.records.size() == 43100 && same && secs < 5.0,
          fmt("%zu records (want 43100), repeat run %s, %.2f s (limit 5 s)", a.records.size(),
              same ? "identical" : "differs", secs)};
}

// 3 ------------------------------------------------------------------------

Outcome tst_oracle() {
  Rng rng(303);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = rng.uniform_int(2, 4), w = rng.uniform_int(2, 4), n = rng.uniform_int(1, 2);
    const int kd = rng.uniform_int(1, 8), vd = rng.uniform_int(1, 6);
    const Tensor km = testing::random_tensor({n, kd, h, w}, rng, -2, 2);
    const Tensor kg = testing::random_tensor({n, kd, h, w}, rng, -2, 2);
    const Tensor vm = testing::random_tensor({n, vd, h, w}, rng), vg = testing::random_tensor({n, vd, h, w}, rng);
    const Tensor got = tst_attend(constant(km), constant(kg), constant(vm), constant(vg)).value();
    const Tensor want = testing::tst_loop(km, kg, vm, vg);
    if (got.shape() != want.shape()) return {false, "shape mismatch"};
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return {worst < 1e-5, fmt("100 trials on 2x2..4x4 grids, max abs diff %.3g (limit 1e-5)", worst)};
}

// 4 ------------------------------------------------------------------------

Outcome focal() {
  Rng rng(404);
  long mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    AlphaMatte a(h, w);
    for (double& v : a.data()) {
      const double pick = rng.uniform();
      v = pick < 0.2 ? 0.0 : pick < 0.4 ? 1.0 : pick < 0.5 ? rng.uniform(0, 2e-3) : rng.uniform();
    }
    const double eps = 1e-3;
    const AlphaMatte u = focal_mask(a, eps);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double want = (a.at(y, x) > eps && a.at(y, x) < 1 - eps) ? 1.0 : 0.0;
        mismatches += u.at(y, x) != want;
      }
  }
  return {mismatches == 0, fmt("1000 planes, %ld mismatching pixels (want 0)", mismatches)};
}

// 5 ------------------------------------------------------------------------

Outcome gradients() {
  Rng rng(505);
  // caption loss: 1 layer, width 8, vocabulary of 2
  ParamStore store;
  TextualDecoderConfig dc;
  dc.layers = 1;
  dc.heads = 2;
  dc.model_width = 8;
  dc.vocab_size = 2;
  dc.max_len = 6;
  dc.ffn_multiplier = 2;
  const TextualDecoder dec(store, "d", dc, rng);
  Var grid(testing::random_tensor({3, 8}, rng), true);
  CaptionSequence seq;
  seq.tokens = {0, 1, 1, 0, 1};
  std::vector<Var> leaves = store.vars();
  leaves.push_back(grid);
  const auto cap = testing::check_gradients([&] { return caption_loss(dec, grid, seq); }, leaves);

  // spd_loss through a sigmoid head on 4x4 planes
  Var logits(testing::random_tensor({2, 1, 4, 4}, rng, -2, 2), true);
  const Tensor target = testing::random_tensor({2, 1, 4, 4}, rng, 0, 1);
  const auto spd = testing::check_gradients([&] { return spd_loss(ops::sigmoid(logits), constant(target)); }, {logits});

  // spgm_loss on a 1x1 / 2x2 / 4x4 pyramid, away from the |.| kink
  std::vector<Var> alphas, targets;
  for (int s : {1, 2, 4}) {
    Tensor a = testing::random_tensor({1, 1, s, s}, rng, 0, 1), t = testing::random_tensor({1, 1, s, s}, rng, 0, 1);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - t[i]) < 1e-4) a[i] += 1e-3;
    alphas.emplace_back(a, true);
    targets.push_back(constant(t));
  }
  const auto spgm = testing::check_gradients([&] { return spgm_loss(alphas, targets, {1, 2, 3}); }, alphas);

  return {cap.ok() && spd.ok() && spgm.ok(),
          fmt("worst normalized error (<= 1 passes at rel 1e-3): caption %.3f over %zu, spd %.3f over %zu, "
              "spgm %.3f over %zu",
              cap.worst, cap.checked, spd.worst, spd.checked, spgm.worst, spgm.checked)};
}

// 6 ------------------------------------------------------------------------

Outcome separable() {
  Rng rng(606);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = testing::random_tensor({1, 1, 17, 13}, rng);
    const Tensor v = testing::random_tensor({1, 1, 5, 1}, rng), h = testing::random_tensor({1, 1, 1, 5}, rng);
    const int dil = 1 + trial % 3;
    const Var vert = ops::conv2d(constant(x), constant(v), Var(), {1, 2 * dil, 0, dil, 1});
    const Var both = ops::conv2d(vert, constant(h), Var(), {1, 0, 2 * dil, 1, dil});
    Tensor dense({1, 1, 5, 5});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) dense.at(0, 0, i, j) = v[i] * h[j];
    const Tensor ref = testing::conv_loop(x, dense, nullptr, {1, 2 * dil, 2 * dil, dil, dil});
    if (both.value().shape() != ref.shape()) return {false, "shape mismatch"};
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(both.value()[i] - ref[i]));
  }
  return {worst < 1e-5, fmt("10 random 5x1 then 1x5 stacks (dilation 1-3), max abs diff %.3g (limit 1e-5)", worst)};
}

// 7 ------------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(707);
  const auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
  };
  int sad_exact = 0, mse_exact = 0;
  double grad_rel = 0, conn_rel = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const AlphaMatte p = testing::random_matte(16, 16, rng), g = testing::random_matte(16, 16, rng);
    sad_exact += metrics::sad(p, g) == testing::sad_loop(p, g);
    mse_exact += metrics::mse(p, g) == testing::mse_loop(p, g);
    grad_rel = std::max(grad_rel, rel(metrics::grad(p, g), testing::grad_separable(p, g, 1.4, 4)));
    conn_rel = std::max(conn_rel, rel(metrics::conn(p, g), testing::conn_reference(p, g, 0.1)));
  }
  return {sad_exact == 50 && mse_exact == 50 && grad_rel < 1e-6 && conn_rel < 1e-6,
          fmt("50 pairs: SAD exact %d/50, MSE exact %d/50, Grad max rel %.3g, Conn max rel %.3g (limit 1e-6)",
              sad_exact, mse_exact, grad_rel, conn_rel)};
}

// 8 and 9 ------------------------------------------------------------------

constexpr int kDeskSize = 64;
constexpr int kDeskSeeds = 3;

std::vector<const CompositeSample*> pointers(const std::vector<CompositeSample>& v) {
  std::vector<const CompositeSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

double spd_loss_on(const SpdNetwork& net, const std::vector<CompositeSample>& data) {
  std::vector<ImagePlane> images;
  for (const auto& s : data) images.push_back(s.image);
  NoGradGuard guard;
  const Var mask = net.forward(constant(stack_images(images))).mask;
  return spd_loss(mask, constant(stack_saliency(pointers(data)))).value()[0];
}

double spgm_loss_on(const SpgmNetwork& net, const SpdNetwork& spd, const std::vector<CompositeSample>& data) {
  std::vector<ImagePlane> images;
  std::vector<AlphaMatte> gts;
  for (const auto& s : data) {
    images.push_back(s.image);
    gts.push_back(s.alpha_gt);
  }
  const Tensor batch = stack_images(images);
  const SpdInference g = run_spd(spd, batch);
  const FeaturePyramid guid = as_constants(g.pyramid);
  NoGradGuard guard;
  const MattingOutput out = net.forward(constant(batch), constant(g.mask_full),
                                        net.config().variant == SpgmVariant::kNoTst ? nullptr : &guid);
  return spgm_loss(out, constant(stack_alphas(gts)), net.config().loss_weights).value()[0];
}

struct VariantRun {
  double loss_before = 0, loss_after = 0;
  std::vector<double> train_sad;
  double held_out_sad = 0;
  double seconds = 0;
};

struct DeskRun {
  double spd_before = 0, spd_after = 0, spd_seconds = 0;
  std::map<std::string, VariantRun> variants;
};

std::vector<CompositeSample> desk_composites(int seed) {
  return synthetic::make_composites(5, kDeskSize, derive_seed(static_cast<std::uint64_t>(seed), 0xde5c));
}

DeskRun run_desk(int seed, const std::vector<std::string>& variants) {
  const auto all = desk_composites(seed);
  const std::vector<CompositeSample> train(all.begin(), all.begin() + 4), held(all.begin() + 4, all.end());
  DeskRun r;

  TrainConfig spd_cfg = TrainConfig::preset(Branch::kSpd, "desk");
  spd_cfg.seed = static_cast<std::uint64_t>(seed);
  SpdNetwork spd(spd_config_for(spd_cfg), derive_seed(spd_cfg.seed, 0x5d));
  r.spd_before = spd_loss_on(spd, train);
  auto t0 = Clock::now();
  train_spd(spd, train, spd_cfg);
  r.spd_seconds = seconds_since(t0);
  r.spd_after = spd_loss_on(spd, train);

  for (const auto& name : variants) {
    TrainConfig cfg = TrainConfig::preset(Branch::kSpgm, "desk");
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.variant = name;
    SpgmNetwork net(spgm_config_for(cfg, spd.config()), derive_seed(cfg.seed, 0x59));
    VariantRun v;
    v.loss_before = spgm_loss_on(net, spd, train);
    t0 = Clock::now();
    train_spgm(net, spd, train, cfg);
    v.seconds = seconds_since(t0);
    v.loss_after = spgm_loss_on(net, spd, train);
    const auto preds = predict_alphas(net, spd, train);
    for (std::size_t i = 0; i < train.size(); ++i) v.train_sad.push_back(metrics::sad(preds[i], train[i].alpha_gt));
    v.held_out_sad = metrics::sad(predict_alphas(net, spd, held)[0], held[0].alpha_gt);
    std::printf("  seed %d %-7s spgm loss %.4f -> %.4f, held-out SAD %.4f (%.0f s)\n", seed, name.c_str(),
                v.loss_before, v.loss_after, v.held_out_sad, v.seconds);
    std::fflush(stdout);
    r.variants[name] = std::move(v);
  }
  return r;
}

std::map<int, DeskRun>& desk_cache() {
  static std::map<int, DeskRun> cache;
  return cache;
}

const DeskRun& desk(int seed, bool ablation) {
  auto& cache = desk_cache();
  auto it = cache.find(seed);
  const bool complete = it != cache.end() && it->second.variants.size() == 3;
  if (it == cache.end() || (ablation && !complete)) {
    const std::vector<std::string> variants =
        ablation ? std::vector<std::string>{"full", "no_tst", "no_aft"} : std::vector<std::string>{"full"};
    it = cache.insert_or_assign(seed, run_desk(seed, variants)).first;
  }
  return it->second;
}

Outcome desk_overfit() {
  const DeskRun& r = desk(0, true);
  const VariantRun& v = r.variants.at("full");
  const double spd_drop = 1 - r.spd_after / r.spd_before;
  const double spgm_drop = 1 - v.loss_after / v.loss_before;
  const double limit = 0.05 * kDeskSize * kDeskSize / 1000.0;
  const double worst_sad = *std::max_element(v.train_sad.begin(), v.train_sad.end());
  const double secs = r.spd_seconds + v.seconds;
  return {spd_drop >= 0.9 && spgm_drop >= 0.9 && worst_sad < limit && secs < 600,
          fmt("spd_loss %.4f -> %.4f (drop %.1f%%), spgm_loss %.4f -> %.4f (drop %.1f%%), want >= 90%%; "
              "worst training SAD %.4f (limit %.4f); training %.0f s (limit 600 s)",
              r.spd_before, r.spd_after, 100 * spd_drop, v.loss_before, v.loss_after, 100 * spgm_drop, worst_sad,
              limit, secs)};
}

Outcome ablation() {
  int wins = 0;
  std::ostringstream detail;
  for (int seed = 0; seed < kDeskSeeds; ++seed) {
    const DeskRun& r = desk(seed, true);
    const double full = r.variants.at("full").held_out_sad;
    const double no_tst = r.variants.at("no_tst").held_out_sad;
    const double no_aft = r.variants.at("no_aft").held_out_sad;
    const bool win = full <= no_tst && full <= no_aft;
    wins += win;
    detail << (seed ? "; " : "") << "seed " << seed << ": full " << fmt("%.4f", full) << " no_tst "
           << fmt("%.4f", no_tst) << " no_aft " << fmt("%.4f", no_aft) << (win ? " (ok)" : " (not ok)");
  }
  detail << "; full is best in " << wins << "/" << kDeskSeeds << " seeds (want >= 2)";
  return {wins >= 2, detail.str()};
}

// 10 -----------------------------------------------------------------------

Outcome hyperparameters() {
  const TrainConfig spd = TrainConfig::preset(Branch::kSpd);
  const TrainConfig spgm = TrainConfig::preset(Branch::kSpgm);
  const bool ok = spd.optimizer == OptimizerKind::kAdam && spd.initial_lr == 1e-2 && spd.batch_size == 16 &&
                  spd.input_size == 512 && spgm.optimizer == OptimizerKind::kAdam && spgm.initial_lr == 5e-3 &&
                  spgm.batch_size == 4 && spgm.input_size == 512 &&
                  spgm.loss_weights == std::vector<double>{1, 2, 3};
  std::string weights;
  for (double w : spgm.loss_weights) weights += (weights.empty() ? "" : ",") + fmt("%g", w);
  return {ok, fmt("SPD %s lr %g batch %d input %d; SPGM %s lr %g batch %d input %d weights (%s)",
                  to_string(spd.optimizer).c_str(), spd.initial_lr, spd.batch_size, spd.input_size,
                  to_string(spgm.optimizer).c_str(), spgm.initial_lr, spgm.batch_size, spgm.input_size,
                  weights.c_str())};
}

// 11 -----------------------------------------------------------------------

Outcome checkpoints() {
  const fs::path dir = cache_dir() / "acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  SpdConfig sc = spd_config_for(TrainConfig::preset(Branch::kSpd, "desk"));
  const SpdNetwork spd(sc, 11);
  const SpgmNetwork spgm(SpgmConfig::for_spd(sc), 12);
  const Checkpoint a = make_checkpoint(spd, TrainConfig::preset(Branch::kSpd, "desk").to_text(), 3);
  const Checkpoint b = make_checkpoint(spgm, TrainConfig::preset(Branch::kSpgm, "desk").to_text(), 4);
  save_checkpoint(dir / "spd.ckpt", a);
  save_checkpoint(dir / "spgm.ckpt", b);
  const bool bytes_same = serialize_checkpoint(load_checkpoint(dir / "spd.ckpt")) == serialize_checkpoint(a) &&
                          serialize_checkpoint(load_checkpoint(dir / "spgm.ckpt")) == serialize_checkpoint(b);

  Rng rng(1111);
  const ImagePlane image = testing::random_image(48, 72, rng);
  write_image(dir / "input.png", image);
  const ImagePlane stored = read_image(dir / "input.png");
  const PipelineResult before = Pipeline(spd, spgm).run(stored);
  const PipelineResult after = Pipeline::load(dir / "spd.ckpt", dir / "spgm.ckpt").run(stored);
  const bool forward_same = before.alpha.data() == after.alpha.data() && before.mask.data() == after.mask.data();

  std::vector<std::string> hashes;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = dir / ("alpha" + std::to_string(run) + ".png");
    const std::string cmd = std::string("\"") + SPGIM_CLI_PATH + "\" infer --image \"" + (dir / "input.png").string() +
                            "\" --spd-ckpt \"" + (dir / "spd.ckpt").string() + "\" --spgm-ckpt \"" +
                            (dir / "spgm.ckpt").string() + "\" --bit-depth 16 --out \"" + out.string() +
                            "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0 || !fs::exists(out)) return {false, "CLI infer failed: " + cmd};
    hashes.push_back(sha256_file(out));
  }
  const bool cli_same = hashes[0] == hashes[1];
  fs::remove_all(dir);
  return {bytes_same && forward_same && cli_same,
          fmt("reserialized bytes %s, reloaded forward %s, two CLI processes alpha sha256 %s (%.12s)",
              bytes_same ? "identical" : "differ", forward_same ? "bitwise equal" : "differs",
              cli_same ? "equal" : "differ", hashes[0].c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"compositing exactness", compositing},
      {"manifest arithmetic", manifest},
      {"TST oracle equivalence", tst_oracle},
      {"focal-mask correctness", focal},
      {"gradient checks", gradients},
      {"separable-kernel equivalence", separable},
      {"metric oracles", metric_oracles},
      {"desk-scale overfit", desk_overfit},
      {"ablation direction", ablation},
      {"hyperparameter defaults", hyperparameters},
      {"checkpoint and determinism", checkpoints},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
