// spgim command-line front end. Every verb accepts --config, --seed and --out.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spgim/checkpoint.hpp"
#include "spgim/config.hpp"
#include "spgim/metrics.hpp"
#include "spgim/pipeline.hpp"
#include "spgim/synthesis.hpp"
#include "spgim/synthetic.hpp"
#include "spgim/train.hpp"

namespace fs = std::filesystem;
using namespace spgim;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

/// `out_alias` is the verb-specific spelling of --out (e.g. --out-ckpt).
void add_common(CLI::App* cmd, CommonFlags& f, const std::string& out_help, const std::string& out_alias = "",
                bool out_required = true) {
  cmd->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "global seed (overrides the config)");
  auto* out = cmd->add_option(out_alias.empty() ? "--out" : "--out," + out_alias, f.out, out_help);
  if (out_required) out->required();
}

bool is_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

/// Sorted image files of a directory.
std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

TrainConfig resolve_config(Branch branch, const CommonFlags& f, const std::string& profile) {
  TrainConfig cfg = f.config.empty() ? TrainConfig::preset(branch, profile) : TrainConfig::load(f.config);
  if (cfg.branch != branch)
    throw Error("config is for branch '" + to_string(cfg.branch) + "', this verb trains '" + to_string(branch) + "'");
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

StepCallback progress(const char* what, long every) {
  const auto start = std::chrono::steady_clock::now();
  return [=](long step, double loss) {
    if (every <= 0 || step % every != 0) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "%s step %ld loss %.6f (%.1fs)\n", what, step, loss, secs);
  };
}

// ---------------------------------------------------------------------------

struct ComposeArgs {
  CommonFlags common;
  std::string fg_dir, bg_dir, split = "train";
  int ratio = 0;
};

/// fg-dir holds fg/<id>.png and alpha/<id>.png; bg-dir holds background images.
int run_compose(const ComposeArgs& a) {
  SynthesisConfig scfg;
  if (!a.common.config.empty()) {
    const auto doc = KeyValueDoc::load(a.common.config);
    for (const auto& key : doc.keys()) {
      if (key == "saliency_downsample") scfg.saliency_downsample = static_cast<int>(doc.get_long(key));
      else if (key == "saliency_sigma") scfg.saliency_sigma = doc.get_double(key);
      else if (key == "trimap_radius_min") scfg.trimap.radius_min = static_cast<int>(doc.get_long(key));
      else if (key == "trimap_radius_max") scfg.trimap.radius_max = static_cast<int>(doc.get_long(key));
      else throw Error("compose config: unknown key '" + key + "'");
    }
  }
  const Split split = parse_split(a.split);
  const int ratio = a.ratio > 0 ? a.ratio : default_ratio(split);
  const std::uint64_t seed = a.common.seed.value_or(0);

  std::vector<std::string> fg_ids;
  for (const auto& p : list_images(fs::path(a.fg_dir) / "fg")) {
    if (!fs::exists(fs::path(a.fg_dir) / "alpha" / p.filename()))
      throw Error("foreground " + p.filename().string() + " has no matching alpha");
    fg_ids.push_back(p.stem().string());
  }
  std::vector<std::string> bg_ids;
  std::map<std::string, fs::path> bg_paths;
  for (const auto& p : list_images(a.bg_dir)) {
    bg_ids.push_back(p.stem().string());
    bg_paths[p.stem().string()] = p;
  }
  if (fg_ids.empty()) throw Error("no foregrounds under " + a.fg_dir + "/fg");

  DatasetManifest m = build_manifest(fg_ids, bg_ids, ratio, split, seed);
  for (const auto& w : m.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const fs::path out(a.common.out);
  for (const char* sub : {"image", "alpha", "trimap", "saliency"}) fs::create_directories(out / sub);

  std::string loaded_fg;
  ForegroundAsset fg;
  for (auto& r : m.records) {
    if (r.fg_id != loaded_fg) {
      fg.foreground = read_image(fs::path(a.fg_dir) / "fg" / (r.fg_id + ".png"));
      fg.alpha = read_alpha(fs::path(a.fg_dir) / "alpha" / (r.fg_id + ".png"));
      fg.id = r.fg_id;
      fg.validate();
      loaded_fg = r.fg_id;
    }
    const CompositeSample s = render_sample(fg, read_image(bg_paths.at(r.bg_id)), r.bg_id, r.seed, scfg);
    write_image(out / r.image, s.image);
    write_alpha(out / r.alpha, s.alpha_gt);
    write_trimap(out / r.trimap, s.trimap);
    write_alpha(out / r.saliency, s.saliency_target.plane, 16);
    r.flags.insert(r.flags.end(), s.flags.begin(), s.flags.end());
  }
  m.write(out / "manifest.jsonl");
  std::printf("%zu composites (%zu foregrounds x %d) -> %s\n", m.records.size(), fg_ids.size(), ratio,
              (out / "manifest.jsonl").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct ToyArgs {
  CommonFlags common;
  int foregrounds = 4, backgrounds = 6, captions = 8, size = 64;
};

int run_make_toy_data(const ToyArgs& a) {
  const fs::path out(a.common.out);
  const std::uint64_t seed = a.common.seed.value_or(0);
  fs::create_directories(out / "fg" / "fg");
  fs::create_directories(out / "fg" / "alpha");
  fs::create_directories(out / "bg");
  fs::create_directories(out / "captions");
  const auto fgs = synthetic::make_foregrounds(a.foregrounds, a.size, derive_seed(seed, 1));
  for (const auto& f : fgs) {
    write_image(out / "fg" / "fg" / (f.id + ".png"), f.foreground);
    write_alpha(out / "fg" / "alpha" / (f.id + ".png"), f.alpha);
  }
  const auto bgs = synthetic::make_backgrounds(a.backgrounds, a.size, derive_seed(seed, 2));
  for (std::size_t i = 0; i < bgs.size(); ++i) write_image(out / "bg" / ("bg" + std::to_string(i) + ".png"), bgs[i]);
  const auto pairs = synthetic::make_caption_corpus(a.captions, a.size, derive_seed(seed, 3));
  std::ofstream manifest(out / "captions.jsonl");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string name = "captions/cap" + std::to_string(i) + ".png";
    write_image(out / name, pairs[i].image);
    manifest << nlohmann::json{{"image", name}, {"caption", pairs[i].caption}}.dump() << '\n';
  }
  std::printf("%d foregrounds, %d backgrounds, %d captioned images -> %s\n", a.foregrounds, a.backgrounds, a.captions,
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonFlags common;
  std::string manifest, profile = "desk", init_ckpt = "none", spd_ckpt;
  long log_every = 10;
};

int run_pretrain_captioner(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(Branch::kCaption, a.common, a.profile);
  const auto data = load_caption_set(a.manifest, cfg.input_size);
  std::vector<std::string> corpus;
  for (const auto& p : data) corpus.push_back(p.caption);
  Tokenizer tokenizer;
  tokenizer.fit(corpus);
  Captioner model(captioner_config_for(cfg, tokenizer.size()), tokenizer, derive_seed(cfg.seed, 0xc0));
  const TrainLog log = train_captioner(model, data, cfg, progress("caption", a.log_every));
  model.trained_steps = cfg.total;
  save_checkpoint(a.common.out, make_checkpoint(model, cfg.to_text(), cfg.total));
  std::printf("captioner: %zu pairs, vocab %d, loss %.4f -> %.4f, saved %s\n", data.size(), tokenizer.size(),
              log.losses.front(), log.losses.back(), a.common.out.c_str());
  return 0;
}

int run_train_spd(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(Branch::kSpd, a.common, a.profile);
  const SpdConfig scfg = spd_config_for(cfg);
  const auto data = load_training_set(a.manifest, cfg.input_size, scfg.mask_downsample);
  SpdNetwork net(scfg, derive_seed(cfg.seed, 0x5d));
  if (a.init_ckpt != "none") {
    const std::size_t n = net.load_backbone(load_checkpoint(a.init_ckpt).tensors);
    if (n == 0) throw Error("init checkpoint " + a.init_ckpt + " has no backbone tensor matching this network");
    std::fprintf(stderr, "initialized %zu backbone tensors from %s\n", n, a.init_ckpt.c_str());
  }
  const TrainLog log = train_spd(net, data, cfg, progress("spd", a.log_every));
  save_checkpoint(a.common.out, make_checkpoint(net, cfg.to_text(), static_cast<long>(log.losses.size())));
  std::printf("spd: %zu samples, %zu steps, loss %.4f -> %.4f, saved %s\n", data.size(), log.losses.size(),
              log.losses.front(), log.losses.back(), a.common.out.c_str());
  return 0;
}

int run_train_spgm(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(Branch::kSpgm, a.common, a.profile);
  const SpdNetwork spd = load_spd(load_checkpoint(a.spd_ckpt));
  const SpgmConfig gcfg = spgm_config_for(cfg, spd.config());
  const auto data = load_training_set(a.manifest, cfg.input_size, spd.config().mask_downsample);
  SpgmNetwork net(gcfg, derive_seed(cfg.seed, 0x59));
  const TrainLog log = train_spgm(net, spd, data, cfg, progress("spgm", a.log_every));
  save_checkpoint(a.common.out, make_checkpoint(net, cfg.to_text(), static_cast<long>(log.losses.size())));
  std::printf("spgm (%s): %zu samples, %zu steps, loss %.4f -> %.4f, saved %s\n", to_string(gcfg.variant).c_str(),
              data.size(), log.losses.size(), log.losses.front(), log.losses.back(), a.common.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  CommonFlags common;
  std::string image, ckpt, spd_ckpt, spgm_ckpt, dump_levels, dump_attention;
  int bit_depth = 8;
  bool full = false;
};

int run_infer_spd(const InferArgs& a) {
  const SpdNetwork spd = load_spd(load_checkpoint(a.ckpt));
  const ImagePlane image = read_image(a.image);
  const SpdInference r = run_spd(spd, pad_replicate(image, 32).to_tensor());
  const int d = spd.config().mask_downsample;
  const AlphaMatte mask = a.full ? crop(AlphaMatte::from_tensor(r.mask_full), image.height(), image.width())
                                 : crop(AlphaMatte::from_tensor(r.mask), (image.height() + d - 1) / d,
                                        (image.width() + d - 1) / d);
  write_alpha(a.common.out, mask, a.bit_depth);
  std::printf("mask %dx%d -> %s\n", mask.height(), mask.width(), a.common.out.c_str());
  return 0;
}

int run_infer(const InferArgs& a) {
  const Pipeline pipeline = Pipeline::load(a.spd_ckpt, a.spgm_ckpt);
  const ImagePlane image = read_image(a.image);
  const PipelineResult r = pipeline.run(image, !a.dump_attention.empty());
  write_alpha(a.common.out, r.alpha, a.bit_depth);
  const std::string stem = fs::path(a.image).stem().string();
  if (!a.dump_levels.empty()) write_intermediates(a.dump_levels, stem, r, a.bit_depth);
  if (!a.dump_attention.empty()) {
    if (pipeline.spgm().config().variant == SpgmVariant::kNoTst)
      throw Error("--dump-attention: this SPGM checkpoint has no attention blocks");
    write_attention(a.dump_attention, stem, r);
  }
  std::printf("alpha %dx%d -> %s\n", r.alpha.height(), r.alpha.width(), a.common.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonFlags common;
  std::string pred_dir, gt_dir, trimap_dir;
};

nlohmann::ordered_json report_json(const metrics::MetricReport& r) {
  return {{"SAD", r.sad}, {"MSE", r.mse}, {"Grad", r.grad}, {"Conn", r.conn}};
}

int run_eval(const EvalArgs& a) {
  const auto gts = list_images(a.gt_dir);
  if (gts.empty()) throw Error("no ground-truth mattes in " + a.gt_dir);
  const bool trimaps = !a.trimap_dir.empty();
  for (const auto& g : gts) {
    if (!fs::exists(fs::path(a.pred_dir) / g.filename())) throw Error("missing prediction for " + g.filename().string());
    if (trimaps && !fs::exists(fs::path(a.trimap_dir) / g.filename()))
      throw Error("missing trimap for " + g.filename().string());
  }

  std::vector<metrics::MetricReport> whole(gts.size()), unknown(gts.size());
  std::vector<std::string> errors(gts.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i; (i = next++) < gts.size();) {
      try {
        const AlphaMatte gt = read_alpha(gts[i]);
        const AlphaMatte pred = read_alpha(fs::path(a.pred_dir) / gts[i].filename());
        whole[i] = metrics::evaluate(pred, gt);
        if (trimaps) {
          const AlphaMatte region = metrics::unknown_region(read_trimap(fs::path(a.trimap_dir) / gts[i].filename()));
          unknown[i] = metrics::evaluate(pred, gt, &region);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, gts.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (!errors[i].empty()) throw Error(gts[i].filename().string() + ": " + errors[i]);

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < gts.size(); ++i) {
    nlohmann::ordered_json row{{"id", gts[i].stem().string()}, {"whole_image", report_json(whole[i])}};
    if (trimaps) row["unknown"] = report_json(unknown[i]);
    rows.push_back(row);
  }
  nlohmann::ordered_json mean{{"id", "mean"}, {"whole_image", report_json(metrics::mean_report(whole))}};
  if (trimaps) mean["unknown"] = report_json(metrics::mean_report(unknown));
  nlohmann::ordered_json report{{"count", gts.size()}, {"samples", rows}, {"mean", mean}};
  std::ofstream(a.common.out) << report.dump(2) << '\n';

  const auto& m = metrics::mean_report(trimaps ? unknown : whole);
  std::printf("%zu samples (%s): SAD %.3f  MSE %.5f  Grad %.3f  Conn %.3f -> %s\n", gts.size(),
              trimaps ? "unknown region" : "whole image", m.sad, m.mse, m.grad, m.conn, a.common.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  CommonFlags common;
  std::string images_dir;
  std::vector<std::string> methods;
  int cell = 128;
};

int run_compare(const CompareArgs& a) {
  std::vector<std::pair<std::string, ImagePlane>> images;
  for (const auto& p : list_images(a.images_dir)) images.emplace_back(p.stem().string(), read_image(p));
  std::vector<MethodAlphas> methods;
  for (const auto& spec : a.methods) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("--method expects name=dir, got '" + spec + "'");
    MethodAlphas m;
    m.name = spec.substr(0, eq);
    const fs::path dir = spec.substr(eq + 1);
    for (const auto& [id, img] : images) {
      const fs::path p = dir / (id + ".png");
      if (fs::exists(p)) m.alphas.emplace(id, read_alpha(p));
    }
    methods.push_back(std::move(m));
  }
  ComparisonLayout layout;
  layout.cell = a.cell;
  const auto written = emit_comparison(images, methods, a.common.out, layout);
  std::printf("%zu sheets, %zu columns -> %s\n", written.size(), methods.size() + 2, a.common.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct CountArgs {
  CommonFlags common;
  std::string ckpt;
};

int run_count_params(const CountArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const ParameterCount c = count_parameters(ckpt);
  nlohmann::ordered_json j{{"kind", ckpt.kind}, {"per_module", nlohmann::ordered_json::object()}};
  std::printf("%-24s %12s %8s\n", "module", "parameters", "M");
  for (const auto& [name, n] : c.per_module) {
    std::printf("%-24s %12zu %8s\n", name.c_str(), n, millions(n).c_str());
    j["per_module"][name] = n;
  }
  std::printf("%-24s %12zu %8s\n", "total", c.total, millions(c.total).c_str());
  j["total"] = c.total;
  j["total_millions"] = millions(c.total);
  if (!a.common.out.empty()) std::ofstream(a.common.out) << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spgim: saliency-guided image matting"};
  app.require_subcommand(1);

  ComposeArgs compose;
  auto* c = app.add_subcommand("compose", "composite foregrounds onto backgrounds and write a manifest");
  add_common(c, compose.common, "output dataset directory");
  c->add_option("--fg-dir", compose.fg_dir, "directory with fg/ and alpha/")->required();
  c->add_option("--bg-dir", compose.bg_dir, "background images")->required();
  c->add_option("--ratio", compose.ratio, "backgrounds per foreground (default 100 train, 20 test)");
  c->add_option("--split", compose.split, "train or test");
  c->callback([&] { std::exit(run_compose(compose)); });

  ToyArgs toy;
  auto* t = app.add_subcommand("make-toy-data", "procedural foregrounds, backgrounds and captions");
  add_common(t, toy.common, "output directory");
  t->add_option("--foregrounds", toy.foregrounds)->check(CLI::PositiveNumber);
  t->add_option("--backgrounds", toy.backgrounds)->check(CLI::PositiveNumber);
  t->add_option("--captions", toy.captions)->check(CLI::PositiveNumber);
  t->add_option("--size", toy.size)->check(CLI::Range(8, 4096));
  t->callback([&] { std::exit(run_make_toy_data(toy)); });

  TrainArgs cap, spd, spgm;
  auto* p = app.add_subcommand("pretrain-captioner", "bidirectional caption pretraining of the visual backbone");
  add_common(p, cap.common, "checkpoint path", "--out-ckpt");
  p->add_option("--manifest", cap.manifest, "JSON-lines {image, caption}")->required()->check(CLI::ExistingFile);
  p->add_option("--profile", cap.profile, "preset used when no --config is given");
  p->add_option("--log-every", cap.log_every);
  p->callback([&] { std::exit(run_pretrain_captioner(cap)); });

  auto* s = app.add_subcommand("train-spd", "train the saliency distillation branch");
  add_common(s, spd.common, "checkpoint path", "--out-ckpt");
  s->add_option("--manifest", spd.manifest)->required()->check(CLI::ExistingFile);
  s->add_option("--init-ckpt", spd.init_ckpt, "caption checkpoint or 'none'");
  s->add_option("--profile", spd.profile);
  s->add_option("--log-every", spd.log_every);
  s->callback([&] { std::exit(run_train_spd(spd)); });

  auto* g = app.add_subcommand("train-spgm", "train the matting branch against a frozen SPD checkpoint");
  add_common(g, spgm.common, "checkpoint path", "--out-ckpt");
  g->add_option("--manifest", spgm.manifest)->required()->check(CLI::ExistingFile);
  g->add_option("--spd-ckpt", spgm.spd_ckpt)->required()->check(CLI::ExistingFile);
  g->add_option("--profile", spgm.profile);
  g->add_option("--log-every", spgm.log_every);
  g->callback([&] { std::exit(run_train_spgm(spgm)); });

  InferArgs ispd, inf;
  auto* is = app.add_subcommand("infer-spd", "predict a saliency mask");
  add_common(is, ispd.common, "mask PNG", "--out-mask");
  is->add_option("--image", ispd.image)->required()->check(CLI::ExistingFile);
  is->add_option("--ckpt", ispd.ckpt)->required()->check(CLI::ExistingFile);
  is->add_flag("--full", ispd.full, "upsample the mask to the input size");
  is->add_option("--bit-depth", ispd.bit_depth)->check(CLI::IsMember({8, 16}));
  is->callback([&] { std::exit(run_infer_spd(ispd)); });

  auto* in = app.add_subcommand("infer", "predict an alpha matte with SPD + SPGM");
  add_common(in, inf.common, "alpha PNG", "--out-alpha");
  in->add_option("--image", inf.image)->required()->check(CLI::ExistingFile);
  in->add_option("--spd-ckpt", inf.spd_ckpt)->required()->check(CLI::ExistingFile);
  in->add_option("--spgm-ckpt", inf.spgm_ckpt)->required()->check(CLI::ExistingFile);
  in->add_option("--dump-levels", inf.dump_levels, "directory for mask and per-level alphas");
  in->add_option("--dump-attention", inf.dump_attention, "directory for attention matrices (JSON)");
  in->add_option("--bit-depth", inf.bit_depth)->check(CLI::IsMember({8, 16}));
  in->callback([&] { std::exit(run_infer(inf)); });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "SAD / MSE / Grad / Conn report");
  add_common(e, ev.common, "report JSON", "--report");
  e->add_option("--pred-dir", ev.pred_dir)->required()->check(CLI::ExistingDirectory);
  e->add_option("--gt-dir", ev.gt_dir)->required()->check(CLI::ExistingDirectory);
  e->add_option("--trimap-dir", ev.trimap_dir)->check(CLI::ExistingDirectory);
  e->callback([&] { std::exit(run_eval(ev)); });

  CompareArgs cmp;
  auto* cm = app.add_subcommand("compare", "side-by-side comparison sheets");
  add_common(cm, cmp.common, "output directory");
  cm->add_option("--images-dir", cmp.images_dir)->required()->check(CLI::ExistingDirectory);
  cm->add_option("--method", cmp.methods, "name=alpha_dir (repeatable, column order)")->required();
  cm->add_option("--cell", cmp.cell)->check(CLI::Range(8, 2048));
  cm->callback([&] { std::exit(run_compare(cmp)); });

  CountArgs cnt;
  auto* cp = app.add_subcommand("count-params", "parameter counts per module");
  add_common(cp, cnt.common, "optional JSON report", "", false);
  cp->add_option("--ckpt", cnt.ckpt)->required()->check(CLI::ExistingFile);
  cp->callback([&] { std::exit(run_count_params(cnt)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
