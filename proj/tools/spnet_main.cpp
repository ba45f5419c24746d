// Command-line front end: synthetic data generation, training, whole-image
// prediction, evaluation, label-pyramid inspection, and a gradient self-check.
// Every subcommand that produces files also writes a manifest.json recording
// the resolved flags, so identical manifests imply byte-identical outputs.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/errors.hpp"
#include "spnet/eval.hpp"
#include "spnet/gradcheck.hpp"
#include "spnet/image_io.hpp"
#include "spnet/loss.hpp"
#include "spnet/model.hpp"
#include "spnet/pyramid.hpp"
#include "spnet/rng.hpp"
#include "spnet/sha1.hpp"
#include "spnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spnet;

namespace {

void write_manifest(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot write manifest");
  os << j.dump(2) << "\n";
}

PnmImage gray8(const Tensor<float>& t) {
  PnmImage img;
  img.width = int(t.width());
  img.height = int(t.height());
  img.maxval = 255;
  img.pixels.resize(std::size_t(t.size()));
  for (Index i = 0; i < t.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, t.raw()[i]));
    img.pixels[std::size_t(i)] = std::uint16_t(std::lround(v * 255.0f));
  }
  return img;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  std::string out;
  int count = 20;
  int size = 64;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const auto samples = synth_generate(a.seed, a.size, a.count);
  const fs::path root(a.out);
  fs::create_directories(root / "images");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "masks");
  for (const auto& s : samples) {
    write_pnm(root / "images" / (s.id + ".pgm"), gray8(s.image));
    write_pnm(root / "labels" / (s.id + ".pgm"), mask_to_pgm(s.gt));
    write_pnm(root / "masks" / (s.id + ".pgm"), mask_to_pgm(*s.fov));
  }
  json m;
  m["subcommand"] = "synth";
  m["flags"] = {{"out", a.out}, {"count", a.count}, {"size", a.size}, {"seed", a.seed}};
  m["outputs"] = {{"samples", a.count}, {"directory", a.out}};
  write_manifest(root / "manifest.json", m);
  std::printf("wrote %d synthetic samples under %s\n", a.count, a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
  std::string data, out;
  int base_channels = 16;
  int patches_per_image = 200;
  int batch_size = 16;
  int epochs = 20;
  double lr = 1e-3;
  std::vector<double> lambda{1.0, 0.5, 0.25, 0.125};
  bool no_share = false;
  std::string side_output = "sdm";
  std::string loss_terms = "g,l0,l1,l2,l3";
  bool strict_eq13 = false;
  double val_fraction = 0.3;
  int val_every = 10;
  int val_batches = 5;
  std::uint64_t seed = 0;
  bool paper_scale = false;
};

LossWeights parse_loss_terms(const std::string& terms, const std::vector<double>& lambda) {
  LossWeights w;
  w.lambda = lambda;
  w.use_global = false;
  w.use_local.assign(lambda.size(), false);
  std::stringstream ss(terms);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    if (tok.empty()) continue;
    if (tok == "g") {
      w.use_global = true;
    } else if (tok.size() >= 2 && tok[0] == 'l') {
      const int k = std::stoi(tok.substr(1));
      if (k < 0 || std::size_t(k) >= w.use_local.size())
        throw std::invalid_argument("train: loss term '" + tok + "' out of range");
      w.use_local[std::size_t(k)] = true;
    } else {
      throw std::invalid_argument("train: unknown loss term '" + tok + "'");
    }
  }
  return w;
}

int run_train(const TrainArgs& a) {
  const auto dataset = load_dataset(a.data);
  if (dataset.empty()) throw DataError("train: no samples under " + a.data);

  PatchSet all;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    append_patches(all, extract_patches(dataset[i], a.patches_per_image, a.seed + i));
  auto [train_split, val_split] = block_split(all, a.val_fraction, 96, a.seed);

  TrainConfig cfg;
  cfg.eta0 = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.val_every = a.val_every;
  cfg.val_batches = a.val_batches;
  cfg.seed = a.seed;
  cfg.model.base_channels = a.base_channels;
  cfg.model.share_decoder = !a.no_share;
  cfg.model.side_output =
      a.side_output == "sdm" ? SideOutputMode::sdm : SideOutputMode::conv1x1;
  cfg.model.pyramid_levels = int(a.lambda.size()) - 1;
  cfg.weights = parse_loss_terms(a.loss_terms, a.lambda);
  cfg.weights.positive_class_only = a.strict_eq13;

  const TrainResult res = train(train_split, val_split, cfg);

  const fs::path root(a.out);
  fs::create_directories(root);
  const fs::path ckpt = root / "checkpoint.ckpt";
  save_checkpoint(ckpt, res.best_params);
  write_train_log_csv(root / "train_log.csv", res.log);

  json m;
  m["subcommand"] = "train";
  m["flags"] = {{"data", a.data},
                {"out", a.out},
                {"base_channels", a.base_channels},
                {"patches_per_image", a.patches_per_image},
                {"batch_size", a.batch_size},
                {"epochs", a.epochs},
                {"lr", a.lr},
                {"lambda", a.lambda},
                {"no_share", a.no_share},
                {"side_output", a.side_output},
                {"loss_terms", a.loss_terms},
                {"strict_eq13", a.strict_eq13},
                {"val_fraction", a.val_fraction},
                {"val_every", a.val_every},
                {"val_batches", a.val_batches},
                {"seed", a.seed},
                {"paper_scale", a.paper_scale}};
  m["outputs"] = {{"checkpoint", ckpt.string()}, {"train_log", (root / "train_log.csv").string()}};
  m["checkpoint_sha1"] = git_blob_sha1_file(ckpt);
  m["result"] = {{"total_iterations", res.total_iterations},
                 {"completed_iterations", res.completed_iterations},
                 {"best_iter", res.best_iter},
                 {"best_val_loss", res.best_val_loss},
                 {"early_stopped", res.early_stopped},
                 {"diverged", res.diverged}};
  write_manifest(root / "manifest.json", m);

  if (res.diverged) {
    std::cerr << "error: training diverged: " << res.diagnostic << "\n";
    return 3;
  }
  std::printf("trained %ld iterations; best val loss %.6g at iteration %ld\n",
              res.completed_iterations, res.best_val_loss, res.best_iter);
  return 0;
}

// -------------------------------------------------------------- predict ----

struct PredictArgs {
  std::string ckpt, image, out;
  bool luma = false;
};

int run_predict(const PredictArgs& a) {
  const auto params = load_checkpoint(a.ckpt);
  const PnmImage raw = read_pnm(a.image);
  const Tensor<float> x = to_gray01(raw, a.luma ? ChannelMode::luma : ChannelMode::green);
  const Tensor<float> prob = overlap_tile_predict(params, x);
  write_pnm(a.out, prob_to_pgm16(prob));

  json m;
  m["subcommand"] = "predict";
  m["flags"] = {{"ckpt", a.ckpt}, {"image", a.image}, {"out", a.out}, {"luma", a.luma}};
  m["checkpoint_sha1"] = git_blob_sha1_file(a.ckpt);
  m["outputs"] = {{"probability_map", a.out}};
  write_manifest(a.out + ".manifest.json", m);
  std::printf("wrote probability map %s (%dx%d)\n", a.out.c_str(), raw.width, raw.height);
  return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
  std::string pred, gt, fov, out;
  std::string regions = "all,cs,non_cs";
};

int run_eval(const EvalArgs& a) {
  const Tensor<float> prob = pgm16_to_prob(read_pnm(a.pred));
  const BinaryMask gt = threshold_mask(read_pnm(a.gt));
  if (prob.height() != gt.rows() || prob.width() != gt.cols())
    throw DataError("eval: dimension mismatch between " + a.pred + " and " + a.gt);
  BinaryMask fov;
  if (!a.fov.empty()) {
    fov = threshold_mask(read_pnm(a.fov));
    if (fov.rows() != gt.rows() || fov.cols() != gt.cols())
      throw DataError("eval: dimension mismatch between " + a.fov + " and " + a.gt);
  }
  const BinaryMask* fovp = a.fov.empty() ? nullptr : &fov;

  std::vector<std::string> regions;
  std::stringstream ss(a.regions);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) regions.push_back(tok);

  const auto reports = evaluate(prob, gt, fovp, 0.5, regions);

  const fs::path root(a.out);
  fs::create_directories(root);
  json jm = json::array();
  for (const auto& r : reports) {
    json e;
    e["region"] = r.region;
    e["counts"] = {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp}, {"fn", r.counts.fn}};
    e["sen"] = optional_json(r.sen);
    e["spe"] = optional_json(r.spe);
    e["acc"] = optional_json(r.acc);
    e["auc"] = optional_json(r.auc);
    e["cal"] = r.cal ? json{{"c", r.cal->c}, {"a", r.cal->a}, {"l", r.cal->l}, {"cal", r.cal->cal}}
                     : json(nullptr);
    jm.push_back(e);
  }
  {
    std::ofstream os(root / "metrics.json", std::ios::binary);
    os << jm.dump(2) << "\n";
  }

  const RocResult roc = roc_curve(prob, gt, fovp);
  {
    std::ofstream os(root / "roc.csv", std::ios::binary);
    os << "threshold,fpr,tpr\n";
    char line[96];
    for (const auto& p : roc.points) {
      std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.fpr, p.tpr);
      os << line;
    }
  }
  {
    std::ofstream os(root / "pr.csv", std::ios::binary);
    os << "threshold,recall,precision\n";
    char line[96];
    for (const auto& p : pr_curve(prob, gt, fovp)) {
      std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.recall, p.precision);
      os << line;
    }
  }

  json m;
  m["subcommand"] = "eval";
  m["flags"] = {{"pred", a.pred}, {"gt", a.gt}, {"fov", a.fov}, {"regions", a.regions}, {"out", a.out}};
  m["outputs"] = {{"metrics", (root / "metrics.json").string()},
                  {"roc", (root / "roc.csv").string()},
                  {"pr", (root / "pr.csv").string()}};
  write_manifest(root / "manifest.json", m);

  for (const auto& r : reports) {
    std::printf("%s: acc=%s auc=%s\n", r.region.c_str(),
                r.acc ? std::to_string(*r.acc).c_str() : "n/a",
                r.auc ? std::to_string(*r.auc).c_str() : "n/a");
  }
  return 0;
}

// -------------------------------------------------------------- pyramid ----

struct PyramidArgs {
  std::string gt, out;
  int levels = 3;
};

int run_pyramid(const PyramidArgs& a) {
  const BinaryMask gt = threshold_mask(read_pnm(a.gt));
  const ResidualPyramid pyr = build_residual_pyramid(gt, a.levels);
  const fs::path root(a.out);
  fs::create_directories(root);
  for (int k = 0; k <= a.levels; ++k) {
    const auto suffix = std::to_string(k) + ".pgm";
    write_pnm(root / ("G_" + suffix), mask_to_pgm(pyr.label[std::size_t(k)]));
    write_pnm(root / ("R_" + suffix), mask_to_pgm(pyr.residual[std::size_t(k)]));
    write_pnm(root / ("A_" + suffix), mask_to_pgm(pyr.region[std::size_t(k)]));
  }
  json m;
  m["subcommand"] = "pyramid";
  m["flags"] = {{"gt", a.gt}, {"levels", a.levels}, {"out", a.out}};
  m["outputs"] = {{"directory", a.out}};
  write_manifest(root / "manifest.json", m);
  std::printf("wrote %d pyramid levels under %s\n", a.levels + 1, a.out.c_str());
  return 0;
}

// ------------------------------------------------------------ gradcheck ----

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
  using S = long double;
  SPNetConfig cfg;
  cfg.base_channels = 4;
  cfg.use_batchnorm = false;

  auto base = init_params<S>(cfg, a.seed);
  Tensor<S> x(1, 1, 16, 16);
  Rng xr(a.seed, "gradcheck-input");
  for (Index i = 0; i < x.size(); ++i) x.raw()[i] = S(xr.uniform());
  Rng mr(a.seed, "gradcheck-mask");
  BinaryMask g(16, 16);
  for (Index y = 0; y < 16; ++y)
    for (Index c = 0; c < 16; ++c) g(y, c) = mr.uniform() < 0.3 ? 1 : 0;
  const auto pyr = build_residual_pyramid(g, cfg.pyramid_levels);
  const LossWeights w;

  std::vector<std::size_t> learnable;
  for (std::size_t i = 0; i < base.size(); ++i)
    if (base.spec(i).learnable) learnable.push_back(i);

  auto eval_loss = [&](const std::vector<Tensor<S>>& values) {
    ParameterStore<S> p = base;
    for (std::size_t j = 0; j < learnable.size(); ++j) p.value(learnable[j]) = values[j];
    const auto outs = forward(p, x, RunMode::train);
    return total_loss(outs, pyr, w).value;
  };

  ForwardCache<S> cache;
  ParameterStore<S> p = base;
  const auto outs = forward(p, x, RunMode::train, &cache);
  const auto loss = total_loss(outs, pyr, w);
  const auto grads = backward(base, cache, loss.grads);

  std::vector<Tensor<S>> inputs, analytic;
  for (std::size_t i : learnable) {
    inputs.push_back(base.value(i));
    analytic.push_back(grads.value(i));
  }
  const double worst = gradcheck<S>(eval_loss, inputs, analytic, 1e-6, 3, a.seed, 1e-7);
  std::printf("max relative error %.3e\n", worst);
  return worst < 1e-5 ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPNet vessel segmentation toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic vessel dataset");
  synth->add_option("--out", sa.out, "output dataset directory")->required();
  synth->add_option("--count", sa.count, "number of images")->capture_default_str();
  synth->add_option("--size", sa.size, "image side length, multiple of 16")->capture_default_str();
  synth->add_option("--seed", sa.seed, "generator seed")->capture_default_str();
  synth->callback([&] { rc = run_synth(sa); });

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on a dataset directory");
  tr->add_option("--data", ta.data, "dataset directory (images/, labels/[, masks/])")->required();
  tr->add_option("--out", ta.out, "output directory for checkpoint, log, manifest")->required();
  tr->add_option("--base-channels", ta.base_channels, "channels of the first stage")
      ->capture_default_str();
  tr->add_option("--patches-per-image", ta.patches_per_image, "random 48x48 patches per image")
      ->capture_default_str();
  tr->add_option("--batch-size", ta.batch_size, "minibatch size")->capture_default_str();
  tr->add_option("--epochs", ta.epochs, "passes over the extracted patch set")
      ->capture_default_str();
  tr->add_option("--lr", ta.lr, "initial learning rate (polynomial decay, power 0.9)")
      ->capture_default_str();
  tr->add_option("--lambda", ta.lambda, "level weights for the local loss terms, K+1 values")
      ->expected(4)
      ->capture_default_str();
  tr->add_flag("--no-share", ta.no_share, "give every decoder branch its own convolutions");
  tr->add_option("--side-output", ta.side_output,
                 "side-output construction: sdm (shared decoder module) or conv1x1")
      ->check(CLI::IsMember({"sdm", "conv1x1"}))
      ->capture_default_str();
  tr->add_option("--loss-terms", ta.loss_terms,
                 "active loss terms: subset of g (Dice) and l0..l3 (per-level CE)")
      ->capture_default_str();
  tr->add_flag("--strict-eq13", ta.strict_eq13,
               "keep only the positive-class half of the local CE terms");
  tr->add_option("--val-fraction", ta.val_fraction, "share of patches held out by block")
      ->capture_default_str();
  tr->add_option("--val-every", ta.val_every, "iterations between validation checks")
      ->capture_default_str();
  tr->add_option("--val-batches", ta.val_batches, "batches averaged per validation check")
      ->capture_default_str();
  tr->add_option("--seed", ta.seed, "run seed (sampling, init, splits)")->capture_default_str();
  tr->add_flag("--paper-scale", ta.paper_scale,
               "use the published full-scale configuration for flags left unset: "
               "--base-channels 64, --batch-size 256, --patches-per-image 9500, --epochs 20");
  tr->callback([&] {
    if (ta.paper_scale) {
      if (tr->count("--base-channels") == 0) ta.base_channels = 64;
      if (tr->count("--batch-size") == 0) ta.batch_size = 256;
      if (tr->count("--patches-per-image") == 0) ta.patches_per_image = 9500;
      if (tr->count("--epochs") == 0) ta.epochs = 20;
    }
    rc = run_train(ta);
  });

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "Segment a whole image with overlap-tile inference");
  pr->add_option("--ckpt", pa.ckpt, "checkpoint file")->required();
  pr->add_option("--image", pa.image, "input image (binary PGM/PPM)")->required();
  pr->add_option("--out", pa.out, "output probability map (16-bit PGM)")->required();
  pr->add_flag("--luma", pa.luma, "reduce color input by Rec. 601 luma instead of green channel");
  pr->callback([&] { rc = run_predict(pa); });

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a probability map against ground truth");
  ev->add_option("--pred", ea.pred, "probability map (PGM)")->required();
  ev->add_option("--gt", ea.gt, "ground-truth vessel mask")->required();
  ev->add_option("--fov", ea.fov, "field-of-view mask restricting all metrics");
  ev->add_option("--regions", ea.regions, "comma list from {all, cs, non_cs}")
      ->capture_default_str();
  ev->add_option("--out", ea.out, "output directory for metrics.json, roc.csv, pr.csv")
      ->required();
  ev->callback([&] { rc = run_eval(ea); });

  PyramidArgs ya;
  auto* py = app.add_subcommand("pyramid", "Decompose a label mask into its residual pyramid");
  py->add_option("--gt", ya.gt, "label mask (PGM)")->required();
  py->add_option("--levels", ya.levels, "number of coarsening steps K")->capture_default_str();
  py->add_option("--out", ya.out, "output directory for G_k/R_k/A_k images")->required();
  py->callback([&] { rc = run_pyramid(ya); });

  GradcheckArgs ga;
  auto* gc = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against finite differences on a toy model");
  gc->add_option("--seed", ga.seed, "seed for weights, input, and coordinate sampling")
      ->capture_default_str();
  gc->callback([&] { rc = run_gradcheck(ga); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
