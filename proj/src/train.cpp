#include "spnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "spnet/errors.hpp"
#include "spnet/pyramid.hpp"
#include "spnet/rng.hpp"

namespace spnet {

AdamState AdamState::init(const ParameterStore<float>& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Index sz = params.value(i).size();
    st.m.push_back(Eigen::ArrayXf::Zero(sz));
    st.v.push_back(Eigen::ArrayXf::Zero(sz));
  }
  return st;
}

double poly_lr(double t, double total, double eta0) {
  if (total <= 0.0) throw std::invalid_argument("poly_lr: total iterations must be positive");
  if (t < 0.0 || t > total)
    throw std::invalid_argument("poly_lr: iteration outside [0, total]");
  return eta0 * std::pow(1.0 - t / total, 0.9);
}

void adam_step(ParameterStore<float>& params, const ParameterStore<float>& grads,
               AdamState& state, double lr, const AdamConfig& hp) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: store/state entry mismatch");
  // Validate every gradient before touching any parameter so a failed step
  // leaves the model at its last good values.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.spec(i).learnable) continue;
    if (!grads.value(i).raw().isFinite().all())
      throw NumericalError("adam_step: non-finite gradient in " + params.spec(i).name);
  }

  state.t += 1;
  const float bc1 = float(1.0 - std::pow(hp.beta1, double(state.t)));
  const float bc2 = float(1.0 - std::pow(hp.beta2, double(state.t)));
  const float b1 = float(hp.beta1), b2 = float(hp.beta2), eps = float(hp.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.spec(i).learnable) continue;
    const auto& g = grads.value(i).raw();
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    params.value(i).raw() -= float(lr) * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

namespace {

Tensor<float> gather_batch(const PatchSet& ps, const std::vector<std::int64_t>& ids) {
  const Index hw = kPatchSize * kPatchSize;
  Tensor<float> batch(Index(ids.size()), 1, kPatchSize, kPatchSize);
  for (std::size_t b = 0; b < ids.size(); ++b)
    batch.raw().segment(Index(b) * hw, hw) = ps.items[std::size_t(ids[b])].image.raw();
  return batch;
}

// Per-item loss over a batched forward result; grad tensors, when requested,
// are filled with the 1/n-scaled per-item gradients.
double batch_loss(const std::vector<Tensor<float>>& outs,
                  const std::vector<const ResidualPyramid*>& pyrs, const LossWeights& w,
                  std::vector<Tensor<float>>* grads) {
  const Index n = outs[0].batch();
  const float scale = 1.0f / float(n);
  double sum = 0.0;
  for (Index b = 0; b < n; ++b) {
    std::vector<Tensor<float>> item;
    item.reserve(outs.size());
    for (const auto& o : outs) {
      Tensor<float> t(1, 1, o.height(), o.width());
      t.raw() = o.raw().segment(b * o.height() * o.width(), o.height() * o.width());
      item.push_back(std::move(t));
    }
    const auto res = total_loss(item, *pyrs[std::size_t(b)], w);
    sum += double(res.value);
    if (grads)
      for (std::size_t k = 0; k < outs.size(); ++k) {
        const Index sz = res.grads[k].size();
        (*grads)[k].raw().segment(b * sz, sz) = scale * res.grads[k].raw();
      }
  }
  return sum / double(n);
}

std::vector<ResidualPyramid> patch_pyramids(const PatchSet& ps, int levels) {
  std::vector<ResidualPyramid> out;
  out.reserve(ps.items.size());
  for (const Patch& p : ps.items) out.push_back(build_residual_pyramid(p.label, levels));
  return out;
}

double validation_loss(const ParameterStore<float>& params, const PatchSet& val_set,
                       const std::vector<ResidualPyramid>& pyrs, const TrainConfig& cfg,
                       long iter) {
  Rng vr(cfg.seed, "val", std::uint64_t(iter));
  const std::int64_t n = std::int64_t(val_set.items.size());
  double sum = 0.0;
  long count = 0;
  for (int vb = 0; vb < cfg.val_batches; ++vb) {
    std::vector<std::int64_t> ids(std::size_t(cfg.batch_size));
    for (auto& id : ids) id = vr.below(n);
    const Tensor<float> batch = gather_batch(val_set, ids);
    const auto outs = forward(params, batch);  // eval mode, stats untouched
    std::vector<const ResidualPyramid*> pp;
    pp.reserve(ids.size());
    for (auto id : ids) pp.push_back(&pyrs[std::size_t(id)]);
    sum += batch_loss(outs, pp, cfg.weights, nullptr) * double(ids.size());
    count += long(ids.size());
  }
  return sum / double(count);
}

}  // namespace

TrainResult train(const PatchSet& train_set, const PatchSet& val_set, const TrainConfig& cfg) {
  validate_config(cfg.model);
  if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.val_every < 1 || cfg.val_batches < 1)
    throw std::invalid_argument("train: non-positive schedule parameter");
  const std::int64_t n_train = std::int64_t(train_set.items.size());
  const long steps_per_epoch = long(n_train / cfg.batch_size);
  if (steps_per_epoch < 1) throw DataError("train: training split smaller than one batch");
  if (val_set.items.empty()) throw DataError("train: empty validation split");

  const long total = long(cfg.epochs) * steps_per_epoch;
  const auto tpyr = patch_pyramids(train_set, cfg.model.pyramid_levels);
  const auto vpyr = patch_pyramids(val_set, cfg.model.pyramid_levels);

  ParameterStore<float> params = init_params<float>(cfg.model, cfg.seed);
  AdamState st = AdamState::init(params);

  TrainResult res;
  res.total_iterations = total;
  res.best_params = params;
  res.final_params = params;
  res.best_val_loss = std::numeric_limits<double>::infinity();

  // Learnable tensors are protected by adam_step's validate-before-mutate
  // rule, but the train-mode forward pass updates normalization statistics in
  // place.  Snapshot those small buffers each iteration so a blown-up batch
  // leaves the model at its last good values.
  std::vector<std::size_t> stat_ids;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!params.spec(i).learnable) stat_ids.push_back(i);
  std::vector<Eigen::ArrayXf> stat_backup(stat_ids.size());

  try {
    for (long t = 1; t <= total; ++t) {
      const double lr = poly_lr(double(t - 1), double(total), cfg.eta0);

      Rng br(cfg.seed, "batch", std::uint64_t(t));
      std::vector<std::int64_t> ids(std::size_t(cfg.batch_size));
      for (auto& id : ids) id = br.below(n_train);

      const Tensor<float> batch = gather_batch(train_set, ids);
      for (std::size_t i = 0; i < stat_ids.size(); ++i)
        stat_backup[i] = params.value(stat_ids[i]).raw();
      ForwardCache<float> cache;
      const auto outs = forward(params, batch, RunMode::train, &cache);

      std::vector<Tensor<float>> gout;
      gout.reserve(outs.size());
      for (const auto& o : outs) gout.emplace_back(o.batch(), 1, o.height(), o.width());
      std::vector<const ResidualPyramid*> pp;
      pp.reserve(ids.size());
      for (auto id : ids) pp.push_back(&tpyr[std::size_t(id)]);
      const double train_loss = batch_loss(outs, pp, cfg.weights, &gout);
      if (!std::isfinite(train_loss))
        throw NumericalError("train: non-finite loss at iteration " + std::to_string(t));

      const auto gstore = backward(params, cache, gout);
      adam_step(params, gstore, st, lr);
      res.completed_iterations = t;

      if (t % cfg.val_every == 0 || t == total) {
        const double vloss = validation_loss(params, val_set, vpyr, cfg, t);
        if (!std::isfinite(vloss))
          throw NumericalError("train: non-finite validation loss at iteration " +
                               std::to_string(t));
        const bool is_best = vloss < res.best_val_loss;
        if (is_best) {
          res.best_val_loss = vloss;
          res.best_iter = t;
          res.best_params = params;
        }
        res.log.push_back({t, lr, train_loss, vloss, is_best});

        if (cfg.early_stop_train_dice > 0.0 &&
            pooled_hard_dice(params, train_set, 0.5, cfg.batch_size) >=
                cfg.early_stop_train_dice) {
          res.early_stopped = true;
          break;
        }
      }
    }
  } catch (const NumericalError& e) {
    res.diverged = true;
    res.diagnostic = e.what();
    for (std::size_t i = 0; i < stat_ids.size(); ++i)
      params.value(stat_ids[i]).raw() = stat_backup[i];
  }

  res.final_params = params;
  if (!std::isfinite(res.best_val_loss)) res.best_params = params;  // no validation seen
  return res;
}

double pooled_hard_dice(const ParameterStore<float>& params, const PatchSet& patches,
                        double threshold, int batch_size) {
  const std::int64_t n = std::int64_t(patches.items.size());
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t b = std::min<std::int64_t>(batch_size, n - start);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) ids[std::size_t(i)] = start + i;
    const auto outs = forward(params, gather_batch(patches, ids));
    for (std::int64_t i = 0; i < b; ++i) {
      const auto pr = outs[0].plane(i, 0);
      const BinaryMask& g = patches.items[std::size_t(start + i)].label;
      for (Index y = 0; y < kPatchSize; ++y)
        for (Index x = 0; x < kPatchSize; ++x) {
          const bool p = pr(y, x) > threshold;
          if (p && g(y, x)) ++tp;
          else if (p) ++fp;
          else if (g(y, x)) ++fn;
        }
    }
  }
  const std::int64_t den = 2 * tp + fp + fn;
  return den == 0 ? 1.0 : 2.0 * double(tp) / double(den);
}

void write_train_log_csv(const std::filesystem::path& path,
                         const std::vector<TrainLogRecord>& log) {
  std::ofstream os(path);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << "iter,lr,train_loss,val_loss,is_best\n";
  char line[160];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%ld,%.9g,%.9g,%.9g,%d\n", r.iter, r.lr, r.train_loss,
                  r.val_loss, int(r.is_best));
    os << line;
  }
  if (!os) throw DataError(path.string() + ": write failed");
}

}  // namespace spnet
