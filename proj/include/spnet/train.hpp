#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/loss.hpp"
#include "spnet/model.hpp"

namespace spnet {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second-moment buffers aligned with ParameterStore entry order.
struct AdamState {
  std::vector<Eigen::ArrayXf> m, v;
  long t = 0;

  static AdamState init(const ParameterStore<float>& params);
};

/// Polynomial decay eta0 * (1 - t/T)^0.9.  t must lie in [0, T].
double poly_lr(double t, double total, double eta0);

/// One bias-corrected Adam update over the learnable entries.  Non-finite
/// gradients abort (naming the offending tensor) before any value changes.
void adam_step(ParameterStore<float>& params, const ParameterStore<float>& grads,
               AdamState& state, double lr, const AdamConfig& hp = {});

struct TrainConfig {
  double eta0 = 1e-3;
  int epochs = 20;
  int batch_size = 16;
  int val_every = 10;
  int val_batches = 5;
  std::uint64_t seed = 0;
  LossWeights weights;
  SPNetConfig model;
  // When positive, training stops early once the pooled hard Dice over the
  // training split (checked on the validation cadence) reaches this value.
  double early_stop_train_dice = 0.0;
};

struct TrainLogRecord {
  long iter = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool is_best = false;
};

struct TrainResult {
  ParameterStore<float> best_params, final_params;
  std::vector<TrainLogRecord> log;
  long total_iterations = 0;      // planned budget T
  long completed_iterations = 0;  // iterations actually run
  long best_iter = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
  bool diverged = false;
  std::string diagnostic;
};

/// Minibatch training with Adam and polynomial LR decay.  Every val_every
/// iterations (and at the final one) the mean total loss over val_batches
/// batches from the validation split is recorded and the lowest-loss
/// parameter snapshot retained.  Divergence stops the loop and returns the
/// snapshots gathered so far, with `diverged` set.
TrainResult train(const PatchSet& train_set, const PatchSet& val_set, const TrainConfig& cfg);

/// Pooled hard Dice 2TP/(2TP+FP+FN) of eval-mode predictions thresholded at
/// `threshold` over every patch in the set; 1 when the set has no positives
/// and none are predicted.
double pooled_hard_dice(const ParameterStore<float>& params, const PatchSet& patches,
                        double threshold = 0.5, int batch_size = 16);

/// CSV dump with header `iter,lr,train_loss,val_loss,is_best`.
void write_train_log_csv(const std::filesystem::path& path,
                         const std::vector<TrainLogRecord>& log);

}  // namespace spnet
