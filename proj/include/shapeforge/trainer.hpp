#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "shapeforge/latentspace.hpp"
#include "shapeforge/model.hpp"
#include "shapeforge/objectives.hpp"
#include "shapeforge/synthdata.hpp"

namespace shapeforge {

struct TrainConfig {
  ModelConfig model;
  double lr_decoder = 1e-4;
  double lr_codes = 1e-3;
  int64_t steps = 2000;
  int64_t batch_instances = 8;
  int64_t points_per_instance = 512;
  LossWeights weights;
  uint64_t seed = 0;
  int64_t log_every = 10;         // history/log cadence in steps
  int64_t checkpoint_every = 0;   // 0: only the final checkpoint
  double smoothing = 0.98;        // EMA factor of the smoothed total
  bool deterministic = true;      // pins intra-op threading to one thread
};

struct HistoryEntry {
  int64_t step = 0;
  double l_c = 0, l_s = 0, l_r = 0, kl = 0, total = 0;
  double smoothed_total = 0;
};

struct Checkpoint {
  TrainConfig config;
  MMVAD model{nullptr};
  CodeBook codebook{nullptr};
  int64_t iteration = 0;
  std::vector<HistoryEntry> history;

  JointLatentCode code(int64_t id) const;  // posterior mean of a training instance
};

// Dense tensors of a dataset, as consumed by the training loop.
struct TrainingTensors {
  torch::Tensor points;    // [N, S, 3]
  torch::Tensor sdf;       // [N, S]
  torch::Tensor rgb;       // [N, S, 3]
  torch::Tensor sketches;  // [N, V, 1, R, R]
  torch::Tensor renders;   // [N, V, 3, R, R]
  torch::Tensor views;     // [V, 4]
};

TrainingTensors to_tensors(const Dataset& dataset);

struct TrainHooks {
  std::function<void(const HistoryEntry&)> on_log;
  std::ostream* jsonl = nullptr;  // line-delimited JSON training log
  std::filesystem::path checkpoint_dir;
};

// Fresh model + codebook from the config seed.
Checkpoint initialize(const TrainConfig& config, int64_t instances);

// Joint Adam updates of decoders and codebook on the negative ELBO.
Checkpoint train(const Dataset& dataset, const TrainConfig& config, const TrainHooks& hooks = {});
// Runs `steps` more updates on an existing checkpoint, advancing its iteration counter.
void train_steps(Checkpoint& checkpoint, const TrainingTensors& data, int64_t steps, const TrainHooks& hooks = {});

// Objective of one instance at a fixed code sample, used by descent and leakage probes.
LossBreakdown instance_objective(Checkpoint& checkpoint, const TrainingTensors& data, int64_t id,
                                 const torch::Tensor& noise, int64_t view_index, const torch::Tensor& point_index);

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace shapeforge
