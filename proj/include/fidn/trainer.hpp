#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "fidn/data.hpp"
#include "fidn/model.hpp"
#include "fidn/objective.hpp"

namespace fidn {

struct TrainConfig {
  TrainMode mode = TrainMode::Joint;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lambda_id = 1.0;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint;  // final checkpoint; empty = none
  std::filesystem::path log;         // CSV log; empty = none
  bool checkpoint_every_epoch = false;
};

struct TrainLogRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step, 0-based
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  double seconds = 0.0;  // wall time since training started
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_l1 = 0.0;  // per sample
  double mean_l2 = 0.0;
  double mean_total = 0.0;
};

struct TrainResult {
  ModelParams<float> params;
  AdamState<float> optimizer;
  std::vector<TrainLogRecord> log;
  std::vector<EpochSummary> epochs;
};

// Applies the mode's fusion rule: joint forces fusion on, separate-id off.
NetConfig resolve_net_config(NetConfig net, TrainMode mode);

using EpochCallback = std::function<void(const EpochSummary&)>;

// Mini-batch Adam over `epochs` shuffled passes. Initialisation comes from
// net.seed, batch order from config.seed. Throws NumericalError naming the
// step if a loss turns non-finite.
TrainResult train(const NetConfig& net, const TrainConfig& config, const LoadedDataset& data,
                  const EpochCallback& on_epoch = {});

// One optimisation step on a prepared batch; returns the loss values.
LossValues train_step(ModelParams<float>& params, AdamState<float>& optimizer, const Batch<float>& batch,
                      TrainMode mode, double lambda_id);

void write_log_csv(std::ostream& out, const std::vector<TrainLogRecord>& log);

}  // namespace fidn
