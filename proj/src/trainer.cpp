#include "fidn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fidn/checkpoint.hpp"
#include "fidn/rng.hpp"

namespace fidn {

NetConfig resolve_net_config(NetConfig net, TrainMode mode) {
  if (mode == TrainMode::Joint) net.fusion_enabled = true;
  if (mode == TrainMode::SeparateId) net.fusion_enabled = false;
  return net;
}

LossValues train_step(ModelParams<float>& params, AdamState<float>& optimizer, const Batch<float>& batch,
                      TrainMode mode, double lambda_id) {
  const ForwardOptions options{Mode::Train, mode != TrainMode::SeparateId, mode != TrainMode::SeparateAttr};
  ForwardGraph<float> graph = forward_graph(params, batch.images, options);
  JointLoss<float> loss = joint_loss(graph, batch, mode, lambda_id);
  if (!std::isfinite(loss.values.total)) return loss.values;
  graph.tape.backward(loss.total);
  adam_step(params, graph.gradients(params), optimizer);
  return loss.values;
}

namespace {

constexpr const char* kLogHeader = "epoch,step,l1,l2,total,seconds\n";

void write_log_row(std::ostream& out, const TrainLogRecord& r) {
  out << r.epoch << ',' << r.step << ',' << std::setprecision(9) << r.l1 << ',' << r.l2 << ',' << r.total << ','
      << std::setprecision(6) << r.seconds << '\n';
}

void check_data(const NetConfig& net, const LoadedDataset& data) {
  if (data.meta.role != Role::Train) {
    throw ValidationError("training data must have role 'train', got '" + std::string(role_name(data.meta.role)) + "'");
  }
  if (data.meta.num_attributes != net.num_attributes) {
    throw ValidationError("dataset declares T=" + std::to_string(data.meta.num_attributes) +
                          " but the network has " + std::to_string(net.num_attributes) + " attributes");
  }
  if (data.meta.num_classes != net.num_classes) {
    throw ValidationError("dataset declares C=" + std::to_string(data.meta.num_classes) +
                          " but the network has " + std::to_string(net.num_classes) + " classes");
  }
  if (!data.images.empty()) {
    const Shape want{net.input_channels, net.input_height, net.input_width};
    if (data.images.front().shape() != want) {
      throw ValidationError("dataset images are " + shape_string(data.images.front().shape()) +
                            ", network expects " + shape_string(want));
    }
  }
  data.meta.validate();
}

}  // namespace

TrainResult train(const NetConfig& net_in, const TrainConfig& config, const LoadedDataset& data,
                  const EpochCallback& on_epoch) {
  const NetConfig net = resolve_net_config(net_in, config.mode);
  net.validate();
  check_data(net, data);
  if (config.batch_size < 2) throw ValidationError("batch_size must be >= 2");

  TrainResult result;
  result.params = build_model(net);
  result.optimizer.hyper.alpha = config.learning_rate;

  std::ofstream log_file;
  if (!config.log.empty()) {
    log_file.open(config.log, std::ios::binary);
    if (!log_file) throw ValidationError("cannot write log " + config.log.string());
    log_file << kLogHeader;
  }

  const auto start = std::chrono::steady_clock::now();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(data.meta, config.batch_size, mix_seed(config.seed, epoch));
    EpochSummary summary{epoch, 0.0, 0.0, 0.0};
    std::size_t samples = 0;
    for (const auto& indices : batches) {
      const Batch<float> batch = gather_batch(data, indices);
      const LossValues loss = train_step(result.params, result.optimizer, batch, config.mode, config.lambda_id);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      TrainLogRecord rec{epoch,
                         step,
                         loss.l1.value_or(0.0),
                         loss.l2.value_or(0.0),
                         loss.total,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(rec);
      if (log_file.is_open()) write_log_row(log_file, rec);
      summary.mean_l1 += rec.l1;
      summary.mean_l2 += rec.l2;
      summary.mean_total += rec.total;
      samples += indices.size();
      ++step;
    }
    if (samples > 0) {
      summary.mean_l1 /= static_cast<double>(samples);
      summary.mean_l2 /= static_cast<double>(samples);
      summary.mean_total /= static_cast<double>(samples);
    }
    result.epochs.push_back(summary);
    if (on_epoch) on_epoch(summary);
    if (config.checkpoint_every_epoch && !config.checkpoint.empty()) {
      std::filesystem::path p = config.checkpoint;
      p += ".epoch" + std::to_string(epoch);
      save_checkpoint(p, result.params, &result.optimizer);
    }
  }
  if (!config.checkpoint.empty()) save_checkpoint(config.checkpoint, result.params, &result.optimizer);
  return result;
}

void write_log_csv(std::ostream& out, const std::vector<TrainLogRecord>& log) {
  out << kLogHeader;
  for (const auto& r : log) write_log_row(out, r);
}

}  // namespace fidn
