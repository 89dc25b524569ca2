#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "xmatch/datahub.hpp"
#include "xmatch/losses.hpp"
#include "xmatch/nn/model.hpp"

namespace xmatch {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Adam over a fixed parameter list; call step() after gradients accumulate.
class Adam {
 public:
  Adam(std::vector<nn::Param*> params, const AdamConfig& cfg);

  void step();

 private:
  std::vector<nn::Param*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

struct TrainConfig {
  int steps = 500;
  int batch_pairs = 32;  // image pairs per step (2x images through the net)
  AdamConfig adam;
  LossConfig loss;
  TrainSampleConfig sample;
  uint64_t seed = 0;
  int checkpoint_every = 100;  // <= 0 disables periodic checkpoints

  void validate() const;
};

struct TrainResult {
  int steps_done = 0;
  double final_loss = 0.0;
  std::string checkpoint_path;
};

/// Minibatch training loop over pseudo-labeled pairs. Each step samples
/// batch_pairs training examples, runs the three-head loss, and takes one
/// Adam step. Per-step JSON lines go to `log` (if non-null); checkpoints go
/// under out_dir. A non-finite loss raises "nan-loss" after the last good
/// checkpoint has been kept on disk.
TrainResult train_model(nn::Model& model, const std::vector<AlignedPair>& dataset,
                        const std::vector<LabelRecord>& labels, const TrainConfig& cfg,
                        const std::string& out_dir, std::ostream* log);

}  // namespace xmatch
