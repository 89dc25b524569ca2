#include "xmatch/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>

#include "json.hpp"
#include "xmatch/error.hpp"

namespace xmatch {

void AdamConfig::validate() const {
  if (lr <= 0.0) throw Error("bad-config", "learning rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw Error("bad-config", "Adam betas must be in [0,1)");
  if (eps <= 0.0) throw Error("bad-config", "Adam eps must be positive");
}

Adam::Adam(std::vector<nn::Param*> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (nn::Param* p : params_) {
    m_.emplace_back(p->value.data.size(), 0.0);
    v_.emplace_back(p->value.data.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    nn::Param* p = params_[i];
    for (size_t j = 0; j < p->value.data.size(); ++j) {
      const double g = p->grad.data[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p->value.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (steps <= 0) throw Error("bad-config", "steps must be positive");
  if (batch_pairs <= 0) throw Error("bad-config", "batch_pairs must be positive");
  adam.validate();
  loss.validate();
  sample.validate();
}

TrainResult train_model(nn::Model& model, const std::vector<AlignedPair>& dataset,
                        const std::vector<LabelRecord>& labels, const TrainConfig& cfg,
                        const std::string& out_dir, std::ostream* log) {
  cfg.validate();
  if (dataset.empty()) throw Error("bad-input", "empty training dataset");
  if (labels.size() != dataset.size())
    throw Error("shape-mismatch", "label records do not cover the dataset");

  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = (std::filesystem::path(out_dir) / "model.ckpt").string();

  Rng rng(cfg.seed);
  Rng drop_rng(rng.raw());
  Adam opt(model.params(), cfg.adam);
  const int crop = cfg.sample.crop;
  const int cells = crop / 8;
  const int b = cfg.batch_pairs;

  TrainResult result;
  result.checkpoint_path = ckpt_path;
  bool have_checkpoint = false;

  for (int step = 0; step < cfg.steps; ++step) {
    // assemble the batch: [src_0..src_{b-1}, dst_0..dst_{b-1}]
    std::vector<TrainSample> samples;
    samples.reserve(b);
    nn::Tensor input({2 * b, 1, crop, crop});
    for (int i = 0; i < b; ++i) {
      const int pick = rng.uniform_int(0, static_cast<int>(dataset.size()) - 1);
      TrainSample s = make_train_sample(dataset[pick], labels[pick].keypoints, cfg.sample, rng);
      std::copy(s.src.data.begin(), s.src.data.end(),
                input.data.begin() + static_cast<long>(i) * crop * crop);
      std::copy(s.dst.data.begin(), s.dst.data.end(),
                input.data.begin() + static_cast<long>(b + i) * crop * crop);
      samples.push_back(std::move(s));
    }

    nn::ForwardResult fwd = model.forward(input, true, &drop_rng, true);

    nn::Tensor g_logits(fwd.logits.shape), g_desc(fwd.desc.shape), g_deltas(fwd.deltas.shape);
    const size_t logit_stride = static_cast<size_t>(65) * cells * cells;
    const size_t desc_stride = static_cast<size_t>(model.config().desc_dim) * cells * cells;

    LossParts mean_parts;
    for (int i = 0; i < b; ++i) {
      const TrainSample& s = samples[i];

      auto slice = [&](const nn::Tensor& t, int item, size_t stride, std::vector<int> shape) {
        nn::Tensor out(std::move(shape));
        std::copy(t.data.begin() + static_cast<long>(item * stride),
                  t.data.begin() + static_cast<long>((item + 1) * stride), out.data.begin());
        return out;
      };
      nn::Tensor grad;
      const nn::Tensor l_src = slice(fwd.logits, i, logit_stride, {65, cells, cells});
      const double det_src = detector_loss(l_src, s.labels_src, cfg.loss, &grad);
      for (size_t j = 0; j < logit_stride; ++j)
        g_logits.data[i * logit_stride + j] = grad.data[j] / b;

      const nn::Tensor l_dst = slice(fwd.logits, b + i, logit_stride, {65, cells, cells});
      const double det_dst = detector_loss(l_dst, s.labels_dst, cfg.loss, &grad);
      for (size_t j = 0; j < logit_stride; ++j)
        g_logits.data[(b + i) * logit_stride + j] = grad.data[j] / b;

      const CorrespondenceMask mask = correspondence_mask(s.h_gt, crop, crop);
      const nn::Tensor d_src = slice(fwd.desc, i, desc_stride, {model.config().desc_dim, cells, cells});
      const nn::Tensor d_dst =
          slice(fwd.desc, b + i, desc_stride, {model.config().desc_dim, cells, cells});
      nn::Tensor gd1, gd2;
      const double desc = descriptor_loss(d_src, d_dst, mask, cfg.loss, &gd1, &gd2);
      for (size_t j = 0; j < desc_stride; ++j) {
        g_desc.data[i * desc_stride + j] = cfg.loss.lambda * gd1.data[j] / b;
        g_desc.data[(b + i) * desc_stride + j] = cfg.loss.lambda * gd2.data[j] / b;
      }

      const FourPointDelta gt_delta = four_point_from_matrix(s.h_gt, crop, crop);
      double hom_grad[8];
      const double hom = homography_loss_flat(&fwd.deltas.data[static_cast<size_t>(i) * 8],
                                              gt_delta, hom_grad);
      for (int j = 0; j < 8; ++j)
        g_deltas.data[static_cast<size_t>(i) * 8 + j] = cfg.loss.gamma * hom_grad[j] / b;

      mean_parts.det_src += det_src / b;
      mean_parts.det_dst += det_dst / b;
      mean_parts.desc += desc / b;
      mean_parts.hom += hom / b;
    }

    double loss;
    try {
      loss = total_loss(mean_parts, cfg.loss);
    } catch (const Error&) {
      // leave the last good checkpoint in place and bail out
      if (!have_checkpoint) model.save(ckpt_path);
      throw;
    }

    model.zero_grad();
    model.backward(g_logits, g_desc, g_deltas);
    opt.step();

    result.steps_done = step + 1;
    result.final_loss = loss;
    if (log) {
      nlohmann::json line{{"step", step},
                          {"loss", loss},
                          {"detector_src", mean_parts.det_src},
                          {"detector_dst", mean_parts.det_dst},
                          {"descriptor", mean_parts.desc},
                          {"homography", mean_parts.hom}};
      *log << line.dump() << "\n";
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      model.save(ckpt_path);
      have_checkpoint = true;
    }
  }

  model.save(ckpt_path);
  return result;
}

}  // namespace xmatch
