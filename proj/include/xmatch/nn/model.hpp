#pragma once

#include <iosfwd>
#include <memory>
#include <string>

#include "xmatch/geometry.hpp"
#include "xmatch/image.hpp"
#include "xmatch/nn/layers.hpp"

namespace xmatch::nn {

struct ModelConfig {
  std::string encoder = "conv4";
  int enc_c1 = 16;
  int enc_c2 = 32;
  int enc_c3 = 64;
  int feature_channels = 128;  // C_f
  int desc_dim = 256;          // descriptor length D
  int hom_channels = 64;       // homography-head Layer1 output channels
  int hom_pool = 16;           // adaptive pooling target (hom_pool x hom_pool)
  int hom_fc = 1024;
  double hom_dropout = 0.5;

  /// Small configuration used by the synthetic end-to-end experiment.
  static ModelConfig toy();
};

/// Coarse H/8 x W/8 feature map, stored channel-first with a batch dim.
struct FeatureMap {
  Tensor data;  // [N, C_f, H/8, W/8]
  int src_rows = 0;
  int src_cols = 0;
};

/// Pluggable encoder contract: any implementation must emit an H/8 x W/8
/// feature map with its advertised channel count.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string name() const = 0;
  virtual int channels() const = 0;
  virtual Tensor forward(const Tensor& imgs, bool train) = 0;
  virtual Tensor backward(const Tensor& gout) = 0;
  virtual std::vector<Param*> params() = 0;
  virtual std::vector<Tensor*> buffers() = 0;
  virtual void init(Rng& rng) = 0;
};

/// Default stand-in encoder: four conv3x3 + batch-norm + ReLU stages with
/// three stride-2 reductions.
class ConvEncoder : public Encoder {
 public:
  explicit ConvEncoder(const ModelConfig& cfg);

  std::string name() const override { return "conv4"; }
  int channels() const override { return cf_; }
  Tensor forward(const Tensor& imgs, bool train) override;
  Tensor backward(const Tensor& gout) override;
  std::vector<Param*> params() override;
  std::vector<Tensor*> buffers() override;
  void init(Rng& rng) override;

 private:
  int cf_;
  Conv2d c1_, c2_, c3_, c4_;
  BatchNorm2d b1_, b2_, b3_, b4_;
  ReLU r1_, r2_, r3_, r4_;
};

/// Batched output of a full forward pass. The batch is laid out as
/// [src images, dst images]: entry i pairs with entry batch/2 + i in the
/// homography head.
struct ForwardResult {
  Tensor feat;    // [N, C_f, h, w]
  Tensor logits;  // [N, 65, h, w]
  Tensor desc;    // [N, D, h, w], unit columns
  Tensor deltas;  // [N/2, 8] corner displacements, order TL,TR,BR,BL x (du,dv)
};

/// Shared-encoder model with interest-point, descriptor, and cost-volume
/// homography-regression heads.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  void init(Rng& rng);
  const ModelConfig& config() const { return cfg_; }

  /// imgs: [N, 1, H, W] with H, W multiples of 8; throws "bad-input-dims"
  /// otherwise. drop_rng == nullptr disables dropout (inference).
  /// with_homography requires an even batch of (src, dst) pairs.
  ForwardResult forward(const Tensor& imgs, bool train, Rng* drop_rng, bool with_homography);

  /// Accumulates parameter gradients for a forward() call. Any of the grads
  /// may be empty (shape {}) to skip that head.
  void backward(const Tensor& g_logits, const Tensor& g_desc, const Tensor& g_deltas);

  std::vector<Param*> params();
  long long param_count();
  void zero_grad();

  void save(const std::string& path) const;
  static Model load(const std::string& path);

  Encoder& encoder() { return *encoder_; }

  // Single-image conveniences (inference mode).
  FeatureMap encode_image(const Image& img);
  Tensor detect_image(const FeatureMap& f);    // [65, h, w]
  Tensor describe_image(const FeatureMap& f);  // [D, h, w]
  FourPointDelta regress_homography(const Image& img_a, const Image& img_b);

 private:
  Tensor homography_forward(const Tensor& feat, bool train, Rng* drop_rng);
  Tensor homography_backward(const Tensor& g_deltas);

  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  Conv2d detect_head_;
  Conv2d desc_head_;
  ChannelL2Norm desc_norm_;

  // homography head
  Conv2d hom_conv_;
  BatchNorm2d hom_bn_;
  ReLU hom_relu_;
  MaxPool2d hom_pool_;
  std::vector<CostVolume> hom_cv_;
  AdaptiveAvgPool2d hom_adapt_;
  Linear hom_fc1_;
  ReLU hom_fc_relu_;
  Dropout hom_drop_;
  Linear hom_fc2_;
  std::vector<int> hom_g_shape_;
};

constexpr const char* kCellOrderTag = "row-major";
constexpr const char* kCornerOrderTag = "tl-tr-br-bl";
constexpr const char* kCheckpointVersion = "xmatch-ckpt-1";

}  // namespace xmatch::nn
