#include "xmatch/nn/model.hpp"

#include <fstream>

#include "json.hpp"
#include "xmatch/error.hpp"

namespace xmatch::nn {

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.enc_c1 = 8;
  c.enc_c2 = 16;
  c.enc_c3 = 32;
  c.feature_channels = 64;
  c.desc_dim = 32;
  c.hom_channels = 32;
  c.hom_pool = 16;
  c.hom_fc = 256;
  return c;
}

// ------------------------------------------------------------ ConvEncoder

ConvEncoder::ConvEncoder(const ModelConfig& cfg)
    : cf_(cfg.feature_channels),
      c1_(1, cfg.enc_c1, 3, 1, 1),
      c2_(cfg.enc_c1, cfg.enc_c2, 3, 2, 1),
      c3_(cfg.enc_c2, cfg.enc_c3, 3, 2, 1),
      c4_(cfg.enc_c3, cfg.feature_channels, 3, 2, 1),
      b1_(cfg.enc_c1),
      b2_(cfg.enc_c2),
      b3_(cfg.enc_c3),
      b4_(cfg.feature_channels) {}

Tensor ConvEncoder::forward(const Tensor& imgs, bool train) {
  Tensor t = r1_.forward(b1_.forward(c1_.forward(imgs), train));
  t = r2_.forward(b2_.forward(c2_.forward(t), train));
  t = r3_.forward(b3_.forward(c3_.forward(t), train));
  return r4_.forward(b4_.forward(c4_.forward(t), train));
}

Tensor ConvEncoder::backward(const Tensor& gout) {
  Tensor g = c4_.backward(b4_.backward(r4_.backward(gout)));
  g = c3_.backward(b3_.backward(r3_.backward(g)));
  g = c2_.backward(b2_.backward(r2_.backward(g)));
  return c1_.backward(b1_.backward(r1_.backward(g)));
}

std::vector<Param*> ConvEncoder::params() {
  std::vector<Param*> out;
  for (auto* layer : {&c1_, &c2_, &c3_, &c4_})
    for (Param* p : layer->params()) out.push_back(p);
  for (auto* bn : {&b1_, &b2_, &b3_, &b4_})
    for (Param* p : bn->params()) out.push_back(p);
  return out;
}

std::vector<Tensor*> ConvEncoder::buffers() {
  std::vector<Tensor*> out;
  for (auto* bn : {&b1_, &b2_, &b3_, &b4_}) {
    out.push_back(&bn->running_mean());
    out.push_back(&bn->running_var());
  }
  return out;
}

void ConvEncoder::init(Rng& rng) {
  c1_.init(rng);
  c2_.init(rng);
  c3_.init(rng);
  c4_.init(rng);
}

// ------------------------------------------------------------------ Model

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      detect_head_(cfg.feature_channels, 65, 1, 1, 0),
      desc_head_(cfg.feature_channels, cfg.desc_dim, 1, 1, 0),
      hom_conv_(cfg.feature_channels, cfg.hom_channels, 3, 1, 1),
      hom_bn_(cfg.hom_channels),
      hom_adapt_(cfg.hom_pool, cfg.hom_pool),
      hom_fc1_(cfg.hom_pool * cfg.hom_pool, cfg.hom_fc),
      hom_drop_(cfg.hom_dropout),
      hom_fc2_(cfg.hom_fc, 8) {
  if (cfg.encoder != "conv4")
    throw Error("bad-config", "unknown encoder '" + cfg.encoder + "'");
  encoder_ = std::make_unique<ConvEncoder>(cfg);
}

void Model::init(Rng& rng) {
  encoder_->init(rng);
  detect_head_.init(rng);
  desc_head_.init(rng);
  hom_conv_.init(rng);
  hom_fc1_.init(rng);
  hom_fc2_.init(rng);
}

Tensor Model::homography_forward(const Tensor& feat, bool train, Rng* drop_rng) {
  const int n = feat.shape[0];
  if (n % 2 != 0) throw Error("shape-mismatch", "homography head needs an even (src,dst) batch");
  const int pairs = n / 2;
  // Layer1 runs on the whole batch; weights are shared across the two streams.
  Tensor g = hom_pool_.forward(hom_relu_.forward(hom_bn_.forward(hom_conv_.forward(feat), train)));
  hom_g_shape_ = g.shape;
  const int hc = g.shape[1], gh = g.shape[2], gw = g.shape[3];
  const int l = gh * gw;

  hom_cv_.assign(pairs, CostVolume{});
  Tensor cvs({pairs, 1, l, l});
  for (int p = 0; p < pairs; ++p) {
    // rows are spatial locations, columns feature channels
    Tensor x1({l, hc}), x2({l, hc});
    for (int c = 0; c < hc; ++c)
      for (int i = 0; i < l; ++i) {
        x1.at2(i, c) = g.at4(p, c, i / gw, i % gw);
        x2.at2(i, c) = g.at4(pairs + p, c, i / gw, i % gw);
      }
    const Tensor cv = hom_cv_[p].forward(x1, x2);
    for (int i = 0; i < l * l; ++i) cvs.data[static_cast<size_t>(p) * l * l + i] = cv.data[i];
  }

  Tensor pooled = hom_adapt_.forward(cvs);
  pooled.shape = {pairs, cfg_.hom_pool * cfg_.hom_pool};
  Tensor fc = hom_drop_.forward(hom_fc_relu_.forward(hom_fc1_.forward(pooled)), drop_rng);
  return hom_fc2_.forward(fc);
}

Tensor Model::homography_backward(const Tensor& g_deltas) {
  Tensor g = hom_fc1_.backward(hom_fc_relu_.backward(hom_drop_.backward(hom_fc2_.backward(g_deltas))));
  const int pairs = g.shape[0];
  const int hc = hom_g_shape_[1], gh = hom_g_shape_[2], gw = hom_g_shape_[3];
  const int l = gh * gw;
  g.shape = {pairs, 1, cfg_.hom_pool, cfg_.hom_pool};
  Tensor g_cvs = hom_adapt_.backward(g);

  Tensor g_feat_g(hom_g_shape_);
  for (int p = 0; p < pairs; ++p) {
    Tensor g_cv({l, l});
    for (int i = 0; i < l * l; ++i) g_cv.data[i] = g_cvs.data[static_cast<size_t>(p) * l * l + i];
    auto [g_x1, g_x2] = hom_cv_[p].backward(g_cv);
    for (int c = 0; c < hc; ++c)
      for (int i = 0; i < l; ++i) {
        g_feat_g.at4(p, c, i / gw, i % gw) += g_x1.at2(i, c);
        g_feat_g.at4(pairs + p, c, i / gw, i % gw) += g_x2.at2(i, c);
      }
  }
  return hom_conv_.backward(hom_bn_.backward(hom_relu_.backward(hom_pool_.backward(g_feat_g))));
}

ForwardResult Model::forward(const Tensor& imgs, bool train, Rng* drop_rng, bool with_homography) {
  if (imgs.shape.size() != 4 || imgs.shape[1] != 1)
    throw Error("bad-input-dims", "expected [N, 1, H, W] input");
  if (imgs.shape[2] % 8 != 0 || imgs.shape[3] % 8 != 0)
    throw Error("bad-input-dims", "input dims must be multiples of 8");

  ForwardResult r;
  r.feat = encoder_->forward(imgs, train);
  r.logits = detect_head_.forward(r.feat);
  r.desc = desc_norm_.forward(desc_head_.forward(r.feat));
  if (with_homography) r.deltas = homography_forward(r.feat, train, train ? drop_rng : nullptr);
  return r;
}

void Model::backward(const Tensor& g_logits, const Tensor& g_desc, const Tensor& g_deltas) {
  Tensor g_feat;
  auto accumulate = [&](Tensor&& g) {
    if (g_feat.data.empty()) {
      g_feat = std::move(g);
    } else {
      for (size_t i = 0; i < g_feat.data.size(); ++i) g_feat.data[i] += g.data[i];
    }
  };
  if (!g_logits.data.empty()) accumulate(detect_head_.backward(g_logits));
  if (!g_desc.data.empty()) accumulate(desc_head_.backward(desc_norm_.backward(g_desc)));
  if (!g_deltas.data.empty()) accumulate(homography_backward(g_deltas));
  if (!g_feat.data.empty()) encoder_->backward(g_feat);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out = encoder_->params();
  for (auto* layer : {&detect_head_, &desc_head_, &hom_conv_})
    for (Param* p : layer->params()) out.push_back(p);
  for (Param* p : hom_bn_.params()) out.push_back(p);
  for (Param* p : hom_fc1_.params()) out.push_back(p);
  for (Param* p : hom_fc2_.params()) out.push_back(p);
  return out;
}

long long Model::param_count() {
  long long n = 0;
  for (Param* p : params()) n += p->value.numel();
  return n;
}

void Model::zero_grad() {
  for (Param* p : params()) p->grad.zero();
}

// ------------------------------------------------------------ checkpoint

namespace {

std::vector<Tensor*> model_buffers(Encoder& enc, BatchNorm2d& hom_bn) {
  std::vector<Tensor*> bufs = enc.buffers();
  bufs.push_back(&hom_bn.running_mean());
  bufs.push_back(&hom_bn.running_var());
  return bufs;
}

}  // namespace

void Model::save(const std::string& path) const {
  nlohmann::json manifest{{"version", kCheckpointVersion},
                          {"encoder", cfg_.encoder},
                          {"enc_c1", cfg_.enc_c1},
                          {"enc_c2", cfg_.enc_c2},
                          {"enc_c3", cfg_.enc_c3},
                          {"feature_channels", cfg_.feature_channels},
                          {"desc_dim", cfg_.desc_dim},
                          {"hom_channels", cfg_.hom_channels},
                          {"hom_pool", cfg_.hom_pool},
                          {"hom_fc", cfg_.hom_fc},
                          {"hom_dropout", cfg_.hom_dropout},
                          {"cell_order", kCellOrderTag},
                          {"corner_order", kCornerOrderTag}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", "cannot write checkpoint " + path);
  const std::string header = manifest.dump();
  const uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(hlen));

  Model* self = const_cast<Model*>(this);
  for (const Param* p : self->params())
    out.write(reinterpret_cast<const char*>(p->value.data.data()),
              static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  for (const Tensor* b : model_buffers(*self->encoder_, self->hom_bn_))
    out.write(reinterpret_cast<const char*>(b->data.data()),
              static_cast<std::streamsize>(b->data.size() * sizeof(double)));
  if (!out) throw Error("io-error", "short write on checkpoint " + path);
}

Model Model::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io-error", "cannot read checkpoint " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 20))
    throw Error("bad-checkpoint", "implausible manifest length in " + path);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw Error("bad-checkpoint", "truncated manifest in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception&) {
    throw Error("bad-checkpoint", "unparseable manifest in " + path);
  }
  if (manifest.value("version", "") != kCheckpointVersion)
    throw Error("bad-checkpoint", "unsupported checkpoint version");
  if (manifest.value("cell_order", "") != kCellOrderTag)
    throw Error("bad-checkpoint", "in-cell ordering tag mismatch");
  if (manifest.value("corner_order", "") != kCornerOrderTag)
    throw Error("bad-checkpoint", "corner ordering tag mismatch");

  ModelConfig cfg;
  cfg.encoder = manifest.at("encoder").get<std::string>();
  cfg.enc_c1 = manifest.at("enc_c1").get<int>();
  cfg.enc_c2 = manifest.at("enc_c2").get<int>();
  cfg.enc_c3 = manifest.at("enc_c3").get<int>();
  cfg.feature_channels = manifest.at("feature_channels").get<int>();
  cfg.desc_dim = manifest.at("desc_dim").get<int>();
  cfg.hom_channels = manifest.at("hom_channels").get<int>();
  cfg.hom_pool = manifest.at("hom_pool").get<int>();
  cfg.hom_fc = manifest.at("hom_fc").get<int>();
  cfg.hom_dropout = manifest.at("hom_dropout").get<double>();

  Model model(cfg);
  for (Param* p : model.params()) {
    in.read(reinterpret_cast<char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  }
  for (Tensor* b : model_buffers(*model.encoder_, model.hom_bn_))
    in.read(reinterpret_cast<char*>(b->data.data()),
            static_cast<std::streamsize>(b->data.size() * sizeof(double)));
  if (!in) throw Error("bad-checkpoint", "truncated parameter data in " + path);
  return model;
}

// --------------------------------------------------- single-image helpers

FeatureMap Model::encode_image(const Image& img) {
  if (img.rows % 8 != 0 || img.cols % 8 != 0)
    throw Error("bad-input-dims", "input dims must be multiples of 8");
  Tensor x({1, 1, img.rows, img.cols});
  std::copy(img.data.begin(), img.data.end(), x.data.begin());
  FeatureMap f;
  f.data = encoder_->forward(x, false);
  f.src_rows = img.rows;
  f.src_cols = img.cols;
  return f;
}

Tensor Model::detect_image(const FeatureMap& f) {
  Tensor out = detect_head_.forward(f.data);
  out.shape = {65, out.shape[2], out.shape[3]};
  return out;
}

Tensor Model::describe_image(const FeatureMap& f) {
  Tensor out = desc_norm_.forward(desc_head_.forward(f.data));
  out.shape = {cfg_.desc_dim, out.shape[2], out.shape[3]};
  return out;
}

FourPointDelta Model::regress_homography(const Image& img_a, const Image& img_b) {
  if (!img_a.same_dims(img_b)) throw Error("shape-mismatch", "pair images differ in dims");
  Tensor x({2, 1, img_a.rows, img_a.cols});
  std::copy(img_a.data.begin(), img_a.data.end(), x.data.begin());
  std::copy(img_b.data.begin(), img_b.data.end(), x.data.begin() + img_a.data.size());
  const ForwardResult r = forward(x, false, nullptr, true);
  FourPointDelta d;
  for (int i = 0; i < 4; ++i) d.deltas[i] = Pt{r.deltas.at2(0, 2 * i), r.deltas.at2(0, 2 * i + 1)};
  return d;
}

}  // namespace xmatch::nn
