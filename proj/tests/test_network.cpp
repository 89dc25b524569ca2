#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "xmatch/error.hpp"
#include "xmatch/losses.hpp"
#include "xmatch/nn/model.hpp"
#include "xmatch/nn/ops.hpp"

using namespace xmatch;
using nn::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor slice_item(const Tensor& batched, int n, std::vector<int> shape) {
  Tensor out(std::move(shape));
  const size_t stride = out.data.size();
  std::copy(batched.data.begin() + static_cast<long>(n * stride),
            batched.data.begin() + static_cast<long>((n + 1) * stride), out.data.begin());
  return out;
}

struct LossEval {
  double loss = 0.0;
  Tensor g_logits, g_desc, g_deltas;
};

/// Central-difference check of every parameter tensor (a few sampled entries
/// each) against the analytic gradients for an arbitrary scalar head loss.
double max_param_grad_err(nn::Model& model, const Tensor& input, bool with_hom,
                          const std::function<LossEval(const nn::ForwardResult&)>& lossfn,
                          double h = 1e-5) {
  auto eval = [&] { return lossfn(model.forward(input, true, nullptr, with_hom)); };
  model.zero_grad();
  const LossEval le = eval();
  model.backward(le.g_logits, le.g_desc, le.g_deltas);
  double worst = 0.0;
  for (nn::Param* p : model.params()) {
    const size_t stride = std::max<size_t>(1, p->value.data.size() / 4);
    for (size_t i = 0; i < p->value.data.size(); i += stride) {
      const double keep = p->value.data[i];
      p->value.data[i] = keep + h;
      const double up = eval().loss;
      p->value.data[i] = keep - h;
      const double dn = eval().loss;
      p->value.data[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double an = p->grad.data[i];
      worst = std::max(worst, std::abs(fd - an) / (1.0 + std::max(std::abs(fd), std::abs(an))));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("forward shapes: one-eighth grids and unit descriptors") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(11);
  model.init(rng);

  Tensor x = random_tensor({2, 1, 32, 40}, rng, 0.0, 1.0);
  const nn::ForwardResult r = model.forward(x, false, nullptr, true);
  CHECK(r.feat.shape == std::vector<int>{2, 64, 4, 5});
  CHECK(r.logits.shape == std::vector<int>{2, 65, 4, 5});
  CHECK(r.desc.shape == std::vector<int>{2, 32, 4, 5});
  CHECK(r.deltas.shape == std::vector<int>{1, 8});

  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 5; ++w) {
        double sq = 0.0;
        for (int c = 0; c < 32; ++c) sq += r.desc.at4(n, c, h, w) * r.desc.at4(n, c, h, w);
        CHECK(std::abs(sq - 1.0) < 1e-9);
      }
}

TEST_CASE("forward rejects bad input dims") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(12);
  model.init(rng);
  CHECK_THROWS_AS(model.forward(Tensor({1, 1, 33, 40}), false, nullptr, false), Error);
  CHECK_THROWS_AS(model.forward(Tensor({1, 2, 32, 40}), false, nullptr, false), Error);
  CHECK_THROWS_AS(model.forward(Tensor({1, 1, 32, 40, 1}), false, nullptr, false), Error);
  // homography head needs (src, dst) pairs
  CHECK_THROWS_AS(model.forward(Tensor({1, 1, 32, 40}), false, nullptr, true), Error);
}

TEST_CASE("uninitialized (all-zero) weights give a uniform cell distribution") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(13);
  Tensor x = random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);
  const nn::ForwardResult r = model.forward(x, false, nullptr, false);
  const Image heat = nn::logits_to_heatmap(slice_item(r.logits, 0, {65, 2, 2}));
  for (double v : heat.data) CHECK(std::abs(v - 1.0 / 65.0) < 1e-12);
}

TEST_CASE("logits_to_heatmap scatters channel c to in-cell offset (c/8, c%8)") {
  Tensor logits({65, 2, 3});
  logits.data[(29u * 2 + 1) * 3 + 2] = 40.0;  // channel 29, cell (1, 2)
  const Image heat = nn::logits_to_heatmap(logits);
  CHECK(heat.rows == 16);
  CHECK(heat.cols == 24);
  // channel 29 -> offset (3, 5) inside the cell
  CHECK(heat.at(8 + 3, 16 + 5) > 0.999);
  CHECK(heat.at(8 + 3, 16 + 4) < 1e-6);
}

TEST_CASE("logits_to_heatmap conserves per-cell probability mass") {
  Rng rng(14);
  Tensor logits = random_tensor({65, 2, 2}, rng, -2.0, 2.0);
  const Image heat = nn::logits_to_heatmap(logits);
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w) {
      double denom = 0.0;
      for (int c = 0; c < 65; ++c)
        denom += std::exp(logits.data[(static_cast<size_t>(c) * 2 + h) * 2 + w]);
      const double dustbin = std::exp(logits.data[(64u * 2 + h) * 2 + w]) / denom;
      double block = 0.0;
      for (int du = 0; du < 8; ++du)
        for (int dv = 0; dv < 8; ++dv) block += heat.at(8 * h + du, 8 * w + dv);
      CHECK(std::abs(block + dustbin - 1.0) < 1e-12);
    }
}

namespace {

// Independent transcription of the x8 bicubic upsampling + renormalization.
double ref_cubic(double t) {
  const double a = -0.5, x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

Tensor ref_densify(const Tensor& coarse) {
  const int d = coarse.shape[0], hc = coarse.shape[1], wc = coarse.shape[2];
  Tensor dense({d, 8 * hc, 8 * wc});
  for (int u = 0; u < 8 * hc; ++u)
    for (int v = 0; v < 8 * wc; ++v) {
      const double gu = (u - 3.5) / 8.0, gv = (v - 3.5) / 8.0;
      double sq = 0.0;
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int su = static_cast<int>(std::floor(gu)) - 1;
             su <= static_cast<int>(std::floor(gu)) + 2; ++su)
          for (int sv = static_cast<int>(std::floor(gv)) - 1;
               sv <= static_cast<int>(std::floor(gv)) + 2; ++sv) {
            const int cu = std::clamp(su, 0, hc - 1), cv = std::clamp(sv, 0, wc - 1);
            acc += ref_cubic(gu - su) * ref_cubic(gv - sv) *
                   coarse.data[(static_cast<size_t>(c) * hc + cu) * wc + cv];
          }
        dense.data[(static_cast<size_t>(c) * 8 * hc + u) * 8 * wc + v] = acc;
        sq += acc * acc;
      }
      const double inv = 1.0 / std::sqrt(sq + 1e-16);
      for (int c = 0; c < d; ++c)
        dense.data[(static_cast<size_t>(c) * 8 * hc + u) * 8 * wc + v] *= inv;
    }
  return dense;
}

}  // namespace

TEST_CASE("densify_descriptors matches an independent bicubic transcription") {
  Rng rng(15);
  const Tensor coarse = random_tensor({3, 3, 4}, rng);
  const Tensor dense = nn::densify_descriptors(coarse);
  const Tensor ref = ref_densify(coarse);
  CHECK(dense.shape == std::vector<int>{3, 24, 32});
  for (size_t i = 0; i < dense.data.size(); ++i)
    CHECK(std::abs(dense.data[i] - ref.data[i]) < 1e-12);
}

TEST_CASE("densify_descriptors output is unit-norm per pixel") {
  Rng rng(16);
  const Tensor dense = nn::densify_descriptors(random_tensor({4, 2, 2}, rng));
  const int px = 16 * 16;
  for (int i = 0; i < px; ++i) {
    double sq = 0.0;
    for (int c = 0; c < 4; ++c) sq += dense.data[static_cast<size_t>(c) * px + i] *
                                      dense.data[static_cast<size_t>(c) * px + i];
    CHECK(std::abs(sq - 1.0) < 1e-9);
  }
}

TEST_CASE("densify_descriptors on a constant field reproduces the direction") {
  Tensor coarse({2, 2, 2});
  for (int i = 0; i < 4; ++i) {
    coarse.data[i] = 3.0;      // channel 0
    coarse.data[4 + i] = 4.0;  // channel 1
  }
  const Tensor dense = nn::densify_descriptors(coarse);
  const int px = 16 * 16;
  for (int i = 0; i < px; ++i) {
    CHECK(std::abs(dense.data[i] - 0.6) < 1e-7);
    CHECK(std::abs(dense.data[px + i] - 0.8) < 1e-7);
  }
}

TEST_CASE("cost volume equals a brute-force cosine table") {
  Rng rng(17);
  Tensor x1 = random_tensor({6, 4}, rng);
  Tensor x2 = random_tensor({6, 4}, rng);
  for (int c = 0; c < 4; ++c) x2.at2(3, c) = 0.0;  // degenerate row

  nn::CostVolume cv;
  const Tensor out = cv.forward(x1, x2);
  CHECK(out.shape == std::vector<int>{6, 6});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      double dot = 0.0, n1 = 0.0, n2 = 0.0;
      for (int c = 0; c < 4; ++c) {
        dot += x1.at2(i, c) * x2.at2(j, c);
        n1 += x1.at2(i, c) * x1.at2(i, c);
        n2 += x2.at2(j, c) * x2.at2(j, c);
      }
      const double expect = dot / (std::max(std::sqrt(n1), 1e-8) * std::max(std::sqrt(n2), 1e-8));
      CHECK(std::abs(out.at2(i, j) - expect) < 1e-12);
      if (j == 3) CHECK(out.at2(i, j) == 0.0);
    }
}

TEST_CASE("cost volume backward matches central differences") {
  Rng rng(18);
  Tensor x1 = random_tensor({4, 3}, rng);
  Tensor x2 = random_tensor({4, 3}, rng);
  Tensor gout = random_tensor({4, 4}, rng);

  nn::CostVolume cv;
  cv.forward(x1, x2);
  auto [g1, g2] = cv.backward(gout);

  auto scalar = [&] {
    nn::CostVolume fresh;
    const Tensor out = fresh.forward(x1, x2);
    double s = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * gout.data[i];
    return s;
  };
  const double h = 1e-6;
  auto fd_check = [&](Tensor& t, const Tensor& g) {
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double up = scalar();
      t.data[i] = keep - h;
      const double dn = scalar();
      t.data[i] = keep;
      CHECK(std::abs((up - dn) / (2.0 * h) - g.data[i]) < 1e-7);
    }
  };
  fd_check(x1, g1);
  fd_check(x2, g2);
}

TEST_CASE("detector-path parameter gradients match central differences") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(19);
  model.init(rng);
  const Tensor x = random_tensor({1, 1, 16, 16}, rng, 0.0, 1.0);

  CellLabelGrid labels{2, 2, {3, 64, 64, 29}};
  LossConfig cfg;
  cfg.class_weights[64] = 0.025;
  auto lossfn = [&](const nn::ForwardResult& r) {
    LossEval le;
    Tensor grad;
    le.loss = detector_loss(slice_item(r.logits, 0, {65, 2, 2}), labels, cfg, &grad);
    grad.shape = {1, 65, 2, 2};
    le.g_logits = std::move(grad);
    return le;
  };
  CHECK(max_param_grad_err(model, x, false, lossfn) < 1e-4);
}

TEST_CASE("descriptor-path parameter gradients match central differences") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(20);
  model.init(rng);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);

  const CorrespondenceMask mask = correspondence_mask(Homography::translation(2.0, -1.0), 16, 16);
  LossConfig cfg;
  auto lossfn = [&](const nn::ForwardResult& r) {
    LossEval le;
    const Tensor d1 = slice_item(r.desc, 0, {32, 2, 2});
    const Tensor d2 = slice_item(r.desc, 1, {32, 2, 2});
    Tensor g1, g2;
    le.loss = descriptor_loss(d1, d2, mask, cfg, &g1, &g2);
    le.g_desc = Tensor({2, 32, 2, 2});
    std::copy(g1.data.begin(), g1.data.end(), le.g_desc.data.begin());
    std::copy(g2.data.begin(), g2.data.end(), le.g_desc.data.begin() + g1.data.size());
    return le;
  };
  CHECK(max_param_grad_err(model, x, false, lossfn) < 1e-4);
}

TEST_CASE("homography-path parameter gradients match central differences") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(21);
  model.init(rng);
  const Tensor x = random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);

  FourPointDelta gt{};
  for (int i = 0; i < 4; ++i) gt.deltas[i] = Pt{0.5 * i - 1.0, 1.0 - 0.4 * i};
  auto lossfn = [&](const nn::ForwardResult& r) {
    LossEval le;
    le.g_deltas = Tensor({1, 8});
    le.loss = homography_loss_flat(r.deltas.data.data(), gt, le.g_deltas.data.data());
    return le;
  };
  // a smaller step keeps the estimate clear of ReLU/max-pool kinks
  CHECK(max_param_grad_err(model, x, true, lossfn, 1e-6) < 1e-3);
}

TEST_CASE("backward accumulates head gradients additively") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(22);
  model.init(rng);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);

  nn::ForwardResult r = model.forward(x, true, nullptr, true);
  const Tensor gl = random_tensor({2, 65, 2, 2}, rng);
  const Tensor gd = random_tensor({2, 32, 2, 2}, rng);
  const Tensor gh = random_tensor({1, 8}, rng);

  model.zero_grad();
  model.backward(gl, gd, gh);
  std::vector<std::vector<double>> combined;
  for (nn::Param* p : model.params()) combined.push_back(p->grad.data);

  std::vector<std::vector<double>> summed(combined.size());
  for (int head = 0; head < 3; ++head) {
    model.forward(x, true, nullptr, true);
    model.zero_grad();
    model.backward(head == 0 ? gl : Tensor(), head == 1 ? gd : Tensor(),
                   head == 2 ? gh : Tensor());
    size_t pi = 0;
    for (nn::Param* p : model.params()) {
      if (summed[pi].empty()) summed[pi].assign(p->grad.data.size(), 0.0);
      for (size_t i = 0; i < p->grad.data.size(); ++i) summed[pi][i] += p->grad.data[i];
      ++pi;
    }
  }
  for (size_t pi = 0; pi < combined.size(); ++pi)
    for (size_t i = 0; i < combined[pi].size(); ++i)
      CHECK(std::abs(combined[pi][i] - summed[pi][i]) < 1e-10);
}

TEST_CASE("dropout is driven by the supplied rng") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(23);
  model.init(rng);
  const Tensor x = random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);

  Rng d1(99), d2(99), d3(100);
  const Tensor a = model.forward(x, true, &d1, true).deltas;
  const Tensor b = model.forward(x, true, &d2, true).deltas;
  const Tensor c = model.forward(x, true, &d3, true).deltas;
  CHECK(a.data == b.data);
  bool differs = false;
  for (size_t i = 0; i < a.data.size(); ++i) differs |= a.data[i] != c.data[i];
  CHECK(differs);

  // inference is deterministic without any rng
  const Tensor e1 = model.forward(x, false, nullptr, true).deltas;
  const Tensor e2 = model.forward(x, false, nullptr, true).deltas;
  CHECK(e1.data == e2.data);
}

TEST_CASE("checkpoint round trip is bit exact") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(24);
  model.init(rng);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  model.forward(x, true, nullptr, false);  // move the running stats off init

  const std::string path = "ckpt_roundtrip.bin";
  model.save(path);
  nn::Model loaded = nn::Model::load(path);

  auto orig = model.params();
  auto copy = loaded.params();
  REQUIRE(orig.size() == copy.size());
  for (size_t i = 0; i < orig.size(); ++i) CHECK(orig[i]->value.data == copy[i]->value.data);

  const nn::ForwardResult ra = model.forward(x, false, nullptr, true);
  const nn::ForwardResult rb = loaded.forward(x, false, nullptr, true);
  CHECK(ra.logits.data == rb.logits.data);
  CHECK(ra.desc.data == rb.desc.data);
  CHECK(ra.deltas.data == rb.deltas.data);
}

TEST_CASE("checkpoint loading rejects garbage and mismatched convention tags") {
  {
    std::ofstream out("ckpt_garbage.bin", std::ios::binary);
    out << "not a checkpoint at all";
  }
  try {
    nn::Model::load("ckpt_garbage.bin");
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.code() == "bad-checkpoint");
  }

  // Rewrite a valid checkpoint with a hostile in-cell ordering tag.
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(25);
  model.init(rng);
  model.save("ckpt_tag.bin");
  {
    std::ifstream in("ckpt_tag.bin", std::ios::binary);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const size_t at = header.find("row-major");
    REQUIRE(at != std::string::npos);
    header.replace(at, 9, "col-major");
    std::ofstream out("ckpt_tag.bin", std::ios::binary);
    const uint64_t nlen = header.size();
    out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    out.write(header.data(), static_cast<std::streamsize>(nlen));
    out.write(rest.data(), static_cast<std::streamsize>(rest.size()));
  }
  try {
    nn::Model::load("ckpt_tag.bin");
    FAIL("expected a tag mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "bad-checkpoint");
  }

  CHECK_THROWS_AS(nn::Model::load("ckpt_does_not_exist.bin"), Error);
}

TEST_CASE("single-image helpers agree with the batched forward pass") {
  nn::Model model(nn::ModelConfig::toy());
  Rng rng(26);
  model.init(rng);

  Image a(16, 16), b(16, 16);
  for (double& v : a.data) v = rng.uniform(0.0, 1.0);
  for (double& v : b.data) v = rng.uniform(0.0, 1.0);

  Tensor x({2, 1, 16, 16});
  std::copy(a.data.begin(), a.data.end(), x.data.begin());
  std::copy(b.data.begin(), b.data.end(), x.data.begin() + a.data.size());
  const nn::ForwardResult r = model.forward(x, false, nullptr, true);

  const nn::FeatureMap fa = model.encode_image(a);
  const Tensor la = model.detect_image(fa);
  const Tensor da = model.describe_image(fa);
  CHECK(la.shape == std::vector<int>{65, 2, 2});
  CHECK(da.shape == std::vector<int>{32, 2, 2});
  const Tensor rl = slice_item(r.logits, 0, {65, 2, 2});
  const Tensor rd = slice_item(r.desc, 0, {32, 2, 2});
  for (size_t i = 0; i < la.data.size(); ++i) CHECK(std::abs(la.data[i] - rl.data[i]) < 1e-12);
  for (size_t i = 0; i < da.data.size(); ++i) CHECK(std::abs(da.data[i] - rd.data[i]) < 1e-12);

  const FourPointDelta d = model.regress_homography(a, b);
  for (int i = 0; i < 4; ++i) {
    CHECK(d.deltas[i].u == r.deltas.at2(0, 2 * i));
    CHECK(d.deltas[i].v == r.deltas.at2(0, 2 * i + 1));
  }

  CHECK_THROWS_AS(model.encode_image(Image(15, 16)), Error);
}

TEST_CASE("param_count covers every learnable tensor once") {
  nn::ModelConfig cfg = nn::ModelConfig::toy();
  nn::Model model(cfg);
  long long expect = 0;
  for (nn::Param* p : model.params()) expect += p->value.numel();
  CHECK(model.param_count() == expect);
  CHECK(model.param_count() < 1000000);  // the toy setup stays small on purpose
}
