#include "xmatch/datahub.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "xmatch/error.hpp"
#include "xmatch/png_io.hpp"

namespace fs = std::filesystem;

namespace xmatch {

std::vector<AlignedPair> load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw Error("io-error", "dataset root " + root + " is not a directory");
  auto list_side = [](const fs::path& dir) {
    std::map<std::string, fs::path> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files[entry.path().stem().string()] = entry.path();
    }
    return files;
  };

  const auto side_a = list_side(fs::path(root) / "spectrum_a");
  const auto side_b = list_side(fs::path(root) / "spectrum_b");
  for (const auto& [id, path] : side_a)
    if (!side_b.count(id)) throw Error("unpaired-image", id + " has no spectrum_b counterpart");
  for (const auto& [id, path] : side_b)
    if (!side_a.count(id)) throw Error("unpaired-image", id + " has no spectrum_a counterpart");

  std::vector<AlignedPair> pairs;
  pairs.reserve(side_a.size());
  for (const auto& [id, path_a] : side_a) {  // std::map iterates in id order
    AlignedPair p;
    p.id = id;
    p.image_a = load_png_gray(path_a.string());
    p.image_b = load_png_gray(side_b.at(id).string());
    if (!p.image_a.same_dims(p.image_b))
      throw Error("shape-mismatch", "pair " + id + " images differ in dims");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ------------------------------------------------------------- synth_pair

namespace {

void fill_polygon(Image& img, const std::vector<Pt>& verts, double value) {
  double umin = 1e9, umax = -1e9;
  for (const Pt& p : verts) {
    umin = std::min(umin, p.u);
    umax = std::max(umax, p.u);
  }
  const int lo = std::max(0, static_cast<int>(std::floor(umin)));
  const int hi = std::min(img.rows - 1, static_cast<int>(std::ceil(umax)));
  const int n = static_cast<int>(verts.size());
  for (int u = lo; u <= hi; ++u) {
    // even-odd scanline crossings
    std::vector<double> xs;
    for (int i = 0; i < n; ++i) {
      const Pt& a = verts[i];
      const Pt& b = verts[(i + 1) % n];
      if ((a.u <= u && b.u > u) || (b.u <= u && a.u > u))
        xs.push_back(a.v + (u - a.u) / (b.u - a.u) * (b.v - a.v));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int v0 = std::max(0, static_cast<int>(std::ceil(xs[i])));
      const int v1 = std::min(img.cols - 1, static_cast<int>(std::floor(xs[i + 1])));
      for (int v = v0; v <= v1; ++v) img.at(u, v) = value;
    }
  }
}

void draw_line(Image& img, Pt a, Pt b, double value) {
  const double len = std::hypot(b.u - a.u, b.v - a.v);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int u = static_cast<int>(std::lround(a.u + t * (b.u - a.u)));
    const int v = static_cast<int>(std::lround(a.v + t * (b.v - a.v)));
    if (u >= 0 && u < img.rows && v >= 0 && v < img.cols) img.at(u, v) = value;
  }
}

Image binomial_blur3(const Image& img) {
  static const double k[3] = {0.25, 0.5, 0.25};
  Image tmp(img.rows, img.cols), out(img.rows, img.cols);
  auto clampi = [](int i, int hi) { return std::max(0, std::min(hi, i)); };
  for (int u = 0; u < img.rows; ++u)
    for (int v = 0; v < img.cols; ++v) {
      double s = 0.0;
      for (int d = -1; d <= 1; ++d) s += k[d + 1] * img.at(u, clampi(v + d, img.cols - 1));
      tmp.at(u, v) = s;
    }
  for (int u = 0; u < img.rows; ++u)
    for (int v = 0; v < img.cols; ++v) {
      double s = 0.0;
      for (int d = -1; d <= 1; ++d) s += k[d + 1] * tmp.at(clampi(u + d, img.rows - 1), v);
      out.at(u, v) = s;
    }
  return out;
}

}  // namespace

AlignedPair synth_pair(uint64_t seed, int rows, int cols, const SynthStyle& style) {
  if (rows % 8 != 0 || cols % 8 != 0)
    throw Error("bad-input-dims", "synthetic dims must be multiples of 8");
  Rng rng(seed);
  Image a(rows, cols);

  // textured background: a few random low-frequency cosine waves
  struct Wave {
    double fu, fv, phase, amp;
  };
  std::vector<Wave> waves(4);
  for (Wave& w : waves) {
    w.fu = rng.uniform(-0.02, 0.02);
    w.fv = rng.uniform(-0.02, 0.02);
    w.phase = rng.uniform(0.0, 2.0 * M_PI);
    w.amp = rng.uniform(0.02, 0.08);
  }
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) {
      double s = 0.5;
      for (const Wave& w : waves) s += w.amp * std::cos(2.0 * M_PI * (w.fu * u + w.fv * v) + w.phase);
      a.at(u, v) = std::clamp(s, 0.0, 1.0);
    }

  for (int i = 0; i < style.polygons; ++i) {
    const int nv = rng.uniform_int(3, 5);
    const Pt center{rng.uniform(0.0, rows - 1.0), rng.uniform(0.0, cols - 1.0)};
    const double radius = rng.uniform(0.06, 0.22) * std::min(rows, cols);
    std::vector<Pt> verts;
    const double start = rng.uniform(0.0, 2.0 * M_PI);
    for (int k = 0; k < nv; ++k) {
      const double ang = start + 2.0 * M_PI * k / nv + rng.uniform(-0.3, 0.3);
      const double r = radius * rng.uniform(0.6, 1.0);
      verts.push_back({center.u + r * std::sin(ang), center.v + r * std::cos(ang)});
    }
    fill_polygon(a, verts, rng.uniform(0.0, 1.0));
  }
  for (int i = 0; i < style.lines; ++i) {
    const Pt p{rng.uniform(0.0, rows - 1.0), rng.uniform(0.0, cols - 1.0)};
    const Pt q{rng.uniform(0.0, rows - 1.0), rng.uniform(0.0, cols - 1.0)};
    draw_line(a, p, q, rng.uniform(0.0, 1.0));
  }
  for (int i = 0; i < style.blobs; ++i) {
    const Pt c{rng.uniform(0.0, rows - 1.0), rng.uniform(0.0, cols - 1.0)};
    const double sigma = rng.uniform(0.01, 0.04) * std::min(rows, cols);
    const double amp = rng.uniform(-0.5, 0.5);
    const int reach = static_cast<int>(std::ceil(3.0 * sigma));
    for (int u = std::max(0, static_cast<int>(c.u) - reach);
         u <= std::min(rows - 1, static_cast<int>(c.u) + reach); ++u)
      for (int v = std::max(0, static_cast<int>(c.v) - reach);
           v <= std::min(cols - 1, static_cast<int>(c.v) + reach); ++v) {
        const double d2 = (u - c.u) * (u - c.u) + (v - c.v) * (v - c.v);
        a.at(u, v) = std::clamp(a.at(u, v) + amp * std::exp(-d2 / (2.0 * sigma * sigma)), 0.0, 1.0);
      }
  }

  // spectrum B: same geometry, nonlinear radiometry
  const double gamma = rng.uniform(0.7, 1.5);
  Image b(rows, cols);
  for (int i = 0; i < rows * cols; ++i) b.data[i] = std::pow(1.0 - a.data[i], gamma);
  for (int i = 0; i < style.contrast_regions; ++i) {
    const int ru = rng.uniform_int(0, rows - 1);
    const int rv = rng.uniform_int(0, cols - 1);
    const int hu = rng.uniform_int(rows / 8, rows / 3);
    const int hv = rng.uniform_int(cols / 8, cols / 3);
    for (int u = ru; u < std::min(rows, ru + hu); ++u)
      for (int v = rv; v < std::min(cols, rv + hv); ++v) b.at(u, v) = 1.0 - b.at(u, v);
  }
  b = binomial_blur3(b);
  if (style.noise_sigma > 0.0)
    for (double& v : b.data) v = std::clamp(v + rng.normal(0.0, style.noise_sigma), 0.0, 1.0);

  AlignedPair pair;
  pair.id = "synth_" + std::to_string(seed);
  pair.image_a = std::move(a);
  pair.image_b = std::move(b);
  return pair;
}

// ------------------------------------------------------ make_train_sample

void TrainSampleConfig::validate() const {
  if (crop <= 0 || crop % 8 != 0) throw Error("bad-config", "crop must be a positive multiple of 8");
  if (cross_spectrum_prob < 0.0 || cross_spectrum_prob > 1.0)
    throw Error("bad-config", "cross_spectrum_prob must be in [0,1]");
  warp.validate();
}

TrainSample make_train_sample(const AlignedPair& pair, const KeypointSet& labels,
                              const TrainSampleConfig& cfg, Rng& rng) {
  cfg.validate();
  const int rows = pair.image_a.rows, cols = pair.image_a.cols;
  if (rows < cfg.crop || cols < cfg.crop)
    throw Error("image-too-small", "pair " + pair.id + " is smaller than the crop");

  TrainSample s;
  const bool cross = rng.uniform(0.0, 1.0) < cfg.cross_spectrum_prob;
  s.src_spectrum = rng.uniform_int(0, 1);
  s.dst_spectrum = cross ? 1 - s.src_spectrum : s.src_spectrum;
  const int u0 = rng.uniform_int(0, rows - cfg.crop);
  const int v0 = rng.uniform_int(0, cols - cfg.crop);
  s.crop_u = u0;
  s.crop_v = v0;
  s.h_gt = sample_homography(cfg.warp, cfg.crop, cfg.crop, rng);

  auto crop_of = [&](int spectrum) {
    const Image& full = spectrum == 0 ? pair.image_a : pair.image_b;
    Image out(cfg.crop, cfg.crop);
    for (int u = 0; u < cfg.crop; ++u)
      for (int v = 0; v < cfg.crop; ++v) out.at(u, v) = full.at(u0 + u, v0 + v);
    return out;
  };
  s.src = crop_of(s.src_spectrum);
  s.dst = warp_image(crop_of(s.dst_spectrum), s.h_gt);

  const auto in_frame = [&](double u, double v) {
    const long ru = std::lround(u), rv = std::lround(v);
    return ru >= 0 && ru < cfg.crop && rv >= 0 && rv < cfg.crop;
  };
  KeypointSet src_labels, dst_labels;
  for (const Keypoint& kp : labels) {
    const double cu = kp.u - u0, cv = kp.v - v0;
    if (in_frame(cu, cv)) src_labels.push_back({cu, cv, kp.score});
    try {
      const Pt w = warp_point(Pt{cu, cv}, s.h_gt);
      if (in_frame(w.u, w.v)) dst_labels.push_back({w.u, w.v, kp.score});
    } catch (const Error&) {
      // mapped to infinity: not present in the warped view
    }
  }
  s.labels_src = cells_from_keypoints(src_labels, cfg.crop, cfg.crop, rng);
  s.labels_dst = cells_from_keypoints(dst_labels, cfg.crop, cfg.crop, rng);
  return s;
}

// --------------------------------------------------------------- label IO

void write_label_file(const LabelRecord& rec, const std::string& path) {
  nlohmann::json doc;
  doc["id"] = rec.id;
  doc["rows"] = rec.rows;
  doc["cols"] = rec.cols;
  auto& kps = doc["keypoints"] = nlohmann::json::array();
  for (const Keypoint& kp : rec.keypoints) kps.push_back({kp.u, kp.v, kp.score});
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write label file " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw Error("io-error", "short write on label file " + path);
}

LabelRecord read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io-error", "cannot read label file " + path);
  LabelRecord rec;
  try {
    const nlohmann::json doc = nlohmann::json::parse(in);
    rec.id = doc.at("id").get<std::string>();
    rec.rows = doc.at("rows").get<int>();
    rec.cols = doc.at("cols").get<int>();
    for (const auto& kp : doc.at("keypoints")) {
      if (!kp.is_array() || kp.size() != 3) throw Error("bad-label-file", "malformed keypoint row");
      rec.keypoints.push_back({kp[0].get<double>(), kp[1].get<double>(), kp[2].get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad-label-file", std::string("malformed label JSON: ") + e.what());
  }
  return rec;
}

}  // namespace xmatch
