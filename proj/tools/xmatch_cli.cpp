#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "xmatch/cli.hpp"
#include "xmatch/error.hpp"

namespace {

struct CommonArgs {
  std::string config;
  uint64_t seed = 0;
  std::string out = "out";
  int workers = 1;
  std::string checkpoint;
  double det_threshold = -1.0;  // < 0 keeps the config value
  int nms_radius = -100;
  double reproj_threshold = -1.0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--seed", args.seed, "master random seed");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--workers", args.workers, "worker thread count")->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint path");
  cmd->add_option("--det-threshold", args.det_threshold, "detector score threshold");
  cmd->add_option("--nms-radius", args.nms_radius, "suppression radius (negative disables)");
  cmd->add_option("--reproj-threshold", args.reproj_threshold, "inlier reprojection threshold");
}

/// Flags beat the config file.
xmatch::RunConfig resolve_config(const CLI::App* cmd, const CommonArgs& args) {
  xmatch::RunConfig cfg = xmatch::load_run_config(args.config);
  if (cmd->count("--det-threshold") > 0) {
    cfg.inference.det_threshold = args.det_threshold;
    cfg.adaptation.det_threshold = args.det_threshold;
  }
  if (cmd->count("--nms-radius") > 0) {
    cfg.inference.nms_radius = args.nms_radius;
    cfg.adaptation.nms_radius = std::max(args.nms_radius, 0);
  }
  if (cmd->count("--reproj-threshold") > 0) cfg.eval.fit.reproj_threshold = args.reproj_threshold;
  cfg.adaptation.validate();
  cfg.inference.validate();
  cfg.eval.fit.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multispectral keypoint matching and registration"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string dataset, labels_dir, image_a, image_b;

  CLI::App* label = app.add_subcommand("label", "pseudo-label a dataset");
  label->add_option("dataset", dataset, "dataset root")->required();
  add_common(label, args);

  CLI::App* train = app.add_subcommand("train", "train a model from labels");
  train->add_option("dataset", dataset, "dataset root")->required();
  train->add_option("labels", labels_dir, "label directory")->required();
  add_common(train, args);

  CLI::App* eval = app.add_subcommand("eval", "run the warped-pair protocol");
  eval->add_option("dataset", dataset, "dataset root")->required();
  add_common(eval, args);

  CLI::App* match = app.add_subcommand("match", "match two images");
  match->add_option("image_a", image_a, "first image (PNG)")->required();
  match->add_option("image_b", image_b, "second image (PNG)")->required();
  add_common(match, args);

  CLI::App* reg = app.add_subcommand("register", "match plus registration overlay");
  reg->add_option("image_a", image_a, "first image (PNG)")->required();
  reg->add_option("image_b", image_b, "second image (PNG)")->required();
  add_common(reg, args);

  CLI11_PARSE(app, argc, argv);

  CLI::App* cmd = app.get_subcommands().front();
  try {
    const xmatch::RunConfig cfg = resolve_config(cmd, args);
    if (cmd == label) {
      xmatch::cmd_label(dataset, cfg, args.seed, args.workers, args.out);
    } else if (cmd == train) {
      xmatch::cmd_train(dataset, labels_dir, cfg, args.seed, args.out);
    } else if (cmd == eval) {
      if (args.checkpoint.empty()) throw xmatch::Error("bad-config", "--checkpoint is required");
      xmatch::cmd_eval(dataset, args.checkpoint, cfg, args.seed, args.out);
    } else if (cmd == match) {
      if (args.checkpoint.empty()) throw xmatch::Error("bad-config", "--checkpoint is required");
      xmatch::cmd_match(image_a, image_b, args.checkpoint, cfg, args.seed, args.out);
    } else {
      if (args.checkpoint.empty()) throw xmatch::Error("bad-config", "--checkpoint is required");
      xmatch::cmd_register(image_a, image_b, args.checkpoint, cfg, args.seed, args.out);
    }
  } catch (const xmatch::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.code().c_str(), e.what());
    return xmatch::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
