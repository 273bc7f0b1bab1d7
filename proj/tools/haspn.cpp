#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "haspn/haspn.hpp"

namespace fs = std::filesystem;
using namespace haspn;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kCheckpoint = 4 };

std::vector<NamedImage> load_directory(const fs::path& dir, const std::string& split) {
  std::vector<std::string> paths;
  if (!split.empty()) {
    paths = read_manifest(dir / "manifest.tsv").split(split);
  } else {
    paths = list_images(dir);
  }
  if (paths.empty()) throw DataError("no images found in " + dir.string());
  std::vector<NamedImage> out;
  for (const auto& p : paths) out.push_back({p, load_image(dir / p)});
  return out;
}

std::string flat_stem(const std::string& relative) {
  fs::path p(relative);
  std::string s = (p.parent_path() / p.stem()).generic_string();
  for (char& ch : s) {
    if (ch == '/') ch = '_';
  }
  return s;
}

int cmd_prepare(const fs::path& input, const fs::path& output, int crop, int scale, std::uint64_t seed,
                const std::vector<double>& ratios) {
  if (ratios.size() != 3) throw ConfigError("--ratios needs three values");
  if (!valid_undersampling_factor(scale) || scale == 1) throw ConfigError("--scale must be 2, 4 or 8");
  if (crop < 1 || crop % scale != 0) throw ConfigError("--crop must be a positive multiple of --scale");
  DatasetManifest src = build_manifest(input, {ratios[0], ratios[1], ratios[2]}, seed);

  DatasetManifest out;
  out.root = output;
  out.seed = seed;
  out.crop = crop;
  out.scale = scale;
  fs::create_directories(output);
  std::ofstream pairs(output / "pairs.csv", std::ios::binary | std::ios::trunc);
  if (!pairs) throw IoError("cannot write " + (output / "pairs.csv").string());
  pairs << "split,path,hr_height,hr_width,lr_height,lr_width,scale\n";
  std::uint64_t index = 0;
  for (const char* split : {"train", "val", "test"}) {
    fs::create_directories(output / "hr" / split);
    fs::create_directories(output / "lr" / split);
    for (const auto& rel : src.split(split)) {
      const Image hr = random_crop(load_image(input / rel), crop, mix_seed(seed, index++));
      const Image lr = undersample_columns(hr, scale);
      const std::string name = flat_stem(rel) + ".png";
      const std::string hr_rel = std::string("hr/") + split + "/" + name;
      save_png(output / hr_rel, hr);
      save_png(output / "lr" / split / name, lr);
      out.split(split).push_back(hr_rel);
      pairs << split << ',' << hr_rel << ',' << hr.height << ',' << hr.width << ',' << lr.height << ',' << lr.width
            << ',' << scale << '\n';
    }
  }
  write_manifest(output / "manifest.tsv", out);
  std::cout << "prepared " << out.total() << " images (train " << out.train.size() << ", val " << out.val.size()
            << ", test " << out.test.size() << ") in " << output.string() << "\n";
  return kOk;
}

int cmd_train(const fs::path& config_path, const std::string& resume_path) {
  TrainConfig cfg = load_run_config(config_path);
  if (const char* root = std::getenv("HASPN_OUTPUT_ROOT"); root && *root && cfg.output_dir.is_relative()) {
    cfg.output_dir = fs::path(root) / cfg.output_dir;
  }
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  const TrainData data = load_train_data(cfg);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) {
    std::printf("epoch %d/%d lr %s loss %s val_psnr %s val_ssim %s\n", e.epoch, cfg.epochs, format_real(e.lr).c_str(),
                format_real(e.loss_total).c_str(), format_real(e.val_psnr).c_str(), format_real(e.val_ssim).c_str());
    std::fflush(stdout);
  };
  const TrainResult r = train(cfg, data, hooks, resume);
  if (!r.epochs.empty()) {
    const EpochRecord& last = r.epochs.back();
    std::printf("final val_psnr %s val_ssim %s\n", format_real(last.val_psnr).c_str(), format_real(last.val_ssim).c_str());
  } else {
    std::printf("nothing to do: checkpoint already at epoch %d\n", r.last.epoch);
  }
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& baseline, const fs::path& data, const std::string& split,
             int scale, const fs::path& report, const std::string& peak, const std::string& ssim_mode) {
  EvalOptions opt;
  if (peak == "literal") {
    opt.peak = PeakMode::literal;
  } else if (peak != "fixed") {
    throw ConfigError("--peak must be fixed or literal");
  }
  if (ssim_mode == "global") {
    opt.ssim = SsimMode::global;
  } else if (ssim_mode != "windowed") {
    throw ConfigError("--ssim must be global or windowed");
  }
  if (ckpt.empty() == baseline.empty()) throw ConfigError("give exactly one of --ckpt and --baseline");
  if (!baseline.empty() && baseline != "bicubic") throw ConfigError("--baseline must be bicubic");
  if (!valid_undersampling_factor(scale)) throw ConfigError("--scale must be 1, 2, 4 or 8");

  std::optional<Checkpoint> c;
  if (!ckpt.empty()) c = load_checkpoint(ckpt);
  const std::vector<NamedImage> images = load_directory(data, split);
  const MetricsReport r = c ? evaluate(*c, images, scale, opt) : evaluate(bicubic_reconstructor(scale), images, scale, opt);
  write_report_csv(report, r);
  std::printf("images %zu\nmean_psnr_db %s\nmean_ssim %s\nseconds %.3f\n", r.rows.size(), format_real(r.mean_psnr).c_str(),
              format_real(r.mean_ssim).c_str(), r.seconds);
  return kOk;
}

int cmd_infer(const fs::path& ckpt, const fs::path& image, const fs::path& out) {
  const Checkpoint c = load_checkpoint(ckpt);
  const Image lr = load_image(image);
  const Image sr = checkpoint_reconstructor(c)(lr);
  save_png(out, sr);
  std::printf("wrote %s (%dx%d)\n", out.string().c_str(), sr.height, sr.width);
  return kOk;
}

int cmd_profile(const std::vector<std::string>& files, int column, const fs::path& out) {
  if (files.empty()) throw ConfigError("--images needs at least one file");
  std::vector<std::vector<std::pair<int, double>>> profiles;
  int height = -1;
  for (const auto& f : files) {
    const Image img = load_image(f);
    if (height >= 0 && img.height != height) {
      throw DataError("image heights differ: " + f + " has " + std::to_string(img.height) + " rows, expected " +
                      std::to_string(height));
    }
    height = img.height;
    profiles.push_back(aline_profile(img, column));
  }
  std::ofstream csv(out, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + out.string());
  csv << "row";
  for (const auto& f : files) csv << ',' << fs::path(f).filename().string();
  csv << '\n';
  for (int y = 0; y < height; ++y) {
    csv << y;
    for (const auto& p : profiles) csv << ',' << format_real(p[static_cast<std::size_t>(y)].second);
    csv << '\n';
  }
  std::printf("wrote %s (%d rows)\n", out.string().c_str(), height);
  return kOk;
}

int cmd_phantoms(const fs::path& output, int count, int height, int width, std::uint64_t seed) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  fs::create_directories(output);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%04d.png", i);
    save_png(output / name, generate_phantom(mix_seed(seed, static_cast<std::uint64_t>(i)), height, width));
  }
  std::printf("wrote %d phantoms to %s\n", count, output.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HASPN under-sampled OCT super-resolution"};
  app.require_subcommand(1);

  std::string input, output, config, resume, ckpt, baseline, data, split, report, image, out;
  std::string peak = "fixed", ssim_mode = "windowed";
  std::vector<std::string> images;
  std::vector<double> ratios{0.8125, 0.125, 0.0625};
  int crop = 256, scale = 4, column = 0, count = 16, height = 128, width = 128;
  std::uint64_t seed = 0;

  auto* prepare = app.add_subcommand("prepare", "Split, crop and degrade a directory of PNGs");
  prepare->add_option("--input", input, "Directory of source PNGs")->required();
  prepare->add_option("--output", output, "Output directory")->required();
  prepare->add_option("--crop", crop, "Square crop size")->capture_default_str();
  prepare->add_option("--scale", scale, "Column under-sampling factor")->capture_default_str();
  prepare->add_option("--seed", seed, "Split and crop seed")->capture_default_str();
  prepare->add_option("--ratios", ratios, "train,val,test fractions")->delimiter(',')->expected(3);

  auto* train_cmd = app.add_subcommand("train", "Train from a config file");
  train_cmd->add_option("--config", config, "INI run configuration")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Score reconstructions against ground truth");
  eval->add_option("--ckpt", ckpt, "Checkpoint to evaluate");
  eval->add_option("--baseline", baseline, "Interpolation baseline instead of a checkpoint (bicubic)");
  eval->add_option("--data", data, "Directory of ground-truth PNGs")->required();
  eval->add_option("--split", split, "Use this split of DATA/manifest.tsv instead of every PNG");
  eval->add_option("--scale", scale, "Under-sampling factor")->required();
  eval->add_option("--report", report, "Per-image CSV report")->required();
  eval->add_option("--peak", peak, "PSNR peak: fixed (1.0) or literal (max of reconstruction)")->capture_default_str();
  eval->add_option("--ssim", ssim_mode, "SSIM estimator: windowed or global")->capture_default_str();

  auto* infer = app.add_subcommand("infer", "Reconstruct one under-sampled image");
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer->add_option("--image", image, "Under-sampled input PNG")->required();
  infer->add_option("--out", out, "Output PNG")->required();

  auto* profile = app.add_subcommand("profile", "Export one column of several images as CSV");
  profile->add_option("--images", images, "Comma-separated PNGs")->delimiter(',')->required();
  profile->add_option("--column", column, "Column index")->required();
  profile->add_option("--out", out, "Output CSV")->required();

  auto* phantoms = app.add_subcommand("phantoms", "Write synthetic B-scan phantoms");
  phantoms->add_option("--output", output, "Output directory")->required();
  phantoms->add_option("--count", count, "Number of images")->capture_default_str();
  phantoms->add_option("--height", height, "Rows")->capture_default_str();
  phantoms->add_option("--width", width, "Columns")->capture_default_str();
  phantoms->add_option("--seed", seed, "Base seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*prepare) return cmd_prepare(input, output, crop, scale, seed, ratios);
    if (*train_cmd) return cmd_train(config, resume);
    if (*eval) return cmd_eval(ckpt, baseline, data, split, scale, report, peak, ssim_mode);
    if (*infer) return cmd_infer(ckpt, image, out);
    if (*profile) return cmd_profile(images, column, out);
    if (*phantoms) return cmd_phantoms(output, count, height, width, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IndexError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
