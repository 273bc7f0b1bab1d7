#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "haspn/haspn.hpp"

namespace fs = std::filesystem;
using namespace haspn;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("haspn_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliRun cli(const std::string& args, const std::string& env = {}) {
  static int counter = 0;
  const fs::path base = fs::temp_directory_path() / ("haspn_cli_run_" + std::to_string(counter++));
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + HASPN_CLI_PATH + "' " + args + " >'" +
                          base.string() + ".out' 2>'" + base.string() + ".err'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(base.string() + ".out");
  r.err = read_text(base.string() + ".err");
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

double printed_value(const std::string& out, const std::string& key) {
  const auto at = out.find(key + " ");
  if (at == std::string::npos) return std::nan("");
  return std::stod(out.substr(at + key.size() + 1));
}

const char* kTinyConfig =
    "[model]\ng = 1\nm = 1\nc = 8\nscale = 4\n"
    "[train]\nlr = 1e-3\nepochs = 2\nbatch = 2\nseed = 1\noutput = out\n"
    "[data]\nroot = data\ncrop = 32\nratios = 0.5, 0.25, 0.25\n";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("eval --data x").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, PrepareWritesSplitsAndIsIdempotent) {
  const fs::path dir = scratch_dir("prepare");
  ASSERT_EQ(cli("phantoms --output '" + (dir / "raw").string() + "' --count 16 --height 80 --width 72").code, 0);
  const std::string args = "prepare --input '" + (dir / "raw").string() + "' --output '" + (dir / "prep").string() +
                           "' --crop 64 --scale 4 --seed 9 --ratios 0.5,0.25,0.25";
  ASSERT_EQ(cli(args).code, 0);
  const DatasetManifest m = read_manifest(dir / "prep" / "manifest.tsv");
  EXPECT_EQ(m.train.size(), 8u);
  EXPECT_EQ(m.val.size(), 4u);
  EXPECT_EQ(m.test.size(), 4u);
  const auto pairs = read_csv(dir / "prep" / "pairs.csv");
  ASSERT_EQ(pairs.size(), 17u);
  EXPECT_EQ(pairs[0][5], "lr_width");
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i][4], "64");
    EXPECT_EQ(pairs[i][5], "16");
    const Image lr = load_image(dir / "prep" / ("lr/" + pairs[i][0] + "/" + fs::path(pairs[i][1]).filename().string()));
    EXPECT_EQ(lr.width, 16);
  }
  const std::string manifest = read_text(dir / "prep" / "manifest.tsv");
  const std::string table = read_text(dir / "prep" / "pairs.csv");
  const std::string first_png = read_text(dir / "prep" / pairs[1][1]);
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(read_text(dir / "prep" / "manifest.tsv"), manifest);
  EXPECT_EQ(read_text(dir / "prep" / "pairs.csv"), table);
  EXPECT_EQ(read_text(dir / "prep" / pairs[1][1]), first_png);
}

TEST(Cli, PrepareFullSizeGeometry) {
  const fs::path dir = scratch_dir("prepare8");
  ASSERT_EQ(cli("phantoms --output '" + (dir / "raw").string() + "' --count 4 --height 256 --width 280").code, 0);
  ASSERT_EQ(cli("prepare --input '" + (dir / "raw").string() + "' --output '" + (dir / "prep").string() +
                  "' --crop 256 --scale 8 --ratios 0.5,0.25,0.25")
                .code,
            0);
  const auto pairs = read_csv(dir / "prep" / "pairs.csv");
  ASSERT_EQ(pairs.size(), 5u);
  for (std::size_t i = 1; i < pairs.size(); ++i) EXPECT_EQ(pairs[i][5], "32");
}

TEST(Cli, PrepareErrors) {
  const fs::path dir = scratch_dir("prepare_err");
  EXPECT_EQ(cli("prepare --input '" + (dir / "none").string() + "' --output '" + (dir / "o").string() + "'").code, 3);
  ASSERT_EQ(cli("phantoms --output '" + (dir / "raw").string() + "' --count 4 --height 40 --width 40").code, 0);
  EXPECT_EQ(cli("prepare --input '" + (dir / "raw").string() + "' --output '" + (dir / "o").string() +
                  "' --crop 30 --scale 4")
                .code,
            2);
  EXPECT_EQ(cli("prepare --input '" + (dir / "raw").string() + "' --output '" + (dir / "o").string() +
                  "' --crop 64 --scale 4 --ratios 0.5,0.25,0.25")
                .code,
            3);
}

TEST(Cli, TrainResumeAndErrors) {
  const fs::path dir = scratch_dir("train");
  ASSERT_EQ(cli("phantoms --output '" + (dir / "data").string() + "' --count 8 --height 40 --width 40").code, 0);
  std::ofstream(dir / "run.ini") << kTinyConfig;
  const CliRun r = cli("train --config '" + (dir / "run.ini").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("final val_psnr"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "epoch_0001.hspn"));
  EXPECT_TRUE(fs::exists(dir / "out" / "epoch_0002.hspn"));
  EXPECT_TRUE(fs::exists(dir / "out" / "best.hspn"));
  EXPECT_TRUE(fs::exists(dir / "out" / "train_log.csv"));

  std::ofstream(dir / "bad.ini") << "[train]\nlearning_rate = 1\n";
  const CliRun bad = cli("train --config '" + (dir / "bad.ini").string() + "'");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("learning_rate"), std::string::npos);

  std::string wider = kTinyConfig;
  wider.replace(wider.find("c = 8"), 5, "c = 12");
  std::ofstream(dir / "wider.ini") << wider;
  EXPECT_EQ(cli("train --config '" + (dir / "wider.ini").string() + "' --resume '" +
                  (dir / "out" / "epoch_0001.hspn").string() + "'")
                .code,
            4);

  std::string nodata = kTinyConfig;
  nodata.replace(nodata.find("root = data"), 11, "root = nothing_here");
  std::ofstream(dir / "nodata.ini") << nodata;
  EXPECT_EQ(cli("train --config '" + (dir / "nodata.ini").string() + "'").code, 3);
}

TEST(Cli, TrainHonoursOutputRootVariable) {
  const fs::path dir = scratch_dir("train_root");
  ASSERT_EQ(cli("phantoms --output '" + (dir / "data").string() + "' --count 8 --height 40 --width 40").code, 0);
  std::string one = kTinyConfig;
  one.replace(one.find("epochs = 2"), 10, "epochs = 1");
  std::ofstream(dir / "run.ini") << one;
  // Relative output paths are resolved against the config first, so the
  // variable only applies to configs that give no output at all.
  std::string bare = one;
  bare.erase(bare.find("output = out\n"), 13);
  std::ofstream(dir / "bare.ini") << bare;
  const fs::path root = dir / "elsewhere";
  ASSERT_EQ(cli("train --config '" + (dir / "bare.ini").string() + "'", "HASPN_OUTPUT_ROOT='" + root.string() + "'").code,
            0);
  EXPECT_TRUE(fs::exists(root / "runs" / "epoch_0001.hspn"));
}

TEST(Cli, EvalIdentityStubAndBaseline) {
  const fs::path dir = scratch_dir("eval");
  fs::create_directories(dir / "clean");
  for (int k = 0; k < 3; ++k) {
    Image img(24, 32);
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 32; ++x) img.at(y, x) = ((y * 5 + k) % 9) / 8.0;
    }
    save_png(dir / "clean" / ("c" + std::to_string(k) + ".png"), img);
  }
  save_checkpoint(dir / "id.hspn", identity_checkpoint(4));
  const CliRun r = cli("eval --ckpt '" + (dir / "id.hspn").string() + "' --data '" + (dir / "clean").string() +
                      "' --scale 4 --report '" + (dir / "r.csv").string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(dir / "r.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"path", "psnr_db", "ssim"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][1], "inf");
    EXPECT_EQ(std::stod(rows[i][2]), 1.0);
  }
  EXPECT_EQ(printed_value(r.out, "images"), 3.0);
  EXPECT_EQ(printed_value(r.out, "mean_ssim"), 1.0);

  ASSERT_EQ(cli("phantoms --output '" + (dir / "ph").string() + "' --count 5 --height 48 --width 48").code, 0);
  const CliRun b = cli("eval --baseline bicubic --data '" + (dir / "ph").string() + "' --scale 4 --report '" +
                      (dir / "b.csv").string() + "' --ssim global");
  ASSERT_EQ(b.code, 0) << b.err;
  const auto brows = read_csv(dir / "b.csv");
  ASSERT_EQ(brows.size(), 6u);
  double p = 0, s = 0;
  for (std::size_t i = 1; i < brows.size(); ++i) {
    p += std::stod(brows[i][1]);
    s += std::stod(brows[i][2]);
  }
  EXPECT_NEAR(printed_value(b.out, "mean_psnr_db"), p / 5, 1e-9);
  EXPECT_NEAR(printed_value(b.out, "mean_ssim"), s / 5, 1e-9);

  std::ofstream(dir / "junk.hspn") << "junk";
  EXPECT_EQ(cli("eval --ckpt '" + (dir / "junk.hspn").string() + "' --data '" + (dir / "ph").string() +
                  "' --scale 4 --report '" + (dir / "j.csv").string() + "'")
                .code,
            4);
  EXPECT_EQ(cli("eval --ckpt '" + (dir / "id.hspn").string() + "' --data '" + (dir / "ph").string() +
                  "' --scale 8 --report '" + (dir / "j.csv").string() + "'")
                .code,
            2);
  EXPECT_EQ(cli("eval --baseline bicubic --data '" + (dir / "ph").string() + "' --scale 4 --peak max --report '" +
                  (dir / "j.csv").string() + "'")
                .code,
            2);
}

TEST(Cli, InferFullSizeIsDeterministic) {
  const fs::path dir = scratch_dir("infer");
  ModelConfig m;
  m.g = 1;
  m.m = 1;
  m.c = 8;
  m.scale = 8;
  Checkpoint c;
  c.model = m;
  c.scale = 8;
  c.params = init_model<float>(m, 2);
  c.adam = AdamState<float>::zeros_like(c.params);
  save_checkpoint(dir / "x8.hspn", c);
  save_png(dir / "lr.png", undersample_columns(generate_phantom(3, 256, 256), 8));

  const std::string args = "infer --ckpt '" + (dir / "x8.hspn").string() + "' --image '" + (dir / "lr.png").string() +
                           "' --out '";
  ASSERT_EQ(cli(args + (dir / "a.png").string() + "'").code, 0);
  ASSERT_EQ(cli(args + (dir / "b.png").string() + "'").code, 0);
  const Image sr = load_image(dir / "a.png");
  EXPECT_EQ(sr.height, 256);
  EXPECT_EQ(sr.width, 256);
  for (double v : sr.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(read_text(dir / "a.png"), read_text(dir / "b.png"));
  EXPECT_EQ(cli("infer --ckpt '" + (dir / "x8.hspn").string() + "' --image '" + (dir / "none.png").string() +
                  "' --out '" + (dir / "c.png").string() + "'")
                .code,
            3);
}

TEST(Cli, ProfileColumns) {
  const fs::path dir = scratch_dir("profile");
  const Image a = generate_phantom(1, 40, 36);
  save_png(dir / "a.png", a);
  save_png(dir / "b.png", a);
  save_png(dir / "flat.png", Image(40, 36, 0.4));
  save_png(dir / "short.png", Image(30, 36, 0.4));
  const std::string list = (dir / "a.png").string() + "," + (dir / "b.png").string() + "," + (dir / "flat.png").string();
  ASSERT_EQ(cli("profile --images '" + list + "' --column 5 --out '" + (dir / "p.csv").string() + "'").code, 0);
  const auto rows = read_csv(dir / "p.csv");
  ASSERT_EQ(rows.size(), 41u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"row", "a.png", "b.png", "flat.png"}));
  const Image flat = load_image(dir / "flat.png");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][0], std::to_string(i - 1));
    EXPECT_EQ(rows[i][1], rows[i][2]);
    EXPECT_EQ(std::stod(rows[i][3]), flat.data[0]);
  }
  EXPECT_EQ(cli("profile --images '" + (dir / "a.png").string() + "," + (dir / "short.png").string() +
                  "' --column 5 --out '" + (dir / "q.csv").string() + "'")
                .code,
            3);
  EXPECT_EQ(cli("profile --images '" + (dir / "a.png").string() + "' --column 36 --out '" + (dir / "q.csv").string() +
                  "'")
                .code,
            2);
}
