#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "haspn/haspn.hpp"

namespace fs = std::filesystem;
using namespace haspn;

TEST(RunConfig, EmptyDocumentGivesReferenceDefaults) {
  const TrainConfig c = parse_run_config("");
  EXPECT_EQ(c.model.g, 20);
  EXPECT_EQ(c.model.m, 5);
  EXPECT_EQ(c.model.c, 64);
  EXPECT_EQ(c.model.scale, 4);
  EXPECT_EQ(c.model.adcca_dilations, (std::vector<int>{1, 3, 5}));
  EXPECT_EQ(c.initial_rate, 1e-4);
  EXPECT_EQ(c.adam.beta1, 0.9);
  EXPECT_EQ(c.adam.beta2, 0.999);
  EXPECT_EQ(c.adam.epsilon, 1e-8);
  EXPECT_EQ(c.batch, 2);
  EXPECT_EQ(c.epochs, 200);
  EXPECT_EQ(c.decay_factor, 0.5);
  EXPECT_EQ(c.decay_every, 20);
  EXPECT_EQ(c.crop, 256);
  EXPECT_EQ(c.loss.weights, (LossWeights{1.0, 1.0, 1.0}));
  EXPECT_FALSE(c.loss.per_pixel_mean);
  EXPECT_EQ(c.extractor, "random");
}

TEST(RunConfig, ParsesEverySection) {
  const std::string text =
      "[model]\ng = 2\nm = 3\nc = 16\nscale = 8\nesa_reduction = 2\nadcca_dilations = 1, 2\nadcca_reduction = 2\n"
      "[train]\nlr = 2e-3\nbeta1 = 0.8\nbeta2 = 0.99\nepsilon = 1e-7\nbatch = 4\nepochs = 30\n"
      "decay_every = 10\ndecay_factor = 0.25\nseed = 42\nw_pix = 1\nw_per = 0.5\nw_gra = 0\n"
      "per_pixel_mean = true\nextractor = random:7\noutput = runs/a\n"
      "[data]\nroot = data\ncrop = 128\nratios = 0.7, 0.2, 0.1\n";
  const TrainConfig c = parse_run_config(text, "/base");
  EXPECT_EQ(c.model.g, 2);
  EXPECT_EQ(c.model.m, 3);
  EXPECT_EQ(c.model.c, 16);
  EXPECT_EQ(c.model.scale, 8);
  EXPECT_EQ(c.model.esa_reduction, 2);
  EXPECT_EQ(c.model.adcca_dilations, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.model.adcca_reduction, 2);
  EXPECT_EQ(c.initial_rate, 2e-3);
  EXPECT_EQ(c.adam.beta1, 0.8);
  EXPECT_EQ(c.adam.beta2, 0.99);
  EXPECT_EQ(c.adam.epsilon, 1e-7);
  EXPECT_EQ(c.batch, 4);
  EXPECT_EQ(c.epochs, 30);
  EXPECT_EQ(c.decay_every, 10);
  EXPECT_EQ(c.decay_factor, 0.25);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.loss.weights, (LossWeights{1.0, 0.5, 0.0}));
  EXPECT_TRUE(c.loss.per_pixel_mean);
  EXPECT_EQ(c.extractor, "random:7");
  EXPECT_EQ(c.output_dir, fs::path("/base/runs/a"));
  EXPECT_EQ(c.data_root, fs::path("/base/data"));
  EXPECT_EQ(c.crop, 128);
  EXPECT_EQ(c.ratios, (std::array<double, 3>{0.7, 0.2, 0.1}));
}

TEST(RunConfig, UnknownKeysAndSectionsNameTheOffender) {
  try {
    parse_run_config("[train]\nlearning_rate = 1e-3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config("[optimizer]\nlr = 1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("lr = 1\n"), ConfigError);
}

TEST(RunConfig, BadValuesAreConfigErrors) {
  EXPECT_THROW(parse_run_config("[model]\ng = two\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[model]\nscale = 3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[train]\nbatch = 0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[train]\nbeta1 = 1.0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[train]\nper_pixel_mean = maybe\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[data]\nratios = 0.5, 0.5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[data]\ncrop = 30\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[model\n"), ConfigError);
}

TEST(RunConfig, LoadResolvesAgainstTheFileDirectory) {
  const fs::path dir = fs::temp_directory_path() / "haspn_test_config";
  fs::create_directories(dir);
  std::ofstream(dir / "run.ini") << "[data]\nroot = phantoms\n[train]\nextractor = file:vgg.hspn\n";
  const TrainConfig c = load_run_config(dir / "run.ini");
  EXPECT_EQ(c.data_root, dir / "phantoms");
  EXPECT_EQ(c.extractor, "file:" + (dir / "vgg.hspn").string());
  EXPECT_THROW(load_run_config(dir / "absent.ini"), ConfigError);
}

TEST(RunConfig, ShippedAblationConfigsParse) {
  const fs::path configs = fs::path(HASPN_SOURCE_DIR) / "docs" / "configs";
  int count = 0;
  for (const auto& entry : fs::directory_iterator(configs)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_run_config(entry.path())) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 4);
}

TEST(Extractors, SpecStrings) {
  EXPECT_EQ(make_extractor<float>("random").id(), "random:19");
  EXPECT_EQ(make_extractor<float>("random:5").id(), "random:5");
  EXPECT_EQ(make_extractor<float>("identity").id(), "identity");
  EXPECT_THROW(make_extractor<float>("random:x"), ConfigError);
  EXPECT_THROW(make_extractor<float>("vgg"), ConfigError);
  EXPECT_THROW(make_extractor<float>("file:/nonexistent/vgg.hspn"), ConfigError);
}
