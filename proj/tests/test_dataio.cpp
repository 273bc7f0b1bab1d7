#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "haspn/haspn.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace haspn;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("haspn_test_dataio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_gray8(const fs::path& path, int h, int w, const std::vector<unsigned char>& px) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_GRAY;
  ASSERT_TRUE(png_image_write_to_file(&img, path.string().c_str(), 0, px.data(), 0, nullptr));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(LoadImage, ScalesEightBitValues) {
  const fs::path dir = scratch_dir("load");
  write_gray8(dir / "a.png", 1, 3, {255, 0, 128});
  const Image img = load_image(dir / "a.png");
  ASSERT_EQ(img.height, 1);
  ASSERT_EQ(img.width, 3);
  EXPECT_EQ(img.data[0], 1.0);
  EXPECT_EQ(img.data[1], 0.0);
  EXPECT_NEAR(img.data[2], 0.50196, 1e-5);
  EXPECT_EQ(img.data[2], 128.0 / 255.0);
}

TEST(LoadImage, AveragesColourChannels) {
  const fs::path dir = scratch_dir("rgb");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = 2;
  img.height = 1;
  img.format = PNG_FORMAT_RGB;
  const unsigned char px[6] = {255, 0, 0, 30, 60, 90};
  ASSERT_TRUE(png_image_write_to_file(&img, (dir / "c.png").string().c_str(), 0, px, 0, nullptr));
  const Image loaded = load_image(dir / "c.png");
  EXPECT_DOUBLE_EQ(loaded.data[0], 255.0 / (3 * 255.0));
  EXPECT_DOUBLE_EQ(loaded.data[1], 180.0 / (3 * 255.0));
}

TEST(LoadImage, Errors) {
  const fs::path dir = scratch_dir("errors");
  EXPECT_THROW(load_image(dir / "missing.png"), IoError);
  std::ofstream(dir / "bogus.png") << "not a png";
  EXPECT_THROW(load_image(dir / "bogus.png"), FormatError);
}

TEST(SavePng, RoundTripsEightBitLevels) {
  const fs::path dir = scratch_dir("save");
  Image img(2, 2);
  img.data = {0.0, 1.0, 128.0 / 255.0, 7.0 / 255.0};
  save_png(dir / "r.png", img);
  EXPECT_EQ(load_image(dir / "r.png"), img);
}

TEST(RandomCrop, ShapeAndDeterminism) {
  const Image img = oracle::random_image(1, 496, 512);
  const Image a = random_crop(img, 256, 9);
  EXPECT_EQ(a.height, 256);
  EXPECT_EQ(a.width, 256);
  EXPECT_EQ(a, random_crop(img, 256, 9));
  const Image small = oracle::random_image(2, 32, 32);
  for (std::uint64_t seed : {0ULL, 5ULL, 77ULL}) EXPECT_EQ(random_crop(small, 32, seed), small);
  EXPECT_THROW(random_crop(small, 33, 0), DimensionError);
}

TEST(RandomCrop, IsASubImage) {
  const Image img = oracle::random_image(3, 40, 50);
  const Image c = random_crop(img, 16, 4);
  bool found = false;
  for (int top = 0; top + 16 <= 40 && !found; ++top) {
    for (int left = 0; left + 16 <= 50 && !found; ++left) {
      bool same = true;
      for (int y = 0; y < 16 && same; ++y) {
        for (int x = 0; x < 16 && same; ++x) same = c.at(y, x) == img.at(top + y, left + x);
      }
      found = same;
    }
  }
  EXPECT_TRUE(found);
}

TEST(UndersampleColumns, KeepsEveryFactorthColumn) {
  Image row(1, 8);
  for (int x = 0; x < 8; ++x) row.at(0, x) = x;
  const Image two = undersample_columns(row, 2);
  EXPECT_EQ(two.data, (std::vector<double>{0, 2, 4, 6}));
  const Image big = oracle::random_image(4, 256, 256);
  const Image four = undersample_columns(big, 4);
  EXPECT_EQ(four.height, 256);
  EXPECT_EQ(four.width, 64);
  EXPECT_EQ(undersample_columns(big, 1), big);
  EXPECT_EQ(undersample_columns(undersample_columns(big, 2), 4), undersample_columns(big, 8));
  EXPECT_THROW(undersample_columns(big, 3), ConfigError);
  EXPECT_THROW(undersample_columns(oracle::random_image(5, 4, 10), 4), DimensionError);
}

TEST(MakeSamplePair, ShapesAndResiduals) {
  const Image hr = oracle::random_image(6, 256, 256);
  const SamplePair p = make_sample_pair(hr, 8);
  EXPECT_EQ(p.lr.width, 32);
  EXPECT_EQ(p.lr.height, 256);
  EXPECT_EQ(p.hr_hf.width, 256);
  EXPECT_EQ(p.lr_hf.width, 32);
  EXPECT_EQ(p.scale, 8);
  const Image blurred = gaussian_blur(hr, decompose_kernel());
  for (std::size_t i = 0; i < hr.size(); ++i) EXPECT_EQ(p.hr_hf.data[i], hr.data[i] - blurred.data[i]);
  // Residuals of the LR image come from decomposing the LR image itself.
  EXPECT_EQ(p.lr_hf, decompose(p.lr).residual);

  const SamplePair flat = make_sample_pair(Image(64, 64, 0.3), 4);
  for (double v : flat.hr_hf.data) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : flat.lr_hf.data) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_EQ(make_sample_pair(hr, 1).lr, hr);
}

TEST(Phantom, DeterministicAndClamped) {
  EXPECT_EQ(generate_phantom(3, 64, 80), generate_phantom(3, 64, 80));
  EXPECT_NE(generate_phantom(3, 64, 80), generate_phantom(4, 64, 80));
  EXPECT_THROW(generate_phantom(0, 31, 64), DimensionError);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Image p = generate_phantom(s, 48, 48);
    EXPECT_GE(*std::min_element(p.data.begin(), p.data.end()), 0.0);
    EXPECT_LE(*std::max_element(p.data.begin(), p.data.end()), 1.0);
  }
}

TEST(Phantom, RowMeansShowBandContrast) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image p = generate_phantom(s, 128, 128);
    double lo = 1e9, hi = -1e9;
    for (int y = 0; y < p.height; ++y) {
      double m = 0.0;
      for (int x = 0; x < p.width; ++x) m += p.at(y, x);
      m /= p.width;
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    EXPECT_GE(hi - lo, 0.1) << "seed " << s;
  }
}

TEST(Phantom, BandCountWithinRange) {
  // With speckle off, horizontal plateaus are separated by ramps; counting
  // distinct plateau levels down the first column gives the band count.
  PhantomOptions clean;
  clean.speckle = 0.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Image p = generate_phantom(s, 256, 64, clean);
    int plateaus = 0;
    int run = 0;
    for (int y = 1; y < p.height; ++y) {
      if (std::abs(p.at(y, 0) - p.at(y - 1, 0)) < 1e-12) {
        if (++run == 3) ++plateaus;
      } else {
        run = 0;
      }
    }
    EXPECT_GE(plateaus, 5) << "seed " << s;
    EXPECT_LE(plateaus, 9) << "seed " << s;
  }
}

TEST(Manifest, SplitSizesAndDeterminism) {
  const fs::path dir = scratch_dir("manifest");
  for (int i = 0; i < 16; ++i) save_png(dir / ("img" + std::to_string(i) + ".png"), generate_phantom(i, 32, 32));
  std::ofstream(dir / "notes.txt") << "ignored";
  const DatasetManifest m = build_manifest(dir, {0.5, 0.25, 0.25}, 11);
  EXPECT_EQ(m.train.size(), 8u);
  EXPECT_EQ(m.val.size(), 4u);
  EXPECT_EQ(m.test.size(), 4u);

  std::set<std::string> all;
  for (const char* s : {"train", "val", "test"}) all.insert(m.split(s).begin(), m.split(s).end());
  EXPECT_EQ(all.size(), 16u);

  write_manifest(dir / "a.tsv", m);
  write_manifest(dir / "b.tsv", build_manifest(dir, {0.5, 0.25, 0.25}, 11));
  EXPECT_EQ(read_bytes(dir / "a.tsv"), read_bytes(dir / "b.tsv"));
  const std::string text = read_bytes(dir / "a.tsv");
  EXPECT_EQ(text.rfind("train\t", 0), 0u);
  EXPECT_EQ(text.find('\r'), std::string::npos);

  const DatasetManifest back = read_manifest(dir / "a.tsv");
  EXPECT_EQ(back.train, m.train);
  EXPECT_EQ(back.val, m.val);
  EXPECT_EQ(back.test, m.test);
  EXPECT_NE(build_manifest(dir, {0.5, 0.25, 0.25}, 12).train, m.train);
}

TEST(Manifest, ReferenceSplitArithmetic) {
  const fs::path dir = scratch_dir("reference_split");
  for (int i = 0; i < 1600; ++i) {
    // Only the signature is checked when listing, so tiny files suffice.
    save_png(dir / ("p" + std::to_string(i) + ".png"), Image(1, 1, 0.5));
  }
  const DatasetManifest m = build_manifest(dir, {0.8125, 0.125, 0.0625}, 0);
  EXPECT_EQ(m.train.size(), 1300u);
  EXPECT_EQ(m.val.size(), 200u);
  EXPECT_EQ(m.test.size(), 100u);
}

TEST(Manifest, Errors) {
  const fs::path dir = scratch_dir("manifest_errors");
  EXPECT_THROW(build_manifest(dir, {0.5, 0.25, 0.25}, 0), DataError);
  for (int i = 0; i < 4; ++i) save_png(dir / ("i" + std::to_string(i) + ".png"), Image(2, 2));
  EXPECT_THROW(build_manifest(dir, {0.5, 0.5, 0.5}, 0), ConfigError);
  EXPECT_THROW(build_manifest(dir, {0.5, 0.0, 0.25}, 0), ConfigError);
}
