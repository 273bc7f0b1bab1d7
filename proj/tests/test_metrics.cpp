#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "haspn/haspn.hpp"
#include "oracles.hpp"

using namespace haspn;

namespace {

// Windowed SSIM by brute force: each window's weighted moments summed directly.
double ssim_oracle(const Image& a, const Image& b, int k = 11, double sigma = 1.5) {
  const auto w = oracle::gaussian_weights(k, sigma);
  const long double c1 = 1e-4L, c2 = 9e-4L;
  long double total = 0;
  int count = 0;
  for (int top = 0; top + k <= a.height; ++top) {
    for (int left = 0; left + k <= a.width; ++left) {
      long double ma = 0, mb = 0;
      for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
          const long double wt = w[static_cast<std::size_t>(y * k + x)];
          ma += wt * a.at(top + y, left + x);
          mb += wt * b.at(top + y, left + x);
        }
      }
      long double va = 0, vb = 0, cab = 0;
      for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
          const long double wt = w[static_cast<std::size_t>(y * k + x)];
          const long double da = a.at(top + y, left + x) - ma;
          const long double db = b.at(top + y, left + x) - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cab += wt * da * db;
        }
      }
      total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return static_cast<double>(total / count);
}

}  // namespace

TEST(Mse, Examples) {
  const Image a = oracle::random_image(1, 5, 6);
  EXPECT_EQ(mse(a, a), 0.0);
  Image b = a;
  for (auto& v : b.data) v += 0.1;
  EXPECT_NEAR(mse(a, b), 0.01, 1e-15);
  Image p(1, 2), q(1, 2);
  p.data = {0.0, 1.0};
  q.data = {1.0, 0.0};
  EXPECT_EQ(mse(p, q), 1.0);
  EXPECT_THROW(mse(a, Image(5, 7)), ShapeError);
}

TEST(Psnr, TwentyDecibelsAndSentinel) {
  const Image a = oracle::random_image(2, 16, 16, 0.0, 0.8);
  Image b = a;
  for (auto& v : b.data) v += 0.1;
  EXPECT_NEAR(psnr(b, a), 20.0, 1e-9);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
  EXPECT_NEAR(psnr(b, a, 2.0), 20.0 + 20.0 * std::log10(2.0), 1e-9);
  EXPECT_THROW(psnr(a, b, 0.0), ConfigError);
}

TEST(Psnr, LiteralPeakUsesReconstructionMaximum) {
  Image hr(2, 2, 0.2);
  Image sr(2, 2, 0.3);
  sr.at(1, 1) = 0.5;
  const double e = mse(sr, hr);
  EXPECT_NEAR(psnr(sr, hr, 1.0, PeakMode::literal), 10.0 * std::log10(0.25 / e), 1e-12);
}

TEST(Psnr, DecreasesWithError) {
  const Image hr = oracle::random_image(3, 12, 12);
  double last = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 10; ++k) {
    Image sr = hr;
    for (auto& v : sr.data) v += 0.01 * k;
    const double p = psnr(sr, hr);
    EXPECT_LT(p, last);
    last = p;
  }
}

TEST(Ssim, IdenticalIsExactlyOne) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image a = oracle::random_image(10 + s, 20, 23);
    EXPECT_EQ(ssim(a, a), 1.0);
    EXPECT_EQ(ssim(a, a, {}, SsimMode::global), 1.0);
  }
}

TEST(Ssim, GlobalConstants) {
  const SSIMParams p;
  EXPECT_NEAR(ssim(Image(12, 12, 1.0), Image(12, 12, 0.0), p, SsimMode::global), p.c1() / (1.0 + p.c1()), 1e-12);
  EXPECT_NEAR(p.c1() / (1.0 + p.c1()), 9.999e-5, 1e-8);
  EXPECT_DOUBLE_EQ(p.c3(), p.c2() / 2.0);
}

TEST(Ssim, WindowedConstantsMatchGlobal) {
  const Image a(15, 14, 0.7);
  const Image b(15, 14, 0.2);
  EXPECT_NEAR(ssim(a, b), ssim(a, b, {}, SsimMode::global), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Image a = oracle::random_image(100 + s, 16, 16);
    const Image b = oracle::random_image(300 + s, 16, 16);
    const double g = ssim(a, b, {}, SsimMode::global);
    EXPECT_NEAR(g, ssim(b, a, {}, SsimMode::global), 1e-12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LE(std::abs(g), 1.0);
  }
}

TEST(Ssim, WindowedMatchesBruteForce) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Image a = oracle::random_image(500 + s, 17, 21);
    Image b = a;
    const Image noise = oracle::random_image(600 + s, 17, 21, -0.2, 0.2);
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] += noise.data[i];
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-12);
  }
}

TEST(Ssim, Errors) {
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), DimensionError);
  EXPECT_NO_THROW(ssim(Image(10, 20), Image(10, 20), {}, SsimMode::global));
  EXPECT_THROW(ssim(Image(12, 12), Image(12, 13)), ShapeError);
}

TEST(AlineProfile, Examples) {
  Image img(3, 3);
  img.at(0, 1) = 0.1;
  img.at(1, 1) = 0.5;
  img.at(2, 1) = 0.9;
  const auto p = aline_profile(img, 1);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0], (std::pair<int, double>{0, 0.1}));
  EXPECT_EQ(p[1], (std::pair<int, double>{1, 0.5}));
  EXPECT_EQ(p[2], (std::pair<int, double>{2, 0.9}));
  for (const auto& [row, v] : aline_profile(Image(7, 4, 0.3), 3)) EXPECT_EQ(v, 0.3);
  EXPECT_THROW(aline_profile(img, 3), IndexError);
  EXPECT_THROW(aline_profile(img, -1), IndexError);
}

TEST(FormatReal, RoundTripsAndNamesSpecialValues) {
  for (double v : {0.1, 1.0 / 3.0, 20.0, 1e-300, -2.5}) EXPECT_EQ(std::stod(format_real(v)), v);
  EXPECT_EQ(format_real(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_real(std::nan("")), "nan");
}

TEST(ProfileCsv, Layout) {
  const auto path = std::filesystem::temp_directory_path() / "haspn_test_profile.csv";
  Image img(2, 2);
  img.at(1, 0) = 0.25;
  write_profile_csv(path, aline_profile(img, 0));
  std::ifstream f(path);
  const std::string text{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  EXPECT_EQ(text, "row,intensity\n0,0\n1,0.25\n");
}
