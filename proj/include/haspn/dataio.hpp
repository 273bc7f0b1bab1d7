#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "haspn/error.hpp"
#include "haspn/frequency.hpp"
#include "haspn/image.hpp"
#include "haspn/png_io.hpp"
#include "haspn/rng.hpp"

namespace haspn {

// Aligned HR/LR images and their high-frequency residuals. The LR image keeps
// every `scale`-th column of the HR image.
struct SamplePair {
  Image hr;
  Image lr;
  Image hr_hf;
  Image lr_hf;
  int scale = 1;
};

inline bool valid_undersampling_factor(int factor) {
  return factor == 1 || factor == 2 || factor == 4 || factor == 8;
}

// Square crop whose top-left corner is uniform over the valid positions.
inline Image random_crop(const Image& image, int size, std::uint64_t seed) {
  if (size < 1 || image.height < size || image.width < size) {
    throw DimensionError("random_crop: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " cannot hold a " + std::to_string(size) + "x" + std::to_string(size) + " crop");
  }
  Rng rng(seed);
  const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.height - size + 1)));
  const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.width - size + 1)));
  Image out(size, size);
  for (int y = 0; y < size; ++y) {
    std::copy_n(image.data.begin() + static_cast<std::ptrdiff_t>((top + y) * image.width + left), size,
                out.data.begin() + static_cast<std::ptrdiff_t>(y * size));
  }
  return out;
}

// Keeps columns 0, factor, 2*factor, ...
inline Image undersample_columns(const Image& image, int factor) {
  if (!valid_undersampling_factor(factor)) {
    throw ConfigError("undersample_columns: factor must be one of 1, 2, 4, 8 (got " + std::to_string(factor) + ")");
  }
  if (image.width % factor != 0) {
    throw DimensionError("undersample_columns: width " + std::to_string(image.width) + " not divisible by " +
                         std::to_string(factor));
  }
  Image out(image.height, image.width / factor);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = image.at(y, x * factor);
  }
  return out;
}

inline SamplePair make_sample_pair(const Image& hr, int factor) {
  SamplePair p;
  p.hr = hr;
  p.lr = undersample_columns(hr, factor);
  p.hr_hf = decompose(p.hr).residual;
  p.lr_hf = decompose(p.lr).residual;
  p.scale = factor;
  return p;
}

struct PhantomOptions {
  // Standard deviation of the multiplicative speckle field.
  double speckle = 0.06;
  // Correlation lengths (Gaussian sigma, pixels) of the speckle field.
  double speckle_sigma_x = 2.5;
  double speckle_sigma_y = 1.0;
  // Undulation wavelengths, as fractions of the width.
  double primary_wavelength_min = 0.25;
  double primary_wavelength_max = 0.5;
  double secondary_wavelength_min = 0.1;
  double secondary_wavelength_max = 0.2;
};

// Synthetic stand-in for a retinal B-scan: 5-9 horizontal layers with a
// shared sinusoidal undulation, 1-3 px ramps between layers and
// horizontally correlated multiplicative speckle.
inline Image generate_phantom(std::uint64_t seed, int height, int width, const PhantomOptions& opt = {}) {
  if (height < 32 || width < 32) {
    throw DimensionError("generate_phantom: dimensions must be >= 32, got " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  Rng rng(mix_seed(seed, 0x7068616e746f6dULL));
  const int bands = static_cast<int>(rng.between(5, 9));

  std::vector<double> levels(static_cast<std::size_t>(bands));
  for (int i = 0; i < bands; ++i) levels[static_cast<std::size_t>(i)] = 0.08 + 0.8 * i / (bands - 1);
  rng.shuffle(levels.begin(), levels.end());
  for (double& v : levels) v += rng.uniform(-0.02, 0.02);

  const int edges = bands - 1;
  const double span = 0.8 * height;
  const double slot = span / edges;
  std::vector<double> base(static_cast<std::size_t>(edges));
  std::vector<double> ramp(static_cast<std::size_t>(edges));
  std::vector<double> follow(static_cast<std::size_t>(edges));
  for (int k = 0; k < edges; ++k) {
    base[static_cast<std::size_t>(k)] = 0.1 * height + (k + 0.5 + rng.uniform(-0.3, 0.3)) * slot;
    ramp[static_cast<std::size_t>(k)] = rng.uniform(1.0, 3.0);
    follow[static_cast<std::size_t>(k)] = rng.uniform(0.6, 1.0);
  }

  const double max_amp = height / 16.0;
  const double amp1 = rng.uniform(0.4, 0.7) * max_amp;
  const double amp2 = rng.uniform(0.0, 0.3) * max_amp;
  const double wave1 = rng.uniform(opt.primary_wavelength_min, opt.primary_wavelength_max) * width;
  const double wave2 = rng.uniform(opt.secondary_wavelength_min, opt.secondary_wavelength_max) * width;
  const double phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Image img(height, width);
  for (int x = 0; x < width; ++x) {
    const double shift = amp1 * std::sin(2.0 * std::numbers::pi * x / wave1 + phase1) +
                         amp2 * std::sin(2.0 * std::numbers::pi * x / wave2 + phase2);
    for (int y = 0; y < height; ++y) {
      double v = levels[0];
      for (int k = 0; k < edges; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const double centre = base[ks] + follow[ks] * shift;
        const double t = std::clamp((y - centre) / ramp[ks] + 0.5, 0.0, 1.0);
        v += (levels[ks + 1] - levels[ks]) * t;
      }
      img.at(y, x) = v;
    }
  }

  if (opt.speckle > 0.0) {
    // White noise low-passed with a separable Gaussian, renormalized to unit
    // variance.
    Image noise(height, width);
    for (double& v : noise.data) v = rng.normal();
    auto taps_for = [](double sigma) {
      const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
      std::vector<double> t(static_cast<std::size_t>(2 * r + 1));
      for (int i = -r; i <= r; ++i) t[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
      return t;
    };
    const std::vector<double> tx = taps_for(opt.speckle_sigma_x);
    const std::vector<double> ty = taps_for(opt.speckle_sigma_y);
    double energy_x = 0.0, energy_y = 0.0;
    for (double v : tx) energy_x += v * v;
    for (double v : ty) energy_y += v * v;
    const double norm = 1.0 / std::sqrt(energy_x * energy_y);
    const int rx = static_cast<int>(tx.size() / 2);
    const int ry = static_cast<int>(ty.size() / 2);
    Image rows(height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int d = -rx; d <= rx; ++d) acc += tx[static_cast<std::size_t>(d + rx)] * noise.at(y, reflect_index(x + d, width));
        rows.at(y, x) = acc;
      }
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (int d = -ry; d <= ry; ++d) acc += ty[static_cast<std::size_t>(d + ry)] * rows.at(reflect_index(y + d, height), x);
        img.at(y, x) *= 1.0 + opt.speckle * acc * norm;
      }
    }
  }
  return clamp01(std::move(img));
}

// Ordered train/val/test lists of paths relative to `root`.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  int crop = 0;
  int scale = 0;

  const std::vector<std::string>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw DataError("unknown split '" + name + "'");
  }
  std::vector<std::string>& split(const std::string& name) {
    return const_cast<std::vector<std::string>&>(static_cast<const DatasetManifest&>(*this).split(name));
  }

  std::size_t total() const { return train.size() + val.size() + test.size(); }
};

inline bool is_png_path(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

// Sorted relative paths of every PNG under `root`.
inline std::vector<std::string> list_images(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && is_png_path(entry.path())) {
      files.push_back(fs::relative(entry.path(), root).generic_string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Deterministic shuffled split of the PNGs under `root`. Split sizes are
// floor(ratio * count); leftovers are unassigned.
inline DatasetManifest build_manifest(const std::filesystem::path& root, const std::array<double, 3>& ratios,
                                      std::uint64_t seed) {
  double total_ratio = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("build_manifest: split ratios must be positive");
    total_ratio += r;
  }
  if (total_ratio > 1.0 + 1e-9) throw ConfigError("build_manifest: split ratios sum to more than 1");

  std::vector<std::string> files;
  for (auto& f : list_images(root)) {
    if (detail::has_png_signature(root / f)) files.push_back(std::move(f));
  }
  if (files.size() < 3) {
    throw DataError("build_manifest: " + root.string() + " holds " + std::to_string(files.size()) +
                    " decodable images, need at least 3");
  }
  Rng rng(mix_seed(seed, 0x6d616e6966657374ULL));
  rng.shuffle(files.begin(), files.end());

  const auto n = static_cast<double>(files.size());
  std::array<std::size_t, 3> counts{};
  for (std::size_t i = 0; i < 3; ++i) counts[i] = static_cast<std::size_t>(std::floor(ratios[i] * n + 1e-9));

  DatasetManifest m;
  m.root = root;
  m.seed = seed;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    auto& dst = i == 0 ? m.train : (i == 1 ? m.val : m.test);
    for (std::size_t k = 0; k < counts[i] && pos < files.size(); ++k) dst.push_back(files[pos++]);
  }
  return m;
}

// "split<TAB>path" per line, LF endings, train then val then test.
inline std::string serialize_manifest(const DatasetManifest& m) {
  std::string out;
  for (const char* name : {"train", "val", "test"}) {
    for (const auto& p : m.split(name)) {
      out += name;
      out += '\t';
      out += p;
      out += '\n';
    }
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& file, const DatasetManifest& m) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + file.string());
  os << serialize_manifest(m);
  if (!os) throw IoError("failed writing manifest " + file.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError("manifest " + file.string() + ":" + std::to_string(lineno) + ": expected split<TAB>path");
    }
    const std::string split = line.substr(0, tab);
    if (split != "train" && split != "val" && split != "test") {
      throw FormatError("manifest " + file.string() + ":" + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
    m.split(split).push_back(line.substr(tab + 1));
  }
  return m;
}

}  // namespace haspn
