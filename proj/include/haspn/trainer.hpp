#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "haspn/checkpoint.hpp"
#include "haspn/dataio.hpp"
#include "haspn/error.hpp"
#include "haspn/frequency.hpp"
#include "haspn/losses.hpp"
#include "haspn/metrics.hpp"
#include "haspn/model.hpp"
#include "haspn/optim.hpp"
#include "haspn/png_io.hpp"

namespace haspn {

struct TrainConfig {
  ModelConfig model;
  double initial_rate = 1e-4;
  AdamConfig adam;
  double decay_factor = 0.5;
  int decay_every = 20;
  int batch = 2;
  int epochs = 200;
  std::uint64_t seed = 0;
  LossOptions loss;
  // "random", "random:SEED", "identity" or "file:PATH" (VGG19 archive).
  std::string extractor = "random";

  std::filesystem::path data_root;
  int crop = 256;
  std::array<double, 3> ratios{0.8125, 0.125, 0.0625};
  std::filesystem::path output_dir = "runs";

  void validate() const {
    model.validate();
    if (!(initial_rate > 0.0)) throw ConfigError("train: lr must be positive");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw ConfigError("train: beta1 must lie in (0, 1)");
    if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw ConfigError("train: beta2 must lie in (0, 1)");
    if (!(adam.epsilon > 0.0)) throw ConfigError("train: epsilon must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("train: decay_factor must be positive");
    if (decay_every < 1) throw ConfigError("train: decay_every must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (crop < 1 || crop % model.scale != 0) throw ConfigError("data: crop must be a positive multiple of scale");
  }
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.initial_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"lr", c.initial_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"decay_factor", c.decay_factor},
          {"decay_every", c.decay_every},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"w_pix", c.loss.weights.pix},
          {"w_per", c.loss.weights.per},
          {"w_gra", c.loss.weights.gra},
          {"per_pixel_mean", c.loss.per_pixel_mean},
          {"extractor", c.extractor},
          {"crop", c.crop}};
}

template <class T>
FeatureExtractor<T> make_extractor(const std::string& spec) {
  if (spec == "random") return random_extractor<T>();
  if (spec == "identity") return identity_extractor<T>();
  if (spec.rfind("random:", 0) == 0) {
    try {
      return random_extractor<T>(std::stoull(spec.substr(7)));
    } catch (const std::logic_error&) {
      throw ConfigError("extractor: bad seed in '" + spec + "'");
    }
  }
  if (spec.rfind("file:", 0) == 0) {
    try {
      return load_vgg19_extractor<T>(spec.substr(5));
    } catch (const CheckpointError& e) {
      throw ConfigError(std::string("extractor: ") + e.what());
    }
  }
  throw ConfigError("extractor must be random, random:SEED, identity or file:PATH (got '" + spec + "')");
}

// Batched tensors for a list of equally sized pairs.
template <class T>
struct BatchTensors {
  Tensor4<T> lr, lr_hf, hr, hr_hf;
};

template <class T>
BatchTensors<T> stack_pairs(const std::vector<SamplePair>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  std::vector<const Image*> lr, lr_hf, hr, hr_hf;
  for (const auto& p : batch) {
    if (p.scale != batch.front().scale) throw ShapeError("batch pairs differ in scale");
    lr.push_back(&p.lr);
    lr_hf.push_back(&p.lr_hf);
    hr.push_back(&p.hr);
    hr_hf.push_back(&p.hr_hf);
  }
  return {to_tensor<T>(lr), to_tensor<T>(lr_hf), to_tensor<T>(hr), to_tensor<T>(hr_hf)};
}

// Forward, composite loss, backward, Adam.
template <class T>
LossTerms train_step(const ModelConfig& cfg, ParameterSet<T>& params, AdamState<T>& state,
                     const std::vector<SamplePair>& batch, const FeatureExtractor<T>& phi, const LossOptions& loss,
                     double rate, const AdamConfig& adam = {}) {
  const BatchTensors<T> b = stack_pairs<T>(batch);
  if (b.lr.w() * cfg.scale != b.hr.w()) throw ShapeError("train_step: batch scale does not match the model");
  LossTerms terms;
  ParameterSet<T> grads;
  {
    const nn::BoundParameters<T> bound(params, true);
    const auto out = haspn_forward(cfg, bound, nn::Var<T>::constant(b.lr), nn::Var<T>::constant(b.lr_hf));
    const auto l = total_loss(out.coarse, out.hf, out.fused, nn::Var<T>::constant(b.hr),
                              nn::Var<T>::constant(b.hr_hf), phi, loss);
    nn::backward(l.value);
    terms = l.terms;
    grads = bound.gradients();
  }
  adam_step(params, state, grads, rate, adam);
  return terms;
}

// Maps an LR image to an HR-width reconstruction in [0, 1].
using Reconstructor = std::function<Image(const Image&)>;

inline Reconstructor model_reconstructor(const ModelConfig& cfg, const ParameterSet<float>& params) {
  return [cfg, &params](const Image& lr) {
    const Image lr_hf = decompose(lr).residual;
    const auto out = haspn_forward(cfg, params, to_tensor<float>(lr), to_tensor<float>(lr_hf));
    return clamp01(to_image(out.fused.value()));
  };
}

// Column-wise cubic convolution (a = -0.5): LR column j sits at HR column
// j*scale; edges are clamped.
inline Image bicubic_columns(const Image& lr, int scale) {
  auto weight = [](double t) {
    const double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
  };
  Image out(lr.height, lr.width * scale);
  for (int x = 0; x < out.width; ++x) {
    const double u = static_cast<double>(x) / scale;
    const int i = static_cast<int>(std::floor(u));
    const double f = u - i;
    double w[4];
    int src[4];
    for (int k = 0; k < 4; ++k) {
      w[k] = weight(f - (k - 1));
      src[k] = std::clamp(i + k - 1, 0, lr.width - 1);
    }
    for (int y = 0; y < lr.height; ++y) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += w[k] * lr.at(y, src[k]);
      out.at(y, x) = acc;
    }
  }
  return clamp01(std::move(out));
}

inline Reconstructor bicubic_reconstructor(int scale) {
  return [scale](const Image& lr) { return bicubic_columns(lr, scale); };
}

inline Reconstructor identity_reconstructor(int scale) {
  return [scale](const Image& lr) {
    Image out(lr.height, lr.width * scale);
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) out.at(y, x) = lr.at(y, x / scale);
    }
    return clamp01(std::move(out));
  };
}

inline Reconstructor checkpoint_reconstructor(const Checkpoint& c) {
  if (c.architecture == "identity") return identity_reconstructor(c.scale);
  return model_reconstructor(c.model, c.params);
}

struct NamedImage {
  std::string path;
  Image image;
};

struct EvalOptions {
  PeakMode peak = PeakMode::fixed;
  SsimMode ssim = SsimMode::windowed;
};

struct EvalRow {
  std::string path;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricsReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double seconds = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

// Width trimmed to a multiple of the scale so the degradation is defined.
inline Image trim_width(const Image& image, int scale) {
  const int w = image.width - image.width % scale;
  if (w < 1) throw DimensionError("image narrower than the scale factor");
  if (w == image.width) return image;
  Image out(image.height, w);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < w; ++x) out.at(y, x) = image.at(y, x);
  }
  return out;
}

// degrade -> reconstruct -> PSNR/SSIM against the ground truth, per image.
inline MetricsReport evaluate(const Reconstructor& reconstruct, const std::vector<NamedImage>& images, int scale,
                              const EvalOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  MetricsReport r;
  for (const auto& item : images) {
    const Image hr = trim_width(item.image, scale);
    const Image sr = reconstruct(undersample_columns(hr, scale));
    EvalRow row{item.path, psnr(sr, hr, 1.0, opt.peak), ssim(sr, hr, SSIMParams{}, opt.ssim)};
    r.rows.push_back(row);
    r.mean_psnr += row.psnr;
    r.mean_ssim += row.ssim;
  }
  if (!r.rows.empty()) {
    r.mean_psnr /= static_cast<double>(r.rows.size());
    r.mean_ssim /= static_cast<double>(r.rows.size());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.config = {{"scale", scale},
              {"peak", opt.peak == PeakMode::fixed ? "fixed" : "literal"},
              {"ssim", opt.ssim == SsimMode::windowed ? "windowed" : "global"}};
  return r;
}

inline MetricsReport evaluate(const Checkpoint& c, const std::vector<NamedImage>& images, int scale,
                              const EvalOptions& opt = {}) {
  if (c.scale != scale) {
    throw ConfigError("checkpoint was trained for scale " + std::to_string(c.scale) + ", evaluation asked for " +
                      std::to_string(scale));
  }
  MetricsReport r = evaluate(checkpoint_reconstructor(c), images, scale, opt);
  r.config["architecture"] = c.architecture;
  if (c.architecture == "haspn") r.config["model"] = model_to_json(c.model);
  return r;
}

inline void write_report_csv(const std::filesystem::path& path, const MetricsReport& r) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "path,psnr_db,ssim\n";
  for (const auto& row : r.rows) f << row.path << ',' << format_real(row.psnr) << ',' << format_real(row.ssim) << '\n';
}

struct TrainData {
  std::vector<NamedImage> train;
  std::vector<NamedImage> val;
};

// Training and validation images named by the manifest under data_root
// (manifest.tsv if present, otherwise a fresh split of every PNG).
inline TrainData load_train_data(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  const fs::path manifest = cfg.data_root / "manifest.tsv";
  m = fs::exists(manifest) ? read_manifest(manifest) : build_manifest(cfg.data_root, cfg.ratios, cfg.seed);
  TrainData d;
  auto load = [&](const std::vector<std::string>& paths, std::vector<NamedImage>& out) {
    for (const auto& p : paths) {
      Image img;
      try {
        img = load_image(cfg.data_root / p);
      } catch (const IoError& e) {
        throw DataError(e.what());
      } catch (const FormatError& e) {
        throw DataError(e.what());
      }
      if (img.height < cfg.crop || img.width < cfg.crop) {
        throw DataError(p + " is smaller than the " + std::to_string(cfg.crop) + " px crop");
      }
      out.push_back({p, std::move(img)});
    }
  };
  load(m.train, d.train);
  load(m.val, d.val);
  if (d.train.empty()) throw DataError("training split is empty");
  return d;
}

struct StepRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  LossTerms terms;
};

struct EpochRecord {
  int epoch = 0;  // 1-based count of completed epochs
  double lr = 0.0;
  double loss_alpha = 0.0;
  double loss_beta = 0.0;
  double loss_gamma = 0.0;
  double loss_total = 0.0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
  double val_ssim = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint last;
  std::vector<EpochRecord> epochs;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.hspn", epoch);
  return dir / name;
}

inline constexpr const char* kTrainLogHeader = "epoch,lr,loss_alpha,loss_beta,loss_gamma,loss_total,val_psnr,val_ssim";

inline std::string format_log_row(const EpochRecord& e) {
  return std::to_string(e.epoch) + ',' + format_real(e.lr) + ',' + format_real(e.loss_alpha) + ',' +
         format_real(e.loss_beta) + ',' + format_real(e.loss_gamma) + ',' + format_real(e.loss_total) + ',' +
         format_real(e.val_psnr) + ',' + format_real(e.val_ssim);
}

namespace detail {

// Keeps the header and the rows for epochs <= keep.
inline void rewrite_log(const std::filesystem::path& path, int keep) {
  std::vector<std::string> rows;
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= keep) rows.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kTrainLogHeader << '\n';
  for (const auto& r : rows) out << r << '\n';
}

inline nlohmann::json json_real(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double real_from_json(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<double>();
}

}  // namespace detail

// Epoch crops are seeded by (seed ^ epoch, image index) and the visiting
// order by (seed, epoch), so a resumed run replays the unbroken one.
// Validation uses fixed crops and the fused output.
inline TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainHooks& hooks = {},
                         const std::optional<Checkpoint>& resume = std::nullopt) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  const FeatureExtractor<float> phi = make_extractor<float>(cfg.extractor);

  Checkpoint state;
  state.model = cfg.model;
  state.scale = cfg.model.scale;
  state.train = train_to_json(cfg);
  double best = -std::numeric_limits<double>::infinity();
  if (resume) {
    if (resume->architecture != "haspn" || !(resume->model == cfg.model)) {
      throw CheckpointError("resume checkpoint model does not match the configured model");
    }
    state.params = resume->params;
    state.adam = resume->adam;
    state.epoch = resume->epoch;
    best = detail::real_from_json(resume->metrics, "best_val_psnr", best);
  } else {
    state.params = init_model<float>(cfg.model, cfg.seed);
    state.adam = AdamState<float>::zeros_like(state.params);
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec || !fs::is_directory(cfg.output_dir)) throw IoError("cannot create output directory " + cfg.output_dir.string());
  const fs::path log_path = cfg.output_dir / "train_log.csv";
  detail::rewrite_log(log_path, state.epoch);

  std::vector<NamedImage> val;
  for (std::size_t i = 0; i < data.val.size(); ++i) {
    val.push_back({data.val[i].path, random_crop(data.val[i].image, cfg.crop, mix_seed(cfg.seed, 0x76616c00ULL + i))});
  }

  TrainResult result;
  result.best_val_psnr = best;
  const int scale = cfg.model.scale;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const double rate = lr_at_epoch(cfg, epoch);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch))).shuffle(order.begin(), order.end());

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = rate;
    std::size_t steps = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg.batch)) {
      std::vector<SamplePair> batch;
      for (std::size_t k = pos; k < std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch)); ++k) {
        const std::size_t idx = order[k];
        const Image crop = random_crop(data.train[idx].image, cfg.crop,
                                       mix_seed(cfg.seed ^ static_cast<std::uint64_t>(epoch), idx));
        batch.push_back(make_sample_pair(crop, scale));
      }
      const LossTerms t = train_step(cfg.model, state.params, state.adam, batch, phi, cfg.loss, rate, cfg.adam);
      if (!std::isfinite(t.total)) throw StateError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
      rec.loss_alpha += t.alpha.total;
      rec.loss_beta += t.beta.total;
      rec.loss_gamma += t.gamma.total;
      rec.loss_total += t.total;
      ++steps;
      if (hooks.on_step) hooks.on_step(StepRecord{epoch, state.adam.step, rate, t});
    }
    rec.loss_alpha /= static_cast<double>(steps);
    rec.loss_beta /= static_cast<double>(steps);
    rec.loss_gamma /= static_cast<double>(steps);
    rec.loss_total /= static_cast<double>(steps);

    if (!val.empty()) {
      const MetricsReport vr = evaluate(model_reconstructor(cfg.model, state.params), val, scale);
      rec.val_psnr = vr.mean_psnr;
      rec.val_ssim = vr.mean_ssim;
    }
    // Without a validation split the latest epoch counts as the best.
    const bool improved = val.empty() || rec.val_psnr > best || !std::isfinite(best);
    if (improved && !val.empty()) best = rec.val_psnr;
    result.best_val_psnr = best;

    state.epoch = epoch + 1;
    state.metrics = {{"loss_alpha", rec.loss_alpha},
                     {"loss_beta", rec.loss_beta},
                     {"loss_gamma", rec.loss_gamma},
                     {"loss_total", rec.loss_total},
                     {"val_psnr", detail::json_real(rec.val_psnr)},
                     {"val_ssim", detail::json_real(rec.val_ssim)},
                     {"best_val_psnr", detail::json_real(best)}};
    save_checkpoint(epoch_checkpoint_path(cfg.output_dir, state.epoch), state);
    if (improved) save_checkpoint(cfg.output_dir / "best.hspn", state);
    {
      std::ofstream log(log_path, std::ios::binary | std::ios::app);
      if (!log) throw IoError("cannot append to " + log_path.string());
      log << format_log_row(rec) << '\n';
    }
    result.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  result.last = std::move(state);
  return result;
}

}  // namespace haspn
