// Training loop for the distance network: jittered queries around the
// interpolated cloud, exact-oracle targets, L1 loss and Adam.
#pragma once

#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/p2pnet.hpp"
#include "pcup/sampling.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>

namespace pcup {

struct AugmentFlags {
  bool perturb = false;
  bool rotate = false;
  bool scale = false;
  bool any() const { return perturb || rotate || scale; }
};

/// Which cloud the feature extractor sees during training and inference.
enum class NetworkInput { interpolated, low_res };

struct TrainConfig {
  real jitter_sigma = real(0.02);
  std::size_t batch_size = 32;
  std::size_t epochs = 60;
  real lr = real(1e-3);
  real lr_decay = real(0.5);
  std::size_t decay_every = 20;
  std::size_t k = 16;
  std::size_t d = 32;
  std::uint64_t rng_seed = 0;
  AugmentFlags augment;
  double rate = 4.0;
  std::size_t interp_k = 16;
  Head head = Head::distance;
  RegressorInput regressor_input = RegressorInput::full;
  NetworkInput network_input = NetworkInput::interpolated;

  void validate() const {
    if (!(jitter_sigma >= 0)) throw ValidationError("training", "jitter_sigma must be >= 0");
    if (batch_size == 0 || epochs == 0 || decay_every == 0 || k == 0 || d == 0) {
      throw ValidationError("training", "batch_size, epochs, decay_every, k and d must be positive");
    }
    if (!(lr > 0)) throw ValidationError("training", "lr must be positive");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ValidationError("training", "lr_decay must be in (0, 1]");
  }

  NetworkConfig network() const {
    NetworkConfig n;
    n.d = d;
    n.k = k;
    n.head = head;
    n.regressor_input = regressor_input;
    return n;
  }
};

/// A low-res patch and its ground-truth high-res counterpart, in a shared frame.
struct TrainSample {
  PointCloud low;
  PointCloud gt;
};

/// q_i = p_i + N(0, sigma^2) per coordinate.
inline PointCloud make_queries(const PointCloud& interpolated, real sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0)) throw ValidationError("training", "sigma must be >= 0");
  std::vector<Point3> q = interpolated.points();
  if (sigma == 0) return PointCloud(std::move(q));
  std::normal_distribution<double> n(0.0, static_cast<double>(sigma));
  for (auto& p : q) {
    for (int c = 0; c < 3; ++c) p[c] += static_cast<real>(n(rng));
  }
  return PointCloud(std::move(q));
}

/// Mean absolute error.
inline real l1_loss(std::span<const real> predicted, std::span<const real> targets) {
  if (predicted.size() != targets.size()) {
    throw ValidationError("training", "loss: " + std::to_string(predicted.size()) + " predictions vs " +
                                          std::to_string(targets.size()) + " targets");
  }
  if (predicted.empty()) throw EmptyInputError("training", "loss of an empty batch");
  real s = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += std::abs(predicted[i] - targets[i]);
  return s / static_cast<real>(predicted.size());
}

inline constexpr real kPerturbSigma = real(0.005);
inline constexpr real kScaleMin = real(0.8);
inline constexpr real kScaleMax = real(1.2);

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
inline Eigen::Matrix<real, 3, 3> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaternion<double> q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix().cast<real>();
}

/// Shared rotation and scale for both clouds; perturbation on the low-res cloud only.
inline TrainSample augment(const TrainSample& sample, const AugmentFlags& flags, std::mt19937_64& rng) {
  TrainSample out = sample;
  if (flags.rotate) {
    const auto r = random_rotation(rng);
    for (auto& p : out.low.points()) p = r * p;
    for (auto& p : out.gt.points()) p = r * p;
  }
  if (flags.scale) {
    std::uniform_real_distribution<double> u(kScaleMin, kScaleMax);
    const auto s = static_cast<real>(u(rng));
    for (auto& p : out.low.points()) p *= s;
    for (auto& p : out.gt.points()) p *= s;
  }
  if (flags.perturb) {
    std::normal_distribution<double> n(0.0, kPerturbSigma);
    for (auto& p : out.low.points()) {
      for (int c = 0; c < 3; ++c) p[c] += static_cast<real>(n(rng));
    }
  }
  return out;
}

// -- Adam ------------------------------------------------------------------------

struct AdamState {
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
  std::size_t step = 0;
  std::vector<Matrix> m, v;
};

/// Bias-corrected Adam update applied in place.
inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, real lr) {
  auto p = params.tensors();
  auto g = grads.tensors();
  if (p.size() != g.size()) throw ValidationError("training", "adam: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (auto* t : p) {
      state.m.push_back(Matrix::Zero(t->rows(), t->cols()));
      state.v.push_back(Matrix::Zero(t->rows(), t->cols()));
    }
  }
  ++state.step;
  const real bc1 = 1 - std::pow(state.beta1, static_cast<real>(state.step));
  const real bc2 = 1 - std::pow(state.beta2, static_cast<real>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->rows() != g[i]->rows() || p[i]->cols() != g[i]->cols()) {
      throw ValidationError("training", "adam: shape mismatch in tensor " + std::to_string(i));
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = state.beta1 * m + (1 - state.beta1) * *g[i];
    v = state.beta2 * v + (1 - state.beta2) * g[i]->cwiseProduct(*g[i]);
    p[i]->array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + state.eps);
  }
}

inline real learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<real>(epoch / cfg.decay_every));
}

// -- training loop ------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch;
  real mean_loss;
  real lr;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& out, const std::string& comment = {}) const {
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "epoch,mean_loss,lr\n";
    char buf[96];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, static_cast<double>(e.mean_loss),
                    static_cast<double>(e.lr));
      out << buf;
    }
  }
};

/// Everything a training step needs from one (possibly augmented) sample.
struct PreparedSample {
  PointCloud interpolated;
  std::shared_ptr<const Anchor> anchor;
  std::shared_ptr<const SpatialIndex> gt_index;
};

inline PreparedSample prepare_sample(const TrainSample& s, const TrainConfig& cfg) {
  PreparedSample p;
  InterpolationConfig ic;
  ic.k_neighbors = cfg.interp_k;
  ic.rate = cfg.rate;
  p.interpolated = midpoint_interpolate(s.low, ic);
  p.anchor = Anchor::make(cfg.network_input == NetworkInput::interpolated ? p.interpolated : s.low, cfg.k);
  p.gt_index = std::make_shared<SpatialIndex>(s.gt);
  return p;
}

/// Regression targets: oracle distance (distance head) or the offset to the
/// nearest ground-truth point (offset head).
inline Matrix make_targets(const PointCloud& queries, const SpatialIndex& gt, Head head) {
  Matrix t(static_cast<Eigen::Index>(queries.size()), head == Head::distance ? 1 : 3);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto nb = gt.nearest(queries[i]);
    const auto r = static_cast<Eigen::Index>(i);
    if (head == Head::distance) {
      t(r, 0) = nb.distance;
    } else {
      t.row(r) = (gt.source()[nb.index] - queries[i]).transpose();
    }
  }
  return t;
}

/// Optional per-epoch hook (epoch index, current params).
using EpochCallback = std::function<void(std::size_t, const NetworkParams&)>;

inline std::pair<NetworkParams, TrainLog> train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                                                const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw EmptyInputError("training", "dataset is empty");
  std::mt19937_64 rng(cfg.rng_seed);
  NetworkParams params = NetworkParams::init(cfg.network(), rng());
  AdamState adam;
  TrainLog log;
  const LossKind loss_kind = cfg.head == Head::distance ? LossKind::l1 : LossKind::l2;

  std::vector<PreparedSample> cache;
  if (!cfg.augment.any()) {
    for (const auto& s : dataset) cache.push_back(prepare_sample(s, cfg));
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const real lr = learning_rate(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    real epoch_loss = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      NetworkParams grad_sum = NetworkParams::zeros(params.config);
      auto gsum = grad_sum.tensors();
      real batch_loss = 0;
      for (std::size_t b = start; b < end; ++b) {
        PreparedSample fresh;
        const PreparedSample* ps = nullptr;
        if (cache.empty()) {
          fresh = prepare_sample(augment(dataset[order[b]], cfg.augment, rng), cfg);
          ps = &fresh;
        } else {
          ps = &cache[order[b]];
        }
        const PointCloud queries = make_queries(ps->interpolated, cfg.jitter_sigma, rng);
        const Matrix targets = make_targets(queries, *ps->gt_index, cfg.head);
        auto [loss, grads] = loss_and_grad(params, *ps->anchor, queries.points(), targets, loss_kind);
        if (!std::isfinite(loss)) {
          throw NumericError("training", "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(batch_index));
        }
        batch_loss += loss;
        auto g = grads.tensors();
        for (std::size_t i = 0; i < g.size(); ++i) *gsum[i] += *g[i];
      }
      const auto count = static_cast<real>(end - start);
      for (auto* t : gsum) *t /= count;
      adam_step(params, grad_sum, adam, lr);
      epoch_loss += batch_loss;
    }
    log.epochs.push_back({epoch, epoch_loss / static_cast<real>(dataset.size()), lr});
    if (on_epoch) on_epoch(epoch, params);
  }
  return {std::move(params), std::move(log)};
}

}  // namespace pcup
