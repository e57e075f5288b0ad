// Learned point-to-point distance network.
//
// Feature extractor: a per-point MLP lifts coordinates to width d, then three
// dense blocks refine them. Each block holds three convolution groups (a
// width-reducing MLP followed by a point convolution) and a transition MLP;
// group j sees the block input concatenated with the outputs of groups < j,
// and the transition sees the block input plus all three group outputs.
//
// Point convolution, for a point p with k nearest neighbours p_n (self
// excluded) carrying features f_n:
//
//   f'(p) = sum_n gamma( alpha(p_n - p) * beta(f_n) )
//
// with alpha, beta, gamma two-layer MLPs of width d and * the elementwise
// product.
//
// Regressor: query features are inverse-distance interpolated from the three
// nearest anchor points at every scale, concatenated with the query
// coordinates and the max-pooled global feature, and mapped through a
// four-layer MLP. The distance head ends in softplus so predictions are
// non-negative; the offset head emits a raw 3-vector.
#pragma once

#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/spatial_index.hpp"
#include "pcup/tensor.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <string>

namespace pcup {

enum class Activation : std::uint32_t { relu = 0, identity = 1 };
enum class Head : std::uint32_t { distance = 0, offset = 1 };
enum class RegressorInput : std::uint32_t { full = 0, local_only = 1, global_only = 2 };

inline const char* to_string(Head h) { return h == Head::distance ? "distance" : "offset"; }
inline const char* to_string(RegressorInput r) {
  switch (r) {
    case RegressorInput::full: return "full";
    case RegressorInput::local_only: return "local-only";
    case RegressorInput::global_only: return "global-only";
  }
  return "?";
}

inline Head parse_head(const std::string& s) {
  if (s == "distance") return Head::distance;
  if (s == "offset") return Head::offset;
  throw Error(ErrorKind::usage, "p2pnet", "unknown head '" + s + "' (valid: distance, offset)");
}

inline RegressorInput parse_regressor_input(const std::string& s) {
  for (auto r : {RegressorInput::full, RegressorInput::local_only, RegressorInput::global_only}) {
    if (s == to_string(r)) return r;
  }
  throw Error(ErrorKind::usage, "p2pnet", "unknown regressor input '" + s + "' (valid: full, local-only, global-only)");
}

struct NetworkConfig {
  std::size_t d = 32;
  std::size_t k = 16;
  Head head = Head::distance;
  RegressorInput regressor_input = RegressorInput::full;
  Activation kernel_activation = Activation::relu;

  std::size_t output_width() const { return head == Head::distance ? 1 : 3; }
  std::size_t regressor_width() const {
    switch (regressor_input) {
      case RegressorInput::full: return 3 + 4 * d + d;
      case RegressorInput::local_only: return 3 + 4 * d;
      case RegressorInput::global_only: return 3 + d;
    }
    return 0;
  }
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Parameter trees are templated on the leaf type so the same layout serves
// raw values (Matrix), gradients (Matrix) and tape bindings (ad::Tensor).
template <class T>
struct LinearT {
  T weight;  // in x out
  T bias;    // 1 x out
};

template <class T>
struct KernelT {
  LinearT<T> hidden;
  LinearT<T> out;
};

template <class T>
struct ConvGroupT {
  LinearT<T> reduce;
  KernelT<T> alpha, beta, gamma;
};

template <class T>
struct DenseBlockT {
  std::array<ConvGroupT<T>, 3> groups;
  LinearT<T> transition;
};

template <class T>
struct NetT {
  LinearT<T> initial;
  std::array<DenseBlockT<T>, 3> blocks;
  std::array<LinearT<T>, 4> regressor;
};

/// Visits every leaf as f(name, leaf) in a fixed order.
template <class Net, class F>
void visit(Net& net, F&& f) {
  auto lin = [&](const std::string& name, auto& l) {
    f(name + ".weight", l.weight);
    f(name + ".bias", l.bias);
  };
  auto ker = [&](const std::string& name, auto& k) {
    lin(name + ".hidden", k.hidden);
    lin(name + ".out", k.out);
  };
  lin("initial", net.initial);
  for (std::size_t b = 0; b < net.blocks.size(); ++b) {
    const std::string bn = "block" + std::to_string(b);
    for (std::size_t g = 0; g < net.blocks[b].groups.size(); ++g) {
      const std::string gn = bn + ".group" + std::to_string(g);
      lin(gn + ".reduce", net.blocks[b].groups[g].reduce);
      ker(gn + ".alpha", net.blocks[b].groups[g].alpha);
      ker(gn + ".beta", net.blocks[b].groups[g].beta);
      ker(gn + ".gamma", net.blocks[b].groups[g].gamma);
    }
    lin(bn + ".transition", net.blocks[b].transition);
  }
  for (std::size_t r = 0; r < net.regressor.size(); ++r) lin("regressor" + std::to_string(r), net.regressor[r]);
}

struct NetworkParams {
  NetworkConfig config;
  NetT<Matrix> net;

  /// Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero.
  static NetworkParams init(const NetworkConfig& cfg, std::uint64_t seed) {
    NetworkParams p = zeros(cfg);
    std::mt19937_64 rng(seed);
    visit(p.net, [&](const std::string& name, Matrix& m) {
      if (name.ends_with(".bias")) return;
      const real bound = real(1) / std::sqrt(static_cast<real>(m.rows()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<real>(u(rng));
    });
    return p;
  }

  /// All-zero tensors with the shapes implied by cfg.
  static NetworkParams zeros(const NetworkConfig& cfg) {
    const auto d = static_cast<Eigen::Index>(cfg.d);
    auto lin = [](Eigen::Index in, Eigen::Index out) { return LinearT<Matrix>{Matrix::Zero(in, out), Matrix::Zero(1, out)}; };
    auto ker = [&](Eigen::Index in) { return KernelT<Matrix>{lin(in, d), lin(d, d)}; };
    NetworkParams p;
    p.config = cfg;
    p.net.initial = lin(3, d);
    for (auto& b : p.net.blocks) {
      for (std::size_t g = 0; g < 3; ++g) {
        b.groups[g].reduce = lin(d * static_cast<Eigen::Index>(g + 1), d);
        b.groups[g].alpha = ker(3);
        b.groups[g].beta = ker(d);
        b.groups[g].gamma = ker(d);
      }
      b.transition = lin(4 * d, d);
    }
    p.net.regressor[0] = lin(static_cast<Eigen::Index>(cfg.regressor_width()), d);
    p.net.regressor[1] = lin(d, d);
    p.net.regressor[2] = lin(d, d);
    p.net.regressor[3] = lin(d, static_cast<Eigen::Index>(cfg.output_width()));
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit(const_cast<NetT<Matrix>&>(net), [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  /// Flat list of leaf pointers in visit() order.
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    visit(net, [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    visit(const_cast<NetT<Matrix>&>(net), [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (!(a.config == b.config)) return false;
    auto ta = a.tensors();
    auto tb = b.tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols()) return false;
      if (std::memcmp(ta[i]->data(), tb[i]->data(), sizeof(real) * static_cast<std::size_t>(ta[i]->size())) != 0)
        return false;
    }
    return true;
  }
};

// -- anchors and neighbourhoods ------------------------------------------------

using IndexMatrix = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// k-NN table of a cloud against itself (self excluded), flattened row-major:
/// entry i*k + j is the j-th neighbour of point i.
struct NeighborTable {
  std::size_t k = 0;
  std::shared_ptr<const std::vector<Eigen::Index>> rows;
  Matrix offsets;  // (N*k) x 3, neighbour minus centre
};

inline NeighborTable build_neighbors(const PointCloud& pts, const SpatialIndex& index, std::size_t k) {
  if (k >= pts.size()) {
    throw ValidationError("p2pnet", "k=" + std::to_string(k) + " must be smaller than the point count " +
                                        std::to_string(pts.size()));
  }
  NeighborTable t;
  t.k = k;
  auto rows = std::make_shared<std::vector<Eigen::Index>>();
  rows->reserve(pts.size() * k);
  t.offsets.resize(static_cast<Eigen::Index>(pts.size() * k), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto nbs = index.knn(pts[i], k, true);
    for (std::size_t j = 0; j < k; ++j) {
      const auto r = static_cast<Eigen::Index>(i * k + j);
      rows->push_back(static_cast<Eigen::Index>(nbs[j].index));
      t.offsets.row(r) = (pts[nbs[j].index] - pts[i]).transpose();
    }
  }
  t.rows = std::move(rows);
  return t;
}

/// The point set features are extracted from, with its index and k-NN table.
struct Anchor {
  PointCloud points;
  std::shared_ptr<const SpatialIndex> index;
  NeighborTable neighbors;

  static std::shared_ptr<const Anchor> make(PointCloud pts, std::size_t k) {
    if (pts.size() < 3) throw ValidationError("p2pnet", "anchor cloud needs at least 3 points");
    auto a = std::make_shared<Anchor>();
    a->index = std::make_shared<SpatialIndex>(pts);
    a->neighbors = build_neighbors(pts, *a->index, k);
    a->points = std::move(pts);
    return a;
  }
};

struct ExtractedFeatures {
  std::shared_ptr<const Anchor> anchor;
  std::array<Matrix, 4> locals;  // N x d each
  Matrix global;                 // 1 x d
};

/// Inverse-distance weights of each query's three nearest anchor points.
struct QueryInterpolation {
  std::shared_ptr<IndexMatrix> rows;  // M x 3
  std::shared_ptr<Matrix> weights;    // M x 3, normalized
  std::vector<bool> coincident;       // query equals an anchor point
};

inline QueryInterpolation interpolation_weights(std::span<const Point3> queries, const Anchor& anchor) {
  const auto m = static_cast<Eigen::Index>(queries.size());
  QueryInterpolation qi;
  qi.rows = std::make_shared<IndexMatrix>(m, 3);
  qi.weights = std::make_shared<Matrix>(m, 3);
  qi.coincident.assign(queries.size(), false);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto nbs = anchor.index->knn(queries[static_cast<std::size_t>(r)], 3, false);
    for (int j = 0; j < 3; ++j) (*qi.rows)(r, j) = static_cast<Eigen::Index>(nbs[static_cast<std::size_t>(j)].index);
    if (nbs[0].distance == 0) {
      qi.coincident[static_cast<std::size_t>(r)] = true;
      qi.weights->row(r) << 1, 0, 0;
      continue;
    }
    real sum = 0;
    for (int j = 0; j < 3; ++j) {
      (*qi.weights)(r, j) = 1 / nbs[static_cast<std::size_t>(j)].distance;
      sum += (*qi.weights)(r, j);
    }
    qi.weights->row(r) /= sum;
  }
  return qi;
}

// -- graph construction ----------------------------------------------------------

namespace net_detail {

inline NetT<ad::Tensor> bind(ad::Tape& tape, const NetworkParams& p, bool trainable) {
  NetT<ad::Tensor> out;
  auto src = p.tensors();
  std::size_t i = 0;
  visit(out, [&](const std::string&, ad::Tensor& t) {
    t = trainable ? tape.leaf(*src[i]) : tape.constant(*src[i]);
    ++i;
  });
  return out;
}

inline NetworkParams collect_grads(const NetworkConfig& cfg, NetT<ad::Tensor>& bound) {
  NetworkParams g = NetworkParams::zeros(cfg);
  auto dst = g.tensors();
  std::size_t i = 0;
  visit(bound, [&](const std::string&, ad::Tensor& t) {
    if (t->has_grad()) *dst[i] = t->grad;
    ++i;
  });
  return g;
}

inline ad::Tensor dense(ad::Tape& tape, const ad::Tensor& x, const LinearT<ad::Tensor>& l) {
  return ad::relu(tape, ad::linear(tape, x, l.weight, l.bias));
}

inline ad::Tensor kernel(ad::Tape& tape, const ad::Tensor& x, const KernelT<ad::Tensor>& k, Activation act) {
  ad::Tensor h = ad::linear(tape, x, k.hidden.weight, k.hidden.bias);
  if (act == Activation::relu) h = ad::relu(tape, h);
  return ad::linear(tape, h, k.out.weight, k.out.bias);
}

inline ad::Tensor p3dconv(ad::Tape& tape, const NeighborTable& nt, const ad::Tensor& feats, const ConvGroupT<ad::Tensor>& g,
                          Activation act) {
  ad::Tensor offsets = tape.constant(nt.offsets);
  ad::Tensor a = kernel(tape, offsets, g.alpha, act);
  ad::Tensor b = ad::gather_rows(tape, kernel(tape, feats, g.beta, act), nt.rows);
  ad::Tensor c = kernel(tape, ad::hadamard(tape, a, b), g.gamma, act);
  return ad::group_sum(tape, c, static_cast<Eigen::Index>(nt.k));
}

struct FeatureGraph {
  std::array<ad::Tensor, 4> locals;
  ad::Tensor global;
};

inline FeatureGraph extract(ad::Tape& tape, const NetT<ad::Tensor>& p, const NetworkConfig& cfg, const Anchor& anchor) {
  FeatureGraph fg;
  ad::Tensor x = tape.constant(to_matrix(anchor.points));
  fg.locals[0] = dense(tape, x, p.initial);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<ad::Tensor> stack{fg.locals[b]};
    for (const auto& group : p.blocks[b].groups) {
      ad::Tensor in = stack.size() == 1 ? stack.front() : ad::concat_cols(tape, stack);
      ad::Tensor reduced = dense(tape, in, group.reduce);
      stack.push_back(p3dconv(tape, anchor.neighbors, reduced, group, cfg.kernel_activation));
    }
    fg.locals[b + 1] = dense(tape, ad::concat_cols(tape, stack), p.blocks[b].transition);
  }
  fg.global = ad::col_max(tape, fg.locals[3]);
  return fg;
}

/// Regressor input rows for the given queries, in [q, l0..l3, g] order
/// restricted to the configured input kind.
inline ad::Tensor regressor_input(ad::Tape& tape, const NetworkConfig& cfg, std::span<const Point3> queries,
                                  const QueryInterpolation& qi, const std::array<ad::Tensor, 4>& locals,
                                  const ad::Tensor& global) {
  Matrix q(static_cast<Eigen::Index>(queries.size()), 3);
  for (std::size_t i = 0; i < queries.size(); ++i) q.row(static_cast<Eigen::Index>(i)) = queries[i].transpose();
  std::vector<ad::Tensor> parts{tape.constant(std::move(q))};
  if (cfg.regressor_input != RegressorInput::global_only) {
    for (const auto& l : locals) parts.push_back(ad::weighted_gather(tape, l, qi.rows, qi.weights));
  }
  if (cfg.regressor_input != RegressorInput::local_only) {
    parts.push_back(ad::broadcast_rows(tape, global, static_cast<Eigen::Index>(queries.size())));
  }
  return ad::concat_cols(tape, parts);
}

inline ad::Tensor regress(ad::Tape& tape, const NetT<ad::Tensor>& p, const NetworkConfig& cfg, const ad::Tensor& input) {
  ad::Tensor h = input;
  for (std::size_t i = 0; i < 3; ++i) h = dense(tape, h, p.regressor[i]);
  ad::Tensor out = ad::linear(tape, h, p.regressor[3].weight, p.regressor[3].bias);
  return cfg.head == Head::distance ? ad::softplus(tape, out) : out;
}

}  // namespace net_detail

// -- public operations -------------------------------------------------------------

/// Convolution kernel parameters of a single point-convolution layer.
struct ConvKernel {
  KernelT<Matrix> alpha, beta, gamma;
  Activation activation = Activation::relu;
};

/// One point convolution over `points`, outside of any network.
inline Matrix p3dconv(const PointCloud& points, const Matrix& feats, const SpatialIndex& index, const ConvKernel& kernel,
                      std::size_t k) {
  if (feats.rows() != static_cast<Eigen::Index>(points.size())) {
    throw ValidationError("p2pnet", "feature rows " + std::to_string(feats.rows()) + " != point count " +
                                        std::to_string(points.size()));
  }
  const NeighborTable nt = build_neighbors(points, index, k);
  ad::Tape tape;
  auto bind_k = [&](const KernelT<Matrix>& km) {
    return KernelT<ad::Tensor>{{tape.constant(km.hidden.weight), tape.constant(km.hidden.bias)},
                               {tape.constant(km.out.weight), tape.constant(km.out.bias)}};
  };
  ConvGroupT<ad::Tensor> g;
  g.alpha = bind_k(kernel.alpha);
  g.beta = bind_k(kernel.beta);
  g.gamma = bind_k(kernel.gamma);
  return net_detail::p3dconv(tape, nt, tape.constant(feats), g, kernel.activation)->value;
}

inline ExtractedFeatures extract_features(std::shared_ptr<const Anchor> anchor, const NetworkParams& params) {
  if (anchor->neighbors.k != params.config.k) {
    throw ValidationError("p2pnet", "anchor built for k=" + std::to_string(anchor->neighbors.k) +
                                        " but network uses k=" + std::to_string(params.config.k));
  }
  ad::Tape tape;
  auto bound = net_detail::bind(tape, params, false);
  auto fg = net_detail::extract(tape, bound, params.config, *anchor);
  ExtractedFeatures f;
  f.anchor = std::move(anchor);
  for (std::size_t s = 0; s < 4; ++s) f.locals[s] = fg.locals[s]->value;
  f.global = fg.global->value;
  return f;
}

inline ExtractedFeatures extract_features(const PointCloud& cloud, const NetworkParams& params) {
  if (cloud.size() <= params.config.k) {
    throw ValidationError("p2pnet", "need more than k=" + std::to_string(params.config.k) + " points, got " +
                                        std::to_string(cloud.size()));
  }
  return extract_features(Anchor::make(cloud, params.config.k), params);
}

/// Interpolated local features l_p^0..l_p^3 of a single query.
inline std::array<Eigen::Matrix<real, 1, Eigen::Dynamic>, 4> interpolate_features(const Point3& query,
                                                                                  const ExtractedFeatures& feats) {
  auto qi = interpolation_weights(std::span<const Point3>(&query, 1), *feats.anchor);
  std::array<Eigen::Matrix<real, 1, Eigen::Dynamic>, 4> out;
  for (std::size_t s = 0; s < 4; ++s) {
    out[s] = Eigen::Matrix<real, 1, Eigen::Dynamic>::Zero(feats.locals[s].cols());
    for (int j = 0; j < 3; ++j) out[s] += (*qi.weights)(0, j) * feats.locals[s].row((*qi.rows)(0, j));
  }
  return out;
}

/// Regressor evaluation for a batch of queries against frozen features.
/// Returns M x output_width predictions; fills d(sum of outputs)/d(query)
/// when `grad` is non-null (distance head only). When `pinned` is given, its
/// interpolation is reused instead of being recomputed from the queries, and
/// the gradient then ignores the interpolation weights.
inline Matrix forward_batch(std::span<const Point3> queries, const ExtractedFeatures& feats, const NetworkParams& params,
                            std::vector<Vec3>* grad = nullptr, const QueryInterpolation* pinned = nullptr) {
  const auto& cfg = params.config;
  QueryInterpolation own;
  if (!pinned) own = interpolation_weights(queries, *feats.anchor);
  const QueryInterpolation& qi = pinned ? *pinned : own;
  if (qi.rows->rows() != static_cast<Eigen::Index>(queries.size())) {
    throw ValidationError("p2pnet", "pinned interpolation does not match the query count");
  }

  ad::Tape tape;
  auto bound = net_detail::bind(tape, params, false);
  std::array<ad::Tensor, 4> locals;
  for (std::size_t s = 0; s < 4; ++s) locals[s] = tape.constant(feats.locals[s]);
  ad::Tensor global = tape.constant(feats.global);
  ad::Tensor input_built = net_detail::regressor_input(tape, cfg, queries, qi, locals, global);
  ad::Tensor input = grad ? tape.leaf(input_built->value) : input_built;
  ad::Tensor out = net_detail::regress(tape, bound, cfg, input);
  if (!grad) return out->value;

  if (cfg.head != Head::distance) throw ValidationError("p2pnet", "query gradients need the distance head");
  tape.backward(out, Matrix::Ones(out->value.rows(), 1));
  const Matrix& dx = input->grad;
  grad->resize(queries.size());
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const bool has_locals = cfg.regressor_input != RegressorInput::global_only;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    Vec3 g = dx.row(r).head<3>().transpose();
    if (has_locals && !pinned && !qi.coincident[i]) {
      // l = sum_j w_j l_j / sum_j w_j with w_j = 1/|q - p_j|; differentiate
      // through the normalized weights.
      real s[3];
      real raw_sum = 0;
      Vec3 dw[3];
      real raw[3];
      for (int j = 0; j < 3; ++j) {
        const auto row = (*qi.rows)(r, j);
        s[j] = 0;
        for (Eigen::Index sc = 0; sc < 4; ++sc) s[j] += dx.row(r).segment(3 + sc * d, d).dot(feats.locals[static_cast<std::size_t>(sc)].row(row));
        const Vec3 diff = queries[i] - feats.anchor->points[static_cast<std::size_t>(row)];
        const real dist = diff.norm();
        raw[j] = 1 / dist;
        raw_sum += raw[j];
        dw[j] = -diff / (dist * dist * dist);
      }
      real s_bar = 0;
      for (int j = 0; j < 3; ++j) s_bar += raw[j] / raw_sum * s[j];
      for (int j = 0; j < 3; ++j) g += (s[j] - s_bar) / raw_sum * dw[j];
    }
    (*grad)[i] = g;
  }
  return out->value;
}

/// Predicted distance at a single query.
inline real forward(const Point3& query, const ExtractedFeatures& feats, const NetworkParams& params) {
  return forward_batch(std::span<const Point3>(&query, 1), feats, params)(0, 0);
}

/// d forward / d query, including the query dependence of the interpolation weights.
inline Vec3 grad_query(const Point3& query, const ExtractedFeatures& feats, const NetworkParams& params) {
  std::vector<Vec3> g;
  forward_batch(std::span<const Point3>(&query, 1), feats, params, &g);
  return g.front();
}

enum class LossKind { l1, l2 };

struct LossAndGrad {
  real loss = 0;
  NetworkParams grads;
};

/// Loss over a query batch and its gradient w.r.t. every parameter,
/// back-propagated through the feature extractor. L1 uses mean absolute
/// error (distance head); L2 uses mean squared offset error (offset head).
inline LossAndGrad loss_and_grad(const NetworkParams& params, const Anchor& anchor, std::span<const Point3> queries,
                                 const Matrix& targets, LossKind kind = LossKind::l1) {
  if (queries.empty()) throw ValidationError("p2pnet", "empty query batch");
  if (targets.rows() != static_cast<Eigen::Index>(queries.size()) ||
      targets.cols() != static_cast<Eigen::Index>(params.config.output_width())) {
    throw ValidationError("p2pnet", "target shape does not match queries/head");
  }
  const auto& cfg = params.config;
  ad::Tape tape;
  auto bound = net_detail::bind(tape, params, true);
  auto fg = net_detail::extract(tape, bound, cfg, anchor);
  const auto qi = interpolation_weights(queries, anchor);
  ad::Tensor input = net_detail::regressor_input(tape, cfg, queries, qi, fg.locals, fg.global);
  ad::Tensor pred = net_detail::regress(tape, bound, cfg, input);
  ad::Tensor loss = kind == LossKind::l1 ? ad::mean_abs_error(tape, pred, targets) : ad::mean_squared_error(tape, pred, targets);
  tape.backward(loss);
  return {loss->value(0, 0), net_detail::collect_grads(cfg, bound)};
}

inline NetworkParams grad_params(std::span<const Point3> queries, const Matrix& targets, const Anchor& anchor,
                                 const NetworkParams& params) {
  return loss_and_grad(params, anchor, queries, targets, LossKind::l1).grads;
}

// -- fields backed by the network -------------------------------------------------

class LearnedField final : public DistanceField {
 public:
  LearnedField(std::shared_ptr<const NetworkParams> params, std::shared_ptr<const ExtractedFeatures> feats)
      : params_(std::move(params)), feats_(std::move(feats)) {
    if (params_->config.head != Head::distance) throw ValidationError("p2pnet", "LearnedField needs the distance head");
  }

  void evaluate(std::span<const Point3> queries, std::vector<real>& values, std::vector<Vec3>* gradients) const override {
    Matrix out = forward_batch(queries, *feats_, *params_, gradients, pinned_.get());
    values.assign(out.data(), out.data() + out.rows());
  }

  std::unique_ptr<DistanceField> pinned_at(std::span<const Point3> start) const override {
    auto f = std::make_unique<LearnedField>(params_, feats_);
    f->pinned_ = std::make_shared<QueryInterpolation>(interpolation_weights(start, *feats_->anchor));
    return f;
  }

  const ExtractedFeatures& features() const { return *feats_; }

 private:
  std::shared_ptr<const NetworkParams> params_;
  std::shared_ptr<const ExtractedFeatures> feats_;
  std::shared_ptr<const QueryInterpolation> pinned_;
};

/// Displacement predictor for the auto-regressive offset strategy.
class OffsetModel {
 public:
  virtual ~OffsetModel() = default;
  virtual std::vector<Vec3> predict(std::span<const Point3> queries) const = 0;
};

class LearnedOffsetModel final : public OffsetModel {
 public:
  LearnedOffsetModel(std::shared_ptr<const NetworkParams> params, std::shared_ptr<const ExtractedFeatures> feats)
      : params_(std::move(params)), feats_(std::move(feats)) {
    if (params_->config.head != Head::offset) throw ValidationError("p2pnet", "LearnedOffsetModel needs the offset head");
  }

  std::vector<Vec3> predict(std::span<const Point3> queries) const override {
    Matrix out = forward_batch(queries, *feats_, *params_);
    std::vector<Vec3> v(queries.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = out.row(static_cast<Eigen::Index>(i)).transpose();
    return v;
  }

 private:
  std::shared_ptr<const NetworkParams> params_;
  std::shared_ptr<const ExtractedFeatures> feats_;
};

// -- checkpoints -----------------------------------------------------------------------
//
// Layout (little-endian):
//   "PCUPNET\0"  u32 version  u32 d  u32 k  u32 head  u32 regressor_input
//   u32 kernel_activation  u32 tensor_count
//   per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f64
//   u64 FNV-1a checksum of every preceding byte

inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'U', 'P', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace ckpt_detail {
template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  template <class T>
  T get() {
    if (pos + sizeof(T) > buf.size()) throw ValidationError("checkpoint", "unexpected end of data");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    if (pos + n > buf.size()) throw ValidationError("checkpoint", "unexpected end of data");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};
}  // namespace ckpt_detail

inline std::string serialize_params(const NetworkParams& p) {
  using ckpt_detail::put;
  std::string buf(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.config.d));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.config.k));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.config.head));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.config.regressor_input));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.config.kernel_activation));
  std::uint32_t count = 0;
  visit(const_cast<NetT<Matrix>&>(p.net), [&](const std::string&, const Matrix&) { ++count; });
  put<std::uint32_t>(buf, count);
  visit(const_cast<NetT<Matrix>&>(p.net), [&](const std::string& name, const Matrix& m) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put<double>(buf, static_cast<double>(m.data()[i]));
  });
  put<std::uint64_t>(buf, fnv1a(buf));
  return buf;
}

/// Parses a checkpoint. When `expected` is given, every tensor shape must
/// match the network that config describes.
inline NetworkParams deserialize_params(const std::string& buf, const NetworkConfig* expected = nullptr) {
  if (buf.size() < sizeof kCheckpointMagic + 8 + 8) throw ValidationError("checkpoint", "checksum mismatch (file truncated)");
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  const std::string body = buf.substr(0, buf.size() - 8);
  if (fnv1a(body) != stored) throw ValidationError("checkpoint", "checksum mismatch (file corrupt or truncated)");

  ckpt_detail::Reader rd{body};
  if (rd.str(8) != std::string(kCheckpointMagic, 8)) throw ValidationError("checkpoint", "bad magic bytes");
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw ValidationError("checkpoint", "unsupported version " + std::to_string(version));
  NetworkConfig cfg;
  cfg.d = rd.get<std::uint32_t>();
  cfg.k = rd.get<std::uint32_t>();
  cfg.head = static_cast<Head>(rd.get<std::uint32_t>());
  cfg.regressor_input = static_cast<RegressorInput>(rd.get<std::uint32_t>());
  cfg.kernel_activation = static_cast<Activation>(rd.get<std::uint32_t>());
  const NetworkConfig& shape_cfg = expected ? *expected : cfg;
  NetworkParams p = NetworkParams::zeros(shape_cfg);
  const auto count = rd.get<std::uint32_t>();
  std::size_t i = 0;
  std::string error;
  visit(p.net, [&](const std::string& name, Matrix& m) {
    if (!error.empty()) return;
    if (i++ >= count) {
      error = "missing tensor '" + name + "'";
      return;
    }
    const std::string stored_name = rd.str(rd.get<std::uint32_t>());
    const auto rows = rd.get<std::uint32_t>();
    const auto cols = rd.get<std::uint32_t>();
    if (stored_name != name) {
      error = "expected tensor '" + name + "', found '" + stored_name + "'";
      return;
    }
    if (rows != m.rows() || cols != m.cols()) {
      error = "shape mismatch in layer '" + name + "': file has " + std::to_string(rows) + "x" + std::to_string(cols) +
              ", network expects " + std::to_string(m.rows()) + "x" + std::to_string(m.cols());
      return;
    }
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = static_cast<real>(rd.get<double>());
  });
  if (!error.empty()) throw ValidationError("checkpoint", error);
  if (i != count) throw ValidationError("checkpoint", "unexpected extra tensors");
  p.config = cfg;
  return p;
}

inline void save_params(const NetworkParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint", "cannot open '" + path + "' for writing");
  const std::string buf = serialize_params(p);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("checkpoint", "write to '" + path + "' failed");
}

inline std::string read_file_bytes(const std::string& path, const char* module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(module, "cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline NetworkParams load_params(const std::string& path) {
  return deserialize_params(read_file_bytes(path, "checkpoint"));
}

inline NetworkParams load_params(const std::string& path, const NetworkConfig& expected) {
  return deserialize_params(read_file_bytes(path, "checkpoint"), &expected);
}

}  // namespace pcup
