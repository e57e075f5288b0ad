#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace pcup;

namespace {

using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// ---- plain-loop reference network -------------------------------------------------

Row relu(Row x) { return x.cwiseMax(0.0); }

Row lin(const Row& x, const LinearT<Matrix>& l) {
  Row out = l.bias.row(0).cast<double>();
  for (Eigen::Index o = 0; o < l.weight.cols(); ++o)
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) out(o) += x(i) * double(l.weight(i, o));
  return out;
}

Row kern(const Row& x, const KernelT<Matrix>& k) { return lin(relu(lin(x, k.hidden)), k.out); }

Row cat(const std::vector<Row>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Row out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

struct RefFeatures {
  std::array<std::vector<Row>, 4> locals;
  Row global;
};

RefFeatures ref_extract(const PointCloud& pts, const NetworkParams& p) {
  const std::size_t n = pts.size(), k = p.config.k;
  std::vector<std::vector<oracle::Hit>> nb(n);
  for (std::size_t i = 0; i < n; ++i) nb[i] = oracle::knn(pts, pts[i], k, true);
  RefFeatures f;
  for (std::size_t i = 0; i < n; ++i) {
    Row x(3);
    x << pts[i].x(), pts[i].y(), pts[i].z();
    f.locals[0].push_back(relu(lin(x, p.net.initial)));
  }
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<std::vector<Row>> stack{f.locals[b]};
    for (const auto& g : p.net.blocks[b].groups) {
      std::vector<Row> reduced(n), conv(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Row> parts;
        for (const auto& s : stack) parts.push_back(s[i]);
        reduced[i] = relu(lin(cat(parts), g.reduce));
      }
      for (std::size_t i = 0; i < n; ++i) {
        Row acc = Row::Zero(static_cast<Eigen::Index>(p.config.d));
        for (const auto& h : nb[i]) {
          const Point3 d = pts[h.index] - pts[i];
          Row off(3);
          off << d.x(), d.y(), d.z();
          acc += kern(kern(off, g.alpha).cwiseProduct(kern(reduced[h.index], g.beta)), g.gamma);
        }
        conv[i] = acc;
      }
      stack.push_back(conv);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Row> parts;
      for (const auto& s : stack) parts.push_back(s[i]);
      f.locals[b + 1].push_back(relu(lin(cat(parts), p.net.blocks[b].transition)));
    }
  }
  f.global = f.locals[3][0];
  for (const auto& r : f.locals[3]) f.global = f.global.cwiseMax(r);
  return f;
}

double ref_forward(const PointCloud& pts, const RefFeatures& f, const NetworkParams& p, const Point3& q) {
  const auto h = oracle::knn(pts, q, 3, false);
  std::vector<Row> parts;
  Row qr(3);
  qr << q.x(), q.y(), q.z();
  parts.push_back(qr);
  for (std::size_t s = 0; s < 4; ++s) {
    Row acc = Row::Zero(f.locals[s][0].size());
    if (h[0].distance == 0) {
      acc = f.locals[s][h[0].index];
    } else {
      double wsum = 0;
      for (const auto& e : h) wsum += 1 / double(e.distance);
      for (const auto& e : h) acc += (1 / double(e.distance)) / wsum * f.locals[s][e.index];
    }
    parts.push_back(acc);
  }
  parts.push_back(f.global);
  Row x = cat(parts);
  for (std::size_t l = 0; l < 3; ++l) x = relu(lin(x, p.net.regressor[l]));
  const double z = lin(x, p.net.regressor[3])(0);
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// ---- helpers -------------------------------------------------------------------------

KernelT<Matrix> ones_kernel(Eigen::Index in, Eigen::Index d) {
  return {{Matrix::Ones(in, d), Matrix::Zero(1, d)}, {Matrix::Ones(d, d), Matrix::Zero(1, d)}};
}

NetworkConfig small_config(std::size_t d = 8, std::size_t k = 6) {
  NetworkConfig c;
  c.d = d;
  c.k = k;
  return c;
}

PointCloud permuted(const PointCloud& c, const std::vector<std::size_t>& perm) {
  std::vector<Point3> out;
  for (auto i : perm) out.push_back(c[i]);
  return PointCloud(std::move(out));
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "pcup_test_p2pnet";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

// ---- p3dconv ------------------------------------------------------------------------

TEST(P3DConv, HandEvaluatedD1) {
  const PointCloud pts(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0)});
  Matrix feats(2, 1);
  feats << 2, 3;
  ConvKernel k{ones_kernel(3, 1), ones_kernel(1, 1), ones_kernel(1, 1), Activation::identity};
  const Matrix out = p3dconv(pts, feats, SpatialIndex(pts), k, 1);
  EXPECT_EQ(out(0, 0), 3);
  EXPECT_EQ(out(1, 0), -2);
}

TEST(P3DConv, ZeroFeaturesGiveZeroOutput) {
  std::mt19937_64 rng(51);
  const PointCloud pts = oracle::random_cloud(20, rng);
  const NetworkParams p = NetworkParams::init(small_config(), 3);
  const auto& g = p.net.blocks[0].groups[0];
  for (Activation act : {Activation::relu, Activation::identity}) {
    ConvKernel k{g.alpha, g.beta, g.gamma, act};
    const Matrix out = p3dconv(pts, Matrix::Zero(20, 8), SpatialIndex(pts), k, 4);
    EXPECT_TRUE(out.isZero(0));
  }
}

TEST(P3DConv, PermutationPermutesRows) {
  std::mt19937_64 rng(52);
  const PointCloud pts = oracle::random_cloud(25, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix feats(25, 8);
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = u(rng);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const auto& g = p.net.blocks[1].groups[2];
  ConvKernel k{g.alpha, g.beta, g.gamma};
  const Matrix out = p3dconv(pts, feats, SpatialIndex(pts), k, 5);

  std::vector<std::size_t> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const PointCloud pp = permuted(pts, perm);
  Matrix pf(25, 8);
  for (std::size_t i = 0; i < 25; ++i) pf.row(Eigen::Index(i)) = feats.row(Eigen::Index(perm[i]));
  const Matrix pout = p3dconv(pp, pf, SpatialIndex(pp), k, 5);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_TRUE(pout.row(Eigen::Index(i)).isApprox(out.row(Eigen::Index(perm[i])), 1e-14));
  }
}

TEST(P3DConv, KMustBeSmallerThanPointCount) {
  const PointCloud pts(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0)});
  ConvKernel k{ones_kernel(3, 1), ones_kernel(1, 1), ones_kernel(1, 1)};
  EXPECT_THROW(p3dconv(pts, Matrix::Ones(2, 1), SpatialIndex(pts), k, 2), ValidationError);
  EXPECT_THROW(p3dconv(pts, Matrix::Ones(3, 1), SpatialIndex(pts), k, 1), ValidationError);
}

// ---- feature extraction -----------------------------------------------------------

TEST(ExtractFeatures, Shapes) {
  std::mt19937_64 rng(53);
  const NetworkParams p = NetworkParams::init(NetworkConfig{}, 1);
  const auto f = extract_features(oracle::random_cloud(32, rng), p);
  for (const auto& l : f.locals) {
    EXPECT_EQ(l.rows(), 32);
    EXPECT_EQ(l.cols(), 32);
  }
  EXPECT_EQ(f.global.rows(), 1);
  EXPECT_EQ(f.global.cols(), 32);
}

TEST(ExtractFeatures, GlobalIsColumnMaxOfLastScale) {
  std::mt19937_64 rng(54);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const auto f = extract_features(oracle::random_cloud(30, rng), p);
  for (Eigen::Index c = 0; c < f.global.cols(); ++c) EXPECT_EQ(f.global(0, c), f.locals[3].col(c).maxCoeff());
}

TEST(ExtractFeatures, DuplicatedPointHasIdenticalRows) {
  std::mt19937_64 rng(55);
  PointCloud c = oracle::random_cloud(30, rng);
  c.push_back(c[4]);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const auto f = extract_features(c, p);
  for (const auto& l : f.locals) EXPECT_LT((l.row(4) - l.row(30)).norm(), 1e-13 * (1 + l.row(4).norm())) << (l.row(4) - l.row(30)).norm();
}

TEST(ExtractFeatures, MatchesReferenceImplementation) {
  std::mt19937_64 rng(56);
  const PointCloud c = oracle::random_cloud(24, rng);
  const NetworkParams p = gradcheck::random_params(small_config(5, 4), rng);
  const auto f = extract_features(c, p);
  const RefFeatures r = ref_extract(c, p);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t i = 0; i < c.size(); ++i)
      EXPECT_LT((f.locals[s].row(Eigen::Index(i)).cast<double>() - r.locals[s][i]).norm(), 1e-12) << s << "," << i;
}

TEST(ExtractFeatures, PermutationEquivariance) {
  std::mt19937_64 rng(57);
  const PointCloud c = oracle::random_cloud(40, rng);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto f = extract_features(c, p);
  const auto fp = extract_features(permuted(c, perm), p);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t i = 0; i < 40; ++i)
      EXPECT_EQ(fp.locals[s].row(Eigen::Index(i)), f.locals[s].row(Eigen::Index(perm[i])));
  EXPECT_EQ(fp.global, f.global);
  for (int q = 0; q < 10; ++q) {
    const Point3 x = oracle::random_point(rng);
    EXPECT_EQ(forward(x, fp, p), forward(x, f, p));
  }
}

TEST(ExtractFeatures, TooFewPoints) {
  std::mt19937_64 rng(58);
  const NetworkParams p = NetworkParams::init(small_config(8, 6), 0);
  EXPECT_THROW(extract_features(oracle::random_cloud(6, rng), p), ValidationError);
}

// ---- feature interpolation ---------------------------------------------------------------

namespace {

ExtractedFeatures scalar_features(const PointCloud& pts, const std::vector<real>& values) {
  ExtractedFeatures f;
  f.anchor = Anchor::make(pts, 1);
  Matrix l(Eigen::Index(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) l(Eigen::Index(i), 0) = values[i];
  for (auto& s : f.locals) s = l;
  f.global = Matrix::Zero(1, 1);
  return f;
}

}  // namespace

TEST(InterpolateFeatures, LineExample) {
  const auto f = scalar_features(PointCloud(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0)}),
                                 {0, 1, 2});
  const auto l = interpolate_features(Point3(0.5, 0, 0), f);
  EXPECT_NEAR(l[0](0), 5.0 / 7.0, 1e-15);  // (0*2 + 1*2 + 2*2/3) / (14/3)
  EXPECT_NEAR(l[3](0), 0.714285714285714, 1e-14);
}

TEST(InterpolateFeatures, EquidistantIsPlainMean) {
  const real s = std::sqrt(real(3)) / 2;
  const auto f = scalar_features(
      PointCloud(std::vector<Point3>{Point3(1, 0, 0), Point3(-0.5, s, 0), Point3(-0.5, -s, 0), Point3(5, 5, 5)}),
      {3, 6, 9, 100});
  EXPECT_NEAR(interpolate_features(Point3(0, 0, 0.3), f)[1](0), 6, 1e-12);
}

TEST(InterpolateFeatures, CoincidentQueryReturnsAnchorRow) {
  const auto f = scalar_features(PointCloud(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0)}),
                                 {0.25, 1, 2});
  EXPECT_EQ(interpolate_features(Point3(0, 0, 0), f)[2](0), real(0.25));
}

// ---- forward --------------------------------------------------------------------------------

TEST(Forward, MatchesReferenceImplementation) {
  std::mt19937_64 rng(59);
  const PointCloud c = oracle::random_cloud(24, rng);
  const NetworkParams p = gradcheck::random_params(small_config(5, 4), rng);
  const auto f = extract_features(c, p);
  const RefFeatures r = ref_extract(c, p);
  for (int i = 0; i < 20; ++i) {
    const Point3 q = oracle::random_point(rng);
    EXPECT_NEAR(forward(q, f, p), ref_forward(c, r, p, q), 1e-12);
  }
  EXPECT_NEAR(forward(c[3], f, p), ref_forward(c, r, p, c[3]), 1e-12);
}

TEST(Forward, NonNegative) {
  std::mt19937_64 rng(60);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkParams p = gradcheck::random_params(small_config(), rng, 2.0);
    const auto f = extract_features(oracle::random_cloud(20, rng), p);
    const PointCloud qs = oracle::random_cloud(100, rng, 3);
    const Matrix out = forward_batch(qs.points(), f, p);
    EXPECT_GE(out.minCoeff(), 0);
  }
}

TEST(Forward, BatchEqualsIndividual) {
  std::mt19937_64 rng(61);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const auto f = extract_features(oracle::random_cloud(30, rng), p);
  const PointCloud qs = oracle::random_cloud(17, rng);
  const Matrix out = forward_batch(qs.points(), f, p);
  for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_NEAR(out(Eigen::Index(i), 0), forward(qs[i], f, p), 1e-15);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(62);
  const PointCloud c = oracle::random_cloud(30, rng);
  const NetworkParams a = NetworkParams::init(small_config(), 9), b = NetworkParams::init(small_config(), 9);
  EXPECT_TRUE(a == b);
  const Point3 q(0.1, 0.2, 0.3);
  EXPECT_EQ(forward(q, extract_features(c, a), a), forward(q, extract_features(c, b), b));
}

// ---- gradients ----------------------------------------------------------------------------

TEST(GradQuery, MatchesFiniteDifferences) {
  std::mt19937_64 rng(63);
  int checked = 0;
  while (checked < 30) {
    const PointCloud c = oracle::random_cloud(30, rng);
    const NetworkParams p = gradcheck::random_params(small_config(), rng);
    const auto f = extract_features(c, p);
    const Point3 q = oracle::random_point(rng);
    if (!gradcheck::query_is_safe(c, q)) continue;
    EXPECT_LT(gradcheck::query_grad_error(f, p, q), 1e-6);
    ++checked;
  }
}

TEST(GradQuery, ConstantNetworkHasZeroGradient) {
  std::mt19937_64 rng(64);
  NetworkParams p = gradcheck::random_params(small_config(), rng);
  for (auto& l : p.net.regressor) l.weight.setZero();
  const auto f = extract_features(oracle::random_cloud(20, rng), p);
  EXPECT_EQ(grad_query(Point3(0.1, 0.2, 0.3), f, p), Vec3::Zero());
}

TEST(GradQuery, LinearCaseIsWeightProduct) {
  // features cut off from the regressor and all regressor units active: f = softplus(c . q + const)
  std::mt19937_64 rng(65);
  NetworkParams p = NetworkParams::init(small_config(), 4);
  auto& w0 = p.net.regressor[0].weight;
  w0.bottomRows(w0.rows() - 3).setZero();
  for (auto& l : p.net.regressor) l.bias.setConstant(50);
  for (std::size_t l = 1; l < 4; ++l) p.net.regressor[l].weight = p.net.regressor[l].weight.cwiseAbs();
  const auto f = extract_features(oracle::random_cloud(20, rng), p);
  const Point3 q(0.05, -0.1, 0.2);
  Matrix chain = p.net.regressor[0].weight.topRows(3);
  for (std::size_t l = 1; l < 4; ++l) chain = chain * p.net.regressor[l].weight;
  // the pre-activation is softplus^-1 of the output
  const real out = forward(q, f, p);
  const real pre = std::log(std::expm1(out));
  const Vec3 want = chain.col(0) * ad::sigmoid(pre);
  EXPECT_LT((grad_query(q, f, p) - want).norm(), 1e-9 * want.norm());
}

TEST(GradParams, ZeroResidualsGiveZeroGradients) {
  std::mt19937_64 rng(66);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const PointCloud c = oracle::random_cloud(20, rng);
  const auto anchor = Anchor::make(c, 6);
  const PointCloud qs = oracle::random_cloud(10, rng);
  const Matrix targets = forward_batch(qs.points(), extract_features(anchor, p), p);
  const auto lg = loss_and_grad(p, *anchor, qs.points(), targets);
  EXPECT_EQ(lg.loss, 0);
  for (const auto* t : lg.grads.tensors()) EXPECT_TRUE(t->isZero(0));
}

TEST(GradParams, MatchesFiniteDifferencesOnSlice) {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 5; ++trial) {
    const NetworkParams p = gradcheck::random_params(small_config(), rng);
    const auto anchor = Anchor::make(oracle::random_cloud(24, rng), 6);
    const PointCloud qs = oracle::random_cloud(12, rng);
    const Matrix targets = Matrix::Constant(12, 1, -1);  // all residuals positive
    const auto r = gradcheck::param_grad_error(p, *anchor, qs.points(), targets, 10);
    EXPECT_EQ(r.entries, 10u);
    EXPECT_LT(r.rel_error, 1e-4);
  }
}

TEST(GradParams, DuplicatedBatchLeavesGradientUnchanged) {
  std::mt19937_64 rng(68);
  const NetworkParams p = gradcheck::random_params(small_config(), rng);
  const auto anchor = Anchor::make(oracle::random_cloud(20, rng), 6);
  const PointCloud qs = oracle::random_cloud(8, rng);
  std::uniform_real_distribution<double> u(0, 0.2);
  Matrix t(8, 1);
  for (Eigen::Index i = 0; i < 8; ++i) t(i, 0) = u(rng);
  std::vector<Point3> q2;
  Matrix t2(16, 1);
  for (std::size_t i = 0; i < 8; ++i) {
    q2.push_back(qs[i]);
    q2.push_back(qs[i]);
    t2(Eigen::Index(2 * i), 0) = t2(Eigen::Index(2 * i + 1), 0) = t(Eigen::Index(i), 0);
  }
  const auto a = loss_and_grad(p, *anchor, qs.points(), t);
  const auto b = loss_and_grad(p, *anchor, q2, t2);
  EXPECT_NEAR(a.loss, b.loss, 1e-15);
  auto ga = a.grads.tensors(), gb = b.grads.tensors();
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_TRUE(ga[i]->isApprox(*gb[i], 1e-12) || ga[i]->isZero(1e-15));
}

TEST(GradParams, TargetShapeValidated) {
  const NetworkParams p = NetworkParams::init(small_config(), 0);
  std::mt19937_64 rng(69);
  const auto anchor = Anchor::make(oracle::random_cloud(20, rng), 6);
  const PointCloud qs = oracle::random_cloud(4, rng);
  EXPECT_THROW(loss_and_grad(p, *anchor, qs.points(), Matrix::Zero(3, 1)), ValidationError);
  EXPECT_THROW(loss_and_grad(p, *anchor, {}, Matrix::Zero(0, 1)), ValidationError);
}

// ---- fields ----------------------------------------------------------------------------------

TEST(LearnedField, ValueAndGradientMatchNetwork) {
  std::mt19937_64 rng(70);
  auto p = std::make_shared<const NetworkParams>(gradcheck::random_params(small_config(), rng));
  auto f = std::make_shared<const ExtractedFeatures>(extract_features(oracle::random_cloud(30, rng), *p));
  const LearnedField field(p, f);
  const Point3 q(0.1, -0.2, 0.05);
  EXPECT_EQ(field.value(q), forward(q, *f, *p));
  EXPECT_EQ(field.gradient(q), grad_query(q, *f, *p));
}

TEST(LearnedField, HeadsAreChecked) {
  NetworkConfig oc = small_config();
  oc.head = Head::offset;
  std::mt19937_64 rng(71);
  auto po = std::make_shared<const NetworkParams>(NetworkParams::init(oc, 1));
  auto f = std::make_shared<const ExtractedFeatures>(extract_features(oracle::random_cloud(20, rng), *po));
  EXPECT_THROW(LearnedField(po, f), ValidationError);
  const LearnedOffsetModel m(po, f);
  EXPECT_EQ(m.predict(std::vector<Point3>{Point3(0, 0, 0), Point3(1, 0, 0)}).size(), 2u);
  auto pd = std::make_shared<const NetworkParams>(NetworkParams::init(small_config(), 1));
  EXPECT_THROW(LearnedOffsetModel(pd, f), ValidationError);
  std::vector<Vec3> g;
  const Point3 q(0, 0, 0);
  EXPECT_THROW(forward_batch(std::span<const Point3>(&q, 1), *f, *po, &g), ValidationError);
}

TEST(LearnedField, PinnedInterpolationUsesStartWeights) {
  std::mt19937_64 rng(72);
  auto p = std::make_shared<const NetworkParams>(gradcheck::random_params(small_config(), rng));
  auto f = std::make_shared<const ExtractedFeatures>(extract_features(oracle::random_cloud(30, rng), *p));
  const LearnedField field(p, f);
  const std::vector<Point3> start{Point3(0.1, 0.1, 0.1)};
  auto pinned = field.pinned_at(start);
  ASSERT_TRUE(pinned);
  EXPECT_EQ(pinned->value(start[0]), field.value(start[0]));
  // moving the query changes only the coordinate input, not the interpolated features
  const Point3 moved(0.1, 0.1, 0.5);
  const auto lf = interpolate_features(start[0], *f);
  EXPECT_NE(pinned->value(moved), field.value(moved));
  (void)lf;
}

// ---- checkpoints ------------------------------------------------------------------------------

TEST(Checkpoint, RoundTripBitwise) {
  const NetworkParams p = NetworkParams::init(NetworkConfig{}, 123);
  const auto path = scratch("rt.ckpt").string();
  save_params(p, path);
  EXPECT_TRUE(load_params(path) == p);
  EXPECT_EQ(serialize_params(load_params(path)), serialize_params(p));
}

TEST(Checkpoint, TruncatedFileIsChecksumError) {
  const NetworkParams p = NetworkParams::init(small_config(), 1);
  const std::string buf = serialize_params(p);
  const auto path = scratch("trunc.ckpt").string();
  {
    std::ofstream out(path, std::ios::binary);
    out.write(buf.data(), std::streamsize(buf.size() - 100));
  }
  try {
    load_params(path);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  std::string flipped = buf;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_params(flipped), ValidationError);
}

TEST(Checkpoint, DifferentWidthNamesTheLayer) {
  const auto path = scratch("d8.ckpt").string();
  save_params(NetworkParams::init(small_config(8, 6), 1), path);
  try {
    load_params(path, small_config(16, 6));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("shape mismatch"), std::string::npos);
    EXPECT_NE(msg.find("initial.weight"), std::string::npos);
  }
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(load_params("/nonexistent/x.ckpt"), IoError); }

TEST(Network, ParseHelpers) {
  EXPECT_EQ(parse_head("offset"), Head::offset);
  EXPECT_EQ(parse_regressor_input("local-only"), RegressorInput::local_only);
  EXPECT_THROW(parse_head("nope"), Error);
  NetworkConfig c;
  EXPECT_EQ(c.regressor_width(), 3u + 4 * 32 + 32);
  c.regressor_input = RegressorInput::global_only;
  EXPECT_EQ(c.regressor_width(), 35u);
}
