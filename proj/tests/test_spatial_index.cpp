#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace pcup;

namespace {

void expect_same(const std::vector<Neighbor>& got, const std::vector<oracle::Hit>& want) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].index, want[i].index) << "rank " << i;
    EXPECT_EQ(got[i].distance, want[i].distance) << "rank " << i;
  }
}

PointCloud line_cloud(std::initializer_list<real> xs) {
  std::vector<Point3> pts;
  for (real x : xs) pts.emplace_back(x, 0, 0);
  return PointCloud(std::move(pts));
}

}  // namespace

TEST(SpatialIndex, SinglePoint) {
  const SpatialIndex idx(line_cloud({5}));
  const auto nb = idx.nearest(Point3(-3, 2, 1));
  EXPECT_EQ(nb.index, 0u);
  EXPECT_EQ(nb.distance, distance(Point3(-3, 2, 1), Point3(5, 0, 0)));
}

TEST(SpatialIndex, EmptyCloudRejected) { EXPECT_THROW(SpatialIndex(PointCloud{}), EmptyInputError); }

TEST(SpatialIndex, KnnExcludeSelfExample) {
  const SpatialIndex idx(line_cloud({0, 1, 3}));
  const auto nbs = idx.knn(Point3(0, 0, 0), 2, true);
  ASSERT_EQ(nbs.size(), 2u);
  EXPECT_EQ(nbs[0].index, 1u);
  EXPECT_EQ(nbs[0].distance, 1);
  EXPECT_EQ(nbs[1].index, 2u);
  EXPECT_EQ(nbs[1].distance, 3);
}

TEST(SpatialIndex, TieGoesToLowerIndex) {
  const SpatialIndex idx(line_cloud({1, -1, 2, -2}));
  const auto nbs = idx.knn(Point3(0, 0, 0), 4);
  EXPECT_EQ(nbs[0].index, 0u);
  EXPECT_EQ(nbs[1].index, 1u);
  EXPECT_EQ(nbs[2].index, 2u);
  EXPECT_EQ(nbs[3].index, 3u);
}

TEST(SpatialIndex, KTooLargeNamesCounts) {
  const SpatialIndex idx(line_cloud({0, 1, 3}));
  try {
    idx.knn(Point3(0, 0, 0), 3, true);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("k=3"), std::string::npos);
    EXPECT_NE(msg.find("2"), std::string::npos);
  }
  EXPECT_THROW(idx.knn(Point3(0, 0, 0), 4), ValidationError);
}

TEST(SpatialIndex, NearestExample) {
  const SpatialIndex idx(line_cloud({0, 1}));
  const auto nb = idx.nearest(Point3(0.4, 0, 0));
  EXPECT_EQ(nb.index, 0u);
  EXPECT_EQ(nb.distance, real(0.4));
  EXPECT_EQ(idx.nearest(Point3(1, 0, 0)).distance, 0);
}

TEST(SpatialIndex, MatchesBruteForce2048) {
  std::mt19937_64 rng(11);
  const PointCloud c = oracle::random_cloud(2048, rng);
  const SpatialIndex idx(c);
  for (int q = 0; q < 100; ++q) {
    const Point3 p = oracle::random_point(rng, 1.2);
    expect_same(idx.knn(p, 8), oracle::knn(c, p, 8, false));
  }
}

TEST(SpatialIndex, KnnMatchesBruteForce500x50) {
  std::mt19937_64 rng(12);
  const PointCloud c = oracle::random_cloud(500, rng);
  const SpatialIndex idx(c);
  for (int q = 0; q < 50; ++q) {
    const Point3 p = oracle::random_point(rng);
    expect_same(idx.knn(p, 16), oracle::knn(c, p, 16, false));
    // self-exclusion on source points
    const Point3& s = c[static_cast<std::size_t>(q)];
    expect_same(idx.knn(s, 16, true), oracle::knn(c, s, 16, true));
  }
}

TEST(SpatialIndex, GridWithManyTiesMatchesBruteForce) {
  // integer lattice: lots of exactly equal distances
  std::vector<Point3> pts;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 6; ++y)
      for (int z = 0; z < 6; ++z) pts.emplace_back(x, y, z);
  const PointCloud c(std::move(pts));
  const SpatialIndex idx(c, 4);
  for (const Point3& q : {Point3(2.5, 2.5, 2.5), Point3(0, 0, 0), Point3(3, 2, 1), Point3(2.5, 1, 4)}) {
    expect_same(idx.knn(q, 27), oracle::knn(c, q, 27, false));
    expect_same(idx.knn(q, 20, true), oracle::knn(c, q, 20, true));
  }
}

TEST(SpatialIndex, NearestIsZeroIffQueryInSource) {
  std::mt19937_64 rng(13);
  const PointCloud c = oracle::random_cloud(300, rng);
  const SpatialIndex idx(c);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(idx.nearest(c[i]).distance, 0);
  for (int i = 0; i < 30; ++i) EXPECT_GT(idx.nearest(oracle::random_point(rng)).distance, 0);
}

TEST(SpatialIndex, NearestEqualsKnnFirst) {
  std::mt19937_64 rng(14);
  const PointCloud c = oracle::random_cloud(400, rng);
  const SpatialIndex idx(c);
  for (int i = 0; i < 50; ++i) {
    const Point3 q = oracle::random_point(rng);
    EXPECT_EQ(idx.nearest(q), idx.knn(q, 1, false).front());
  }
}

TEST(SpatialIndex, DuplicatePointsAllExcludedAsSelf) {
  const PointCloud c(std::vector<Point3>{Point3(0, 0, 0), Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0)});
  const SpatialIndex idx(c);
  const auto nbs = idx.knn(Point3(0, 0, 0), 2, true);
  EXPECT_EQ(nbs[0].index, 2u);
  EXPECT_EQ(nbs[1].index, 3u);
  EXPECT_THROW(idx.knn(Point3(0, 0, 0), 3, true), ValidationError);
}
