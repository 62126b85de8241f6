#include <doctest.h>

#include <random>
#include <vector>

#include "gmpar/errors.hpp"
#include "gmpar/transform.hpp"
#include "support.hpp"

using namespace gmpar;

namespace {

HierVector example_vector() {
  Vector y(9);
  y << 21, 6, 15, 1, 2, 3, 4, 5, 6;
  return {y, 0};
}

}  // namespace

TEST_CASE("proportions divide by the root") {
  const auto a = proportions(example_vector().values);
  Vector expected(9);
  expected << 1, 2.0 / 7, 5.0 / 7, 1.0 / 21, 2.0 / 21, 3.0 / 21, 4.0 / 21, 5.0 / 21, 6.0 / 21;
  CHECK((a.a - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_FALSE(a.degenerate);

  Vector z = Vector::Zero(3);
  z[1] = 2.0;
  const auto d = proportions(z, 1e-8);
  CHECK(d.degenerate);
  CHECK(d.a[1] == doctest::Approx(2e8));
}

TEST_CASE("level sums of proportions are one for coherent input") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    TemporalHierarchy h(testing::random_level_sizes(rng, 200));
    std::vector<double> base(h.m());
    for (auto& v : base) v = std::uniform_real_distribution<double>(0.1, 5)(rng);
    const auto a = proportions(aggregate_base(base, h, 0).values);
    for (std::size_t k = 0; k < h.num_levels(); ++k) {
      const double s = a.a.segment(static_cast<Eigen::Index>(h.level_offset(k)),
                                   static_cast<Eigen::Index>(h.level_size(k)))
                           .sum();
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("path indices follow the ceiling recurrence") {
  TemporalHierarchy h({1, 2, 6});
  // 1-based leaf 4 -> level-2 ancestor 2; leaf 3 -> ancestor 1.
  CHECK(path_indices(2, 3, h) == std::vector<std::size_t>{1, 3});
  CHECK(path_indices(2, 2, h) == std::vector<std::size_t>{0, 2});
  CHECK(path_indices(0, 0, h).empty());
  CHECK(path_indices(1, 1, h) == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(path_indices(2, 6, h), IndexOutOfLevel);
  CHECK_THROWS_AS(path_indices(3, 0, h), IndexOutOfLevel);

  const auto alipay = hierarchy_preset("alipay");
  CHECK(path_indices(2, 167, alipay) == std::vector<std::size_t>{6, 167});
}

TEST_CASE("path indices agree with S containment") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    TemporalHierarchy h(testing::random_level_sizes(rng, 200));
    const Matrix& S = h.S();
    for (std::size_t k = 1; k < h.num_levels(); ++k) {
      for (std::size_t j = 0; j < h.level_size(k); ++j) {
        const auto path = path_indices(k, j, h);
        REQUIRE(path.size() == k);
        CHECK(path.back() == j);
        // Brute force: the ancestor at level i is the unique level-i node
        // whose S row covers every leaf the node covers.
        const auto node_row = S.row(static_cast<Eigen::Index>(h.node_index(k, j)));
        for (std::size_t i = 1; i <= k; ++i) {
          std::size_t found = h.level_size(i);
          for (std::size_t c = 0; c < h.level_size(i); ++c) {
            const auto row = S.row(static_cast<Eigen::Index>(h.node_index(i, c)));
            if ((row.array() >= node_row.array()).all()) found = c;
          }
          CHECK(path[i - 1] == found);
        }
      }
    }
  }
}

TEST_CASE("path proportions are padded and masked") {
  TemporalHierarchy h({1, 2, 6});
  const auto a = proportions(example_vector().values);
  const auto pp = path_proportions(a, h);
  CHECK(pp.alpha[0].size() == 0);
  CHECK(pp.alpha[1].size() == 1);
  REQUIRE(pp.alpha[6].size() == 2);
  CHECK(pp.alpha[6][0] == doctest::Approx(5.0 / 7));
  CHECK(pp.alpha[6][1] == doctest::Approx(4.0 / 21));
  const Matrix padded = pp.padded();
  const Matrix mask = pp.mask();
  CHECK(padded.rows() == 2);
  CHECK(padded.cols() == 9);
  CHECK(padded.col(0).isZero());
  CHECK(mask.col(0).isZero());
  CHECK(mask(0, 1) == 1.0);
  CHECK(mask(1, 1) == 0.0);
  CHECK(mask.col(8).sum() == 2.0);
}

TEST_CASE("scaled values use the running level maximum") {
  TemporalHierarchy h1({1});
  std::vector<HierVector> hist;
  std::vector<double> seq;
  for (double v : {2.0, 4.0, 3.0}) {
    hist.push_back({Vector::Constant(1, v), hist.size()});
    seq.push_back(scaled_values(hist, h1)[0]);
  }
  CHECK(seq == std::vector<double>{1.0, 1.0, 0.75});

  TemporalHierarchy h({1, 2, 6});
  std::vector<HierVector> one{example_vector()};
  const Vector ybar = scaled_values(one, h);
  CHECK(ybar[0] == 1.0);
  CHECK(ybar[1] == doctest::Approx(6.0 / 15));
  CHECK(ybar[8] == 1.0);
  CHECK(ybar[3] == doctest::Approx(1.0 / 6));

  std::vector<HierVector> zeros{{Vector::Zero(9), 0}, {Vector::Zero(9), 1}};
  CHECK(scaled_values(zeros, h).isZero());
  CHECK_THROWS_AS(scaled_values(std::vector<HierVector>{}, h), InsufficientHistory);
}

TEST_CASE("appending a smaller observation leaves earlier scaled values unchanged") {
  TemporalHierarchy h({1, 2, 6});
  std::mt19937_64 rng(5);
  std::vector<HierVector> hist;
  for (std::size_t t = 0; t < 6; ++t) {
    hist.push_back({h.aggregate(testing::random_vector(rng, 6, 1.0, 10.0)), t});
  }
  const Vector before = level_scales(hist, h);
  hist.push_back({h.aggregate(Vector::Constant(6, 0.5)), 6});
  CHECK(level_scales(hist, h) == before);
  std::vector<HierVector> prefix(hist.begin(), hist.end() - 1);
  CHECK(scaled_values(prefix, h) ==
        [&] {
          Vector v = hist[5].values;
          for (std::size_t k = 0; k < 3; ++k) {
            v.segment(static_cast<Eigen::Index>(h.level_offset(k)), static_cast<Eigen::Index>(h.level_size(k))) /=
                before[static_cast<Eigen::Index>(k)];
          }
          return v;
        }());
}

TEST_CASE("signed data keeps scaled magnitude at most one") {
  TemporalHierarchy h({1, 2});
  Vector y(3);
  y << -1, 2, -3;
  std::vector<HierVector> hist{{y, 0}};
  const Vector ybar = scaled_values(hist, h);
  CHECK(ybar.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(ybar[2] == doctest::Approx(-1.0));
}

TEST_CASE("child proportion groups") {
  TemporalHierarchy h({1, 2, 6});
  const auto a = proportions(example_vector().values);
  const Vector g = child_proportion_group(a, h, 1);
  CHECK(g.size() == 3);
  CHECK(g == a.a.segment(3, 3));
  CHECK(child_proportion_group(a, h, 0) == a.a.segment(1, 2));
  CHECK_THROWS_AS(child_proportion_group(a, h, 5), LeafHasNoChildren);
  CHECK_THROWS_AS(child_proportion_groups(a, h, 2), LeafHasNoChildren);

  const Matrix groups = child_proportion_groups(a, h, 1);
  CHECK(groups.rows() == 3);
  CHECK(groups.cols() == 2);
  for (Eigen::Index j = 0; j < 2; ++j) {
    CHECK(groups.col(j).sum() == doctest::Approx(a.a[1 + j]).epsilon(1e-14));
  }
}
