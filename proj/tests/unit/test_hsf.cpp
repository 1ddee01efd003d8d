#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "adaclip/errors.hpp"
#include "adaclip/hsf.hpp"
#include "adaclip/random.hpp"

using namespace adaclip;
using namespace adaclip::hsf;
using ag::Var;

namespace {

Tensor row_mean(const Tensor& rows, const std::vector<std::size_t>& members) {
  Tensor m(Shape{rows.cols()});
  for (std::size_t r : members)
    for (std::size_t c = 0; c < rows.cols(); ++c) m[c] += rows.at(r, c);
  for (double& v : m.data()) v /= static_cast<double>(members.size());
  return m;
}

double partition_inertia(const Tensor& rows, const std::vector<int>& side) {
  double total = 0.0;
  for (int s = 0; s < 2; ++s) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < side.size(); ++i)
      if (side[i] == s) members.push_back(i);
    if (members.empty()) return std::numeric_limits<double>::infinity();
    const Tensor c = row_mean(rows, members);
    for (std::size_t r : members)
      for (std::size_t k = 0; k < rows.cols(); ++k) total += (rows.at(r, k) - c[k]) * (rows.at(r, k) - c[k]);
  }
  return total;
}

// Exhaustive search over every 2-partition.
std::vector<int> best_two_partition(const Tensor& rows) {
  const std::size_t n = rows.rows();
  std::vector<int> best, side(n);
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << (n - 1)); ++bits) {
    for (std::size_t i = 0; i < n; ++i) side[i] = i + 1 < n ? static_cast<int>((bits >> i) & 1) : 0;
    const double in = partition_inertia(rows, side);
    if (in < best_inertia) {
      best_inertia = in;
      best = side;
    }
  }
  return best;
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<int>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

Tensor vec(std::initializer_list<double> v) {
  Tensor t(Shape{v.size()});
  std::size_t i = 0;
  for (double x : v) t[i++] = x;
  return t;
}

void check_clustering_invariants(const Tensor& rows, const Clustering& c) {
  for (std::size_t a : c.assignments) CHECK(a < c.num_clusters());
  const auto members = c.members();
  for (std::size_t k = 0; k < c.num_clusters(); ++k) {
    REQUIRE_FALSE(members[k].empty());
    const Tensor m = row_mean(rows, members[k]);
    for (std::size_t d = 0; d < rows.cols(); ++d) CHECK(std::abs(m[d] - c.centroids.at(k, d)) <= 1e-9);
  }
  for (std::size_t t = 1; t < c.inertia_history.size(); ++t)
    CHECK(c.inertia_history[t] <= c.inertia_history[t - 1] + 1e-12);
  double inertia = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t d = 0; d < rows.cols(); ++d) {
      const double diff = rows.at(r, d) - c.centroids.at(c.assignments[r], d);
      inertia += diff * diff;
    }
  CHECK(c.inertia == doctest::Approx(inertia).epsilon(1e-12));
}

}  // namespace

TEST_CASE("kmeans degenerate cases") {
  const Tensor rows = testing::random_tensor({9, 4}, 1);
  const auto one = kmeans_pp(rows, 1, 0);
  std::vector<std::size_t> all(9);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Tensor mean = row_mean(rows, all);
  for (std::size_t d = 0; d < 4; ++d) CHECK(one.centroids.at(0, d) == doctest::Approx(mean[d]).epsilon(1e-12));

  const auto each = kmeans_pp(rows, 9, 0);
  CHECK(each.inertia == 0.0);
  std::vector<std::size_t> sorted = each.assignments;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("kmeans errors") {
  const Tensor rows = testing::random_tensor({5, 2}, 1);
  CHECK_THROWS_AS(kmeans_pp(rows, 6, 0), InputError);
  CHECK_THROWS_AS(kmeans_pp(rows, 0, 0), InputError);
  CHECK_THROWS_AS(kmeans_pp(rows, 2, 0, 0), InputError);
  CHECK_THROWS_AS(kmeans_pp(Tensor(Shape{0, 2}), 1, 0), InputError);
}

TEST_CASE("two separated blobs match the optimal partition") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const std::size_t n = 6 + seed % 9;
    Tensor rows(Shape{n, 3});
    for (std::size_t r = 0; r < n; ++r) {
      // Rows 0 and 1 sit in different blobs so both are populated.
      const double centre = r < 2 ? (r == 0 ? -10.0 : 10.0) : (rng.uniform() < 0.5 ? -10.0 : 10.0);
      for (std::size_t d = 0; d < 3; ++d) rows.at(r, d) = centre + rng.normal(0.0, 0.3);
    }
    const auto c = kmeans_pp(rows, 2, seed);
    CHECK(same_partition(c.assignments, best_two_partition(rows)));
  }
}

TEST_CASE("kmeans invariants on random data") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const std::size_t n = 10 + seed;
    const Tensor rows = testing::random_tensor({n, 5}, seed);
    const std::size_t k = 1 + seed % 8;
    const auto c = kmeans_pp(rows, k, seed, 1 + seed % 50);
    CHECK(c.num_clusters() == k);
    check_clustering_invariants(rows, c);
    const auto again = kmeans_pp(rows, k, seed, 1 + seed % 50);
    CHECK(again.assignments == c.assignments);
    CHECK(again.centroids == c.centroids);
  }
}

TEST_CASE("kmeans does not depend on row order") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor rows = testing::random_tensor({16, 4}, seed);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed + 99);
    for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, static_cast<std::int64_t>(i))]);
    Tensor shuffled(Shape{16, 4});
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t d = 0; d < 4; ++d) shuffled.at(i, d) = rows.at(perm[i], d);
    const auto a = kmeans_pp(rows, 4, seed);
    const auto b = kmeans_pp(shuffled, 4, seed);
    for (std::size_t i = 0; i < 16; ++i) CHECK(b.assignments[i] == a.assignments[perm[i]]);
    CHECK(a.inertia == doctest::Approx(b.inertia).epsilon(1e-12));
  }
}

TEST_CASE("cluster_scores examples") {
  const Tensor rows = testing::random_tensor({8, 3}, 4);
  const auto c = kmeans_pp(rows, 3, 0);
  const Tensor uniform = cluster_scores(c, Tensor(Shape{8}, 0.3));
  for (double v : uniform.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));

  Clustering manual;
  manual.assignments = {0, 0, 1};
  manual.centroids = Tensor(Shape{2, 1});
  const Tensor s = cluster_scores(manual, vec({0.2, 0.4, 0.9}));
  CHECK(s[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(s[1] == 0.9);

  Clustering relabeled = manual;
  relabeled.assignments = {1, 1, 0};
  const Tensor r = cluster_scores(relabeled, vec({0.2, 0.4, 0.9}));
  CHECK(r[1] == s[0]);
  CHECK(r[0] == s[1]);

  CHECK_THROWS_AS(cluster_scores(c, Tensor(Shape{7})), UsageError);
}

TEST_CASE("select_cluster breaks ties toward the lowest id") {
  CHECK(select_cluster(vec({0.2, 0.7, 0.7})) == 1);
  CHECK(select_cluster(vec({0.5, 0.5, 0.5})) == 0);
  CHECK(select_cluster(vec({0.1, 0.2, 0.9})) == 2);
  CHECK_THROWS_AS(select_cluster(Tensor(Shape{0})), UsageError);
}

TEST_CASE("semantic_embedding examples") {
  auto proj = localization::ProjectionLayer::initialize("p", 4, 3, 7);
  const Tensor global = testing::random_tensor({3}, 8);
  const Tensor embeds = testing::random_tensor({9, 4}, 9);
  const Tensor scores = testing::uniform_tensor({9}, 10);

  SUBCASE("single cluster adds the projected patch mean") {
    HsfConfig cfg;
    cfg.k = 1;
    const Tensor e2 = testing::random_tensor({9, 4}, 11);
    const Tensor out = semantic_embedding({{Var::constant(embeds), scores, &proj}, {Var::constant(e2), scores, &proj}},
                                          Var::constant(global), cfg)
                           .value();
    std::vector<std::size_t> all(9);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Tensor p1 = localization::project_vector(Var::constant(row_mean(embeds, all)), proj).value();
    const Tensor p2 = localization::project_vector(Var::constant(row_mean(e2, all)), proj).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(global[i] + p1[i] + p2[i]).epsilon(1e-12));
  }
  SUBCASE("identical patches") {
    Tensor same(Shape{9, 4});
    const Tensor v = vec({0.1, -0.2, 0.3, 0.4});
    for (std::size_t r = 0; r < 9; ++r)
      for (std::size_t d = 0; d < 4; ++d) same.at(r, d) = v[d];
    HsfConfig cfg;
    cfg.k = 3;
    const Tensor out = semantic_embedding({{Var::constant(same), scores, &proj}}, Var::constant(global), cfg).value();
    const Tensor pv = localization::project_vector(Var::constant(v), proj).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(global[i] + pv[i]).epsilon(1e-12));
  }
  SUBCASE("zero projection leaves the global embedding") {
    proj.weight.value = Tensor(proj.weight.value.shape());
    proj.bias.value = Tensor(proj.bias.value.shape());
    HsfConfig cfg;
    cfg.k = 4;
    const Tensor out = semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg).value();
    CHECK(out == global);
  }
  SUBCASE("the top cluster is fused") {
    HsfConfig cfg;
    cfg.k = 3;
    const auto c = kmeans_pp(embeds, 3, cfg.seed);
    const std::size_t best = select_cluster(cluster_scores(c, scores));
    const Tensor centroid = row_mean(embeds, c.members()[best]);
    const Tensor expected = localization::project_vector(Var::constant(centroid), proj).value();
    const Tensor out = semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(global[i] + expected[i]).epsilon(1e-12));
  }
  SUBCASE("equal scores pick cluster zero") {
    HsfConfig cfg;
    cfg.k = 3;
    const Tensor flat(Shape{9}, 0.4);
    const auto c = kmeans_pp(embeds, 3, cfg.seed);
    const Tensor centroid = row_mean(embeds, c.members()[0]);
    const Tensor expected = localization::project_vector(Var::constant(centroid), proj).value();
    const Tensor out = semantic_embedding({{Var::constant(embeds), flat, &proj}}, Var::constant(global), cfg).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(global[i] + expected[i]).epsilon(1e-12));
  }
  SUBCASE("K is clamped to the patch count") {
    HsfConfig cfg;
    cfg.k = 50;
    CHECK_NOTHROW(semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg));
  }
  SUBCASE("legacy variant averages the top-k centroids") {
    HsfConfig cfg;
    cfg.variant = Variant::kLegacy;
    cfg.legacy_topk = 9;
    cfg.legacy_clusters = 1;
    const Tensor out = semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg).value();
    std::vector<std::size_t> all(9);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const Tensor p = localization::project_vector(Var::constant(row_mean(embeds, all)), proj).value();
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(global[i] + p[i]).epsilon(1e-12));
  }
  SUBCASE("errors") {
    HsfConfig cfg;
    CHECK_THROWS_AS(semantic_embedding({}, Var::constant(global), cfg), UsageError);
    CHECK_THROWS_AS(semantic_embedding({{Var::constant(embeds), scores, nullptr}}, Var::constant(global), cfg),
                    UsageError);
    CHECK_THROWS_AS(semantic_embedding({{Var::constant(embeds), Tensor(Shape{8}), &proj}}, Var::constant(global), cfg),
                    UsageError);
  }
}

TEST_CASE("semantic_embedding is invariant to patch order") {
  auto proj = localization::ProjectionLayer::initialize("p", 4, 3, 7);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Tensor global = testing::random_tensor({3}, seed);
    const Tensor embeds = testing::random_tensor({16, 4}, seed + 50);
    const Tensor scores = testing::uniform_tensor({16}, seed + 60);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::reverse(perm.begin(), perm.begin() + static_cast<long>(seed % 16 + 1));
    Tensor pe(Shape{16, 4}), ps(Shape{16});
    for (std::size_t i = 0; i < 16; ++i) {
      ps[i] = scores[perm[i]];
      for (std::size_t d = 0; d < 4; ++d) pe.at(i, d) = embeds.at(perm[i], d);
    }
    HsfConfig cfg;
    cfg.k = 5;
    cfg.seed = seed;
    const Tensor a = semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg).value();
    const Tensor b = semantic_embedding({{Var::constant(pe), ps, &proj}}, Var::constant(global), cfg).value();
    const Tensor again =
        semantic_embedding({{Var::constant(embeds), scores, &proj}}, Var::constant(global), cfg).value();
    CHECK(a == again);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("image_score examples") {
  const Var ta = Var::constant(vec({1.0, 0.0}));
  const Var tn = Var::constant(vec({-1.0, 0.0}));
  CHECK(image_score(Var::constant(vec({1.0, 0.0})), tn, ta).value()[0] == doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(image_score(Var::constant(vec({0.0, 2.0})), tn, ta).value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Var f = Var::constant(testing::random_tensor({5}, seed));
    const Var a = Var::constant(testing::random_tensor({5}, seed + 100));
    const Var n = Var::constant(testing::random_tensor({5}, seed + 200));
    const double s = image_score(f, n, a).value()[0];
    const double w = image_score(f, a, n).value()[0];
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    CHECK(std::abs(s + w - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(image_score(Var::constant(Tensor(Shape{2})), tn, ta), DomainError);
}

TEST_CASE("max_score_baseline examples") {
  CHECK(max_score_baseline(Tensor(Shape{4, 4}, 0.4)) == 0.4);
  Tensor m(Shape{5, 5}, 0.1);
  m.at(3, 1) = 0.9;
  CHECK(max_score_baseline(m) == 0.9);
  Tensor t = m;
  std::reverse(t.data().begin(), t.data().end());
  CHECK(max_score_baseline(t) == 0.9);
  CHECK_THROWS_AS(max_score_baseline(Tensor(Shape{0})), UsageError);
}
