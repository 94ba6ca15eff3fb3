#include <catch2/catch_amalgamated.hpp>

#include "subcrit/linalg.hpp"
#include "subcrit/rng.hpp"

using namespace subcrit;

namespace {

PositiveMatrix random_comparable(RandomStream& rng, int p, double bound) {
  PositiveMatrix m(p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) m(i, j) = 1.0 + (bound - 1.0) * rng.next_double();
  return m;
}

ProjectivePoint random_direction(RandomStream& rng, int p, Flavor f = Flavor::Row) {
  std::array<double, kMaxTypes> c{};
  for (int i = 0; i < p; ++i) c[i] = 0.05 + rng.next_double();
  return ProjectivePoint::from_coords(std::span<const double>(c.data(), p), f);
}

}  // namespace

TEST_CASE("matrix literals validate and index correctly") {
  const PositiveMatrix m = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  CHECK(m.p == 2);
  CHECK(m(0, 0) == 2.0);
  CHECK(m(0, 1) == 1.0);
  CHECK_THROWS_AS(PositiveMatrix::from_rows({{1, 0}, {1, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(PositiveMatrix::from_rows({{1, -2}, {1, 1}}), std::invalid_argument);
}

TEST_CASE("entry-sum norm and minimal column sum") {
  const PositiveMatrix m = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  CHECK(l1_norm(m) == Catch::Approx(6.0));
  CHECK(col_min(m) == Catch::Approx(3.0));
  const PositiveMatrix n = PositiveMatrix::from_rows({{1, 5}, {2, 3}});
  CHECK(col_min(n) == Catch::Approx(3.0));  // columns sum to 3 and 8
  CHECK(l1_norm(n) == Catch::Approx(11.0));
}

TEST_CASE("norm bounds v(M)|x| <= |Mx| <= |M||x| hold on random inputs") {
  RandomStream rng = RandomStream::from_key(7, "norm-bounds");
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 2 + static_cast<int>(rng.next_below(4));
    const PositiveMatrix m = random_comparable(rng, p, 5.0);
    const ProjectivePoint x = random_direction(rng, p, Flavor::Column);
    const double norm = std::exp(project_act(x, m).log_norm);  // |Mx| with |x| = 1
    CHECK(norm >= col_min(m) * (1.0 - 1e-12));
    CHECK(norm <= l1_norm(m) * (1.0 + 1e-12));
    // Row flavor obeys the same bounds with the transposed column sums.
    const ProjectivePoint y = random_direction(rng, p, Flavor::Row);
    const double rnorm = std::exp(project_act(y, m).log_norm);
    CHECK(rnorm >= col_min(transpose(m)) * (1.0 - 1e-12));
    CHECK(rnorm <= l1_norm(m) * (1.0 + 1e-12));
  }
}

TEST_CASE("comparability certificate accepts and rejects") {
  const PositiveMatrix ok = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  CHECK_NOTHROW(SBMatrix::certify(ok, 2.0));
  CHECK_THROWS_AS(SBMatrix::certify(ok, 1.5), std::invalid_argument);
  const auto c = comparability_constants(2.0, 2);
  CHECK(c.delta == Catch::Approx(16.0));
  CHECK(c.log_delta == Catch::Approx(std::log(16.0)));
}

TEST_CASE("projective action: hand-computed images and log norms") {
  const PositiveMatrix m = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  const double coords[2] = {1.0 / 3.0, 2.0 / 3.0};
  const ProjectivePoint x = ProjectivePoint::from_coords(coords, Flavor::Row);
  const ProjectiveStep st = project_act(x, m);
  CHECK(st.image[0] == Catch::Approx(4.0 / 9.0).epsilon(1e-14));
  CHECK(st.image[1] == Catch::Approx(5.0 / 9.0).epsilon(1e-14));
  CHECK(st.log_norm == Catch::Approx(std::log(3.0)).epsilon(1e-14));

  const PositiveMatrix a = PositiveMatrix::from_rows({{2, 1}, {3, 4}});
  const double half[2] = {0.5, 0.5};
  const ProjectivePoint y = ProjectivePoint::from_coords(half, Flavor::Column);
  const ProjectiveStep stc = project_act(y, a);
  CHECK(stc.image[0] == Catch::Approx(0.3).epsilon(1e-14));
  CHECK(stc.image[1] == Catch::Approx(0.7).epsilon(1e-14));
  CHECK(stc.log_norm == Catch::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("projective distance: hand values and metric axioms") {
  const double ha[2] = {0.5, 0.5};
  const double hb[2] = {0.8, 0.2};
  const ProjectivePoint a = ProjectivePoint::from_coords(ha);
  const ProjectivePoint b = ProjectivePoint::from_coords(hb);
  // m(a,b) = 0.625, m(b,a) = 0.4, product 0.25, d = 0.75/1.25
  CHECK(hilbert_distance(a, b) == Catch::Approx(0.6).epsilon(1e-14));
  CHECK(hilbert_distance(a, a) == 0.0);
  CHECK(hilbert_distance(b, b) == 0.0);

  RandomStream rng = RandomStream::from_key(11, "metric-axioms");
  for (int trial = 0; trial < 500; ++trial) {
    const int p = 2 + static_cast<int>(rng.next_below(4));
    const ProjectivePoint x = random_direction(rng, p);
    const ProjectivePoint y = random_direction(rng, p);
    const ProjectivePoint z = random_direction(rng, p);
    const double dxy = hilbert_distance(x, y);
    const double dyx = hilbert_distance(y, x);
    CHECK(dxy >= 0.0);
    CHECK(dxy < 1.0);
    CHECK(dxy == Catch::Approx(dyx).margin(1e-15));                     // symmetry
    CHECK(hilbert_distance(x, x) <= 1e-15);                             // identity
    CHECK(dxy <= hilbert_distance(x, z) + hilbert_distance(z, y) + 1e-10);  // triangle
  }
}

TEST_CASE("contraction coefficient: oracle values, bound, and strict contraction") {
  const PositiveMatrix m = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  // max over index pairs of |2*2 - 1*1| / (2*2 + 1*1)
  CHECK(contraction_coeff(m) == Catch::Approx(0.6).epsilon(1e-14));
  const PositiveMatrix flat = PositiveMatrix::from_rows({{1, 1}, {1, 1}});
  CHECK(contraction_coeff(flat) == 0.0);  // rank one: image is a single point

  RandomStream rng = RandomStream::from_key(13, "contraction");
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 2 + static_cast<int>(rng.next_below(4));
    const double bound = 1.0 + 3.0 * rng.next_double();
    const PositiveMatrix mm = random_comparable(rng, p, bound);
    const double c = contraction_coeff(mm);
    const double cap = (bound * bound - 1.0) / (bound * bound + 1.0);
    CHECK(c <= cap + 1e-12);
    const ProjectivePoint x = random_direction(rng, p);
    const ProjectivePoint y = random_direction(rng, p);
    const double before = hilbert_distance(x, y);
    const double after = hilbert_distance(project_act(x, mm).image, project_act(y, mm).image);
    CHECK(after <= c * before + 1e-10);
  }
}

TEST_CASE("normalized products match direct multiplication and track order") {
  const PositiveMatrix a = PositiveMatrix::from_rows({{2, 1}, {1, 2}});
  const PositiveMatrix b = PositiveMatrix::from_rows({{1, 3}, {2, 1}});
  std::vector<PositiveMatrix> ms{a, b};
  const NormalizedProduct lr = product_chain(ms, ProductOrder::LeftToRight);
  const NormalizedProduct rl = product_chain(ms, ProductOrder::RightToLeft);
  const PositiveMatrix ab = multiply(a, b);
  const PositiveMatrix ba = multiply(b, a);
  CHECK(lr.log_l1_norm() == Catch::Approx(std::log(l1_norm(ab))).epsilon(1e-14));
  CHECK(rl.log_l1_norm() == Catch::Approx(std::log(l1_norm(ba))).epsilon(1e-14));
  // the two orders genuinely differ entrywise for this pair
  CHECK(std::abs(lr.unit(0, 0) - rl.unit(0, 0)) > 1e-6);
  // unit factor really is unit norm
  CHECK(l1_norm(lr.unit) == Catch::Approx(1.0).epsilon(1e-14));

  // Long products stay finite far beyond raw double range.
  std::vector<PositiveMatrix> many(400, PositiveMatrix::from_rows({{20, 10}, {10, 20}}));
  const NormalizedProduct big = product_chain(many, ProductOrder::LeftToRight);
  CHECK(std::isfinite(big.log_l1_norm()));
  CHECK(big.log_l1_norm() > 400.0 * std::log(30.0));  // |M^n| >= (min row sum)^n
}

TEST_CASE("cocycle path: additive sums equal the log norm of the full product") {
  RandomStream rng = RandomStream::from_key(17, "cocycle");
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 2 + static_cast<int>(rng.next_below(3));
    const int n = 1 + static_cast<int>(rng.next_below(50));
    std::vector<PositiveMatrix> ms;
    for (int k = 0; k < n; ++k) ms.push_back(random_comparable(rng, p, 8.0));
    const ProjectivePoint x = random_direction(rng, p);
    const double offset = 5.0 * rng.next_double();

    const CocyclePath path = cocycle_path(x, offset, ms);
    REQUIRE(static_cast<int>(path.sums.size()) == n + 1);
    REQUIRE(static_cast<int>(path.states.size()) == n + 1);
    CHECK(path.sums[0] == offset);

    // S_n - offset must equal log |x M_0 ... M_{n-1}| computed independently
    // from the renormalized full product.
    const NormalizedProduct prod = product_chain(ms, ProductOrder::LeftToRight);
    const ProjectiveStep direct = project_act(x, prod.unit);
    const double expected = direct.log_norm + prod.log_scale;
    CHECK(path.sums[n] - offset == Catch::Approx(expected).margin(1e-12));

    // and the terminal state must match the direction of x . (M_0 ... M_{n-1})
    for (int i = 0; i < p; ++i)
      CHECK(path.states[n][i] == Catch::Approx(direct.image[i]).margin(1e-12));
  }
}

TEST_CASE("direction constructors reject bad input") {
  const double bad[2] = {1.0, 0.0};
  CHECK_THROWS_AS(ProjectivePoint::from_coords(bad), std::invalid_argument);
  const double one[1] = {1.0};
  CHECK_THROWS_AS(ProjectivePoint::from_coords(one), std::invalid_argument);
  CHECK_THROWS_AS(ProjectivePoint::uniform(1), std::invalid_argument);
  CHECK_THROWS_AS(ProjectivePoint::uniform(kMaxTypes + 1), std::invalid_argument);
}
