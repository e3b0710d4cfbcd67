// Transport layer tests: cosine cost construction, plan validation, the
// product surrogate plan, and the exact LP solver checked against an
// independent brute-force enumeration of basic feasible solutions.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "emo/rng.hpp"
#include "emo/transport.hpp"
#include "lp_enum.hpp"

using namespace emo;

namespace {

// The three-token geometry used across several hand-worked cases:
// two orthogonal axes plus their normalized bisector.
Matrix axes_and_bisector() {
    const double s = 1.0 / std::sqrt(2.0);
    return Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}, {s, s}});
}

Distribution random_dense(Rng& rng, int n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) {
        x = rng.gamma(1.0);
        sum += x;
    }
    for (double& x : p) x /= sum;
    return Distribution(p);
}

CostMatrix random_cost(Rng& rng, int n) {
    Matrix e(n, 6);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 6; ++k) e(i, k) = rng.normal();
    }
    return cost_matrix_from_embeddings(e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cost matrices
// ---------------------------------------------------------------------------

TEST_CASE("cosine cost of orthogonal and collinear embeddings", "[transport]") {
    const CostMatrix orth = cost_matrix_from_embeddings(Matrix::from_rows({{1, 0}, {0, 1}}));
    REQUIRE(orth(0, 0) == 0.0);
    REQUIRE(orth(0, 1) == 1.0);
    REQUIRE(orth(1, 0) == 1.0);

    // Cosine ignores scale, so collinear rows cost nothing to exchange.
    const CostMatrix coll = cost_matrix_from_embeddings(Matrix::from_rows({{1, 0}, {2, 0}}));
    REQUIRE(coll(0, 1) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("cosine cost of the bisector geometry", "[transport]") {
    const CostMatrix c = cost_matrix_from_embeddings(axes_and_bisector());
    const double expected = 1.0 - 1.0 / std::sqrt(2.0);  // = 0.29289321881345248
    REQUIRE(c(0, 2) == Catch::Approx(expected).epsilon(1e-14));
    REQUIRE(c(1, 2) == Catch::Approx(expected).epsilon(1e-14));
    REQUIRE(c(0, 1) == Catch::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cosine cost rejects degenerate embeddings and names the row", "[transport]") {
    const Matrix bad = Matrix::from_rows({{1.0, 0.0}, {0.0, 0.0}});
    try {
        cost_matrix_from_embeddings(bad);
        FAIL("expected InvalidInput");
    } catch (const InvalidInput& e) {
        REQUIRE(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("cosine cost is invariant to positive rescaling", "[transport]") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix e(4, 3);
        for (int i = 0; i < 4; ++i) {
            for (int k = 0; k < 3; ++k) e(i, k) = rng.normal();
        }
        const CostMatrix base = cost_matrix_from_embeddings(e);
        Matrix scaled = e;
        const double factor = rng.uniform(0.1, 10.0);
        for (int k = 0; k < 3; ++k) scaled(2, k) *= factor;
        const CostMatrix after = cost_matrix_from_embeddings(scaled);
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                REQUIRE(after(i, j) == Catch::Approx(base(i, j)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("external cost matrices are validated", "[transport]") {
    REQUIRE_THROWS_AS(CostMatrix::from_matrix(Matrix(2, 3)), DimensionError);
    Matrix neg = Matrix::from_rows({{0.0, -0.1}, {-0.1, 0.0}});
    REQUIRE_THROWS_AS(CostMatrix::from_matrix(neg), InvalidInput);
    Matrix big = Matrix::from_rows({{0.0, 2.5}, {2.5, 0.0}});
    REQUIRE_THROWS_AS(CostMatrix::from_matrix(big), InvalidInput);
    Matrix asym = Matrix::from_rows({{0.0, 1.0}, {0.5, 0.0}});
    REQUIRE_THROWS_AS(CostMatrix::from_matrix(asym), InvalidInput);
    Matrix ok = Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}});
    REQUIRE(CostMatrix::from_matrix(ok)(0, 1) == 1.0);
}

// ---------------------------------------------------------------------------
// Transport plans
// ---------------------------------------------------------------------------

TEST_CASE("transport plan enforces marginals and nonnegativity", "[transport]") {
    const Distribution q({0.5, 0.5});
    const Distribution p({0.25, 0.75});

    Matrix good = Matrix::from_rows({{0.25, 0.25}, {0.0, 0.5}});
    const TransportPlan plan(good, q, p);
    REQUIRE(plan.mass()(0, 1) == 0.25);

    Matrix wrong_rows = Matrix::from_rows({{0.5, 0.25}, {0.0, 0.25}});
    REQUIRE_THROWS_AS(TransportPlan(wrong_rows, q, p), InvalidInput);
    Matrix negative = Matrix::from_rows({{0.6, -0.1}, {-0.35, 0.85}});
    REQUIRE_THROWS_AS(TransportPlan(negative, q, p), InvalidInput);
    REQUIRE_THROWS_AS(TransportPlan(Matrix(3, 3), q, p), DimensionError);
}

TEST_CASE("surrogate plan is the outer product with exact marginals", "[transport]") {
    SECTION("one-hot times one-hot") {
        const TransportPlan t =
            surrogate_plan(Distribution::one_hot(2, 0), Distribution::one_hot(2, 1));
        REQUIRE(t.mass()(0, 1) == 1.0);
        REQUIRE(t.mass()(0, 0) == 0.0);
        REQUIRE(t.mass()(1, 0) == 0.0);
        REQUIRE(t.mass()(1, 1) == 0.0);
    }
    SECTION("uniform times uniform") {
        const TransportPlan t =
            surrogate_plan(Distribution::uniform(2), Distribution::uniform(2));
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) REQUIRE(t.mass()(i, j) == Catch::Approx(0.25));
        }
    }
    SECTION("mass concentrates in the target's column") {
        const TransportPlan t =
            surrogate_plan(Distribution({0.5, 0.5, 0.0}), Distribution::one_hot(3, 0));
        REQUIRE(t.mass()(0, 0) == 0.5);
        REQUIRE(t.mass()(1, 0) == 0.5);
        REQUIRE(t.mass()(2, 0) == 0.0);
        REQUIRE(t.mass()(0, 1) == 0.0);
        REQUIRE(t.mass()(1, 2) == 0.0);
    }
    REQUIRE_THROWS_AS(surrogate_plan(Distribution::uniform(2), Distribution::uniform(3)),
                      DimensionError);
}

TEST_CASE("plan cost sums mass times cost", "[transport]") {
    const Distribution q({0.5, 0.5});
    const CostMatrix swap = CostMatrix::from_matrix(Matrix::from_rows({{0, 1}, {1, 0}}));

    // Zero cost everywhere → zero, regardless of the plan.
    const CostMatrix zero = CostMatrix::from_matrix(Matrix(2, 2, 0.0));
    REQUIRE(plan_cost(surrogate_plan(q, q), zero) == 0.0);

    // Diagonal plan over a zero-diagonal cost moves nothing.
    Matrix diag = Matrix::from_rows({{0.5, 0.0}, {0.0, 0.5}});
    REQUIRE(plan_cost(TransportPlan(diag, q, q), swap) == 0.0);

    // Hand-workable case: 0.5*0 + 0.5*1 shipped into column 0.
    REQUIRE(plan_cost(surrogate_plan(q, Distribution::one_hot(2, 0)), swap) ==
            Catch::Approx(0.5).epsilon(1e-15));

    const CostMatrix three = CostMatrix::from_matrix(Matrix(3, 3, 0.0));
    REQUIRE_THROWS_AS(plan_cost(surrogate_plan(q, q), three), DimensionError);
}

// ---------------------------------------------------------------------------
// Exact optimal transport
// ---------------------------------------------------------------------------

TEST_CASE("exact transport worked examples", "[transport]") {
    const CostMatrix c = cost_matrix_from_embeddings(axes_and_bisector());

    SECTION("identical marginals cost nothing") {
        const Distribution p({0.2, 0.3, 0.5});
        const EmdResult r = exact_emd(p, p, c);
        REQUIRE(r.value == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("one-hot to one-hot ships everything across one pair") {
        const EmdResult r = exact_emd(Distribution::one_hot(3, 0), Distribution::one_hot(3, 1), c);
        REQUIRE(r.value == Catch::Approx(c(0, 1)).margin(1e-12));
    }
    SECTION("half-half source into a point target") {
        const EmdResult r =
            exact_emd(Distribution({0.5, 0.5, 0.0}), Distribution::one_hot(3, 0), c);
        // Half the mass is already in place, half crosses the unit gap.
        REQUIRE(r.value == Catch::Approx(0.5).margin(1e-9));
    }
    SECTION("dimension mismatches are rejected") {
        REQUIRE_THROWS_AS(exact_emd(Distribution::uniform(2), Distribution::uniform(3), c),
                          DimensionError);
        REQUIRE_THROWS_AS(
            exact_emd(Distribution::uniform(2), Distribution::uniform(2), c),
            DimensionError);
    }
}

TEST_CASE("exact transport returns a feasible plan priced at its value", "[transport]") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + rng.uniform_int(5);
        const Distribution p1 = random_dense(rng, n);
        const Distribution p2 = random_dense(rng, n);
        const CostMatrix c = random_cost(rng, n);
        const EmdResult r = exact_emd(p1, p2, c);
        // TransportPlan's constructor has already checked marginals; price it.
        REQUIRE(plan_cost(r.plan, c) == Catch::Approx(r.value).margin(1e-9));
        REQUIRE(r.value >= -1e-12);
    }
}

TEST_CASE("exact transport is symmetric for symmetric costs", "[transport]") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + rng.uniform_int(4);
        const Distribution p1 = random_dense(rng, n);
        const Distribution p2 = random_dense(rng, n);
        const CostMatrix c = random_cost(rng, n);
        REQUIRE(exact_emd(p1, p2, c).value ==
                Catch::Approx(exact_emd(p2, p1, c).value).margin(1e-9));
    }
}

TEST_CASE("exact transport matches brute-force LP enumeration", "[transport]") {
    Rng rng(31);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 2 + rng.uniform_int(3);  // 2..4: enumeration stays cheap
        const Distribution p1 = random_dense(rng, n);
        const Distribution p2 = random_dense(rng, n);
        const CostMatrix c = random_cost(rng, n);
        const double expected = testing::brute_force_emd(p1.span(), p2.span(), c.entries());
        REQUIRE(exact_emd(p1, p2, c).value == Catch::Approx(expected).margin(1e-9));
    }
}

TEST_CASE("surrogate plan never beats the exact optimum", "[transport]") {
    Rng rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + rng.uniform_int(7);
        const Distribution q = random_dense(rng, n);
        const Distribution p = random_dense(rng, n);
        const CostMatrix c = random_cost(rng, n);
        const double upper = plan_cost(surrogate_plan(q, p), c);
        const double exact = exact_emd(q, p, c).value;
        REQUIRE(upper >= exact - 1e-9);
    }
}

TEST_CASE("one-hot targets make the surrogate plan optimal", "[transport]") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + rng.uniform_int(7);
        const Distribution q = random_dense(rng, n);
        const Distribution p = Distribution::one_hot(n, rng.uniform_int(n));
        const CostMatrix c = random_cost(rng, n);
        const double upper = plan_cost(surrogate_plan(q, p), c);
        const double exact = exact_emd(q, p, c).value;
        REQUIRE(upper == Catch::Approx(exact).margin(1e-9));
    }
}

TEST_CASE("strictly positive off-diagonal costs separate distinct marginals", "[transport]") {
    const CostMatrix c = CostMatrix::from_matrix(
        Matrix::from_rows({{0.0, 0.4, 0.9}, {0.4, 0.0, 0.6}, {0.9, 0.6, 0.0}}));
    const Distribution a({0.6, 0.2, 0.2});
    const Distribution b({0.2, 0.6, 0.2});
    REQUIRE(exact_emd(a, b, c).value > 1e-6);
}
