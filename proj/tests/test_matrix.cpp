#include <catch2/catch_amalgamated.hpp>

#include "bpl/matrix.hpp"
#include "bpl/rng.hpp"
#include "oracles.hpp"

using bpl::Matrix;

TEST_CASE("matrix construction validates shape and finiteness", "[matrix]") {
    CHECK_THROWS_AS(Matrix(0, 3), bpl::DimensionError);
    CHECK_THROWS_AS(Matrix(3, -1), bpl::DimensionError);
    CHECK_THROWS_AS(Matrix::from_data(2, 2, {1.0, 2.0, 3.0}), bpl::DimensionError);
    CHECK_THROWS_AS(Matrix::from_data(1, 2, {1.0, std::nan("")}), bpl::ValidationError);
    CHECK_THROWS_AS(Matrix::from_data(1, 1, {INFINITY}), bpl::ValidationError);
    Matrix m = Matrix::from_data(2, 2, {1.0, 2.0, 3.0, 4.0});
    CHECK(m.at(1, 0) == 3.0);
}

TEST_CASE("matmul and transpose agree with hand results", "[matrix]") {
    Matrix a = Matrix::from_data(2, 3, {1, 2, 3, 4, 5, 6});
    Matrix b = Matrix::from_data(3, 2, {7, 8, 9, 10, 11, 12});
    Matrix c = bpl::matmul(a, b);
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);
    Matrix at = bpl::transpose(a);
    CHECK(at.rows == 3);
    CHECK(at.at(2, 1) == 6.0);
    CHECK_THROWS_AS(bpl::matmul(a, a), bpl::DimensionError);
}

TEST_CASE("cross_product equals X Y^T", "[matrix]") {
    bpl::Rng rng(11);
    Matrix x = oracle::random_matrix(rng, 4, 7);
    Matrix y = oracle::random_matrix(rng, 3, 7);
    Matrix direct = bpl::matmul(x, bpl::transpose(y));
    Matrix fused = bpl::cross_product(x, y);
    CHECK(bpl::max_abs_diff(direct, fused) < 1e-14);
}

TEST_CASE("accumulate_gram single sample", "[matrix]") {
    Matrix x = Matrix::from_data(2, 1, {1.0, 0.0});
    Matrix g = bpl::accumulate_gram(x);
    CHECK(g.at(0, 0) == 1.0);
    CHECK(g.at(0, 1) == 0.0);
    CHECK(g.at(1, 0) == 0.0);
    CHECK(g.at(1, 1) == 0.0);
}

TEST_CASE("accumulate_gram identity columns with signed weights", "[matrix]") {
    Matrix x = Matrix::identity(2);
    std::vector<double> w{1.0, -0.5};
    Matrix g = bpl::accumulate_gram(x, &w);
    CHECK(g.at(0, 0) == 1.0);
    CHECK(g.at(1, 1) == -0.5);
    CHECK(g.at(0, 1) == 0.0);
}

TEST_CASE("accumulate_gram matches naive double loop", "[matrix]") {
    bpl::Rng rng(42);
    Matrix x = oracle::random_matrix(rng, 4, 20);
    Matrix g = bpl::accumulate_gram(x);
    Matrix ref = oracle::naive_gram(x);
    CHECK(bpl::max_abs_diff(g, ref) < 1e-12);

    std::vector<double> w(20);
    for (auto& v : w) v = rng.gaussian();
    Matrix gw = bpl::accumulate_gram(x, &w);
    Matrix refw = oracle::naive_gram(x, &w);
    CHECK(bpl::max_abs_diff(gw, refw) < 1e-12);
}

TEST_CASE("accumulate_gram output is bitwise symmetric", "[matrix]") {
    bpl::Rng rng(7);
    Matrix x = oracle::random_matrix(rng, 6, 33);
    Matrix g = bpl::accumulate_gram(x);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) CHECK(g.at(i, j) == g.at(j, i));
    std::vector<double> bad{1.0, std::nan("")};
    Matrix two = oracle::random_matrix(rng, 2, 2);
    CHECK_THROWS_AS(bpl::accumulate_gram(two, &bad), bpl::ValidationError);
    std::vector<double> short_w{1.0};
    CHECK_THROWS_AS(bpl::accumulate_gram(two, &short_w), bpl::DimensionError);
}

TEST_CASE("gauss_solve solves random systems and flags singular ones", "[matrix]") {
    bpl::Rng rng(3);
    Matrix a = oracle::random_spd(rng, 6);
    Matrix x_true = oracle::random_matrix(rng, 6, 2);
    Matrix b = bpl::matmul(a, x_true);
    auto x = bpl::gauss_solve(a, b);
    REQUIRE(x.has_value());
    CHECK(bpl::max_abs_diff(*x, x_true) < 1e-9);

    Matrix sing = Matrix::from_data(2, 2, {1, 2, 2, 4});
    CHECK_FALSE(bpl::gauss_solve(sing, Matrix::identity(2)).has_value());
}
