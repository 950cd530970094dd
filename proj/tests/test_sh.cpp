#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "msp/sh.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using msp::DirectionSet;

namespace {

constexpr double kPi = std::numbers::pi;

msp::Volume flat_volume(const std::vector<double>& channel_vals) {
  // one channel, values laid out along x
  msp::Volume v = msp::Volume::create((int)channel_vals.size(), 1, 1, 1);
  for (size_t i = 0; i < channel_vals.size(); ++i) {
    v.data[i] = (float)channel_vals[i];
  }
  return v;
}

msp::Mask ones_mask(int x, int y, int z) {
  msp::Mask m = msp::Mask::create(x, y, z);
  std::fill(m.data.begin(), m.data.end(), 1);
  return m;
}

}  // namespace

TEST_CASE("basis size follows (L+1)(L+2)/2 for even orders") {
  CHECK(msp::sh_coefficient_count(0) == 1);
  CHECK(msp::sh_coefficient_count(2) == 6);
  CHECK(msp::sh_coefficient_count(4) == 15);
  CHECK(msp::sh_coefficient_count(6) == 28);
  CHECK(msp::sh_coefficient_count(8) == 45);
  CHECK_THROWS_AS(msp::sh_coefficient_count(3), msp::value_error);
  CHECK_THROWS_AS(msp::sh_coefficient_count(-2), msp::value_error);
}

TEST_CASE("order-0 basis is the constant 1/sqrt(4*pi)") {
  DirectionSet ds = msp::fibonacci_directions(10);
  Eigen::MatrixXd B = msp::sh_basis_matrix(ds, 0);
  REQUIRE(B.rows() == 10);
  REQUIRE(B.cols() == 1);
  for (int i = 0; i < 10; ++i) {
    CHECK(B(i, 0) == doctest::Approx(0.28209479).epsilon(1e-7));
    CHECK(B(i, 0) == doctest::Approx(1.0 / std::sqrt(4.0 * kPi)));
  }
}

TEST_CASE("fibonacci directions are unit length") {
  DirectionSet ds = msp::fibonacci_directions(500);
  REQUIRE(ds.size() == 500);
  for (const auto& d : ds.dirs) {
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    CHECK(std::abs(n - 1.0) <= 1e-12);
  }
}

TEST_CASE("basis columns are orthonormal under spherical quadrature") {
  // 500 near-uniform points: 10 Gauss-Legendre rings (uniform in area)
  // of 50 azimuths each, with the matching quadrature weights
  std::vector<double> nodes, weights;
  oracle::gauss_legendre(10, nodes, weights);
  DirectionSet ds;
  std::vector<double> w;
  for (int i = 0; i < 10; ++i) {
    const double ct = nodes[i];
    const double st = std::sqrt(1.0 - ct * ct);
    for (int j = 0; j < 50; ++j) {
      const double phi = 2.0 * kPi * j / 50.0;
      ds.dirs.push_back({st * std::cos(phi), st * std::sin(phi), ct});
      w.push_back(weights[i] * 2.0 * kPi / 50.0);
    }
  }
  REQUIRE(ds.size() == 500);

  Eigen::MatrixXd B = msp::sh_basis_matrix(ds, 6);
  REQUIRE(B.cols() == 28);
  Eigen::MatrixXd G =
      B.transpose() *
      Eigen::Map<Eigen::VectorXd>(w.data(), 500).asDiagonal() * B;
  double worst = 0.0;
  for (int i = 0; i < 28; ++i) {
    for (int j = 0; j < 28; ++j) {
      worst = std::max(worst, std::abs(G(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("constant signals load only the order-0 coefficient") {
  DirectionSet ds = msp::fibonacci_directions(60);
  const double s = 2.5;
  std::vector<double> sig(60, s);
  auto c = msp::fit_sh(sig, ds, 6);
  REQUIRE(c.size() == 28);
  CHECK(std::abs(c[0] - s * std::sqrt(4.0 * kPi)) <= 1e-8);
  for (size_t j = 1; j < c.size(); ++j) CHECK(std::abs(c[j]) <= 1e-8);
}

TEST_CASE("synthesize-then-fit recovers coefficients") {
  DirectionSet ds = msp::fibonacci_directions(45);
  auto c = oracle::random_vec(28, 77);
  auto sig = msp::eval_sh(c, ds, 6);
  auto back = msp::fit_sh(sig, ds, 6);
  double worst = 0.0;
  for (int j = 0; j < 28; ++j) {
    worst = std::max(worst, oracle::rel_err(back[j], c[j]));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("eval_sh endpoint behaviors") {
  DirectionSet ds = msp::fibonacci_directions(30);
  std::vector<double> c(28, 0.0);
  auto zero = msp::eval_sh(c, ds, 6);
  for (double v : zero) CHECK(v == 0.0);
  c[0] = 3.0 * std::sqrt(4.0 * kPi);
  auto flat = msp::eval_sh(c, ds, 6);
  for (double v : flat) CHECK(std::abs(v - 3.0) <= 1e-10);
  CHECK_THROWS_AS(msp::eval_sh(std::vector<double>(27, 0.0), ds, 6),
                  msp::shape_error);
}

TEST_CASE("zero signal fits to zero coefficients") {
  DirectionSet ds = msp::fibonacci_directions(40);
  auto c = msp::fit_sh(std::vector<double>(40, 0.0), ds, 6);
  for (double v : c) CHECK(std::abs(v) <= 1e-14);
}

TEST_CASE("fit_sh is scale-equivariant") {
  DirectionSet ds = msp::fibonacci_directions(36);
  auto sig = oracle::random_vec(36, 88);
  auto c1 = msp::fit_sh(sig, ds, 6);
  std::vector<double> scaled = sig;
  for (double& v : scaled) v *= -3.75;
  auto c2 = msp::fit_sh(scaled, ds, 6);
  for (int j = 0; j < 28; ++j) {
    CHECK(oracle::rel_err(c2[j], -3.75 * c1[j]) <= 1e-10);
  }
}

TEST_CASE("fit_sh rejects deficient geometry") {
  DirectionSet few = msp::fibonacci_directions(20);
  CHECK_THROWS_AS(msp::fit_sh(std::vector<double>(20, 1.0), few, 6),
                  msp::value_error);

  DirectionSet repeated;
  repeated.dirs.assign(30, {0.0, 0.0, 1.0});
  CHECK_THROWS_AS(msp::fit_sh(std::vector<double>(30, 1.0), repeated, 6),
                  msp::value_error);

  DirectionSet nonunit = msp::fibonacci_directions(30);
  nonunit.dirs[4] = {0.5, 0.0, 0.0};
  CHECK_THROWS_AS(msp::sh_basis_matrix(nonunit, 6), msp::value_error);

  CHECK_THROWS_AS(
      msp::fit_sh(std::vector<double>(3, 0.0), msp::fibonacci_directions(30), 6),
      msp::shape_error);
}

TEST_CASE("direction files parse one unit triple per line") {
  fs::path dir = fs::temp_directory_path() / "msp_test_dirs";
  fs::remove_all(dir);
  fs::create_directories(dir);

  {
    std::ofstream os(dir / "ok.txt");
    os << "1 0 0\n\n0 1 0\n  0  0  -1 \n";
  }
  DirectionSet ds = msp::load_directions((dir / "ok.txt").string());
  REQUIRE(ds.size() == 3);
  CHECK(ds.dirs[2][2] == -1.0);

  {
    std::ofstream os(dir / "short.txt");
    os << "1 0\n";
  }
  CHECK_THROWS_AS(msp::load_directions((dir / "short.txt").string()),
                  msp::io_error);
  {
    std::ofstream os(dir / "long.txt");
    os << "1 0 0 0\n";
  }
  CHECK_THROWS_AS(msp::load_directions((dir / "long.txt").string()),
                  msp::io_error);
  {
    std::ofstream os(dir / "nonunit.txt");
    os << "0.5 0 0\n";
  }
  CHECK_THROWS_AS(msp::load_directions((dir / "nonunit.txt").string()),
                  msp::value_error);
  CHECK_THROWS_AS(msp::load_directions((dir / "absent.txt").string()),
                  msp::io_error);
}

TEST_CASE("two-value channel normalizes to plus and minus one") {
  msp::Volume v = flat_volume({1.0, 3.0});
  msp::Mask m = ones_mask(2, 1, 1);
  msp::NormStats st = msp::compute_stats(v, m);
  CHECK(st.mean[0] == doctest::Approx(2.0));
  CHECK(st.stddev[0] == doctest::Approx(1.0));  // population, not sample
  msp::Volume n = msp::normalize_channels(v, st);
  CHECK(n.data[0] == doctest::Approx(-1.f));
  CHECK(n.data[1] == doctest::Approx(1.f));
}

TEST_CASE("background voxels never influence stats") {
  msp::Volume a = flat_volume({1.0, 5.0, -2.0, 7.0});
  msp::Volume b = a;
  msp::Mask m = msp::Mask::create(4, 1, 1);
  m.set(0, 0, 0, true);
  m.set(1, 0, 0, true);
  b.data[2] = 1000.f;  // unmasked voxels differ wildly
  b.data[3] = -999.f;
  msp::NormStats sa = msp::compute_stats(a, m);
  msp::NormStats sb = msp::compute_stats(b, m);
  CHECK(sa.mean[0] == sb.mean[0]);
  CHECK(sa.stddev[0] == sb.stddev[0]);
  CHECK(sa.mean[0] == doctest::Approx(3.0));
  CHECK(sa.stddev[0] == doctest::Approx(2.0));
}

TEST_CASE("normalization is invertible and idempotent on standardized data") {
  msp::Volume v = msp::Volume::create(4, 3, 3, 5);
  auto vals = oracle::random_vec(v.data.size(), 123, -4.0, 9.0);
  for (size_t i = 0; i < vals.size(); ++i) v.data[i] = (float)vals[i];
  msp::Mask m = ones_mask(4, 3, 3);
  for (int x = 0; x < 4; ++x) m.set(x, 0, 0, false);  // leave some background

  msp::NormStats st = msp::compute_stats(v, m);
  msp::Volume n = msp::normalize_channels(v, st);

  msp::NormStats post = msp::compute_stats(n, m);
  for (int c = 0; c < 5; ++c) {
    CHECK(std::abs(post.mean[c]) <= 1e-5);
    CHECK(std::abs(post.stddev[c] - 1.0) <= 1e-4);
  }

  msp::Volume again = msp::normalize_channels(n, post);
  for (size_t i = 0; i < n.data.size(); ++i) {
    CHECK(std::abs(again.data[i] - n.data[i]) <= 1e-6 * std::max(1.f, std::abs(n.data[i])));
  }

  msp::Volume back = msp::denormalize_channels(n, st);
  for (size_t i = 0; i < v.data.size(); ++i) {
    CHECK(std::abs(back.data[i] - v.data[i]) <= 1e-5 * std::max(1.f, std::abs(v.data[i])));
  }
}

TEST_CASE("degenerate channels are rejected") {
  msp::Volume v = flat_volume({4.0, 4.0, 4.0});
  msp::Mask m = ones_mask(3, 1, 1);
  CHECK_THROWS_AS(msp::compute_stats(v, m), msp::value_error);

  msp::NormStats st;
  st.mean = {0.0};
  st.stddev = {0.0};
  CHECK_THROWS_AS(msp::normalize_channels(v, st), msp::value_error);

  msp::Mask empty = msp::Mask::create(3, 1, 1);
  CHECK_THROWS_AS(msp::compute_stats(v, empty), msp::value_error);
  CHECK_THROWS_AS(msp::compute_stats(v, ones_mask(2, 1, 1)), msp::shape_error);
}
