#include "msp/sh.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace msp {

namespace {

constexpr double kPi = std::numbers::pi;

void check_unit(const DirectionSet& dirs) {
  for (size_t i = 0; i < dirs.dirs.size(); ++i) {
    const auto& d = dirs.dirs[i];
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (std::abs(n - 1.0) > 1e-6) {
      throw value_error("direction " + std::to_string(i) +
                        " is not unit length (|d| = " + std::to_string(n) +
                        ")");
    }
  }
}

// Associated Legendre values P_l^m(x) for all even l in [0, L] at fixed m,
// without the Condon-Shortley phase. out[l] is valid for l >= m.
void legendre_even(int L, int m, double x, std::vector<double>& out) {
  // P_m^m = (2m-1)!! * (1-x^2)^(m/2), then upward recurrence in l
  double pmm = 1.0;
  if (m > 0) {
    const double somx2 = std::sqrt(std::max(0.0, 1.0 - x * x));
    double fact = 1.0;
    for (int i = 0; i < m; ++i) {
      pmm *= fact * somx2;
      fact += 2.0;
    }
  }
  std::vector<double> p(static_cast<size_t>(L) + 1, 0.0);
  p[m] = pmm;
  if (m + 1 <= L) p[m + 1] = x * (2.0 * m + 1.0) * pmm;
  for (int l = m + 2; l <= L; ++l) {
    p[l] = (x * (2.0 * l - 1.0) * p[l - 1] - (l + m - 1.0) * p[l - 2]) /
           (l - m);
  }
  out = std::move(p);
}

double norm_factor(int l, int m) {
  double ratio = 1.0;  // (l-m)! / (l+m)!
  for (int i = l - m + 1; i <= l + m; ++i) ratio /= i;
  return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
}

}  // namespace

DirectionSet load_directions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error(path + ": cannot open for reading");
  DirectionSet ds;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x)) continue;  // blank line
    if (!(ls >> y >> z)) {
      throw io_error(path + ":" + std::to_string(lineno) +
                     ": expected three numbers per line");
    }
    double extra;
    if (ls >> extra) {
      throw io_error(path + ":" + std::to_string(lineno) +
                     ": expected three numbers per line");
    }
    ds.dirs.push_back({x, y, z});
  }
  check_unit(ds);
  return ds;
}

DirectionSet fibonacci_directions(int n) {
  if (n < 1) throw value_error("direction count must be positive");
  DirectionSet ds;
  ds.dirs.reserve(static_cast<size_t>(n));
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * kPi * i / golden;
    ds.dirs.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  return ds;
}

int sh_coefficient_count(int L) {
  if (L < 0 || L % 2 != 0) {
    throw value_error("SH order must be even and non-negative");
  }
  return (L + 1) * (L + 2) / 2;
}

Eigen::MatrixXd sh_basis_matrix(const DirectionSet& dirs, int L) {
  const int K = sh_coefficient_count(L);
  if (dirs.size() < 1) throw value_error("empty direction set");
  check_unit(dirs);

  Eigen::MatrixXd B(dirs.size(), K);
  std::vector<double> p;
  for (int i = 0; i < dirs.size(); ++i) {
    const auto& d = dirs.dirs[i];
    const double ct = d[2];  // cos(theta)
    const double phi = std::atan2(d[1], d[0]);
    int col = 0;
    for (int l = 0; l <= L; l += 2) {
      for (int m = -l; m <= l; ++m) {
        const int am = std::abs(m);
        legendre_even(l, am, ct, p);
        const double base = norm_factor(l, am) * p[l];
        double v;
        if (m < 0) {
          v = std::sqrt(2.0) * base * std::sin(am * phi);
        } else if (m == 0) {
          v = base;
        } else {
          v = std::sqrt(2.0) * base * std::cos(m * phi);
        }
        B(i, col++) = v;
      }
    }
  }
  return B;
}

std::vector<double> fit_sh(const std::vector<double>& signals,
                           const DirectionSet& dirs, int L) {
  const int K = sh_coefficient_count(L);
  const int n = dirs.size();
  if (static_cast<int>(signals.size()) != n) {
    throw shape_error("signal count does not match direction count");
  }
  if (n < K) {
    throw value_error("need at least " + std::to_string(K) +
                      " directions to fit order " + std::to_string(L) +
                      ", got " + std::to_string(n));
  }
  const Eigen::MatrixXd B = sh_basis_matrix(dirs, L);
  const Eigen::MatrixXd N = B.transpose() * B;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(N);
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(dmax > 0.0) ||
      d.cwiseAbs().minCoeff() < 1e-10 * dmax) {
    throw value_error("direction set is rank-deficient for SH order " +
                      std::to_string(L));
  }
  Eigen::Map<const Eigen::VectorXd> s(signals.data(), n);
  Eigen::VectorXd c = ldlt.solve(B.transpose() * s);
  return std::vector<double>(c.data(), c.data() + K);
}

std::vector<double> eval_sh(const std::vector<double>& coeffs,
                            const DirectionSet& dirs, int L) {
  const int K = sh_coefficient_count(L);
  if (static_cast<int>(coeffs.size()) != K) {
    throw shape_error("coefficient count " + std::to_string(coeffs.size()) +
                      " does not match order " + std::to_string(L));
  }
  const Eigen::MatrixXd B = sh_basis_matrix(dirs, L);
  Eigen::Map<const Eigen::VectorXd> c(coeffs.data(), K);
  Eigen::VectorXd s = B * c;
  return std::vector<double>(s.data(), s.data() + dirs.size());
}

NormStats compute_stats(const Volume& v, const Mask& mask) {
  if (mask.x != v.x || mask.y != v.y || mask.z != v.z) {
    throw shape_error("mask grid does not match volume grid");
  }
  const int64_t m = mask.count();
  if (m == 0) throw value_error("mask selects no voxels");

  NormStats st;
  st.mean.assign(static_cast<size_t>(v.c), 0.0);
  st.stddev.assign(static_cast<size_t>(v.c), 0.0);
  for (int x = 0; x < v.x; ++x) {
    for (int y = 0; y < v.y; ++y) {
      for (int z = 0; z < v.z; ++z) {
        if (!mask.at(x, y, z)) continue;
        const float* vox = v.data.data() + v.index(x, y, z, 0);
        for (int c = 0; c < v.c; ++c) st.mean[c] += vox[c];
      }
    }
  }
  for (double& s : st.mean) s /= static_cast<double>(m);
  for (int x = 0; x < v.x; ++x) {
    for (int y = 0; y < v.y; ++y) {
      for (int z = 0; z < v.z; ++z) {
        if (!mask.at(x, y, z)) continue;
        const float* vox = v.data.data() + v.index(x, y, z, 0);
        for (int c = 0; c < v.c; ++c) {
          const double d = vox[c] - st.mean[c];
          st.stddev[c] += d * d;
        }
      }
    }
  }
  for (size_t c = 0; c < st.stddev.size(); ++c) {
    st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(m));
    if (!(st.stddev[c] > 0.0)) {
      throw value_error("channel " + std::to_string(c) +
                        " has zero variance inside the mask");
    }
  }
  return st;
}

namespace {

Volume affine_channels(const Volume& v, const NormStats& stats, bool forward) {
  if (stats.channels() != v.c) {
    throw shape_error("stats cover " + std::to_string(stats.channels()) +
                      " channels, volume has " + std::to_string(v.c));
  }
  for (double sd : stats.stddev) {
    if (!(sd > 0.0)) throw value_error("stats stddev must be positive");
  }
  Volume out = v;
  const int64_t vox = v.voxels();
  for (int64_t i = 0; i < vox; ++i) {
    float* p = out.data.data() + i * v.c;
    for (int c = 0; c < v.c; ++c) {
      const double x = p[c];
      p[c] = static_cast<float>(forward
                                    ? (x - stats.mean[c]) / stats.stddev[c]
                                    : x * stats.stddev[c] + stats.mean[c]);
    }
  }
  return out;
}

}  // namespace

Volume normalize_channels(const Volume& v, const NormStats& stats) {
  return affine_channels(v, stats, true);
}

Volume denormalize_channels(const Volume& v, const NormStats& stats) {
  return affine_channels(v, stats, false);
}

}  // namespace msp
