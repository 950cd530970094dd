#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "msp/manifest.hpp"
#include "msp/volume.hpp"

namespace msp {

// Unit gradient directions on the sphere.
struct DirectionSet {
  std::vector<std::array<double, 3>> dirs;
  int size() const { return static_cast<int>(dirs.size()); }
};

// Plain-text loader: one "x y z" triple per line, whitespace separated.
DirectionSet load_directions(const std::string& path);

// Near-uniform deterministic direction set (golden-angle spiral).
DirectionSet fibonacci_directions(int n);

// Number of real symmetric SH basis functions up to even order L.
int sh_coefficient_count(int L);

// Real symmetric spherical harmonics, even degrees only, in the modified
// real convention (no Condon-Shortley phase): for degree l and order m,
//   m < 0 -> sqrt(2) * N(l,|m|) * P(l,|m|)(cos t) * sin(|m| phi)
//   m = 0 ->           N(l,0)   * P(l,0)(cos t)
//   m > 0 -> sqrt(2) * N(l,m)   * P(l,m)(cos t)  * cos(m phi)
// with N the orthonormalization factor. Columns are ordered by (l, m)
// lexicographically, l ascending over even degrees, m from -l to +l.
Eigen::MatrixXd sh_basis_matrix(const DirectionSet& dirs, int L);

// Least-squares SH coefficients of per-direction signals: solves the
// normal equations with a 64-bit symmetric factorization.
std::vector<double> fit_sh(const std::vector<double>& signals,
                           const DirectionSet& dirs, int L);

// Evaluates SH coefficients back to per-direction signal values.
std::vector<double> eval_sh(const std::vector<double>& coeffs,
                            const DirectionSet& dirs, int L);

// Per-channel population mean/stddev over masked voxels only.
NormStats compute_stats(const Volume& v, const Mask& mask);

// (value - mean) / stddev per channel, applied to every voxel. Pure and
// invertible; masking out background is a separate concern.
Volume normalize_channels(const Volume& v, const NormStats& stats);
Volume denormalize_channels(const Volume& v, const NormStats& stats);

}  // namespace msp
