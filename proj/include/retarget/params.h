#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "retarget/rotmath.h"

namespace retarget {

// Upper-level decision variables: per correspondence pair a position offset
// and a rotation vector, both in nominal coordinates, plus one vertical
// offset per motion clip.
struct RetargetParams {
  std::vector<Vec3> p_pos;
  std::vector<RotationVector> p_ori;
  std::vector<double> p_z;

  static RetargetParams zeros(int num_pairs, int num_motions) {
    RetargetParams p;
    p.p_pos.assign(num_pairs, Vec3::Zero());
    p.p_ori.assign(num_pairs, Vec3::Zero());
    p.p_z.assign(num_motions, 0.0);
    return p;
  }

  int num_pairs() const { return static_cast<int>(p_pos.size()); }
  int num_motions() const { return static_cast<int>(p_z.size()); }
  int dim() const { return 6 * num_pairs() + num_motions(); }

  // Flat layout: [p_pos (3 per pair) | p_ori (3 per pair) | p_z].
  Eigen::VectorXd flatten() const;
  static RetargetParams unflatten(const Eigen::VectorXd& x, int num_pairs, int num_motions);
};

inline Eigen::VectorXd RetargetParams::flatten() const {
  Eigen::VectorXd x(dim());
  const int P = num_pairs();
  for (int b = 0; b < P; ++b) {
    x.segment<3>(3 * b) = p_pos[b];
    x.segment<3>(3 * P + 3 * b) = p_ori[b];
  }
  for (int m = 0; m < num_motions(); ++m) x[6 * P + m] = p_z[m];
  return x;
}

inline RetargetParams RetargetParams::unflatten(const Eigen::VectorXd& x, int num_pairs,
                                                int num_motions) {
  RetargetParams p = zeros(num_pairs, num_motions);
  for (int b = 0; b < num_pairs; ++b) {
    p.p_pos[b] = x.segment<3>(3 * b);
    p.p_ori[b] = x.segment<3>(3 * num_pairs + 3 * b);
  }
  for (int m = 0; m < num_motions; ++m) p.p_z[m] = x[6 * num_pairs + m];
  return p;
}

}  // namespace retarget
