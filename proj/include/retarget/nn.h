#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

namespace retarget {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// Fully connected network with ELU hidden activations and a linear output.
// Batches are column-major: one sample per column. Parameters live in one
// flat vector so the optimizer and gradient clipping see a single tensor.
class Mlp {
 public:
  Mlp() = default;
  // Orthogonal-ish init: Gaussian scaled by gain / sqrt(fan_in), zero biases.
  Mlp(int input, const std::vector<int>& hidden, int output, std::mt19937_64& rng,
      double output_gain = 1.0);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_params() const { return static_cast<int>(params_.size()); }
  const std::vector<int>& sizes() const { return sizes_; }

  const VecX& params() const { return params_; }
  void set_params(const VecX& p);

  struct Cache {
    std::vector<MatX> inputs;  // input to each layer
    std::vector<MatX> pre;     // pre-activation of each hidden layer
  };

  MatX forward(const MatX& x) const;
  MatX forward(const MatX& x, Cache& cache) const;
  // Gradient of sum(dy .* y) with respect to the parameters, flat layout.
  VecX backward(const Cache& cache, const MatX& dy) const;

 private:
  // Layer l: weights (sizes_[l+1] x sizes_[l]) then bias, column-major.
  Eigen::Map<const MatX> weight(int l) const;
  Eigen::Map<const VecX> bias(int l) const;

  std::vector<int> sizes_;
  std::vector<int> offsets_;
  VecX params_;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(int n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(VecX& params, const VecX& grad, double lr);

  const VecX& m() const { return m_; }
  const VecX& v() const { return v_; }
  long steps() const { return t_; }
  void restore(const VecX& m, const VecX& v, long t);

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  VecX m_, v_;
  long t_ = 0;
};

}  // namespace retarget
