#include "retarget/nn.h"

#include <cmath>

#include "retarget/errors.h"

namespace retarget {

Mlp::Mlp(int input, const std::vector<int>& hidden, int output, std::mt19937_64& rng,
         double output_gain) {
  if (input < 1 || output < 1) throw ValidationError("mlp: layer sizes must be >= 1");
  sizes_.push_back(input);
  for (int h : hidden) {
    if (h < 1) throw ValidationError("mlp: layer sizes must be >= 1");
    sizes_.push_back(h);
  }
  sizes_.push_back(output);
  int n = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(n);
    n += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_ = VecX::Zero(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int layers = static_cast<int>(offsets_.size());
  for (int l = 0; l < layers; ++l) {
    const double gain = l + 1 == layers ? output_gain : std::sqrt(2.0);
    const double sd = gain / std::sqrt(static_cast<double>(sizes_[l]));
    for (int k = 0; k < sizes_[l + 1] * sizes_[l]; ++k) params_[offsets_[l] + k] = sd * normal(rng);
  }
}

void Mlp::set_params(const VecX& p) {
  if (p.size() != params_.size()) throw ValidationError("mlp: parameter count mismatch");
  params_ = p;
}

Eigen::Map<const MatX> Mlp::weight(int l) const {
  return Eigen::Map<const MatX>(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
}

Eigen::Map<const VecX> Mlp::bias(int l) const {
  return Eigen::Map<const VecX>(params_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l],
                                sizes_[l + 1]);
}

namespace {
MatX elu(const MatX& z) {
  return z.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}
}  // namespace

MatX Mlp::forward(const MatX& x) const {
  MatX h = x;
  const int layers = static_cast<int>(offsets_.size());
  for (int l = 0; l < layers; ++l) {
    MatX z = weight(l) * h;
    z.colwise() += bias(l);
    h = l + 1 == layers ? z : elu(z);
  }
  return h;
}

MatX Mlp::forward(const MatX& x, Cache& cache) const {
  const int layers = static_cast<int>(offsets_.size());
  cache.inputs.resize(layers);
  cache.pre.resize(layers);
  MatX h = x;
  for (int l = 0; l < layers; ++l) {
    cache.inputs[l] = h;
    MatX z = weight(l) * h;
    z.colwise() += bias(l);
    if (l + 1 == layers) return z;
    h = elu(z);
    cache.pre[l] = std::move(z);
  }
  return h;
}

VecX Mlp::backward(const Cache& cache, const MatX& dy) const {
  VecX grad = VecX::Zero(params_.size());
  MatX delta = dy;
  for (int l = static_cast<int>(offsets_.size()) - 1; l >= 0; --l) {
    Eigen::Map<MatX> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    Eigen::Map<VecX> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
    gw.noalias() = delta * cache.inputs[l].transpose();
    gb = delta.rowwise().sum();
    if (l == 0) break;
    MatX back = weight(l).transpose() * delta;
    // d elu / dz = 1 for z > 0, exp(z) otherwise.
    const MatX& z = cache.pre[l - 1];
    delta = back.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : std::exp(v); }));
  }
  return grad;
}

Adam::Adam(int n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(VecX::Zero(n)), v_(VecX::Zero(n)) {}

void Adam::step(VecX& params, const VecX& grad, double lr) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void Adam::restore(const VecX& m, const VecX& v, long t) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw ValidationError("adam: restored state size mismatch");
  }
  m_ = m;
  v_ = v;
  t_ = t;
}

}  // namespace retarget
