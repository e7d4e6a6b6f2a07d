#include "rcl/optim.hpp"

#include <cmath>

#include "rcl/error.hpp"

namespace rcl {

void Adam::step(TensorMap& params, const TensorMap& grads, const std::set<std::string>& frozen) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (frozen.contains(name)) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (!g.same_shape(p)) throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto [it, fresh] = state_.try_emplace(name, Moments{Tensor(p.shape()), Tensor(p.shape())});
    Moments& s = it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * g[i];
      s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * p[i]);
    }
  }
}

}  // namespace rcl
