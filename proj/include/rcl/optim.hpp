#pragma once

#include <set>
#include <string>

#include "rcl/graph.hpp"

namespace rcl {

// Adam with decoupled weight decay. Frozen names are skipped entirely: no
// moment update, no decay, no step.
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit Adam(Options opt) : opt_(opt) {}

  void step(TensorMap& params, const TensorMap& grads, const std::set<std::string>& frozen = {});
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  Options opt_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace rcl
