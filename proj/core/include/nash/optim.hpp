#pragma once

#include <string>
#include <vector>

#include "nash/tensor.hpp"

namespace nash::num {

struct AdamWState {
  std::vector<double> m;  // first moment, parameter-shaped
  std::vector<double> v;  // second moment
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight-decay Adam over a fixed parameter list. Parameter groups
// carry their own lr / decay (weights vs gate logits).
class AdamW {
 public:
  void add_group(std::vector<Tensor> params, AdamWOptions opts);

  // Applies one update from the gradients currently stored on the parameters.
  void step();
  void zero_grad();

  int64_t step_count() const { return step_; }

 private:
  struct Group {
    std::vector<Tensor> params;
    std::vector<AdamWState> state;
    AdamWOptions opts;
  };
  std::vector<Group> groups_;
  int64_t step_ = 0;
};

}  // namespace nash::num
