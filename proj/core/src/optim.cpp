#include "nash/optim.hpp"

#include <cmath>

namespace nash::num {

void AdamW::add_group(std::vector<Tensor> params, AdamWOptions opts) {
  Group g;
  g.params = std::move(params);
  g.state.resize(g.params.size());
  for (size_t i = 0; i < g.params.size(); ++i) {
    size_t n = static_cast<size_t>(g.params[i].numel());
    g.state[i].m.assign(n, 0.0);
    g.state[i].v.assign(n, 0.0);
  }
  g.opts = opts;
  groups_.push_back(std::move(g));
}

void AdamW::step() {
  ++step_;
  for (Group& g : groups_) {
    const auto& o = g.opts;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < g.params.size(); ++i) {
      Tensor& p = g.params[i];
      auto& pv = p.values();
      const auto& pg = p.grad_view();
      AdamWState& st = g.state[i];
      if (st.m.size() != pv.size()) throw ShapeError("adamw: state/parameter shape mismatch");
      for (size_t k = 0; k < pv.size(); ++k) {
        double grad = pg.empty() ? 0.0 : pg[k];
        st.m[k] = o.beta1 * st.m[k] + (1.0 - o.beta1) * grad;
        st.v[k] = o.beta2 * st.v[k] + (1.0 - o.beta2) * grad * grad;
        double mhat = st.m[k] / bc1;
        double vhat = st.v[k] / bc2;
        pv[k] -= o.lr * (mhat / (std::sqrt(vhat) + o.eps) + o.weight_decay * pv[k]);
      }
    }
  }
}

void AdamW::zero_grad() {
  for (Group& g : groups_)
    for (Tensor& p : g.params) p.zero_grad();
}

}  // namespace nash::num
