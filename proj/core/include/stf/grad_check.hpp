#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "stf/tape.hpp"
#include "stf/tensor.hpp"

namespace stf::ad {

// Independent gradient oracle: compares the tape's analytic gradient of a
// scalar-valued function against central finite differences, coordinate by
// coordinate. Returns the worst relative error
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
// The function is evaluated on a fresh tape per call and must be
// deterministic. Callers are responsible for keeping probe points away from
// nondifferentiable kinks (e.g. ReLU zeros) by more than ~10*eps.
template <typename S>
S finite_diff_check(const std::function<BasicTensor<S>(Tape<S>&, const BasicTensor<S>&)>& f,
                    const BasicTensor<S>& x0, S eps = S(1e-5)) {
  if (!(eps > S(0))) throw ValueError("finite_diff_check: eps must be positive");

  std::vector<S> analytic(x0.size(), S(0));
  {
    Tape<S> tape;
    BasicTensor<S> x = BasicTensor<S>::from(x0.shape(), x0.data(), /*requires_grad=*/true);
    BasicTensor<S> y = f(tape, x);
    if (y.size() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    tape.backward(y);
    if (x.has_grad()) analytic = x.grad();
  }

  auto eval = [&](const std::vector<S>& values) {
    Tape<S> tape;
    BasicTensor<S> x = BasicTensor<S>::from(x0.shape(), values, false);
    return f(tape, x).item();
  };

  S worst = 0;
  std::vector<S> probe = x0.data();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const S saved = probe[i];
    probe[i] = saved + eps;
    const S fp = eval(probe);
    probe[i] = saved - eps;
    const S fm = eval(probe);
    probe[i] = saved;
    const S numeric = (fp - fm) / (S(2) * eps);
    const S denom = std::max(S(1), std::max(std::abs(analytic[i]), std::abs(numeric)));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace stf::ad
