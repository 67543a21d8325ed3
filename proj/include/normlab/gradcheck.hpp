#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "normlab/layers.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

struct GradcheckOptions {
  double step = 1e-5;       // central-difference step (unit-order inputs)
  double tolerance = 1e-4;  // max relative error allowed
  int max_input_coords = 150;
  int max_param_coords = 60;
  // When set, finite differences evaluate the layer in eval mode starting
  // from its post-forward state: running estimates stay frozen exactly as
  // the analytic backward treats them (micro-batch BCN stop-gradient).
  bool frozen_eval_fd = false;
  // Coordinates where both gradients sit below this are beneath what a
  // 1e-5 central difference resolves in double precision; comparing them
  // would only measure rounding noise.
  double min_resolvable = 1e-6;
};

struct GradcheckResult {
  std::string op;
  double max_rel_err = 0;
  int coords_checked = 0;
  bool pass = false;
};

inline double relative_error(double a, double n) {
  const double denom = std::max({std::fabs(a), std::fabs(n), 1e-8});
  return std::fabs(a - n) / denom;
}

namespace detail {

template <class T>
concept HasParams = requires(T t, std::vector<Param*>& v) {
  t.collect_params(v);
};

// Ops built around ReLU branches expose the branch taken; probes landing on
// different branches are not comparable by finite differences.
template <class T>
concept HasBranchSignature = requires(const T t) {
  { t.branch_signature() } -> std::same_as<std::vector<std::uint8_t>>;
};

inline std::vector<std::size_t> sample_coords(std::size_t count, int max_n,
                                              Rng& rng) {
  std::vector<std::size_t> idx;
  if (count <= static_cast<std::size_t>(max_n)) {
    idx.resize(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return idx;
  }
  idx.reserve(static_cast<std::size_t>(max_n));
  for (int i = 0; i < max_n; ++i)
    idx.push_back(rng.below(static_cast<std::uint32_t>(count)));
  return idx;
}

}  // namespace detail

/// Compares a layer's analytic input and parameter gradients against central
/// finite differences of J = sum(G * forward(x)) for a random projection G.
/// Every finite-difference evaluation runs on a fresh copy of the layer, so
/// state mutated by forward (running statistics) never leaks between probes.
template <class LayerT>
GradcheckResult gradcheck_layer(const std::string& name, const LayerT& layer,
                                const Tensor4& x, const GradcheckOptions& opt,
                                Rng& rng) {
  GradcheckResult res;
  res.op = name;

  LayerT work = layer;
  const Tensor4 y = work.forward(x, Mode::train);
  const Tensor4 g = Tensor4::randn(y.dims(), rng);
  const Tensor4 dx = work.backward(g);

  // FD probes start from the pre-forward state, except under the frozen
  // stop-gradient contract where they start from the post-forward state and
  // run in eval mode.
  const LayerT& fd_base = opt.frozen_eval_fd ? work : layer;
  const Mode fd_mode = opt.frozen_eval_fd ? Mode::eval : Mode::train;

  auto objective = [&](const Tensor4& xin,
                       std::vector<std::uint8_t>* branch) -> double {
    LayerT probe = fd_base;
    const Tensor4 out = probe.forward(xin, fd_mode);
    acc_t s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
      s += static_cast<acc_t>(g.data()[i]) * out.data()[i];
    if constexpr (detail::HasBranchSignature<LayerT>) {
      if (branch) *branch = probe.branch_signature();
    } else {
      (void)branch;
    }
    return s;
  };

  auto check_coord = [&](double analytic, double numeric) {
    if (std::max(std::fabs(analytic), std::fabs(numeric)) < opt.min_resolvable)
      return;
    res.max_rel_err = std::max(res.max_rel_err, relative_error(analytic, numeric));
    ++res.coords_checked;
  };

  const double h = opt.step;
  std::vector<std::uint8_t> branch_p, branch_m;
  for (const std::size_t i :
       detail::sample_coords(x.size(), opt.max_input_coords, rng)) {
    Tensor4 xp = x;
    xp.data()[i] += static_cast<real>(h);
    Tensor4 xm = x;
    xm.data()[i] -= static_cast<real>(h);
    const double jp = objective(xp, &branch_p);
    const double jm = objective(xm, &branch_m);
    if (branch_p != branch_m) continue;  // probes straddle a ReLU kink
    check_coord(dx.data()[i], (jp - jm) / (2 * h));
  }

  if constexpr (detail::HasParams<LayerT>) {
    std::vector<Param*> analytic_params;
    work.collect_params(analytic_params);
    for (std::size_t p = 0; p < analytic_params.size(); ++p) {
      const Param* ap = analytic_params[p];
      for (const std::size_t i :
           detail::sample_coords(ap->size(), opt.max_param_coords, rng)) {
        auto poke = [&](double delta,
                        std::vector<std::uint8_t>* branch) -> double {
          LayerT probe = fd_base;
          std::vector<Param*> pp;
          probe.collect_params(pp);
          pp[p]->value[i] += static_cast<real>(delta);
          const Tensor4 out = probe.forward(x, fd_mode);
          acc_t s = 0.0;
          for (std::size_t k = 0; k < out.size(); ++k)
            s += static_cast<acc_t>(g.data()[k]) * out.data()[k];
          if constexpr (detail::HasBranchSignature<LayerT>) {
            if (branch) *branch = probe.branch_signature();
          } else {
            (void)branch;
          }
          return s;
        };
        const double jp = poke(h, &branch_p);
        const double jm = poke(-h, &branch_m);
        if (branch_p != branch_m) continue;
        check_coord(ap->grad[i], (jp - jm) / (2 * h));
      }
    }
  }

  res.pass = res.max_rel_err <= opt.tolerance;
  return res;
}

/// Loss-level check for softmax cross-entropy: analytic dlogits against
/// central differences of the scalar loss.
GradcheckResult gradcheck_softmax(const Tensor4& logits,
                                  const std::vector<int>& labels,
                                  const GradcheckOptions& opt, Rng& rng);

/// The full differentiable-operation suite: conv (plain and weight-
/// standardized), relu, both pools, linear, softmax-xent, affine, bn, cn
/// (layer/group/instance), fixedstat, bcn-large, bcn-micro (frozen
/// estimates), and a residual block. Each op is checked on `seeds` random
/// shapes up to (4, 8, 8, 8); the result keeps the worst relative error.
std::vector<GradcheckResult> run_gradient_suite(int seeds, double tolerance,
                                                std::uint64_t seed0);

bool gradcheck_all_pass(const std::vector<GradcheckResult>& results);

}  // namespace normlab
