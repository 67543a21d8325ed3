#include "normlab/gradcheck.hpp"

#include <cmath>

#include "normlab/blocks.hpp"
#include "normlab/norm.hpp"

namespace normlab {

GradcheckResult gradcheck_softmax(const Tensor4& logits,
                                  const std::vector<int>& labels,
                                  const GradcheckOptions& opt, Rng& rng) {
  GradcheckResult res;
  res.op = "softmax_xent";
  const SoftmaxXentResult base = softmax_xent(logits, labels);
  const double h = opt.step;
  for (const std::size_t i :
       detail::sample_coords(logits.size(), opt.max_input_coords, rng)) {
    Tensor4 lp = logits;
    lp.data()[i] += static_cast<real>(h);
    Tensor4 lm = logits;
    lm.data()[i] -= static_cast<real>(h);
    const double numeric =
        (softmax_xent(lp, labels).loss - softmax_xent(lm, labels).loss) /
        (2 * h);
    const double analytic = base.dlogits.data()[i];
    if (std::max(std::fabs(analytic), std::fabs(numeric)) < opt.min_resolvable)
      continue;
    res.max_rel_err = std::max(res.max_rel_err, relative_error(analytic, numeric));
    ++res.coords_checked;
  }
  res.pass = res.max_rel_err <= opt.tolerance;
  return res;
}

namespace {

// Adapters giving single-purpose ops the (x, mode) layer surface.

struct AffineOp {
  Affine affine;
  Tensor4 forward(const Tensor4& x, Mode) { return affine.forward(x); }
  Tensor4 backward(const Tensor4& g) { return affine.backward(g); }
  void collect_params(std::vector<Param*>& v) { affine.collect_params(v); }
};

struct ResidualOp {
  ResidualBlock block;
  Tensor4 forward(const Tensor4& x, Mode m) { return block.forward(x, m, nullptr); }
  Tensor4 backward(const Tensor4& g) { return block.backward(g); }
  void collect_params(std::vector<Param*>& v) { block.collect_params(v); }
  std::vector<std::uint8_t> branch_signature() const {
    return block.branch_signature();
  }
};

// Keeps inputs clear of the ReLU kink so finite differences stay one-sided.
Tensor4 kink_free_randn(const Dims4& d, Rng& rng) {
  Tensor4 x = Tensor4::randn(d, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    real& v = x.data()[i];
    if (std::fabs(static_cast<double>(v)) < 1e-3)
      v += v >= 0 ? real(1e-3) : real(-1e-3);
  }
  return x;
}

void randomize_affine(Affine& a, Rng& rng) {
  for (auto& v : a.gamma().value)
    v = static_cast<real>(1.0 + 0.3 * rng.normal());
  for (auto& v : a.beta().value) v = static_cast<real>(0.3 * rng.normal());
}

void fold(std::vector<GradcheckResult>& all, const GradcheckResult& one) {
  for (auto& r : all)
    if (r.op == one.op) {
      r.max_rel_err = std::max(r.max_rel_err, one.max_rel_err);
      r.coords_checked += one.coords_checked;
      r.pass = r.pass && one.pass;
      return;
    }
  all.push_back(one);
}

}  // namespace

std::vector<GradcheckResult> run_gradient_suite(int seeds, double tolerance,
                                                std::uint64_t seed0) {
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  std::vector<GradcheckResult> all;

  for (int s = 0; s < seeds; ++s) {
    Rng rng(derive_seed(seed0, 1000 + static_cast<std::uint64_t>(s)));
    const int b = 2 + static_cast<int>(rng.below(3));           // 2..4
    const int c = 4 + 4 * static_cast<int>(rng.below(2));       // 4 or 8
    const int hw = 4 + 4 * static_cast<int>(rng.below(2));      // 4 or 8
    const Dims4 d{b, c, hw, hw};
    const Tensor4 x = kink_free_randn(d, rng);

    {
      Conv2d conv(c, c, 3, 1, 1, true, false);
      conv.init_kaiming(rng);
      fold(all, gradcheck_layer("conv2d", conv, x, opt, rng));
    }
    {
      Conv2d conv(c, c, 3, 1, 1, false, true);
      conv.init_kaiming(rng);
      fold(all, gradcheck_layer("conv2d+ws", conv, x, opt, rng));
    }
    {
      Relu relu;
      fold(all, gradcheck_layer("relu", relu, x, opt, rng));
    }
    {
      AvgPool2 pool;
      fold(all, gradcheck_layer("avgpool2", pool, x, opt, rng));
    }
    {
      GlobalAvgPool pool;
      fold(all, gradcheck_layer("global_avgpool", pool, x, opt, rng));
    }
    {
      const int f = 6, k = 5;
      Linear lin(f, k, true);
      lin.init_kaiming(rng);
      const Tensor4 xf = Tensor4::randn(Dims4{b, f, 1, 1}, rng);
      fold(all, gradcheck_layer("linear", lin, xf, opt, rng));
    }
    {
      const int k = 7;
      const Tensor4 logits = Tensor4::randn(Dims4{b, k, 1, 1}, rng);
      std::vector<int> labels;
      for (int i = 0; i < b; ++i)
        labels.push_back(static_cast<int>(rng.below(k)));
      fold(all, gradcheck_softmax(logits, labels, opt, rng));
    }
    {
      AffineOp op{Affine(c, c)};
      randomize_affine(op.affine, rng);
      fold(all, gradcheck_layer("affine", op, x, opt, rng));
    }
    {
      BatchNorm bn(c);
      randomize_affine(bn.affine(), rng);
      fold(all, gradcheck_layer("bn", bn, x, opt, rng));
    }
    {
      const int variants[3] = {1, 2, c};  // layer / group / instance
      const int groups = variants[s % 3];
      ChannelNorm cn(c, groups);
      randomize_affine(cn.affine(), rng);
      fold(all, gradcheck_layer("cn", cn, x, opt, rng));
    }
    {
      std::vector<real> tm(static_cast<std::size_t>(c)),
          ts(static_cast<std::size_t>(c));
      for (auto& v : tm) v = static_cast<real>(rng.normal());
      for (auto& v : ts) v = static_cast<real>(std::exp(0.5 * rng.normal()));
      FixedStatNorm fixed(c, tm, ts);
      randomize_affine(fixed.affine(), rng);
      fold(all, gradcheck_layer("fixedstat", fixed, x, opt, rng));
    }
    {
      BcnLarge bcn(c, 2);
      randomize_affine(bcn.batch_stage().affine(), rng);
      randomize_affine(bcn.channel_stage().affine(), rng);
      fold(all, gradcheck_layer("bcn-large", bcn, x, opt, rng));
    }
    {
      BcnMicro bcn(c, 2, kDefaultEps, 0.3);
      randomize_affine(bcn.batch_affine(), rng);
      randomize_affine(bcn.channel_stage().affine(), rng);
      GradcheckOptions frozen = opt;
      frozen.frozen_eval_fd = true;
      fold(all, gradcheck_layer("bcn-micro", bcn, x, frozen, rng));
    }
    {
      Rng block_rng(derive_seed(seed0, 5000 + static_cast<std::uint64_t>(s)));
      NormalizerSpec norm;  // batch norm inside the block
      const int out_c = (s % 2 == 0) ? c : 2 * c;  // odd seeds take the projection path
      const int stride = (s % 2 == 0) ? 1 : 2;
      int conv_site = 0, norm_site = 0;
      ResidualOp op{ResidualBlock(c, out_c, stride, norm, false, block_rng,
                                  block_rng, conv_site, norm_site)};
      fold(all, gradcheck_layer("residual_block", op, x, opt, rng));
    }
  }
  return all;
}

bool gradcheck_all_pass(const std::vector<GradcheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return !results.empty();
}

}  // namespace normlab
