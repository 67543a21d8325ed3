#include "normlab/tensor.hpp"

#include <cmath>
#include <string>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace normlab {

namespace {

// Feature-map buffers are tens of MB and turn over every batch. Keeping them
// on the heap instead of per-allocation mmap avoids refaulting fresh pages
// each step (about a quarter of a training step on default glibc settings).
struct MallocTuning {
  MallocTuning() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning malloc_tuning;

}  // namespace

bool Tensor4::all_finite() const {
  for (const real v : data_)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

Moments reduce_stats(const Tensor4& x, AxisSet axes) {
  const Dims4& d = x.dims();
  if (x.empty())
    throw InvalidShape("reduce_stats: empty tensor");

  if (!axes.any()) {
    Moments m{x, Tensor4(d, 0)};
    return m;
  }

  const Dims4 od{axes.b ? 1 : d.b, axes.c ? 1 : d.c, axes.h ? 1 : d.h,
                 axes.w ? 1 : d.w};
  Tensor4 mean(od, 0);
  Tensor4 var(od, 0);

  const std::size_t slice =
      static_cast<std::size_t>(axes.b ? d.b : 1) * (axes.c ? d.c : 1) *
      (axes.h ? d.h : 1) * (axes.w ? d.w : 1);

  // Shifted two-pass moments: accumulate around each slice's first element.
  // Constant slices then come out with mean equal to the constant and
  // variance exactly zero, with no rounding residue.
  const real* px = x.data();
  std::vector<acc_t> pivot(od.count(), 0.0);
  std::vector<bool> seen(od.count(), false);
  std::vector<acc_t> dsum(od.count(), 0.0);
  std::size_t i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c)
      for (int h = 0; h < d.h; ++h)
        for (int w = 0; w < d.w; ++w, ++i) {
          const std::size_t o = mean.index(axes.b ? 0 : b, axes.c ? 0 : c,
                                           axes.h ? 0 : h, axes.w ? 0 : w);
          if (!seen[o]) {
            seen[o] = true;
            pivot[o] = px[i];
          }
          dsum[o] += static_cast<acc_t>(px[i]) - pivot[o];
        }
  std::vector<acc_t> dmean(od.count(), 0.0);
  for (std::size_t o = 0; o < dsum.size(); ++o) {
    dmean[o] = dsum[o] / static_cast<acc_t>(slice);
    mean.data()[o] = static_cast<real>(pivot[o] + dmean[o]);
  }

  std::vector<acc_t> sq(od.count(), 0.0);
  i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c)
      for (int h = 0; h < d.h; ++h)
        for (int w = 0; w < d.w; ++w, ++i) {
          const std::size_t o = mean.index(axes.b ? 0 : b, axes.c ? 0 : c,
                                           axes.h ? 0 : h, axes.w ? 0 : w);
          const acc_t dv =
              (static_cast<acc_t>(px[i]) - pivot[o]) - dmean[o];
          sq[o] += dv * dv;
        }
  for (std::size_t o = 0; o < sq.size(); ++o)
    var.data()[o] = static_cast<real>(sq[o] / static_cast<acc_t>(slice));

  return Moments{std::move(mean), std::move(var)};
}

GroupView::GroupView(const Tensor4& base, int groups)
    : base_(&base), groups_(groups) {
  if (groups < 1 || base.channels() % groups != 0)
    throw InvalidGrouping("group_reshape: " + std::to_string(groups) +
                          " groups do not divide " +
                          std::to_string(base.channels()) + " channels");
}

Tensor4 GroupView::ungroup() const {
  const Tensor4& src = *base_;
  Tensor4 out(src.dims());
  const int cg = group_channels();
  for (int b = 0; b < batch(); ++b)
    for (int g = 0; g < groups_; ++g)
      for (int k = 0; k < cg; ++k)
        for (int h = 0; h < height(); ++h)
          for (int w = 0; w < width(); ++w)
            out.at(b, g * cg + k, h, w) = at(b, g, k, h, w);
  return out;
}

namespace {

real apply_op(real a, real b, EwOp op) {
  switch (op) {
    case EwOp::add: return a + b;
    case EwOp::sub: return a - b;
    case EwOp::mul: return a * b;
    case EwOp::div: return a / b;
  }
  return 0;
}

void check_divisor(real v) {
  if (std::fabs(static_cast<double>(v)) < kDivisorGuard)
    throw DegenerateDivisor("elementwise: divisor magnitude below guard");
}

}  // namespace

Tensor4 elementwise(const Tensor4& x, const Tensor4& y, EwOp op) {
  const Dims4& d = x.dims();
  Tensor4 out(d);
  if (x.same_shape(y)) {
    if (op == EwOp::div)
      for (const real v : y.raw()) check_divisor(v);
    for (std::size_t i = 0; i < x.size(); ++i)
      out.data()[i] = apply_op(x.data()[i], y.data()[i], op);
    return out;
  }
  const bool per_channel = y.dims() == Dims4{1, d.c, 1, 1};
  if (!per_channel)
    throw InvalidShape("elementwise: shapes neither equal nor per-channel broadcastable");
  if (op == EwOp::div)
    for (const real v : y.raw()) check_divisor(v);
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  std::size_t i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real yv = y.data()[c];
      for (std::size_t s = 0; s < hw; ++s, ++i)
        out.data()[i] = apply_op(x.data()[i], yv, op);
    }
  return out;
}

Tensor4 elementwise(const Tensor4& x, real y, EwOp op) {
  if (op == EwOp::div) check_divisor(y);
  Tensor4 out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = apply_op(x.data()[i], y, op);
  return out;
}

}  // namespace normlab
