#include "normlab/blocks.hpp"

namespace normlab {

ResidualBlock::ResidualBlock(int in_ch, int out_ch, int stride,
                             const NormalizerSpec& norm, bool ws,
                             Rng& init_rng, Rng& fixed_rng,
                             int& next_conv_site, int& next_norm_site)
    : conv1_(in_ch, out_ch, 3, stride, 1, false, ws),
      conv2_(out_ch, out_ch, 3, 1, 1, false, ws),
      n1_(make_normalizer(norm, out_ch, fixed_rng)),
      n2_(make_normalizer(norm, out_ch, fixed_rng)),
      skip_identity_(in_ch == out_ch && stride == 1) {
  conv1_.init_kaiming(init_rng);
  conv2_.init_kaiming(init_rng);
  if (!skip_identity_) {
    proj_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false, ws);
    proj_->init_kaiming(init_rng);
    nproj_ = make_normalizer(norm, out_ch, fixed_rng);
  }
  conv_sites_[0] = next_conv_site++;
  conv_sites_[1] = next_conv_site++;
  norm_sites_[0] = next_norm_site++;
  norm_sites_[1] = next_norm_site++;
  if (!skip_identity_) {
    conv_sites_[2] = next_conv_site++;
    norm_sites_[2] = next_norm_site++;
  }
}

ResidualBlock::ResidualBlock(const ResidualBlock& other)
    : conv1_(other.conv1_),
      conv2_(other.conv2_),
      n1_(other.n1_->clone()),
      n2_(other.n2_->clone()),
      proj_(other.proj_ ? std::make_unique<Conv2d>(*other.proj_) : nullptr),
      nproj_(other.nproj_ ? other.nproj_->clone() : nullptr),
      relu1_(other.relu1_),
      relu2_(other.relu2_),
      skip_identity_(other.skip_identity_) {
  for (int i = 0; i < 3; ++i) {
    conv_sites_[i] = other.conv_sites_[i];
    norm_sites_[i] = other.norm_sites_[i];
  }
}

ResidualBlock& ResidualBlock::operator=(const ResidualBlock& other) {
  if (this != &other) {
    ResidualBlock tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Tensor4 ResidualBlock::forward(const Tensor4& x, Mode mode,
                               ForwardObserver* obs) {
  Tensor4 t = conv1_.forward(x, mode);
  if (obs) obs->on_conv_output(conv_sites_[0], t);
  t = n1_->forward(t, mode);
  if (obs) {
    obs->on_norm_output(norm_sites_[0], t);
    obs->on_norm_normalized(norm_sites_[0], n1_->last_normalized());
  }
  t = relu1_.forward(t, mode);
  t = conv2_.forward(t, mode);
  if (obs) obs->on_conv_output(conv_sites_[1], t);
  t = n2_->forward(t, mode);
  if (obs) {
    obs->on_norm_output(norm_sites_[1], t);
    obs->on_norm_normalized(norm_sites_[1], n2_->last_normalized());
  }

  Tensor4 skip;
  if (skip_identity_) {
    skip = x;
  } else {
    skip = proj_->forward(x, mode);
    if (obs) obs->on_conv_output(conv_sites_[2], skip);
    skip = nproj_->forward(skip, mode);
    if (obs) {
      obs->on_norm_output(norm_sites_[2], skip);
      obs->on_norm_normalized(norm_sites_[2], nproj_->last_normalized());
    }
  }
  if (!t.same_shape(skip))
    throw InvalidShape("ResidualBlock: skip path shape mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] += skip.data()[i];
  return relu2_.forward(t, mode);
}

Tensor4 ResidualBlock::backward(const Tensor4& grad_out) {
  const Tensor4 dsum = relu2_.backward(grad_out);
  Tensor4 dx = conv1_.backward(
      n1_->backward(relu1_.backward(conv2_.backward(n2_->backward(dsum)))));
  if (skip_identity_) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dsum.data()[i];
  } else {
    const Tensor4 dskip = proj_->backward(nproj_->backward(dsum));
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dskip.data()[i];
  }
  return dx;
}

void ResidualBlock::collect_params(std::vector<Param*>& out) {
  conv1_.collect_params(out);
  n1_->collect_params(out);
  conv2_.collect_params(out);
  n2_->collect_params(out);
  if (!skip_identity_) {
    proj_->collect_params(out);
    nproj_->collect_params(out);
  }
}

void ResidualBlock::set_update_rate(double r) {
  n1_->set_update_rate(r);
  n2_->set_update_rate(r);
  if (nproj_) nproj_->set_update_rate(r);
}

void ResidualBlock::append_site_channels(std::vector<int>& conv,
                                         std::vector<int>& norm) const {
  conv.push_back(conv1_.out_channels());
  conv.push_back(conv2_.out_channels());
  norm.push_back(conv1_.out_channels());
  norm.push_back(conv2_.out_channels());
  if (!skip_identity_) {
    conv.push_back(proj_->out_channels());
    norm.push_back(proj_->out_channels());
  }
}

void ResidualBlock::save_state(std::ostream& os) const {
  n1_->save_state(os);
  n2_->save_state(os);
  if (nproj_) nproj_->save_state(os);
}

void ResidualBlock::load_state(std::istream& is) {
  n1_->load_state(is);
  n2_->load_state(is);
  if (nproj_) nproj_->load_state(is);
}

}  // namespace normlab
