#include "normlab/model.hpp"

#include "normlab/serialize.hpp"

namespace normlab {

namespace {

void save_params(std::ostream& os, const std::vector<Param*>& params) {
  write_u64(os, params.size());
  for (const Param* p : params) write_vec(os, p->value);
}

void load_params(std::istream& is, const std::vector<Param*>& params) {
  const std::uint64_t n = read_u64(is);
  if (n != params.size())
    throw Error("checkpoint: parameter count mismatch");
  for (Param* p : params) read_vec(is, p->value);
}

}  // namespace

// ------------------------------------------------------------- Plain4Model

Plain4Model::Plain4Model(const ModelSpec& spec, Rng& init_rng, Rng& fixed_rng)
    : fc_(32, spec.num_classes, true) {
  constexpr int kWidth = 32;
  int in_ch = spec.input_channels;
  for (int i = 0; i < 4; ++i) {
    Stage s{Conv2d(in_ch, kWidth, 3, 1, 1, false, spec.ws), nullptr, {}, {}};
    s.conv.init_kaiming(init_rng);
    s.norm = make_normalizer(spec.norm, kWidth, fixed_rng);
    stages_.push_back(std::move(s));
    in_ch = kWidth;
  }
  fc_.init_kaiming(init_rng);
}

Tensor4 Plain4Model::forward(const Tensor4& x, Mode mode,
                             ForwardObserver* obs) {
  Tensor4 t = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    Stage& s = stages_[i];
    t = s.conv.forward(t, mode);
    if (obs) obs->on_conv_output(static_cast<int>(i), t);
    t = s.norm->forward(t, mode);
    if (obs) {
      obs->on_norm_output(static_cast<int>(i), t);
      obs->on_norm_normalized(static_cast<int>(i), s.norm->last_normalized());
    }
    t = s.relu.forward(t, mode);
    t = s.pool.forward(t, mode);
  }
  t = gap_.forward(t, mode);
  return fc_.forward(t, mode);
}

Tensor4 Plain4Model::backward(const Tensor4& dlogits) {
  Tensor4 g = gap_.backward(fc_.backward(dlogits));
  for (std::size_t i = stages_.size(); i-- > 0;) {
    Stage& s = stages_[i];
    g = s.conv.backward(s.norm->backward(s.relu.backward(s.pool.backward(g))));
  }
  return g;
}

void Plain4Model::collect_params(std::vector<Param*>& out) {
  for (Stage& s : stages_) {
    s.conv.collect_params(out);
    s.norm->collect_params(out);
  }
  fc_.collect_params(out);
}

void Plain4Model::set_update_rate(double r) {
  for (Stage& s : stages_) s.norm->set_update_rate(r);
}

std::vector<int> Plain4Model::conv_site_channels() const {
  return std::vector<int>(stages_.size(), 32);
}

std::vector<int> Plain4Model::norm_site_channels() const {
  return std::vector<int>(stages_.size(), 32);
}

void Plain4Model::save(std::ostream& os) const {
  auto* self = const_cast<Plain4Model*>(this);
  save_params(os, self->params());
  for (const Stage& s : stages_) s.norm->save_state(os);
}

void Plain4Model::load(std::istream& is) {
  load_params(is, params());
  for (Stage& s : stages_) s.norm->load_state(is);
}

// -------------------------------------------------------- MiniResNetModel

MiniResNetModel::MiniResNetModel(const ModelSpec& spec, Rng& init_rng,
                                 Rng& fixed_rng)
    : stem_(spec.input_channels, 16, 3, 1, 1, false, spec.ws),
      fc_(64, spec.num_classes, true) {
  if (spec.resnet_n < 1)
    throw InvalidConfig("miniresnet: resnet_n must be at least 1");
  stem_.init_kaiming(init_rng);
  int next_conv = 1, next_norm = 1;  // site 0 is the stem
  stem_norm_ = make_normalizer(spec.norm, 16, fixed_rng);
  const int widths[3] = {16, 32, 64};
  int in_ch = 16;
  for (int stage = 0; stage < 3; ++stage)
    for (int b = 0; b < spec.resnet_n; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back(in_ch, widths[stage], stride, spec.norm, spec.ws,
                           init_rng, fixed_rng, next_conv, next_norm);
      in_ch = widths[stage];
    }
  fc_.init_kaiming(init_rng);
}

Tensor4 MiniResNetModel::forward(const Tensor4& x, Mode mode,
                                 ForwardObserver* obs) {
  Tensor4 t = stem_.forward(x, mode);
  if (obs) obs->on_conv_output(0, t);
  t = stem_norm_->forward(t, mode);
  if (obs) {
    obs->on_norm_output(0, t);
    obs->on_norm_normalized(0, stem_norm_->last_normalized());
  }
  t = stem_relu_.forward(t, mode);
  for (ResidualBlock& b : blocks_) t = b.forward(t, mode, obs);
  t = gap_.forward(t, mode);
  return fc_.forward(t, mode);
}

Tensor4 MiniResNetModel::backward(const Tensor4& dlogits) {
  Tensor4 g = gap_.backward(fc_.backward(dlogits));
  for (std::size_t i = blocks_.size(); i-- > 0;) g = blocks_[i].backward(g);
  return stem_.backward(stem_norm_->backward(stem_relu_.backward(g)));
}

void MiniResNetModel::collect_params(std::vector<Param*>& out) {
  stem_.collect_params(out);
  stem_norm_->collect_params(out);
  for (ResidualBlock& b : blocks_) b.collect_params(out);
  fc_.collect_params(out);
}

void MiniResNetModel::set_update_rate(double r) {
  stem_norm_->set_update_rate(r);
  for (ResidualBlock& b : blocks_) b.set_update_rate(r);
}

std::vector<int> MiniResNetModel::conv_site_channels() const {
  std::vector<int> conv{16}, norm{16};
  for (const ResidualBlock& b : blocks_) b.append_site_channels(conv, norm);
  return conv;
}

std::vector<int> MiniResNetModel::norm_site_channels() const {
  std::vector<int> conv{16}, norm{16};
  for (const ResidualBlock& b : blocks_) b.append_site_channels(conv, norm);
  return norm;
}

void MiniResNetModel::save(std::ostream& os) const {
  auto* self = const_cast<MiniResNetModel*>(this);
  save_params(os, self->params());
  stem_norm_->save_state(os);
  for (const ResidualBlock& b : blocks_) b.save_state(os);
}

void MiniResNetModel::load(std::istream& is) {
  load_params(is, params());
  stem_norm_->load_state(is);
  for (ResidualBlock& b : blocks_) b.load_state(is);
}

// ------------------------------------------------------------- build_model

std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Rng init_rng(derive_seed(seed, kInitStreamTag));
  Rng fixed_rng(derive_seed(seed, kFixedStatStreamTag));
  if (spec.arch == "plain4")
    return std::make_unique<Plain4Model>(spec, init_rng, fixed_rng);
  if (spec.arch == "miniresnet")
    return std::make_unique<MiniResNetModel>(spec, init_rng, fixed_rng);
  throw InvalidConfig("unknown model architecture: " + spec.arch);
}

}  // namespace normlab
