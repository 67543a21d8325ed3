#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "normlab/blocks.hpp"
#include "normlab/layers.hpp"
#include "normlab/norm.hpp"
#include "normlab/observer.hpp"

namespace normlab {

struct ModelSpec {
  std::string arch = "plain4";  // plain4 | miniresnet
  int resnet_n = 3;             // blocks per stage (miniresnet)
  int input_channels = 3;
  int num_classes = 10;
  NormalizerSpec norm;
  bool ws = false;
};

class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor4 forward(const Tensor4& x, Mode mode,
                          ForwardObserver* obs = nullptr) = 0;
  virtual Tensor4 backward(const Tensor4& dlogits) = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
  virtual void set_update_rate(double r) = 0;
  virtual std::vector<int> conv_site_channels() const = 0;
  virtual std::vector<int> norm_site_channels() const = 0;
  virtual void save(std::ostream& os) const = 0;
  virtual void load(std::istream& is) = 0;

  std::vector<Param*> params() {
    std::vector<Param*> out;
    collect_params(out);
    return out;
  }
};

/// 4 x [conv3x3(32) - norm - relu - avgpool2], then global average pooling
/// and a fully-connected head.
class Plain4Model final : public Model {
 public:
  Plain4Model(const ModelSpec& spec, Rng& init_rng, Rng& fixed_rng);

  Tensor4 forward(const Tensor4& x, Mode mode, ForwardObserver* obs) override;
  Tensor4 backward(const Tensor4& dlogits) override;
  void collect_params(std::vector<Param*>& out) override;
  void set_update_rate(double r) override;
  std::vector<int> conv_site_channels() const override;
  std::vector<int> norm_site_channels() const override;
  void save(std::ostream& os) const override;
  void load(std::istream& is) override;

  Normalizer& normalizer(int stage) { return *stages_[stage].norm; }

 private:
  struct Stage {
    Conv2d conv;
    std::unique_ptr<Normalizer> norm;
    Relu relu;
    AvgPool2 pool;
  };
  std::vector<Stage> stages_;
  GlobalAvgPool gap_;
  Linear fc_;
};

/// Stem conv + 3 stages of basic residual blocks (widths 16/32/64, stride 2
/// between stages), global average pooling, fully-connected head.
class MiniResNetModel final : public Model {
 public:
  MiniResNetModel(const ModelSpec& spec, Rng& init_rng, Rng& fixed_rng);

  Tensor4 forward(const Tensor4& x, Mode mode, ForwardObserver* obs) override;
  Tensor4 backward(const Tensor4& dlogits) override;
  void collect_params(std::vector<Param*>& out) override;
  void set_update_rate(double r) override;
  std::vector<int> conv_site_channels() const override;
  std::vector<int> norm_site_channels() const override;
  void save(std::ostream& os) const override;
  void load(std::istream& is) override;

 private:
  Conv2d stem_;
  std::unique_ptr<Normalizer> stem_norm_;
  Relu stem_relu_;
  std::vector<ResidualBlock> blocks_;
  GlobalAvgPool gap_;
  Linear fc_;
};

/// Weight init consumes a stream derived from (seed, tag 1); fixed-statistic
/// sampling consumes (seed, tag 3). Keeping them apart means changing the
/// normalizer kind never shifts the weights or the data order.
std::unique_ptr<Model> build_model(const ModelSpec& spec, std::uint64_t seed);

inline constexpr std::uint64_t kInitStreamTag = 1;
inline constexpr std::uint64_t kDataStreamTag = 2;
inline constexpr std::uint64_t kFixedStatStreamTag = 3;

}  // namespace normlab
