#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradeloss/layers.hpp"
#include "gradeloss/types.hpp"

namespace gradeloss {

/// Convolutional encoder family:
///   [conv-bn-relu -> maxpool] x len(conv_channels)
///   -> [linear-bn-lrelu] x (len(linear_dims) - 1) -> linear head.
struct NetworkConfig {
  int input_channels = 2;
  int input_size = 112;
  std::vector<int> conv_channels{32, 64, 128, 256};
  int kernel = 5;
  int padding = 2;
  std::vector<int> linear_dims{256, 128, 64, 8};
  int classifier_dim = 2;
  double leaky_slope = 0.01;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  bool operator==(const NetworkConfig&) const = default;

  int embedding_dim() const { return linear_dims.back(); }
  int final_map_size() const { return input_size >> conv_channels.size(); }
  int flattened_dim() const { return conv_channels.back() * final_map_size() * final_map_size(); }

  void validate() const {
    if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
    if (conv_channels.empty() || linear_dims.empty())
      throw std::invalid_argument("network needs at least one conv stage and one linear layer");
    if (kernel < 1 || kernel % 2 == 0 || padding * 2 != kernel - 1)
      throw std::invalid_argument("convolutions must be odd-sized and size-preserving");
    const int div = 1 << conv_channels.size();
    if (input_size <= 0 || input_size % div != 0)
      throw std::invalid_argument("input_size " + std::to_string(input_size) + " is not divisible by " +
                                  std::to_string(div) + " (one halving per conv stage)");
    for (int c : conv_channels)
      if (c < 1) throw std::invalid_argument("conv channel counts must be positive");
    for (int d : linear_dims)
      if (d < 1) throw std::invalid_argument("linear dims must be positive");
    if (classifier_dim < 2) throw std::invalid_argument("classifier_dim must be >= 2");
  }

  /// Full-size network: 2x112x112 input, 8-d embedding.
  static NetworkConfig paper() { return {}; }
};

enum class Head { Embedding, Classifier };
enum class Mode { Train, Eval };

inline std::string head_name(Head h) { return h == Head::Embedding ? "embedding" : "classifier"; }
inline Head parse_head(const std::string& s) {
  if (s == "embedding") return Head::Embedding;
  if (s == "classifier") return Head::Classifier;
  throw std::invalid_argument("unknown head '" + s + "'");
}

/// Non-owning view of one trainable tensor and its gradient.
template <typename Scalar>
struct ParamRef {
  std::string name;
  Tensor2<Scalar>* value;
  Tensor2<Scalar>* grad;
};

/// Named tensor, used for gradient maps and running statistics.
template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor2<Scalar> value;
};

template <typename Scalar>
class Backbone {
 public:
  using Batch = Tensor2<Scalar>;

  Backbone(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    int in = config_.input_channels;
    std::uint64_t layer = 0;
    for (int c : config_.conv_channels) {
      conv_.emplace_back(in, c, config_.kernel, config_.padding, mix_seed(seed, layer++));
      conv_bn_.emplace_back(c, config_.bn_epsilon, config_.bn_momentum);
      in = c;
    }
    in = config_.flattened_dim();
    for (std::size_t i = 0; i + 1 < config_.linear_dims.size(); ++i) {
      const int d = config_.linear_dims[i];
      hidden_.emplace_back(in, d, mix_seed(seed, layer++));
      hidden_bn_.emplace_back(d, config_.bn_epsilon, config_.bn_momentum);
      in = d;
    }
    head_layer_ = static_cast<std::uint64_t>(layer);
    head_ = Linear<Scalar>(in, config_.embedding_dim(), mix_seed(seed, head_layer_));
    relu_.slope = Scalar(0);
    lrelu_.slope = static_cast<Scalar>(config_.leaky_slope);
  }

  const NetworkConfig& config() const { return config_; }
  Head head() const { return head_kind_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  int output_dim() const { return head_.out_dim; }

  /// Replace the final linear layer with a freshly seeded one; everything
  /// else, including batch-norm statistics, is left untouched.
  void swap_head(Head h, std::uint64_t seed) {
    const int out = h == Head::Embedding ? config_.embedding_dim() : config_.classifier_dim;
    head_ = Linear<Scalar>(head_.in_dim, out, mix_seed(seed, head_layer_));
    head_kind_ = h;
    cache_.reset();
  }

  /// Training forward pass over a (channels x N*size*size) batch. Caches
  /// activations for backward(); in Train mode batch statistics are used
  /// and running statistics updated.
  Batch forward(const Batch& x) {
    Cache cache;
    Batch y = run(x, mode_ == Mode::Train, &cache);
    if (mode_ == Mode::Train) {
      for (std::size_t i = 0; i < conv_bn_.size(); ++i)
        conv_bn_[i].update_running(cache.conv_bn[i], cache.conv_bn[i].normalized.cols());
      for (std::size_t i = 0; i < hidden_bn_.size(); ++i)
        hidden_bn_[i].update_running(cache.hidden_bn[i], cache.hidden_bn[i].normalized.cols());
    }
    cache_ = std::move(cache);
    return y;
  }

  /// Running-statistics forward pass. Mutates nothing; safe to call
  /// concurrently on a shared model.
  Batch infer(const Batch& x) const { return run(x, false, nullptr); }

  /// Reverse pass for the last forward() given d(loss)/d(output) of shape
  /// (output_dim x N). Overwrites the parameter gradients.
  void backward(const Batch& upstream) {
    if (!cache_) throw std::logic_error("backward called without a cached forward pass");
    Cache& c = *cache_;
    if (upstream.rows() != head_.out_dim || upstream.cols() != c.batch)
      throw std::invalid_argument("upstream gradient shape does not match the cached forward pass");

    Batch g = head_.backward(upstream, c.head);
    for (std::size_t i = hidden_.size(); i-- > 0;) {
      g = lrelu_.backward(g, c.hidden_act[i]);
      g = hidden_bn_[i].backward(g, c.hidden_bn[i]);
      g = hidden_[i].backward(g, c.hidden[i]);
    }
    g = unflatten_maps<Scalar>(g, config_.conv_channels.back(), c.final_shape);
    for (std::size_t i = conv_.size(); i-- > 0;) {
      g = pool_.backward(g, c.pool[i]);
      g = relu_.backward(g, c.conv_act[i]);
      g = conv_bn_[i].backward(g, c.conv_bn[i]);
      g = conv_[i].backward(g, c.conv[i]);
    }
    input_grad_ = std::move(g);
  }

  /// d(loss)/d(input) from the last backward().
  const Batch& input_gradient() const { return input_grad_; }

  std::vector<ParamRef<Scalar>> parameters() {
    std::vector<ParamRef<Scalar>> p;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      const std::string k = "conv" + std::to_string(i + 1);
      p.push_back({k + ".weight", &conv_[i].weight, &conv_[i].grad_weight});
      p.push_back({k + ".bias", &conv_[i].bias, &conv_[i].grad_bias});
      p.push_back({k + ".bn.scale", &conv_bn_[i].scale, &conv_bn_[i].grad_scale});
      p.push_back({k + ".bn.shift", &conv_bn_[i].shift, &conv_bn_[i].grad_shift});
    }
    for (std::size_t i = 0; i < hidden_.size(); ++i) {
      const std::string k = "linear" + std::to_string(i + 1);
      p.push_back({k + ".weight", &hidden_[i].weight, &hidden_[i].grad_weight});
      p.push_back({k + ".bias", &hidden_[i].bias, &hidden_[i].grad_bias});
      p.push_back({k + ".bn.scale", &hidden_bn_[i].scale, &hidden_bn_[i].grad_scale});
      p.push_back({k + ".bn.shift", &hidden_bn_[i].shift, &hidden_bn_[i].grad_shift});
    }
    p.push_back({"head.weight", &head_.weight, &head_.grad_weight});
    p.push_back({"head.bias", &head_.bias, &head_.grad_bias});
    return p;
  }

  std::vector<ParamRef<Scalar>> buffers() {
    std::vector<ParamRef<Scalar>> b;
    auto add = [&](const std::string& k, BatchNorm<Scalar>& bn) {
      b.push_back({k + ".bn.running_mean", &bn.running_mean, nullptr});
      b.push_back({k + ".bn.running_var", &bn.running_var, nullptr});
    };
    for (std::size_t i = 0; i < conv_bn_.size(); ++i) add("conv" + std::to_string(i + 1), conv_bn_[i]);
    for (std::size_t i = 0; i < hidden_bn_.size(); ++i) add("linear" + std::to_string(i + 1), hidden_bn_[i]);
    return b;
  }

  /// Copies of all parameter gradients, in parameters() order.
  std::vector<NamedTensor<Scalar>> gradients() {
    std::vector<NamedTensor<Scalar>> out;
    for (auto& p : parameters()) out.push_back({p.name, *p.grad});
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
    return n;
  }

 private:
  struct Cache {
    int batch = 0;
    std::vector<typename Conv2d<Scalar>::Cache> conv;
    std::vector<typename BatchNorm<Scalar>::Cache> conv_bn;
    std::vector<typename LeakyRelu<Scalar>::Cache> conv_act;
    std::vector<typename MaxPool2<Scalar>::Cache> pool;
    MapShape final_shape;
    std::vector<typename Linear<Scalar>::Cache> hidden;
    std::vector<typename BatchNorm<Scalar>::Cache> hidden_bn;
    std::vector<typename LeakyRelu<Scalar>::Cache> hidden_act;
    typename Linear<Scalar>::Cache head;
  };

  Batch run(const Batch& x, bool training, Cache* cache) const {
    const int s = config_.input_size;
    const Eigen::Index per_sample = static_cast<Eigen::Index>(s) * s;
    if (x.rows() != config_.input_channels || x.cols() == 0 || x.cols() % per_sample != 0)
      throw std::invalid_argument("input batch must be " + std::to_string(config_.input_channels) + " x N*" +
                                  std::to_string(s) + "*" + std::to_string(s));
    if (!x.allFinite()) throw std::invalid_argument("non-finite values in input batch");

    MapShape shape{static_cast<int>(x.cols() / per_sample), s, s};
    if (cache) {
      cache->batch = shape.n;
      cache->conv.resize(conv_.size());
      cache->conv_bn.resize(conv_.size());
      cache->conv_act.resize(conv_.size());
      cache->pool.resize(conv_.size());
      cache->hidden.resize(hidden_.size());
      cache->hidden_bn.resize(hidden_.size());
      cache->hidden_act.resize(hidden_.size());
    }
    Batch h = x;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      h = conv_[i].forward(h, shape, cache ? &cache->conv[i] : nullptr);
      shape = conv_[i].output_shape(shape);
      h = conv_bn_[i].forward(h, training, cache ? &cache->conv_bn[i] : nullptr);
      h = relu_.forward(h, cache ? &cache->conv_act[i] : nullptr);
      h = pool_.forward(h, shape, cache ? &cache->pool[i] : nullptr);
      shape = MaxPool2<Scalar>::output_shape(shape);
    }
    if (cache) cache->final_shape = shape;
    h = flatten_maps<Scalar>(h, shape);
    for (std::size_t i = 0; i < hidden_.size(); ++i) {
      h = hidden_[i].forward(h, cache ? &cache->hidden[i] : nullptr);
      h = hidden_bn_[i].forward(h, training, cache ? &cache->hidden_bn[i] : nullptr);
      h = lrelu_.forward(h, cache ? &cache->hidden_act[i] : nullptr);
    }
    return head_.forward(h, cache ? &cache->head : nullptr);
  }

  NetworkConfig config_;
  std::vector<Conv2d<Scalar>> conv_;
  std::vector<BatchNorm<Scalar>> conv_bn_;
  std::vector<Linear<Scalar>> hidden_;
  std::vector<BatchNorm<Scalar>> hidden_bn_;
  Linear<Scalar> head_;
  LeakyRelu<Scalar> relu_;
  LeakyRelu<Scalar> lrelu_;
  MaxPool2<Scalar> pool_;
  std::uint64_t head_layer_ = 0;
  Head head_kind_ = Head::Embedding;
  Mode mode_ = Mode::Train;
  std::optional<Cache> cache_;
  Batch input_grad_;
};

/// Model with float tensors used for training and checkpoints.
using Model = Backbone<float>;

}  // namespace gradeloss
