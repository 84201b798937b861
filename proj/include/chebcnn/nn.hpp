#pragma once

// The Chebyshev convolution layer and the full classification network:
// ChebConv(32, K=4) -> BN -> ReLU -> MaxPool -> ChebConv(64, K=6) -> BN ->
// ReLU -> MaxPool -> Flatten -> Dense(256) -> Dropout(0.5) -> Dense(classes)
// -> Softmax. Layers are templated on the scalar type so the test suite can
// run a double-precision shadow of the float training stack.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "chebcnn/errors.hpp"
#include "chebcnn/rng.hpp"
#include "chebcnn/tensor.hpp"

namespace chebcnn::nn {

enum class ConvKind { chebyshev, standard };

// Shape of the classification stack. The layer sequence itself is fixed;
// these fields size it.
struct NetworkSpec {
  int side = 128;       // square input extent; two 2x2 pools need side % 4 == 0
  int classes = 3;
  int in_channels = 1;
  int filters1 = 32;
  int order1 = 4;       // Chebyshev upper order K of stage 1 (K+1 branches)
  int filters2 = 64;
  int order2 = 6;
  int dense_width = 256;
  double dropout_p = 0.5;
  ConvKind conv = ConvKind::chebyshev;

  int flatten_width() const { return filters2 * (side / 4) * (side / 4); }
};

// Per-order filter bank of one Chebyshev convolution: K+1 weight tensors
// W_k, each [out, in, k, k], plus one shared bias.
template <typename T>
struct ChebConvSpecT {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int order = 0;  // K
  std::vector<ten::TensorT<T>> weights;  // size K+1
  ten::TensorT<T> bias;                  // [out]

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(order + 1) * out_channels * in_channels *
               kernel * kernel +
           static_cast<std::size_t>(out_channels);
  }

  void validate() const {
    if (weights.size() != static_cast<std::size_t>(order) + 1)
      throw InvalidInputError("ChebConvSpec: expected " + std::to_string(order + 1) +
                              " weight tensors, got " + std::to_string(weights.size()));
    const ten::Shape want = {static_cast<std::size_t>(out_channels),
                             static_cast<std::size_t>(in_channels),
                             static_cast<std::size_t>(kernel),
                             static_cast<std::size_t>(kernel)};
    for (const auto& w : weights)
      if (w.shape() != want)
        throw DimensionError("ChebConvSpec: weight shape " + ten::shape_str(w.shape()) +
                             " does not match " + ten::shape_str(want));
    if (bias.shape() != ten::Shape{static_cast<std::size_t>(out_channels)})
      throw DimensionError("ChebConvSpec: bias shape " + ten::shape_str(bias.shape()) +
                           " does not match " + std::to_string(out_channels) +
                           " filters");
  }

  // He-initialized bank: every branch draws from N(0, 2 / fan_in) with
  // fan_in = (K+1) * in * k * k so the summed branches keep unit variance.
  static ChebConvSpecT he_init(int in_channels, int out_channels, int order,
                               Rng& rng, int kernel = 3) {
    ChebConvSpecT spec;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.order = order;
    const double fan_in =
        static_cast<double>(order + 1) * in_channels * kernel * kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    const ten::Shape wshape = {static_cast<std::size_t>(out_channels),
                               static_cast<std::size_t>(in_channels),
                               static_cast<std::size_t>(kernel),
                               static_cast<std::size_t>(kernel)};
    for (int k = 0; k <= order; ++k) {
      std::vector<T> data(ten::shape_numel(wshape));
      for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
      auto w = ten::TensorT<T>::from_data(wshape, std::move(data));
      w.set_requires_grad(true);
      spec.weights.push_back(std::move(w));
    }
    spec.bias = ten::TensorT<T>::zeros({static_cast<std::size_t>(out_channels)});
    spec.bias.set_requires_grad(true);
    return spec;
  }
};

// F_out = sum_{k=0}^{K} W_k * T_k(s) + bias with s = tanh(input). tanh maps
// activations into (-1, 1), the interval where the basis is bounded; the
// T_k(s) maps come from the elementwise recurrence T_{k+1} = 2 s T_k - T_{k-1}
// and every branch participates in the tape.
template <typename T>
ten::TensorT<T> cheb_conv_forward(const ten::TensorT<T>& input,
                                  const ChebConvSpecT<T>& spec) {
  spec.validate();
  if (input.shape().size() != 4 ||
      input.shape()[1] != static_cast<std::size_t>(spec.in_channels))
    throw DimensionError("cheb_conv_forward: input " + ten::shape_str(input.shape()) +
                         " does not carry " + std::to_string(spec.in_channels) +
                         " channels");
  const auto s = ten::tanh_op(input);
  auto t_prev = ten::TensorT<T>::ones(s.shape());  // T_0, constant
  auto out = ten::conv2d(t_prev, spec.weights[0], spec.bias);
  if (spec.order >= 1) {
    auto t_cur = s;  // T_1
    out = ten::add(out, ten::conv2d(t_cur, spec.weights[1]));
    for (int k = 2; k <= spec.order; ++k) {
      auto t_next = ten::sub(ten::scale(ten::mul(s, t_cur), T(2)), t_prev);
      out = ten::add(out, ten::conv2d(t_next, spec.weights[k]));
      t_prev = t_cur;
      t_cur = t_next;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer objects. A model owns its layers; forward threads the training flag
// and the dropout stream through them.

template <typename T>
struct ParamT {
  std::string name;
  ten::TensorT<T> tensor;
  bool weight_decay = false;  // conv/dense weights only
};

template <typename T>
struct NamedBufferT {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct LayerT {
  virtual ~LayerT() = default;
  virtual ten::TensorT<T> forward(const ten::TensorT<T>& x, bool training,
                                  Rng* dropout_rng) = 0;
  virtual void collect(std::vector<ParamT<T>>& params,
                       std::vector<NamedBufferT<T>>& buffers) {}
};

template <typename T>
struct ChebConvLayerT final : LayerT<T> {
  std::string name;
  ChebConvSpecT<T> spec;

  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return cheb_conv_forward(x, spec);
  }
  void collect(std::vector<ParamT<T>>& params,
               std::vector<NamedBufferT<T>>& buffers) override {
    for (std::size_t k = 0; k < spec.weights.size(); ++k)
      params.push_back({name + ".w" + std::to_string(k), spec.weights[k], true});
    params.push_back({name + ".b", spec.bias, false});
  }
};

// Plain convolution stage used by the ablation arm.
template <typename T>
struct Conv2dLayerT final : LayerT<T> {
  std::string name;
  ten::TensorT<T> weight;  // [out, in, k, k]
  ten::TensorT<T> bias;    // [out]

  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return ten::conv2d(x, weight, bias);
  }
  void collect(std::vector<ParamT<T>>& params,
               std::vector<NamedBufferT<T>>& buffers) override {
    params.push_back({name + ".w", weight, true});
    params.push_back({name + ".b", bias, false});
  }
};

template <typename T>
struct BatchNormLayerT final : LayerT<T> {
  std::string name;
  ten::TensorT<T> gamma;
  ten::TensorT<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormLayerT(std::string layer_name, std::size_t channels)
      : name(std::move(layer_name)),
        gamma(ten::TensorT<T>::ones({channels})),
        beta(ten::TensorT<T>::zeros({channels})),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool training, Rng*) override {
    return ten::batchnorm2d(x, gamma, beta, running_mean, running_var, training);
  }
  void collect(std::vector<ParamT<T>>& params,
               std::vector<NamedBufferT<T>>& buffers) override {
    params.push_back({name + ".gamma", gamma, false});
    params.push_back({name + ".beta", beta, false});
    buffers.push_back({name + ".running_mean", &running_mean});
    buffers.push_back({name + ".running_var", &running_var});
  }
};

template <typename T>
struct ReluLayerT final : LayerT<T> {
  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return ten::relu(x);
  }
};

template <typename T>
struct MaxPoolLayerT final : LayerT<T> {
  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return ten::maxpool2x2(x);
  }
};

template <typename T>
struct FlattenLayerT final : LayerT<T> {
  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return ten::flatten(x);
  }
};

template <typename T>
struct DenseLayerT final : LayerT<T> {
  std::string name;
  ten::TensorT<T> weight;  // [in, out]
  ten::TensorT<T> bias;    // [out]

  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool, Rng*) override {
    return ten::linear(x, weight, bias);
  }
  void collect(std::vector<ParamT<T>>& params,
               std::vector<NamedBufferT<T>>& buffers) override {
    params.push_back({name + ".w", weight, true});
    params.push_back({name + ".b", bias, false});
  }
};

template <typename T>
struct DropoutLayerT final : LayerT<T> {
  double p = 0.5;
  ten::TensorT<T> forward(const ten::TensorT<T>& x, bool training,
                          Rng* dropout_rng) override {
    return ten::dropout(x, p, training, dropout_rng);
  }
};

template <typename T>
struct ForwardOutT {
  ten::TensorT<T> logits;  // pre-softmax, [N, classes]
  ten::TensorT<T> probs;   // softmax rows
};

template <typename T>
class ModelT {
 public:
  NetworkSpec spec;
  std::vector<std::unique_ptr<LayerT<T>>> layers;

  ForwardOutT<T> forward(const ten::TensorT<T>& batch, bool training,
                         Rng* dropout_rng = nullptr) {
    if (batch.shape().size() != 4 ||
        batch.shape()[1] != static_cast<std::size_t>(spec.in_channels) ||
        batch.shape()[2] != static_cast<std::size_t>(spec.side) ||
        batch.shape()[3] != static_cast<std::size_t>(spec.side)) {
      throw DimensionError("forward: batch " + ten::shape_str(batch.shape()) +
                           " does not match spec side " + std::to_string(spec.side));
    }
    ten::TensorT<T> x = batch;
    for (auto& layer : layers) x = layer->forward(x, training, dropout_rng);
    ForwardOutT<T> out;
    out.logits = x;
    out.probs = ten::softmax_rows(x);
    return out;
  }

  std::vector<ParamT<T>> parameters() {
    std::vector<ParamT<T>> params;
    std::vector<NamedBufferT<T>> buffers;
    for (auto& layer : layers) layer->collect(params, buffers);
    return params;
  }

  std::vector<NamedBufferT<T>> buffers() {
    std::vector<ParamT<T>> params;
    std::vector<NamedBufferT<T>> buffers;
    for (auto& layer : layers) layer->collect(params, buffers);
    return buffers;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }
};

namespace detail {

template <typename T>
ten::TensorT<T> he_tensor(ten::Shape shape, double fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  std::vector<T> data(ten::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
  auto t = ten::TensorT<T>::from_data(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
std::unique_ptr<LayerT<T>> make_conv_stage(const std::string& name, int in_ch,
                                           int out_ch, int order, ConvKind kind,
                                           Rng& rng) {
  if (kind == ConvKind::chebyshev) {
    auto layer = std::make_unique<ChebConvLayerT<T>>();
    layer->name = name;
    layer->spec = ChebConvSpecT<T>::he_init(in_ch, out_ch, order, rng);
    return layer;
  }
  auto layer = std::make_unique<Conv2dLayerT<T>>();
  layer->name = name;
  layer->weight = he_tensor<T>({static_cast<std::size_t>(out_ch),
                                static_cast<std::size_t>(in_ch), 3, 3},
                               static_cast<double>(in_ch) * 9, rng);
  layer->bias = ten::TensorT<T>::zeros({static_cast<std::size_t>(out_ch)});
  layer->bias.set_requires_grad(true);
  return layer;
}

}  // namespace detail

// Assembles the stack with He-initialized conv/dense weights, zero biases,
// and batchnorm gamma = 1, beta = 0. Deterministic under the seed.
template <typename T>
ModelT<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.side <= 0 || spec.side % 4 != 0)
    throw InvalidInputError("build_network: input side must be a positive multiple "
                            "of 4, got " + std::to_string(spec.side));
  if (spec.classes < 2 || spec.in_channels < 1 || spec.filters1 < 1 ||
      spec.filters2 < 1 || spec.dense_width < 1 || spec.order1 < 0 ||
      spec.order2 < 0)
    throw InvalidInputError("build_network: degenerate network spec");
  if (spec.dropout_p < 0.0 || spec.dropout_p >= 1.0)
    throw InvalidInputError("build_network: dropout must lie in [0, 1)");

  Rng rng(seed);
  ModelT<T> model;
  model.spec = spec;
  auto& L = model.layers;

  L.push_back(detail::make_conv_stage<T>("conv1", spec.in_channels, spec.filters1,
                                         spec.order1, spec.conv, rng));
  L.push_back(std::make_unique<BatchNormLayerT<T>>(
      "bn1", static_cast<std::size_t>(spec.filters1)));
  L.push_back(std::make_unique<ReluLayerT<T>>());
  L.push_back(std::make_unique<MaxPoolLayerT<T>>());
  L.push_back(detail::make_conv_stage<T>("conv2", spec.filters1, spec.filters2,
                                         spec.order2, spec.conv, rng));
  L.push_back(std::make_unique<BatchNormLayerT<T>>(
      "bn2", static_cast<std::size_t>(spec.filters2)));
  L.push_back(std::make_unique<ReluLayerT<T>>());
  L.push_back(std::make_unique<MaxPoolLayerT<T>>());
  L.push_back(std::make_unique<FlattenLayerT<T>>());

  const std::size_t flat = static_cast<std::size_t>(spec.flatten_width());
  auto dense1 = std::make_unique<DenseLayerT<T>>();
  dense1->name = "dense1";
  dense1->weight = detail::he_tensor<T>(
      {flat, static_cast<std::size_t>(spec.dense_width)},
      static_cast<double>(flat), rng);
  dense1->bias = ten::TensorT<T>::zeros({static_cast<std::size_t>(spec.dense_width)});
  dense1->bias.set_requires_grad(true);
  L.push_back(std::move(dense1));

  auto drop = std::make_unique<DropoutLayerT<T>>();
  drop->p = spec.dropout_p;
  L.push_back(std::move(drop));

  auto dense2 = std::make_unique<DenseLayerT<T>>();
  dense2->name = "dense2";
  dense2->weight = detail::he_tensor<T>(
      {static_cast<std::size_t>(spec.dense_width),
       static_cast<std::size_t>(spec.classes)},
      static_cast<double>(spec.dense_width), rng);
  dense2->bias = ten::TensorT<T>::zeros({static_cast<std::size_t>(spec.classes)});
  dense2->bias.set_requires_grad(true);
  L.push_back(std::move(dense2));

  return model;
}

using Model = ModelT<float>;
using ChebConvSpec = ChebConvSpecT<float>;
using Param = ParamT<float>;

}  // namespace chebcnn::nn
