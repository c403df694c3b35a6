#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dfrec/ops.hpp"
#include "dfrec/rng.hpp"

namespace dfrec {

// Parameter registry. Owns every learnable tensor of a model; optimizer and
// checkpoint code iterate it in registration order, which is fixed by
// construction and therefore deterministic.
template <typename T>
class ParamStore {
 public:
  ParamTensor<T>& add(const std::string& name, Shape shape) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<ParamTensor<T>>(name, std::move(shape)));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }

  ParamTensor<T>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ConfigError("unknown parameter: " + name);
    return *it->second;
  }

  const std::vector<std::unique_ptr<ParamTensor<T>>>& all() const { return params_; }
  std::vector<std::unique_ptr<ParamTensor<T>>>& all() { return params_; }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p->trainable = trainable;
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (auto& p : params_) n += p->size();
    return n;
  }

  // Stable fingerprint of all parameter values (frozen-provider checks).
  std::uint64_t value_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto& p : params_) {
      h = fnv1a64(p->name.data(), p->name.size(), h);
      h = fnv1a64(p->value.data(), p->value.size() * sizeof(T), h);
    }
    return h;
  }

 private:
  std::vector<std::unique_ptr<ParamTensor<T>>> params_;
  std::unordered_map<std::string, ParamTensor<T>*> by_name_;
};

namespace init {

// He-normal fan-in initialization keyed by parameter name, so values do not
// depend on registration order.
template <typename T>
void he_normal(ParamTensor<T>& p, std::int64_t fan_in, std::uint64_t seed) {
  Rng rng = Rng::keyed(seed, {fnv1a64(p.name.data(), p.name.size())});
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : p.value) v = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
void normal(ParamTensor<T>& p, double stddev, std::uint64_t seed) {
  Rng rng = Rng::keyed(seed, {fnv1a64(p.name.data(), p.name.size())});
  for (auto& v : p.value) v = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void constant(ParamTensor<T>& p, T c) {
  std::fill(p.value.begin(), p.value.end(), c);
}

}  // namespace init

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayer {
  ParamTensor<T>* w = nullptr;  // [Din, Dout]
  ParamTensor<T>* b = nullptr;  // [Dout]

  static LinearLayer create(ParamStore<T>& ps, const std::string& name, std::int64_t din, std::int64_t dout,
                            std::uint64_t seed) {
    LinearLayer l;
    l.w = &ps.add(name + ".w", {din, dout});
    l.b = &ps.add(name + ".b", {dout});
    init::he_normal(*l.w, din, seed);
    return l;
  }

  // x[N,Din] -> [N,Dout]
  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    return add_row_broadcast(matmul(x, g.param(*w)), g.param(*b));
  }

  // x[Din] -> [Dout]
  Value<T> forward_vec(Graph<T>& g, const Value<T>& x) const {
    Value<T> row = reshape(x, Shape{1, x.shape()[0]});
    return reshape(forward(g, row), Shape{w->shape[1]});
  }
};

template <typename T>
struct Conv2dLayer {
  ParamTensor<T>* w = nullptr;  // [Co,Ci,k,k]
  ParamTensor<T>* b = nullptr;  // [Co]
  std::int64_t stride = 1, pad = 1, dil = 1;

  static Conv2dLayer create(ParamStore<T>& ps, const std::string& name, std::int64_t ci, std::int64_t co,
                            std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t dil,
                            std::uint64_t seed) {
    Conv2dLayer l;
    l.w = &ps.add(name + ".w", {co, ci, k, k});
    l.b = &ps.add(name + ".b", {co});
    l.stride = stride;
    l.pad = pad;
    l.dil = dil;
    init::he_normal(*l.w, ci * k * k, seed);
    return l;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    Value<T> bias = g.param(*b);
    return conv2d(x, g.param(*w), &bias, stride, pad, dil);
  }
};

template <typename T>
struct InstanceNormLayer {
  ParamTensor<T>* gamma = nullptr;
  ParamTensor<T>* beta = nullptr;

  static InstanceNormLayer create(ParamStore<T>& ps, const std::string& name, std::int64_t c) {
    InstanceNormLayer l;
    l.gamma = &ps.add(name + ".g", {c});
    l.beta = &ps.add(name + ".b", {c});
    init::constant(*l.gamma, T(1));
    return l;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    return instance_norm(x, g.param(*gamma), g.param(*beta));
  }
};

// Conv + instance norm + ReLU, the convnet building block used by the
// segmentation backbone and the U-Net.
template <typename T>
struct ConvBlock {
  Conv2dLayer<T> conv;
  InstanceNormLayer<T> norm;
  bool use_norm = true;
  bool use_relu = true;

  static ConvBlock create(ParamStore<T>& ps, const std::string& name, std::int64_t ci, std::int64_t co,
                          std::int64_t stride, std::uint64_t seed, bool use_norm = true, bool use_relu = true,
                          std::int64_t k = 3, std::int64_t dil = 1) {
    ConvBlock b;
    const std::int64_t pad = dil * (k - 1) / 2;
    b.conv = Conv2dLayer<T>::create(ps, name + ".conv", ci, co, k, stride, pad, dil, seed);
    if (use_norm) b.norm = InstanceNormLayer<T>::create(ps, name + ".in", co);
    b.use_norm = use_norm;
    b.use_relu = use_relu;
    return b;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    Value<T> y = conv.forward(g, x);
    if (use_norm) y = norm.forward(g, y);
    if (use_relu) y = relu(y);
    return y;
  }
};

template <typename T>
struct LayerNormLayer {
  ParamTensor<T>* gamma = nullptr;
  ParamTensor<T>* beta = nullptr;

  static LayerNormLayer create(ParamStore<T>& ps, const std::string& name, std::int64_t d) {
    LayerNormLayer l;
    l.gamma = &ps.add(name + ".g", {d});
    l.beta = &ps.add(name + ".b", {d});
    init::constant(*l.gamma, T(1));
    return l;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    return layer_norm(x, g.param(*gamma), g.param(*beta));
  }
};

// Multi-head self-attention over x[N,D].
template <typename T>
struct MultiHeadAttention {
  LinearLayer<T> wq, wk, wv, wo;
  std::int64_t heads = 1, dim = 0;

  static MultiHeadAttention create(ParamStore<T>& ps, const std::string& name, std::int64_t d, std::int64_t heads,
                                   std::uint64_t seed) {
    if (d % heads != 0) throw ConfigError("attention width not divisible by head count");
    MultiHeadAttention m;
    m.wq = LinearLayer<T>::create(ps, name + ".q", d, d, seed);
    m.wk = LinearLayer<T>::create(ps, name + ".k", d, d, seed);
    m.wv = LinearLayer<T>::create(ps, name + ".v", d, d, seed);
    m.wo = LinearLayer<T>::create(ps, name + ".o", d, d, seed);
    m.heads = heads;
    m.dim = d;
    return m;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    const std::int64_t n = x.shape()[0];
    const std::int64_t dh = dim / heads;
    auto split = [&](const Value<T>& v) {
      // [N,D] -> [heads, N, dh]
      return permute3(reshape(v, Shape{n, heads, dh}), 1, 0, 2);
    };
    Value<T> q = split(wq.forward(g, x));
    Value<T> k = split(wk.forward(g, x));
    Value<T> v = split(wv.forward(g, x));
    Value<T> scores = scale(batched_matmul(q, k, false, true), T(1) / T(std::sqrt(double(dh))));
    Value<T> attn = softmax_last(scores);
    Value<T> ctx = batched_matmul(attn, v, false, false);      // [heads, N, dh]
    Value<T> merged = reshape(permute3(ctx, 1, 0, 2), Shape{n, dim});
    return wo.forward(g, merged);
  }
};

// Pre-LN transformer block: x + MHA(LN(x)); x + MLP(LN(x)).
template <typename T>
struct TransformerBlock {
  LayerNormLayer<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  LinearLayer<T> fc1, fc2;

  static TransformerBlock create(ParamStore<T>& ps, const std::string& name, std::int64_t d, std::int64_t heads,
                                 std::int64_t mlp_ratio, std::uint64_t seed) {
    TransformerBlock b;
    b.ln1 = LayerNormLayer<T>::create(ps, name + ".ln1", d);
    b.ln2 = LayerNormLayer<T>::create(ps, name + ".ln2", d);
    b.attn = MultiHeadAttention<T>::create(ps, name + ".attn", d, heads, seed);
    b.fc1 = LinearLayer<T>::create(ps, name + ".fc1", d, d * mlp_ratio, seed);
    b.fc2 = LinearLayer<T>::create(ps, name + ".fc2", d * mlp_ratio, d, seed);
    return b;
  }

  Value<T> forward(Graph<T>& g, const Value<T>& x) const {
    Value<T> h = add(x, attn.forward(g, ln1.forward(g, x)));
    Value<T> m = fc2.forward(g, gelu(fc1.forward(g, ln2.forward(g, h))));
    return add(h, m);
  }
};

// Fixed 2-D sinusoidal positional table for a (rows, cols) patch grid.
// Half of the embedding encodes the row coordinate, half the column.
template <typename T>
Tensor<T> sincos_position_table(std::int64_t rows, std::int64_t cols, std::int64_t dim) {
  if (dim % 4 != 0) throw ConfigError("positional dim must be divisible by 4");
  Tensor<T> table({rows * cols, dim});
  const std::int64_t quarter = dim / 4;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      T* row = table.ptr() + (r * cols + c) * dim;
      for (std::int64_t i = 0; i < quarter; ++i) {
        const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = static_cast<T>(std::sin(r * omega));
        row[quarter + i] = static_cast<T>(std::cos(r * omega));
        row[2 * quarter + i] = static_cast<T>(std::sin(c * omega));
        row[3 * quarter + i] = static_cast<T>(std::cos(c * omega));
      }
    }
  }
  return table;
}

}  // namespace dfrec
