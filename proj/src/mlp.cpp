#include "mvlat/mlp.hpp"

#include <cmath>

#include "mvlat/rng.hpp"

namespace mvlat {

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ValueError("unknown activation '" + name + "'");
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  return "tanh";
}

void Mlp::Grads::setZero() {
  for (auto& l : layers) {
    l.w.setZero();
    l.b.setZero();
  }
}

Mlp::Mlp(const std::vector<int>& dims, Activation act, RngSeed seed) : act_(act) {
  if (dims.size() < 2) throw ValueError("Mlp needs at least input and output dims");
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    if (fan_in < 1 || fan_out < 1) throw ValueError("Mlp layer dims must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer layer;
    layer.w.resize(fan_out, fan_in);
    layer.b.resize(fan_out);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        layer.w(r, c) = static_cast<float>(rng.uniform(-bound, bound));
      }
    }
    for (int r = 0; r < fan_out; ++r) {
      layer.b(r) = static_cast<float>(rng.uniform(-bound, bound));
    }
    layers_.push_back(std::move(layer));
  }
}

Mlp Mlp::identity(int d, std::size_t n_layers) {
  Mlp mlp;
  mlp.act_ = Activation::Identity;
  for (std::size_t i = 0; i < n_layers; ++i) {
    Layer layer;
    layer.w = Matrix::Identity(d, d);
    layer.b = Vector::Zero(d);
    mlp.layers_.push_back(std::move(layer));
  }
  return mlp;
}

namespace {

Matrix apply_act(const Matrix& z, Activation act) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::Tanh: return z.array().tanh();
    case Activation::Relu: return z.cwiseMax(0.0f);
  }
  return z;
}

// derivative expressed through the post-activation value
Matrix act_grad(const Matrix& a, const Matrix& d_a, Activation act) {
  switch (act) {
    case Activation::Identity: return d_a;
    case Activation::Tanh: return d_a.array() * (1.0f - a.array().square());
    case Activation::Relu: return (a.array() > 0.0f).cast<float>() * d_a.array();
  }
  return d_a;
}

}  // namespace

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != d_in()) {
    throw DimensionError("Mlp::forward: input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(d_in()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->activations.clear();
  }
  Matrix cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (cache) cache->inputs.push_back(cur);
    Matrix z = (cur * layers_[i].w.transpose()).rowwise() + layers_[i].b.transpose();
    if (i + 1 < layers_.size()) {
      z = apply_act(z, act_);
      if (cache) cache->activations.push_back(z);
    }
    cur = std::move(z);
  }
  return cur;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& d_out, Grads& grads) const {
  Matrix d_z = d_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grads.layers[i].w += d_z.transpose() * cache.inputs[i];
    grads.layers[i].b += d_z.colwise().sum().transpose();
    Matrix d_x = d_z * layers_[i].w;
    if (i > 0) {
      d_z = act_grad(cache.activations[i - 1], d_x, act_);
    } else {
      d_z = std::move(d_x);
    }
  }
  return d_z;
}

Mlp::Grads Mlp::zero_grads() const {
  Grads g;
  for (const auto& l : layers_) {
    Layer zero;
    zero.w = Matrix::Zero(l.w.rows(), l.w.cols());
    zero.b = Vector::Zero(l.b.size());
    g.layers.push_back(std::move(zero));
  }
  return g;
}

}  // namespace mvlat
