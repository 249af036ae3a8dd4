#pragma once

#include <string>
#include <vector>

#include "mvlat/core.hpp"

namespace mvlat {

enum class Activation { Identity, Tanh, Relu };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation act);

/// Row-wise MLP: each input row is mapped independently. The activation sits
/// between layers, never on the output.
class Mlp {
 public:
  struct Layer {
    Matrix w;  // (out x in)
    Vector b;  // (out)
  };

  struct Cache {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> activations;  // post-activation of hidden layers
  };

  struct Grads {
    std::vector<Layer> layers;
    void setZero();
  };

  Mlp() = default;
  /// dims = [d_in, hidden..., d_out]; fan-in-scaled uniform init from seed.
  Mlp(const std::vector<int>& dims, Activation act, RngSeed seed);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  /// Returns gradient w.r.t. the input; accumulates parameter grads.
  Matrix backward(const Cache& cache, const Matrix& d_out, Grads& grads) const;

  Grads zero_grads() const;
  std::size_t n_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return layers_[i]; }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  int d_in() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.cols()); }
  int d_out() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.rows()); }
  Activation activation() const { return act_; }

  /// Square identity stack (zero biases, unit weights); test configuration.
  static Mlp identity(int d, std::size_t n_layers = 1);

 private:
  std::vector<Layer> layers_;
  Activation act_ = Activation::Tanh;
};

}  // namespace mvlat
