#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "uma2/common.hpp"

namespace uma2 {

using Vec = std::vector<double>;

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows * cols entries

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

double dot(std::span<const double> a, std::span<const double> b);

// Numerically stable logistic; exact 0.5 at x = 0.
double sigmoid(double x);

// Binary cross-entropy. y_hat is clamped to [1e-12, 1 - 1e-12] before the
// logarithms, so the result is finite for any finite input.
double bce(int y, double y_hat);

inline constexpr double kBceClamp = 1e-12;

// ---- affine (+ ReLU) layer -------------------------------------------------

// Forward-pass record needed by the backward pass.
struct AffineCache {
  Vec input;
  Vec pre_activation;
  bool relu = true;
};

// output[j] = relu(W[j,:] . input + bias[j]). ReLU sub-gradient at exactly 0
// is taken as 0 everywhere in this module.
Vec affine_relu_forward(const Vec& input, const DenseMatrix& weights, const Vec& bias,
                        AffineCache* cache = nullptr);

// Same layer without the ReLU (used as the last tower layer, so embedding
// coordinates can be negative).
Vec affine_linear_forward(const Vec& input, const DenseMatrix& weights, const Vec& bias,
                          AffineCache* cache = nullptr);

struct AffineGrads {
  Vec grad_input;
  DenseMatrix grad_weights;
  Vec grad_bias;
};

AffineGrads affine_relu_backward(const Vec& grad_output, const DenseMatrix& weights,
                                 const AffineCache& cache);

// Accumulating form: adds parameter gradients into grad_weights / grad_bias
// and returns the gradient with respect to the layer input.
Vec affine_backward_accumulate(const Vec& grad_output, const DenseMatrix& weights,
                               const AffineCache& cache, DenseMatrix& grad_weights,
                               Vec& grad_bias);

// ---- MLP -------------------------------------------------------------------

struct MlpLayer {
  DenseMatrix w;
  Vec b;
  bool relu = true;
};

struct Mlp {
  std::vector<MlpLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().w.cols; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().w.rows; }
};

// One layer with Glorot-uniform weights and zero bias.
MlpLayer make_layer(std::size_t input_dim, std::size_t output_dim, bool relu, std::mt19937_64& rng);

// Glorot-uniform weights, zero biases, ReLU on all layers except the last.
Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& dims, std::mt19937_64& rng);

Mlp make_zero_like(const Mlp& m);

struct MlpCache {
  std::vector<AffineCache> layers;
};

Vec mlp_forward(const Mlp& mlp, const Vec& input, MlpCache* cache = nullptr);

// Accumulates parameter gradients into `grads` (same topology as `mlp`);
// returns the gradient with respect to the network input.
Vec mlp_backward(const Mlp& mlp, const MlpCache& cache, const Vec& grad_output, Mlp& grads);

// ---- Adam ------------------------------------------------------------------

struct AdamState {
  Vec first_moment;
  Vec second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 0.001;
};

AdamState make_adam_state(std::size_t n, double learning_rate = 0.001);

// Standard Adam with bias correction; mutates params and state in place.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace uma2
