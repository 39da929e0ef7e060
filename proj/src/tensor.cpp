#include "uma2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace uma2 {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string dims(std::size_t a, std::size_t b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  check(a.size() == b.size(), "dot: length mismatch " + dims(a.size(), b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce(int y, double y_hat) {
  const double p = std::clamp(y_hat, kBceClamp, 1.0 - kBceClamp);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

namespace {

Vec affine_forward_impl(const Vec& input, const DenseMatrix& w, const Vec& bias, bool relu,
                        AffineCache* cache) {
  check(input.size() == w.cols, "affine: input length vs weight cols " + dims(input.size(), w.cols));
  check(bias.size() == w.rows, "affine: bias length vs weight rows " + dims(bias.size(), w.rows));
  Vec out(w.rows);
  for (std::size_t j = 0; j < w.rows; ++j) {
    const double* row = w.data.data() + j * w.cols;
    double s = bias[j];
    for (std::size_t k = 0; k < w.cols; ++k) s += row[k] * input[k];
    out[j] = s;
  }
  if (cache) {
    cache->input = input;
    cache->pre_activation = out;
    cache->relu = relu;
  }
  if (relu) {
    for (double& v : out) v = std::max(0.0, v);
  }
  return out;
}

}  // namespace

Vec affine_relu_forward(const Vec& input, const DenseMatrix& weights, const Vec& bias,
                        AffineCache* cache) {
  return affine_forward_impl(input, weights, bias, true, cache);
}

Vec affine_linear_forward(const Vec& input, const DenseMatrix& weights, const Vec& bias,
                          AffineCache* cache) {
  return affine_forward_impl(input, weights, bias, false, cache);
}

Vec affine_backward_accumulate(const Vec& grad_output, const DenseMatrix& weights,
                               const AffineCache& cache, DenseMatrix& grad_weights,
                               Vec& grad_bias) {
  const std::size_t out_dim = weights.rows;
  const std::size_t in_dim = weights.cols;
  check(grad_output.size() == out_dim, "backward: grad length vs rows " + dims(grad_output.size(), out_dim));
  check(cache.input.size() == in_dim, "backward: cached input vs cols " + dims(cache.input.size(), in_dim));
  check(cache.pre_activation.size() == out_dim,
        "backward: cached pre-activation vs rows " + dims(cache.pre_activation.size(), out_dim));
  check(grad_weights.rows == out_dim && grad_weights.cols == in_dim, "backward: grad_weights shape");
  check(grad_bias.size() == out_dim, "backward: grad_bias length " + dims(grad_bias.size(), out_dim));

  Vec grad_input(in_dim, 0.0);
  for (std::size_t j = 0; j < out_dim; ++j) {
    // ReLU sub-gradient at 0 is 0: strict inequality.
    const double g = (!cache.relu || cache.pre_activation[j] > 0.0) ? grad_output[j] : 0.0;
    if (g == 0.0) continue;
    grad_bias[j] += g;
    double* gw_row = grad_weights.data.data() + j * in_dim;
    const double* w_row = weights.data.data() + j * in_dim;
    const double* x = cache.input.data();
    for (std::size_t k = 0; k < in_dim; ++k) {
      gw_row[k] += g * x[k];
      grad_input[k] += g * w_row[k];
    }
  }
  return grad_input;
}

AffineGrads affine_relu_backward(const Vec& grad_output, const DenseMatrix& weights,
                                 const AffineCache& cache) {
  AffineGrads g;
  g.grad_weights = DenseMatrix(weights.rows, weights.cols);
  g.grad_bias.assign(weights.rows, 0.0);
  g.grad_input = affine_backward_accumulate(grad_output, weights, cache, g.grad_weights, g.grad_bias);
  return g;
}

MlpLayer make_layer(std::size_t input_dim, std::size_t output_dim, bool relu,
                    std::mt19937_64& rng) {
  MlpLayer layer;
  layer.w = DenseMatrix(output_dim, input_dim);
  layer.b.assign(output_dim, 0.0);
  layer.relu = relu;
  const double limit = std::sqrt(6.0 / static_cast<double>(input_dim + output_dim));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& w : layer.w.data) w = u(rng);
  return layer;
}

Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& dims, std::mt19937_64& rng) {
  check(!dims.empty(), "make_mlp: empty layer dims");
  Mlp mlp;
  std::size_t fan_in = input_dim;
  for (std::size_t li = 0; li < dims.size(); ++li) {
    mlp.layers.push_back(make_layer(fan_in, dims[li], li + 1 < dims.size(), rng));
    fan_in = dims[li];
  }
  return mlp;
}

Mlp make_zero_like(const Mlp& m) {
  Mlp z;
  z.layers.reserve(m.layers.size());
  for (const MlpLayer& l : m.layers) {
    MlpLayer zl;
    zl.w = DenseMatrix(l.w.rows, l.w.cols);
    zl.b.assign(l.b.size(), 0.0);
    zl.relu = l.relu;
    z.layers.push_back(std::move(zl));
  }
  return z;
}

Vec mlp_forward(const Mlp& mlp, const Vec& input, MlpCache* cache) {
  if (cache) cache->layers.resize(mlp.layers.size());
  Vec x = input;
  for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
    const MlpLayer& l = mlp.layers[li];
    AffineCache* c = cache ? &cache->layers[li] : nullptr;
    x = l.relu ? affine_relu_forward(x, l.w, l.b, c) : affine_linear_forward(x, l.w, l.b, c);
  }
  return x;
}

Vec mlp_backward(const Mlp& mlp, const MlpCache& cache, const Vec& grad_output, Mlp& grads) {
  check(cache.layers.size() == mlp.layers.size(), "mlp_backward: cache depth mismatch");
  check(grads.layers.size() == mlp.layers.size(), "mlp_backward: grads depth mismatch");
  Vec g = grad_output;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    g = affine_backward_accumulate(g, mlp.layers[li].w, cache.layers[li], grads.layers[li].w,
                                   grads.layers[li].b);
  }
  return g;
}

AdamState make_adam_state(std::size_t n, double learning_rate) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.learning_rate = learning_rate;
  return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("adam_update: parameter/gradient/moment size mismatch");
  }
  state.step_count += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace uma2
