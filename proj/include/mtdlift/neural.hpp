#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtdlift::nn {

// Row-major dense matrix of doubles.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v);
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
// aᵀ·b accumulated into out (out += aᵀ b).
void add_matmul_tn(Tensor& out, const Tensor& a, const Tensor& b);
// a·bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Throws Numeric if any entry is NaN or infinite.
void check_finite(const Tensor& t, std::string_view what);

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- dense --------------------------------------------------------------------

enum class Activation { Identity, Relu, Sigmoid };

// y = act(x W + b); x is B x in, W is in x out, b is 1 x out.
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Activation act);

struct DenseGrads {
  Tensor dx, dw, db;
};

// Uses the forward output y for the activation derivative.
DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& y, Activation act, const Tensor& dy);

// --- LSTM ---------------------------------------------------------------------
//
// Gate layout along the 4H axis: input, forget, candidate, output.
//   i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o),  z = x_t Wx + h_{t-1} Wh + b
//   c_t = f ⊙ c_{t-1} + i ⊙ g,  h_t = o ⊙ tanh(c_t)
// Masked steps carry (h, c) forward unchanged. Initial state is zero.

struct LstmTrace {
  Tensor gates;   // S x 4H, post-activation
  Tensor cells;   // S x H
  Tensor hidden;  // S x H
};

LstmTrace lstm_forward(const Tensor& inputs, std::span<const std::uint8_t> mask, const Tensor& wx,
                       const Tensor& wh, const Tensor& b);

// Adds parameter gradients into dwx/dwh/db and returns d inputs (S x In).
Tensor lstm_backward(const LstmTrace& trace, const Tensor& inputs, std::span<const std::uint8_t> mask,
                     const Tensor& wx, const Tensor& wh, const Tensor& d_hidden, Tensor& dwx, Tensor& dwh,
                     Tensor& db);

// --- additive attention -------------------------------------------------------
//
// e_t = vᵀ tanh(Wh h_t + Wx x), α = softmax over unmasked steps, z = Σ α_t h_t.

struct AttentionTrace {
  std::vector<double> weights;  // length S, zero on masked steps
  Tensor scores_hidden;         // S x A, tanh activations
  Tensor pooled;                // 1 x H
  bool empty = true;            // no unmasked step: z = 0
};

AttentionTrace attention_forward(const Tensor& hidden, const Tensor& context, std::span<const std::uint8_t> mask,
                                 const Tensor& wh, const Tensor& wx, const Tensor& v);

struct AttentionInputGrads {
  Tensor d_hidden;   // S x H
  Tensor d_context;  // 1 x R
};

AttentionInputGrads attention_backward(const AttentionTrace& trace, const Tensor& hidden, const Tensor& context,
                                       std::span<const std::uint8_t> mask, const Tensor& wh, const Tensor& wx,
                                       const Tensor& v, const Tensor& d_pooled, Tensor& dwh, Tensor& dwx,
                                       Tensor& dv);

// --- divergence and loss ------------------------------------------------------

inline constexpr double kVarianceFloor = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

// KL(N(mean_t, var_t) ‖ N(mean_c, var_c)) for one dimension.
double gaussian_kl(double mean_t, double var_t, double mean_c, double var_c);

struct KldResult {
  double value = 0.0;
  Tensor d_control;
  Tensor d_treated;
};

// Diagonal Gaussians fitted by moments (biased variance, floored at
// `variance_floor`); returns KL(treated ‖ control) summed over columns.
// Both batches need at least two rows.
KldResult gaussian_kld(const Tensor& control, const Tensor& treated, double variance_floor = kVarianceFloor);

struct BceResult {
  double loss = 0.0;
  std::vector<double> d_pred;  // d loss / d p, zero where p was clamped
};

// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
BceResult bce_loss(std::span<const double> p, std::span<const int> y);

// --- parameters and optimizer -------------------------------------------------

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& grad(std::size_t i) { return grads_[i]; }
  const Tensor& grad(std::size_t i) const { return grads_[i]; }

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  Tensor& value(std::string_view name) { return values_[index(name)]; }
  const Tensor& value(std::string_view name) const { return values_[index(name)]; }
  Tensor& grad(std::string_view name) { return grads_[index(name)]; }

  void zero_grad();
  std::size_t parameter_count() const;

  // Copies values from a store with the same names and shapes.
  void assign(const ParamStore& other);

  // "#mtdlift-params v1 <n>" followed by "name rows cols" and a value line per
  // tensor; values use shortest round-trip decimals.
  void write(std::ostream& out) const;
  static ParamStore read(std::istream& in);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;  // decoupled L2
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(ParamStore& params);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), seeded per tensor.
Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed);
Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed);

}  // namespace mtdlift::nn
