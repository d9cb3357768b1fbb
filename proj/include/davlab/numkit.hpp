#pragma once

// Minimal numeric kernel: dense vectors and matrices, shift-stable reductions,
// a counter-based RNG, a small MLP with hand-written backprop and Adam.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace davlab::num {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> xs) : data_(xs) {}
  explicit Vec(std::vector<double> xs) : data_(std::move(xs)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  Vec& operator+=(const Vec& o);
  Vec& operator-=(const Vec& o);
  Vec& operator*=(double s);
  // this += s * o
  Vec& axpy(double s, const Vec& o);

  double dot(const Vec& o) const;
  double squared_norm() const { return dot(*this); }
  double norm() const;

  friend Vec operator+(Vec a, const Vec& b) { return a += b; }
  friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
  friend Vec operator*(Vec a, double s) { return a *= s; }
  friend Vec operator*(double s, Vec a) { return a *= s; }
  friend bool operator==(const Vec& a, const Vec& b) = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  Vec matvec(const Vec& x) const;
  // Aᵀ x
  Vec tmatvec(const Vec& x) const;

  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_size(std::size_t a, std::size_t b, const char* what);
void require_finite(std::span<const double> xs, const char* what);
bool all_finite(std::span<const double> xs);

// log Σ exp(v_i), computed with the max subtracted. Entries may be -inf as long
// as at least one is finite.
double log_sum_exp(std::span<const double> v);
Vec softmax(std::span<const double> v);
// log softmax, shift-stable.
Vec log_softmax(std::span<const double> v);

// Counter-based generator: output i is a pure function of (seed, stream, i).
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // [0, 1)
  double uniform();
  double normal();
  Vec normal_vec(std::size_t n);
  // Independent child stream; does not advance this stream.
  RngStream split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

// Draws index i with probability probs[i]. Sums within Tolerances::kProbSum of 1
// are renormalized; negative mass or a larger deviation is a DomainError.
std::size_t sample_categorical(std::span<const double> probs, RngStream& rng);

enum class Activation { tanh, relu, identity };
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Fully connected network. Hidden layers use the activation; the output layer
// is affine and multiplied by final_scale. Parameters are stored flat, layer
// by layer, as W (out x in, row-major) followed by b.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, Activation act, double final_scale = 1.0);

  // Glorot-uniform hidden layers; the output layer is zeroed when zero_final.
  void init(RngStream& rng, bool zero_final);

  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return act_; }
  double final_scale() const { return final_scale_; }
  std::size_t num_params() const { return params_.size(); }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  Vec forward(const Vec& x) const;

  struct Gradients {
    std::vector<double> params;
    Vec input;
  };
  Gradients backward(const Vec& x, const Vec& upstream) const;
  // param_grad += scale * dL/dθ; returns dL/dx.
  Vec backward_into(const Vec& x, const Vec& upstream, std::span<double> param_grad,
                    double scale = 1.0) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer + 1] * widths_[layer];
  }
  void forward_all(const Vec& x, std::vector<Vec>& pre, std::vector<Vec>& post) const;

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  Activation act_ = Activation::tanh;
  double final_scale_ = 1.0;
  std::vector<double> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment recursion with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad);
  void step(std::span<double> params, std::span<const double> grad, double lr);

  const AdamConfig& config() const { return cfg_; }
  std::vector<double>& first_moment() { return m_; }
  std::vector<double>& second_moment() { return v_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

}  // namespace davlab::num
