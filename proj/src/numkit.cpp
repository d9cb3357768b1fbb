#include "davlab/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "davlab/errors.hpp"
#include "davlab/tolerances.hpp"

namespace davlab::num {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DomainError(std::string(what) + ": shape mismatch (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
  }
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs)) throw DomainError(std::string(what) + ": non-finite input");
}

Vec& Vec::operator+=(const Vec& o) {
  require_same_size(size(), o.size(), "Vec::+=");
  for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Vec& Vec::operator-=(const Vec& o) {
  require_same_size(size(), o.size(), "Vec::-=");
  for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Vec& Vec::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Vec& Vec::axpy(double s, const Vec& o) {
  require_same_size(size(), o.size(), "Vec::axpy");
  for (std::size_t i = 0; i < size(); ++i) data_[i] += s * o.data_[i];
  return *this;
}

double Vec::dot(const Vec& o) const {
  require_same_size(size(), o.size(), "Vec::dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i) acc += data_[i] * o.data_[i];
  return acc;
}

double Vec::norm() const { return std::sqrt(squared_norm()); }

Vec Mat::matvec(const Vec& x) const {
  require_same_size(cols_, x.size(), "Mat::matvec");
  Vec y(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    double acc = 0.0;
    const double* w = data_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vec Mat::tmatvec(const Vec& x) const {
  require_same_size(rows_, x.size(), "Mat::tmatvec");
  Vec y(cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* w = data_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) y[c] += w[c] * x[r];
  }
  return y;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw DomainError("log_sum_exp: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw DomainError("log_sum_exp: non-finite input");
    }
    mx = std::max(mx, x);
  }
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

Vec log_softmax(std::span<const double> v) {
  const double lse = log_sum_exp(v);
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

Vec softmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("softmax: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw DomainError("softmax: non-finite input");
    }
    mx = std::max(mx, x);
  }
  if (mx == -std::numeric_limits<double>::infinity()) throw DomainError("softmax: all -inf");
  Vec out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    acc += out[i];
  }
  for (double& x : out) x /= acc;
  return out;
}

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), key_(mix64(mix64(seed) ^ (stream * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL))) {}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c + 0x2545f4914f6cdd1dULL));
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  // Box-Muller; the second variate is discarded so state stays a single counter.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec RngStream::normal_vec(std::size_t n) {
  Vec out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = normal();
  return out;
}

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(mix64(seed_ ^ 0x5851f42d4c957f2dULL) ^ stream_, mix64(child) + stream_ * 0x9e3779b97f4a7c15ULL + 1);
}

std::size_t sample_categorical(std::span<const double> probs, RngStream& rng) {
  if (probs.empty()) throw DomainError("sample_categorical: empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw DomainError("sample_categorical: negative or non-finite mass");
    total += p;
  }
  if (std::abs(total - 1.0) > Tolerances::kProbSum) {
    throw DomainError("sample_categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = i;
    acc += probs[i];
    if (u < acc && probs[i] > 0.0) return i;
  }
  return last_positive;
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::identity: return x;
  }
  return x;
}

// derivative expressed through the pre-activation and the activation value
double activate_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::tanh: return 1.0 - post * post;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> widths, Activation act, double final_scale)
    : widths_(std::move(widths)), act_(act), final_scale_(final_scale) {
  if (widths_.size() < 2) throw ConfigError("Mlp: need at least input and output widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw ConfigError("Mlp: zero layer width");
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(off);
    off += widths_[l + 1] * widths_[l] + widths_[l + 1];
  }
  params_.assign(off, 0.0);
}

void Mlp::init(RngStream& rng, bool zero_final) {
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const bool last = l + 1 == num_layers();
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    double* w = params_.data() + weight_offset(l);
    for (std::size_t i = 0; i < in * out; ++i) {
      w[i] = (last && zero_final) ? 0.0 : (2.0 * rng.uniform() - 1.0) * bound;
    }
    double* b = params_.data() + bias_offset(l);
    std::fill(b, b + out, 0.0);
  }
}

void Mlp::forward_all(const Vec& x, std::vector<Vec>& pre, std::vector<Vec>& post) const {
  require_same_size(x.size(), input_width(), "Mlp::forward");
  pre.assign(num_layers(), Vec());
  post.assign(num_layers() + 1, Vec());
  post[0] = x;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    const double* b = params_.data() + bias_offset(l);
    Vec z(out);
    const Vec& h = post[l];
    for (std::size_t r = 0; r < out; ++r) {
      double acc = b[r];
      for (std::size_t c = 0; c < in; ++c) acc += w[r * in + c] * h[c];
      z[r] = acc;
    }
    const bool last = l + 1 == num_layers();
    Vec a(out);
    for (std::size_t r = 0; r < out; ++r) a[r] = last ? final_scale_ * z[r] : activate(act_, z[r]);
    pre[l] = std::move(z);
    post[l + 1] = std::move(a);
  }
}

Vec Mlp::forward(const Vec& x) const {
  std::vector<Vec> pre, post;
  forward_all(x, pre, post);
  return post.back();
}

Vec Mlp::backward_into(const Vec& x, const Vec& upstream, std::span<double> param_grad,
                       double scale) const {
  require_same_size(upstream.size(), output_width(), "Mlp::backward upstream");
  require_same_size(param_grad.size(), params_.size(), "Mlp::backward grad");
  std::vector<Vec> pre, post;
  forward_all(x, pre, post);
  // delta = dL/dz for the current layer
  Vec delta(upstream.size());
  for (std::size_t r = 0; r < upstream.size(); ++r) delta[r] = upstream[r] * final_scale_;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const double* w = params_.data() + weight_offset(l);
    double* gw = param_grad.data() + weight_offset(l);
    double* gb = param_grad.data() + bias_offset(l);
    const Vec& h = post[l];
    for (std::size_t r = 0; r < out; ++r) {
      const double d = scale * delta[r];
      gb[r] += d;
      for (std::size_t c = 0; c < in; ++c) gw[r * in + c] += d * h[c];
    }
    Vec dh(in);
    for (std::size_t r = 0; r < out; ++r) {
      for (std::size_t c = 0; c < in; ++c) dh[c] += w[r * in + c] * delta[r];
    }
    if (l > 0) {
      for (std::size_t c = 0; c < in; ++c) dh[c] *= activate_grad(act_, pre[l - 1][c], post[l][c]);
    }
    delta = std::move(dh);
  }
  return delta;
}

Mlp::Gradients Mlp::backward(const Vec& x, const Vec& upstream) const {
  Gradients g;
  g.params.assign(params_.size(), 0.0);
  g.input = backward_into(x, upstream, g.params, 1.0);
  return g;
}

void Adam::step(std::span<double> params, std::span<const double> grad) { step(params, grad, cfg_.lr); }

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  require_same_size(params.size(), m_.size(), "Adam::step params");
  require_same_size(grad.size(), m_.size(), "Adam::step grad");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace davlab::num
