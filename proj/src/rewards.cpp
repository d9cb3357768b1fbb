#include "davlab/rewards.hpp"

#include <cmath>

#include "davlab/errors.hpp"

namespace davlab::rewards {

RewardKind kind_from_string(const std::string& s) {
  if (s == "linear") return RewardKind::linear;
  if (s == "neg_sq_dist") return RewardKind::neg_sq_dist;
  if (s == "mode_preference") return RewardKind::mode_preference;
  if (s == "motif_count") return RewardKind::motif_count;
  if (s == "composition") return RewardKind::composition;
  if (s == "constant") return RewardKind::constant;
  throw ConfigError("unknown reward kind '" + s + "'");
}

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::linear: return "linear";
    case RewardKind::neg_sq_dist: return "neg_sq_dist";
    case RewardKind::mode_preference: return "mode_preference";
    case RewardKind::motif_count: return "motif_count";
    case RewardKind::composition: return "composition";
    case RewardKind::constant: return "constant";
  }
  return "?";
}

Domain domain_of(RewardKind k) {
  switch (k) {
    case RewardKind::motif_count:
    case RewardKind::composition:
      return Domain::discrete;
    default:
      return Domain::continuous;
  }
}

void RewardSpec::validate() const {
  if (!std::isfinite(scale)) throw ConfigError("reward scale must be finite");
  switch (kind) {
    case RewardKind::mode_preference:
      if (centers.empty() || centers.size() != amplitudes.size()) {
        throw ConfigError("mode_preference: centers and amplitudes must match and be non-empty");
      }
      if (!(tau > 0.0)) throw ConfigError("mode_preference: tau must be positive");
      break;
    case RewardKind::motif_count:
      if (motif.empty()) throw ConfigError("motif_count: empty motif");
      break;
    case RewardKind::composition:
      if (token < 0) throw ConfigError("composition: negative token");
      break;
    default:
      break;
  }
}

namespace {

void require_domain(const RewardSpec& spec, Domain d) {
  // constant rewards are valid in either world
  if (spec.kind == RewardKind::constant) return;
  if (spec.domain() != d) {
    throw DomainError("reward '" + spec.name + "' (" + to_string(spec.kind) + ") applied to the wrong domain");
  }
}

}  // namespace

double reward_value(const RewardSpec& spec, const Vec& x0) {
  require_domain(spec, Domain::continuous);
  double r = 0.0;
  switch (spec.kind) {
    case RewardKind::linear:
      r = spec.coef.dot(x0);
      break;
    case RewardKind::neg_sq_dist:
      r = -(x0 - spec.goal).squared_norm();
      break;
    case RewardKind::mode_preference:
      for (std::size_t k = 0; k < spec.centers.size(); ++k) {
        r += spec.amplitudes[k] *
             std::exp(-(x0 - spec.centers[k]).squared_norm() / (2.0 * spec.tau * spec.tau));
      }
      break;
    case RewardKind::constant:
      r = spec.value;
      break;
    default:
      break;
  }
  return spec.scale * r;
}

double reward_value(const RewardSpec& spec, const disc::Tokens& x0) {
  require_domain(spec, Domain::discrete);
  double r = 0.0;
  switch (spec.kind) {
    case RewardKind::motif_count: {
      const std::size_t m = spec.motif.size();
      for (std::size_t s = 0; s + m <= x0.size(); ++s) {
        bool hit = true;
        for (std::size_t j = 0; j < m && hit; ++j) hit = x0[s + j] == spec.motif[j];
        r += hit ? 1.0 : 0.0;
      }
      break;
    }
    case RewardKind::composition:
      for (int tok : x0) r += tok == spec.token ? 1.0 : 0.0;
      break;
    case RewardKind::constant:
      r = spec.value;
      break;
    default:
      break;
  }
  return spec.scale * r;
}

Vec reward_grad(const RewardSpec& spec, const Vec& x0) {
  require_domain(spec, Domain::continuous);
  if (!spec.differentiable) {
    throw UnsupportedError("reward '" + spec.name + "' is black-box; no gradient");
  }
  Vec g(x0.size());
  switch (spec.kind) {
    case RewardKind::linear:
      g = spec.coef;
      break;
    case RewardKind::neg_sq_dist:
      g = -2.0 * (x0 - spec.goal);
      break;
    case RewardKind::mode_preference:
      for (std::size_t k = 0; k < spec.centers.size(); ++k) {
        const Vec diff = x0 - spec.centers[k];
        const double tau2 = spec.tau * spec.tau;
        const double e = spec.amplitudes[k] * std::exp(-diff.squared_norm() / (2.0 * tau2));
        g.axpy(-e / tau2, diff);
      }
      break;
    default:
      break;
  }
  g *= spec.scale;
  return g;
}

double relaxed_reward_value(const RewardSpec& spec, const Mat& p) {
  require_domain(spec, Domain::discrete);
  const std::size_t L = p.rows();
  double r = 0.0;
  switch (spec.kind) {
    case RewardKind::motif_count: {
      const std::size_t m = spec.motif.size();
      for (std::size_t s = 0; s + m <= L; ++s) {
        double prod = 1.0;
        for (std::size_t j = 0; j < m; ++j) prod *= p(s + j, static_cast<std::size_t>(spec.motif[j]));
        r += prod;
      }
      break;
    }
    case RewardKind::composition:
      for (std::size_t l = 0; l < L; ++l) r += p(l, static_cast<std::size_t>(spec.token));
      break;
    case RewardKind::constant:
      r = spec.value;
      break;
    default:
      break;
  }
  return spec.scale * r;
}

Mat relaxed_reward_grad(const RewardSpec& spec, const Mat& p) {
  require_domain(spec, Domain::discrete);
  if (!spec.differentiable) {
    throw UnsupportedError("reward '" + spec.name + "' is black-box; no gradient");
  }
  const std::size_t L = p.rows();
  Mat g(L, p.cols());
  switch (spec.kind) {
    case RewardKind::motif_count: {
      const std::size_t m = spec.motif.size();
      for (std::size_t s = 0; s + m <= L; ++s) {
        for (std::size_t j = 0; j < m; ++j) {
          double prod = 1.0;
          for (std::size_t i = 0; i < m; ++i) {
            if (i != j) prod *= p(s + i, static_cast<std::size_t>(spec.motif[i]));
          }
          g(s + j, static_cast<std::size_t>(spec.motif[j])) += spec.scale * prod;
        }
      }
      break;
    }
    case RewardKind::composition:
      for (std::size_t l = 0; l < L; ++l) g(l, static_cast<std::size_t>(spec.token)) = spec.scale;
      break;
    default:
      break;
  }
  return g;
}

Mat one_hot(const disc::Tokens& tokens, int K) {
  Mat out(tokens.size(), static_cast<std::size_t>(K + 1));
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    out(l, tokens[l] == disc::kMask ? static_cast<std::size_t>(K) : static_cast<std::size_t>(tokens[l])) = 1.0;
  }
  return out;
}

Mat with_mask_column(const Mat& p) {
  Mat out(p.rows(), p.cols() + 1);
  for (std::size_t l = 0; l < p.rows(); ++l) {
    for (std::size_t k = 0; k < p.cols(); ++k) out(l, k) = p(l, k);
  }
  return out;
}

}  // namespace davlab::rewards
