// SPDX-License-Identifier: Apache-2.0
#include "qloop/switching.hpp"

namespace qloop {

namespace {

void check_prob(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0))
    throw DomainError(std::string(name) + " must lie in [0,1]");
}

}  // namespace

SwitchModel SwitchModel::bernoulli(double p) {
  SwitchModel m;
  m.kind = SwitchKind::bernoulli;
  m.p = p;
  m.validate();
  return m;
}

SwitchModel SwitchModel::markov(double p, double q) {
  if (p + q <= 0.0)
    throw DomainError("markov switch: p+q must be > 0 for a stationary law");
  return markov(p, q, p / (p + q));
}

SwitchModel SwitchModel::markov(double p, double q, double pi0) {
  SwitchModel m;
  m.kind = SwitchKind::markov;
  m.p = p;
  m.q = q;
  m.pi0 = pi0;
  m.validate();
  return m;
}

void SwitchModel::validate() const {
  check_prob(p, "switch p");
  if (kind == SwitchKind::markov) {
    check_prob(q, "switch q");
    check_prob(pi0, "switch pi0");
  }
}

int draw(const SwitchModel& model, std::optional<int> prev, RngStream& rng) {
  if (model.kind == SwitchKind::bernoulli)
    return rng.next_bernoulli(model.p) ? 1 : 0;
  if (!prev.has_value()) return rng.next_bernoulli(model.pi0) ? 1 : 0;
  if (*prev == 0) return rng.next_bernoulli(model.p) ? 1 : 0;
  return rng.next_bernoulli(model.q) ? 0 : 1;
}

double state_distribution(const SwitchModel& model, std::size_t k) {
  if (model.kind == SwitchKind::bernoulli) return model.p;
  double pi = model.pi0;
  for (std::size_t i = 0; i < k; ++i)
    pi = (1.0 - pi) * model.p + pi * (1.0 - model.q);
  return pi;
}

double stationary_pi(const SwitchModel& model) {
  if (model.kind == SwitchKind::bernoulli) return model.p;
  if (model.p + model.q <= 0.0)
    throw DomainError("stationary_pi: degenerate chain (p = q = 0)");
  return model.p / (model.p + model.q);
}

}  // namespace qloop
