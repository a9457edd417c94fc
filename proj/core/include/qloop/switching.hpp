// SPDX-License-Identifier: Apache-2.0
//
// Intermittent observation switch. Convention: gamma = 1 means the switch is
// OFF and the loop runs open for that step; gamma = 0 means the state is
// observed and the loop closes.
#pragma once

#include <cstddef>
#include <optional>

#include "qloop/errors.hpp"
#include "qloop/rng.hpp"

namespace qloop {

enum class SwitchKind { bernoulli, markov };

struct SwitchModel {
  SwitchKind kind{SwitchKind::bernoulli};
  double p{0.0};    // Bernoulli: P(gamma=1). Markov: ON->OFF transition prob.
  double q{0.0};    // Markov: OFF->ON transition prob.
  double pi0{0.0};  // Markov: P(gamma_0 = 1).

  static SwitchModel bernoulli(double p);
  /// pi0 defaults to the stationary law p/(p+q).
  static SwitchModel markov(double p, double q);
  static SwitchModel markov(double p, double q, double pi0);

  void validate() const;
};

/// One switch draw. Markov draws use pi0 when prev is empty (first step) and
/// the transition row of T = [[1-p, p], [q, 1-q]] otherwise.
int draw(const SwitchModel& model, std::optional<int> prev, RngStream& rng);

/// pi_k = P(gamma_k = 1), from zeta_k = zeta_0 T^k by repeated vector-matrix
/// products. Bernoulli: p for every k.
double state_distribution(const SwitchModel& model, std::size_t k);

/// Markov: p/(p+q) (requires p+q > 0). Bernoulli: p.
double stationary_pi(const SwitchModel& model);

}  // namespace qloop
