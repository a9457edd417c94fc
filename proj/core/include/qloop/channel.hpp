// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "qloop/errors.hpp"

namespace qloop {

/// Finite-capacity channel between plant and controller. Infinite capacity
/// means the state is delivered unquantized.
struct ChannelModel {
  double capacity_bits{std::numeric_limits<double>::infinity()};  // per use, > 0
  double epsilon{1e-3};  // typicality slack, > 0

  static ChannelModel infinite(double epsilon = 1e-3) {
    ChannelModel ch;
    ch.epsilon = epsilon;
    ch.validate();
    return ch;
  }
  static ChannelModel finite(double capacity_bits, double epsilon = 1e-3) {
    ChannelModel ch;
    ch.capacity_bits = capacity_bits;
    ch.epsilon = epsilon;
    ch.validate();
    return ch;
  }

  bool is_infinite() const { return std::isinf(capacity_bits); }

  /// eta = 2*pi*e / 2^(2C); zero for an infinite-capacity channel.
  double eta() const {
    if (is_infinite()) return 0.0;
    return 2.0 * std::numbers::pi * std::numbers::e /
           std::exp2(2.0 * capacity_bits);
  }

  void validate() const {
    if (!(capacity_bits > 0.0))
      throw DomainError("channel capacity_bits must be > 0");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw DomainError("channel epsilon must be a positive finite number");
  }
};

}  // namespace qloop
