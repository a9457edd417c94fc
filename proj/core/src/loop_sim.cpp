// SPDX-License-Identifier: Apache-2.0
#include "qloop/loop_sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <type_traits>

namespace qloop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

ScalarLoopConfig ScalarLoopConfig::direct_gain(double alpha,
                                               double closed_gain) {
  ScalarLoopConfig cfg;
  cfg.alpha = alpha;
  cfg.b = 1.0;
  cfg.l = alpha - closed_gain;
  return cfg;
}

void ScalarLoopConfig::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(b) || !std::isfinite(l))
    throw DomainError("scalar loop config: gains must be finite");
  if (!(sigma_w2 >= 0.0)) throw DomainError("sigma_w2 must be >= 0");
  if (!(sigma_0_2 >= 0.0)) throw DomainError("sigma_0_2 must be >= 0");
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (!(divergence_threshold > 0.0))
    throw DomainError("divergence_threshold must be > 0");
  if (support_sigmas && !(*support_sigmas > 0.0))
    throw DomainError("support_sigmas must be > 0 when set");
  sw.validate();
  ch.validate();
}

void VectorLoopConfig::validate() const {
  A.validate("A");
  B.validate("B");
  L.validate("L");
  W.validate("W");
  P0.validate("P0");
  if (!A.square()) throw DimensionError("A must be square");
  const std::size_t n = A.rows;
  const std::size_t m = B.cols;
  if (B.rows != n) throw DimensionError("B row count must match A");
  if (L.rows != m || L.cols != n) throw DimensionError("L must be m x n");
  if (W.rows != n || W.cols != n) throw DimensionError("W must be n x n");
  if (P0.rows != n || P0.cols != n) throw DimensionError("P0 must be n x n");
  if (max_abs(W) > 0.0 && !is_positive_definite(W))
    throw DomainError("W must be positive definite or exactly zero");
  if (!is_positive_definite(P0)) throw DomainError("P0 must be positive definite");
  if (x0_fixed && x0_fixed->size() != n)
    throw DimensionError("x0_fixed dimension mismatch");
  if (horizon < 1) throw DomainError("horizon must be >= 1");
  if (!(divergence_threshold > 0.0))
    throw DomainError("divergence_threshold must be > 0");
  if (support_sigmas && !(*support_sigmas > 0.0))
    throw DomainError("support_sigmas must be > 0 when set");
  sw.validate();
  ch.validate();
}

double Trace::state_norm2(std::size_t k) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) acc += state(k, i) * state(k, i);
  return std::sqrt(acc);
}

namespace {

// Shared per-step quantize-and-control bookkeeping for one dimension.
struct QuantOutcome {
  double codepoint{0.0};
  bool overflowed{false};
  bool typicality_violated{false};
};

QuantOutcome quantize_dim(double x, double delta, double sigma_implied,
                          const std::optional<double>& support_sigmas) {
  QuantOutcome out;
  double half = kInf;
  if (support_sigmas && std::isfinite(sigma_implied))
    half = *support_sigmas * sigma_implied;
  const QuantizedValue qv = quantize_uniform(x, delta, half);
  out.codepoint = qv.codepoint;
  out.overflowed = qv.overflowed;
  if (std::isfinite(sigma_implied)) {
    const double typ_half = entropy_typical_multiplier() * sigma_implied;
    out.typicality_violated = std::abs(qv.codepoint) > typ_half;
  }
  return out;
}

struct ScalarRunner {
  const ScalarLoopConfig& cfg;
  double bl;
  double sigma_w;
  bool quantized;
  RngStream switch_stream;
  RngStream noise_stream;
  double x{0.0};
  QuantizerState qst;
  std::optional<int> prev_gamma;
  std::span<const std::uint8_t> forced;

  ScalarRunner(const ScalarLoopConfig& c, const RngStream& run_stream,
               std::span<const std::uint8_t> forced_gammas)
      : cfg(c),
        bl(c.b * c.l),
        sigma_w(std::sqrt(c.sigma_w2)),
        quantized(!c.ch.is_infinite()),
        switch_stream(run_stream.substream("switch")),
        noise_stream(run_stream.substream("noise")),
        forced(forced_gammas) {
    RngStream init_stream = run_stream.substream("init");
    x = cfg.x0_fixed ? *cfg.x0_fixed
                     : std::sqrt(cfg.sigma_0_2) * init_stream.next_gaussian();
    qst = init_delta_scalar(cfg.sigma_0_2, cfg.ch);
  }

  struct Step {
    int gamma;
    double input;
    double delta_sq_used;
    bool overflowed;
    bool typicality_violated;
  };

  Step advance(std::size_t k) {
    Step s{};
    s.gamma = forced.empty() ? draw(cfg.sw, prev_gamma, switch_stream)
                             : static_cast<int>(forced[k]);
    prev_gamma = s.gamma;
    s.delta_sq_used = qst.delta_sq;
    const double w = sigma_w == 0.0 ? 0.0 : sigma_w * noise_stream.next_gaussian();
    if (s.gamma == 0) {
      double transmitted = x;
      if (quantized) {
        const double delta = std::sqrt(qst.delta_sq);
        const double sig = std::sqrt(implied_variance(qst));
        const QuantOutcome qo =
            quantize_dim(x, delta, sig, cfg.support_sigmas);
        transmitted = qo.codepoint;
        s.overflowed = qo.overflowed;
        s.typicality_violated = qo.typicality_violated;
      }
      s.input = -cfg.l * transmitted;
      x = cfg.alpha * x + cfg.b * s.input + w;
    } else {
      s.input = 0.0;
      x = cfg.alpha * x + w;
    }
    qst = update_delta_scalar(qst, s.gamma, cfg.alpha, cfg.closed_gain(),
                              cfg.sigma_w2);
    return s;
  }
};

struct VectorRunner {
  const VectorLoopConfig& cfg;
  std::size_t n;
  Matrix closed;
  Matrix noise_chol;  // zero matrix for W = 0
  bool zero_noise;
  Matrix init_chol;
  VectorDeltaCoeffs dcoef;
  bool quantized;
  RngStream switch_stream;
  RngStream noise_stream;
  Vec x;
  QuantizerState qst;
  std::optional<int> prev_gamma;
  std::span<const std::uint8_t> forced;

  VectorRunner(const VectorLoopConfig& c, const RngStream& run_stream,
               std::span<const std::uint8_t> forced_gammas)
      : cfg(c),
        n(c.A.rows),
        closed(c.closed()),
        zero_noise(max_abs(c.W) == 0.0),
        quantized(!c.ch.is_infinite()),
        switch_stream(run_stream.substream("switch")),
        noise_stream(run_stream.substream("noise")),
        forced(forced_gammas) {
    if (zero_noise) {
      noise_chol = Matrix(n, n);
    } else {
      auto ch_w = cholesky_lower(cfg.W);
      if (!ch_w) throw DomainError("W must be PD or zero for noise sampling");
      noise_chol = *ch_w;
    }
    auto ch_p0 = cholesky_lower(cfg.P0);
    if (!ch_p0) throw DomainError("P0 must be PD");
    init_chol = *ch_p0;
    dcoef = vector_delta_coeffs(cfg.A, closed, cfg.W, cfg.ch);

    RngStream init_stream = run_stream.substream("init");
    if (cfg.x0_fixed) {
      x = *cfg.x0_fixed;
    } else {
      Vec z(n);
      for (auto& zi : z) zi = init_stream.next_gaussian();
      x = matvec(init_chol, z);
    }
    qst = init_delta_vector(cfg.P0, n, cfg.ch);
  }

  struct Step {
    int gamma;
    Vec input;  // m entries
    double delta_sq_used;
    std::size_t overflows;
    std::size_t typicality_violations;
  };

  Step advance(std::size_t k) {
    Step s{};
    s.gamma = forced.empty() ? draw(cfg.sw, prev_gamma, switch_stream)
                             : static_cast<int>(forced[k]);
    prev_gamma = s.gamma;
    s.delta_sq_used = qst.delta_sq;
    Vec w(n, 0.0);
    if (!zero_noise) {
      Vec z(n);
      for (auto& zi : z) zi = noise_stream.next_gaussian();
      w = matvec(noise_chol, z);
    }
    if (s.gamma == 0) {
      Vec transmitted = x;
      if (quantized) {
        const double delta = std::sqrt(qst.delta_sq);
        const double sig = std::sqrt(implied_variance(qst));
        for (std::size_t i = 0; i < n; ++i) {
          const QuantOutcome qo =
              quantize_dim(x[i], delta, sig, cfg.support_sigmas);
          transmitted[i] = qo.codepoint;
          s.overflows += qo.overflowed ? 1 : 0;
          s.typicality_violations += qo.typicality_violated ? 1 : 0;
        }
      }
      Vec u = matvec(cfg.L, transmitted);
      for (auto& ui : u) ui = -ui;
      s.input = u;
      Vec ax = matvec(cfg.A, x);
      Vec bu = matvec(cfg.B, u);
      for (std::size_t i = 0; i < n; ++i) x[i] = ax[i] + bu[i] + w[i];
    } else {
      s.input.assign(cfg.B.cols, 0.0);
      Vec ax = matvec(cfg.A, x);
      for (std::size_t i = 0; i < n; ++i) x[i] = ax[i] + w[i];
    }
    qst = update_step(s.gamma);
    return s;
  }

  QuantizerState update_step(int gamma) {
    QuantizerState next = qst;
    next.delta_sq =
        qst.delta_sq * (gamma ? dcoef.open_factor : dcoef.closed_factor) +
        dcoef.noise_term + qst.epsilon;
    next.k = qst.k + 1;
    return next;
  }

  double norm2() const {
    double acc = 0.0;
    for (double xi : x) acc += xi * xi;
    return std::sqrt(acc);
  }
};

}  // namespace

Trace run_scalar(const ScalarLoopConfig& cfg) {
  return run_scalar(cfg, RngStream(cfg.seed));
}

Trace run_scalar(const ScalarLoopConfig& cfg, const RngStream& run_stream,
                 std::span<const std::uint8_t> forced_gammas) {
  cfg.validate();
  if (!forced_gammas.empty() && forced_gammas.size() < cfg.horizon)
    throw DomainError("forced gamma path shorter than horizon");
  ScalarRunner run(cfg, run_stream, forced_gammas);
  Trace tr;
  tr.dim = 1;
  tr.input_dim = 1;
  tr.states.reserve(cfg.horizon + 1);
  tr.states.push_back(run.x);
  for (std::size_t k = 0; k < cfg.horizon; ++k) {
    const auto s = run.advance(k);
    tr.gammas.push_back(static_cast<std::uint8_t>(s.gamma));
    tr.inputs.push_back(s.input);
    tr.deltas_sq.push_back(s.delta_sq_used);
    tr.overflow_count += s.overflowed ? 1 : 0;
    tr.typicality_violations += s.typicality_violated ? 1 : 0;
    tr.states.push_back(run.x);
    if (std::abs(run.x) > cfg.divergence_threshold) {
      tr.first_divergence = k + 1;
      break;
    }
  }
  return tr;
}

Trace run_vector(const VectorLoopConfig& cfg) {
  return run_vector(cfg, RngStream(cfg.seed));
}

Trace run_vector(const VectorLoopConfig& cfg, const RngStream& run_stream,
                 std::span<const std::uint8_t> forced_gammas) {
  cfg.validate();
  if (!forced_gammas.empty() && forced_gammas.size() < cfg.horizon)
    throw DomainError("forced gamma path shorter than horizon");
  VectorRunner run(cfg, run_stream, forced_gammas);
  const std::size_t n = run.n;
  Trace tr;
  tr.dim = n;
  tr.input_dim = cfg.B.cols;
  tr.states.reserve((cfg.horizon + 1) * n);
  tr.states.insert(tr.states.end(), run.x.begin(), run.x.end());
  for (std::size_t k = 0; k < cfg.horizon; ++k) {
    const auto s = run.advance(k);
    tr.gammas.push_back(static_cast<std::uint8_t>(s.gamma));
    tr.inputs.insert(tr.inputs.end(), s.input.begin(), s.input.end());
    tr.deltas_sq.push_back(s.delta_sq_used);
    tr.overflow_count += s.overflows;
    tr.typicality_violations += s.typicality_violations;
    tr.states.insert(tr.states.end(), run.x.begin(), run.x.end());
    if (run.norm2() > cfg.divergence_threshold) {
      tr.first_divergence = k + 1;
      break;
    }
  }
  return tr;
}

std::optional<std::size_t> detect_divergence(const Trace& trace,
                                             double threshold) {
  if (!(threshold > 0.0)) throw DomainError("threshold must be > 0");
  const std::size_t count = trace.states.size() / trace.dim;
  for (std::size_t k = 0; k < count; ++k)
    if (trace.state_norm2(k) > threshold) return k;
  return std::nullopt;
}

namespace {

// Fixed-size blocks of runs, merged in index order: the reduction is
// bit-identical for any thread count.
constexpr std::size_t kBlockRuns = 64;

struct BlockAccum {
  std::vector<double> sum_m;    // per k: sum of x^2 (or ||x||^2)
  std::vector<double> sum_m2;   // per k: sum of squares of the above
  std::vector<std::size_t> alive;
  std::vector<double> sum_cov;  // vector mode: per k, n*n outer-product sums
  std::size_t diverged{0};
  std::size_t overflow{0};
  std::size_t typicality{0};
};

template <typename Config, typename MakeRunner>
EnsembleStats ensemble_impl(const Config& cfg, std::size_t runs,
                            const EnsembleOptions& opts, std::size_t dim,
                            MakeRunner make_runner) {
  if (runs < 2) throw DomainError("ensemble needs at least 2 runs");
  if (!opts.forced_gammas.empty() && opts.forced_gammas.size() < cfg.horizon)
    throw DomainError("forced gamma path shorter than horizon");
  const std::size_t N = cfg.horizon;
  const std::size_t n_blocks = (runs + kBlockRuns - 1) / kBlockRuns;
  const bool want_cov = dim > 1;
  std::vector<BlockAccum> blocks(n_blocks);

  const RngStream master(cfg.seed);
  std::atomic<std::size_t> next_block{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t bi = next_block.fetch_add(1);
      if (bi >= n_blocks) return;
      BlockAccum& acc = blocks[bi];
      acc.sum_m.assign(N + 1, 0.0);
      acc.sum_m2.assign(N + 1, 0.0);
      acc.alive.assign(N + 1, 0);
      if (want_cov) acc.sum_cov.assign((N + 1) * dim * dim, 0.0);
      const std::size_t lo = bi * kBlockRuns;
      const std::size_t hi = std::min(runs, lo + kBlockRuns);
      for (std::size_t r = lo; r < hi; ++r) {
        auto runner = make_runner(master.substream("run", r));
        bool diverged = false;
        for (std::size_t k = 0; k <= N; ++k) {
          double m = 0.0;
          if constexpr (std::is_same_v<Config, ScalarLoopConfig>) {
            m = runner.x * runner.x;
          } else {
            for (double xi : runner.x) m += xi * xi;
          }
          acc.sum_m[k] += m;
          acc.sum_m2[k] += m * m;
          acc.alive[k] += 1;
          if constexpr (!std::is_same_v<Config, ScalarLoopConfig>) {
            if (want_cov) {
              double* cov = acc.sum_cov.data() + k * dim * dim;
              for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < dim; ++j)
                  cov[i * dim + j] += runner.x[i] * runner.x[j];
            }
          }
          if (k == N) break;
          const auto s = runner.advance(k);
          if constexpr (std::is_same_v<Config, ScalarLoopConfig>) {
            acc.overflow += s.overflowed ? 1 : 0;
            acc.typicality += s.typicality_violated ? 1 : 0;
            if (std::abs(runner.x) > cfg.divergence_threshold) diverged = true;
          } else {
            acc.overflow += s.overflows;
            acc.typicality += s.typicality_violations;
            if (runner.norm2() > cfg.divergence_threshold) diverged = true;
          }
          if (diverged) break;
        }
        if (diverged) acc.diverged += 1;
      }
    }
  };

  const std::size_t nthreads =
      std::max<std::size_t>(1, std::min(opts.threads, n_blocks));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  EnsembleStats st;
  st.runs = runs;
  st.dim = dim;
  st.alive.assign(N + 1, 0);
  st.moment.assign(N + 1, 0.0);
  st.ci_halfwidth.assign(N + 1, 0.0);
  st.diverged_fraction.assign(N + 1, 0.0);
  std::vector<double> sum_m(N + 1, 0.0), sum_m2(N + 1, 0.0);
  std::vector<double> sum_cov;
  if (want_cov) sum_cov.assign((N + 1) * dim * dim, 0.0);
  for (const auto& acc : blocks) {
    st.diverged_runs += acc.diverged;
    st.overflow_total += acc.overflow;
    st.typicality_total += acc.typicality;
    for (std::size_t k = 0; k <= N; ++k) {
      sum_m[k] += acc.sum_m[k];
      sum_m2[k] += acc.sum_m2[k];
      st.alive[k] += acc.alive[k];
    }
    if (want_cov)
      for (std::size_t i = 0; i < sum_cov.size(); ++i)
        sum_cov[i] += acc.sum_cov[i];
  }
  if (want_cov) st.covariance.reserve(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    const auto cnt = static_cast<double>(st.alive[k]);
    st.diverged_fraction[k] =
        1.0 - cnt / static_cast<double>(runs);
    if (st.alive[k] > 0) {
      const double mean = sum_m[k] / cnt;
      st.moment[k] = mean;
      if (st.alive[k] > 1) {
        const double var =
            std::max(0.0, (sum_m2[k] / cnt - mean * mean) * cnt / (cnt - 1.0));
        st.ci_halfwidth[k] = 3.0 * std::sqrt(var / cnt);
      }
    }
    if (want_cov) {
      Matrix c(dim, dim);
      if (st.alive[k] > 0)
        for (std::size_t i = 0; i < dim * dim; ++i)
          c.a[i] = sum_cov[k * dim * dim + i] / cnt;
      st.covariance.push_back(std::move(c));
    }
  }
  return st;
}

}  // namespace

EnsembleStats run_ensemble(const ScalarLoopConfig& cfg, std::size_t runs,
                           const EnsembleOptions& opts) {
  cfg.validate();
  std::span<const std::uint8_t> forced(opts.forced_gammas);
  return ensemble_impl(cfg, runs, opts, 1, [&](RngStream rs) {
    return ScalarRunner(cfg, rs, forced);
  });
}

EnsembleStats run_ensemble(const VectorLoopConfig& cfg, std::size_t runs,
                           const EnsembleOptions& opts) {
  cfg.validate();
  std::span<const std::uint8_t> forced(opts.forced_gammas);
  return ensemble_impl(cfg, runs, opts, cfg.A.rows, [&](RngStream rs) {
    return VectorRunner(cfg, rs, forced);
  });
}

}  // namespace qloop
