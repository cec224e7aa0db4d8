#pragma once

// Monte Carlo version of the natural model: an Euler scheme for
// dZ = -lambda Z dt + sigma Z (1-Z) dW, the flow of
// dX = X dm~ + phi(p(1-Z) - X) phi(X) g dB, its x-derivative, and the
// verification statistics built on top of them.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/natural_sde.hpp"

namespace deftime::mc {

/// Scalar model with a constant coefficient g and an independent driver B.
struct Model {
    double lambda = 0.2;
    double sigma = 0.3;
    double g = 0.1;
    double z0 = 1.0;
    double delta = 1e-3;
    std::size_t steps = 500;
    std::size_t paths = 10000;
    std::uint64_t seed = 42;
    double band_guard = 0.5;
    Shaping phi = Shaping::standard();
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream per (master seed, path, purpose).
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t path, std::uint64_t salt = 0) {
    return splitmix64(splitmix64(master ^ (salt * 0xD1B54A32D192ED03ULL)) + path);
}

/// One simulated path; entries at index k >= 1 are increments over step k.
struct Path {
    std::vector<double> Z, dA, dM, dm, pp, dW, dB;
};

inline Path simulate_path(const Model& m, std::size_t index) {
    std::mt19937_64 rng(stream_seed(m.seed, index));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sd = std::sqrt(m.delta);
    Path p;
    const std::size_t n = m.steps + 1;
    for (auto* v : {&p.Z, &p.dA, &p.dM, &p.dm, &p.pp, &p.dW, &p.dB}) v->assign(n, 0.0);
    p.Z[0] = m.z0;
    for (std::size_t k = 1; k < n; ++k) {
        p.dW[k] = sd * normal(rng);
        p.dB[k] = sd * normal(rng);
        const double z = p.Z[k - 1];
        p.dA[k] = m.lambda * z * m.delta;
        p.dM[k] = m.sigma * z * (1.0 - z) * p.dW[k];
        p.Z[k] = z + p.dM[k] - p.dA[k];
        p.pp[k] = 1.0 - z + p.dA[k];
        p.dm[k] = p.pp[k] > kNullMass ? -p.dM[k] / p.pp[k] : 0.0;
    }
    return p;
}

/// F at step k (predictable: uses p(1-Z)_k and the pre-step state).
inline double coefficient(const Model& m, const Path& p, std::size_t k, double x) {
    return m.phi.phi(p.pp[k] - x) * m.phi.phi(x) * m.g;
}

inline double coefficient_dx(const Model& m, const Path& p, std::size_t k, double x) {
    const double y = p.pp[k] - x;
    return (-m.phi.dphi(y) * m.phi.phi(x) + m.phi.phi(y) * m.phi.dphi(x)) * m.g;
}

struct FlowState {
    double X = 0.0;
    double DX = 1.0;
};

/// Euler flow from step u with value x0, advanced to step t (t >= u).
inline FlowState flow(const Model& m, const Path& p, std::size_t u, double x0, std::size_t t) {
    FlowState s{x0, 1.0};
    for (std::size_t k = u + 1; k <= t; ++k) {
        const double x = s.X;
        s.X = x * (1.0 + p.dm[k]) + coefficient(m, p, k, x) * p.dB[k];
        s.DX *= 1.0 + p.dm[k] + coefficient_dx(m, p, k, x) * p.dB[k];
        if (s.X < -m.band_guard || s.X > 1.0 + m.band_guard)
            throw SchemeUnstable("flow left the band at step " + std::to_string(k));
    }
    return s;
}

/// Whole trajectory of the flow from step u; entries before u are unused.
inline std::vector<double> flow_path(const Model& m, const Path& p, std::size_t u, double x0) {
    std::vector<double> X(m.steps + 1, 0.0);
    X[u] = x0;
    for (std::size_t k = u + 1; k <= m.steps; ++k) {
        X[k] = X[k - 1] * (1.0 + p.dm[k]) + coefficient(m, p, k, X[k - 1]) * p.dB[k];
        if (X[k] < -m.band_guard || X[k] > 1.0 + m.band_guard)
            throw SchemeUnstable("flow left the band at step " + std::to_string(k));
    }
    return X;
}

/// Welford accumulator; the order of updates is fixed, so results are reproducible.
struct Stat {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    [[nodiscard]] double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    [[nodiscard]] double se() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
    [[nodiscard]] double t() const {
        const double s = se();
        return s > 0.0 ? mean / s : (mean == 0.0 ? 0.0 : kInfinity);
    }
};

// ---------------------------------------------------------------------------
// Verification runs

struct FiniteDifferenceCheck {
    double max_rel_error = 0.0;
    double mean_dx = 0.0;
    std::size_t paths = 0;
};

/// DX iterate against (Xi(x0+h) - Xi(x0-h)) / 2h on common noise, x0 = 1 - Z_u.
inline FiniteDifferenceCheck fd_check(const Model& m, std::size_t u, std::size_t t, double h) {
    FiniteDifferenceCheck r;
    r.paths = m.paths;
    Stat dx;
    for (std::size_t i = 0; i < m.paths; ++i) {
        const auto p = simulate_path(m, i);
        const double x0 = 1.0 - p.Z[u];
        const auto c = flow(m, p, u, x0, t);
        const double fd = (flow(m, p, u, x0 + h, t).X - flow(m, p, u, x0 - h, t).X) / (2.0 * h);
        r.max_rel_error = std::max(r.max_rel_error, std::abs(c.DX - fd) / std::max(std::abs(c.DX), 1e-12));
        dx.add(c.DX);
    }
    r.mean_dx = dx.mean;
    return r;
}

struct CoxCollapseCheck {
    double max_family_error = 0.0;   // |M^u_t - A_u| over starts u and paths
    double max_density_error = 0.0;  // |p_t(u) - 1|
};

/// With a deterministic Z each flow from 1 - Z_u must stay put and have unit slope.
inline CoxCollapseCheck cox_collapse(const Model& m, std::size_t start_stride) {
    CoxCollapseCheck r;
    for (std::size_t i = 0; i < m.paths; ++i) {
        const auto p = simulate_path(m, i);
        double A = 0.0;
        std::vector<double> Acum(m.steps + 1, 0.0);
        for (std::size_t k = 1; k <= m.steps; ++k) Acum[k] = (A += p.dA[k]);
        for (std::size_t u = 0; u <= m.steps; u += start_stride) {
            const auto X = flow_path(m, p, u, 1.0 - p.Z[u]);
            for (std::size_t t = u; t <= m.steps; ++t) {
                double Mu = std::min(std::max(X[t], 0.0), 1.0 - p.Z[t]);
                r.max_family_error = std::max(r.max_family_error, std::abs(Mu - Acum[u]));
            }
            const auto s = flow(m, p, u, 1.0 - p.Z[u], m.steps);
            r.max_density_error = std::max(r.max_density_error, std::abs(s.DX - 1.0));
        }
    }
    return r;
}

struct DensityCheck {
    Stat integral;    // sum_{u <= u*} DX^u_t(1 - Z_u) dA_u
    Stat family;      // M^{u*}_t = L^{u*}_t
    double exact = 0.0;  // E[M^{u*}_t] = 1 - E[Z_{u*}] = 1 - z0 (1 - lambda delta)^{u*}

    [[nodiscard]] double se() const { return std::sqrt(integral.se() * integral.se() + family.se() * family.se()); }
    [[nodiscard]] double gap() const { return std::abs(integral.mean - family.mean); }
};

/// Compares the A-integral of the derivative-branch density with the family itself.
inline DensityCheck density_check(const Model& m, std::size_t u_star, std::size_t t) {
    DensityCheck r;
    for (std::size_t i = 0; i < m.paths; ++i) {
        const auto p = simulate_path(m, i);
        double integral = 0.0;
        for (std::size_t u = 1; u <= u_star; ++u) integral += flow(m, p, u, 1.0 - p.Z[u], t).DX * p.dA[u];
        r.integral.add(integral);
        const double L = flow(m, p, u_star, 1.0 - p.Z[u_star], t).X;
        r.family.add(std::min(std::max(L, 0.0), 1.0 - p.Z[t]));
    }
    r.exact = 1.0 - m.z0 * std::pow(1.0 - m.lambda * m.delta, static_cast<double>(u_star));
    return r;
}

/// Mean increment of m~ per bucket of steps, as t-statistics.
inline std::vector<double> mtilde_tstats(const Model& m, std::size_t buckets) {
    std::vector<Stat> s(buckets);
    const std::size_t width = m.steps / buckets;
    for (std::size_t i = 0; i < m.paths; ++i) {
        const auto p = simulate_path(m, i);
        for (std::size_t b = 0; b < buckets; ++b) {
            double acc = 0.0;
            for (std::size_t k = b * width + 1; k <= (b + 1) * width; ++k) acc += p.dm[k];
            s[b].add(acc);
        }
    }
    std::vector<double> t;
    for (const auto& x : s) t.push_back(x.t());
    return t;
}

// ---------------------------------------------------------------------------
// Enlargement drift

/// tau drawn from its conditional law M^u_T = L^u_T given the path, by
/// bisection over start steps (the flows are ordered in the start value).
struct SampledTime {
    std::size_t step = 0;  // steps + 1 means beyond the horizon
    bool beyond = true;
};

inline SampledTime sample_time(const Model& m, const Path& p, double uniform) {
    const std::size_t T = m.steps;
    auto L = [&](std::size_t u) { return flow(m, p, u, 1.0 - p.Z[u], T).X; };
    if (uniform > 1.0 - p.Z[T]) return {T + 1, true};
    if (uniform <= L(0)) return {0, false};
    std::size_t lo = 0, hi = T;  // L(lo) < U <= L(hi)
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (L(mid) >= uniform) hi = mid; else lo = mid;
    }
    return {hi, false};
}

struct DriftTest {
    std::vector<double> t_compensated;    // per (bucket, weight)
    std::vector<double> t_raw;            // same statistics without the drift
    std::vector<std::string> labels;
    double max_abs_t = 0.0;
    double max_abs_t_raw = 0.0;
    std::size_t defaults = 0;
};

/// X = a W + b B. Exact one-step drifts of the discrete scheme: before tau
/// (<M,X> + B^X) / Z_{s-1}; after tau the bracket of X with the density
/// ratio (L^tau - L^{tau-1})_s / (L^tau - L^{tau-1})_{s-1}.
/// Tested on `buckets` equal blocks of steps with weights 1, 1{tau <= s}, 1{tau > s}.
inline DriftTest drift_test(const Model& m, double a, double b, std::size_t buckets) {
    const std::size_t T = m.steps;
    const std::size_t width = T / buckets;
    std::vector<Stat> comp(3 * buckets), raw(3 * buckets);
    DriftTest r;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < m.paths; ++i) {
        const auto p = simulate_path(m, i);
        std::mt19937_64 rng(stream_seed(m.seed, i, 1));
        const auto tau = sample_time(m, p, unif(rng));
        if (!tau.beyond) ++r.defaults;
        std::vector<double> hi, lo;
        if (!tau.beyond) {
            hi = flow_path(m, p, tau.step, 1.0 - p.Z[tau.step]);
            lo = tau.step == 0 ? std::vector<double>(T + 1, 0.0)
                               : flow_path(m, p, tau.step - 1, 1.0 - p.Z[tau.step - 1]);
        }
        std::vector<double> inc(T + 1, 0.0), drift(T + 1, 0.0);
        for (std::size_t s = 1; s <= T; ++s) {
            const double z = p.Z[s - 1];
            const double dX = a * p.dW[s] + b * p.dB[s];
            const double x_dm = -a * m.sigma * z * (1.0 - z) * m.delta / p.pp[s];  // E[dX dm~]
            if (tau.beyond || tau.step > s - 1) {
                const double edge = 1.0 - z;  // start of L^{s-1}
                const double e = edge * x_dm + b * m.delta * coefficient(m, p, s, edge);  // E[dX L^{s-1}_s]
                drift[s] = -e / z;
            } else {
                const double x1 = hi[s - 1], x0 = lo[s - 1];
                const double slope = x1 != x0 ? (coefficient(m, p, s, x1) - coefficient(m, p, s, x0)) / (x1 - x0)
                                              : coefficient_dx(m, p, s, x1);
                drift[s] = x_dm + b * m.delta * slope;
            }
            inc[s] = dX;
        }
        for (std::size_t bk = 0; bk < buckets; ++bk) {
            const std::size_t s0 = bk * width;
            double c = 0.0, x = 0.0;
            for (std::size_t s = s0 + 1; s <= s0 + width; ++s) {
                c += inc[s] - drift[s];
                x += inc[s];
            }
            const bool after = !tau.beyond && tau.step <= s0;
            const double w[3] = {1.0, after ? 1.0 : 0.0, after ? 0.0 : 1.0};
            for (int j = 0; j < 3; ++j) {
                comp[3 * bk + j].add(w[j] * c);
                raw[3 * bk + j].add(w[j] * x);
            }
        }
    }
    static const char* names[3] = {"1", "1{tau<=s}", "1{tau>s}"};
    for (std::size_t bk = 0; bk < buckets; ++bk)
        for (int j = 0; j < 3; ++j) {
            const auto& c = comp[3 * bk + j];
            const auto& x = raw[3 * bk + j];
            r.labels.push_back("bucket " + std::to_string(bk) + " weight " + names[j]);
            r.t_compensated.push_back(c.t());
            r.t_raw.push_back(x.t());
            if (std::isfinite(c.t())) r.max_abs_t = std::max(r.max_abs_t, std::abs(c.t()));
            if (std::isfinite(x.t())) r.max_abs_t_raw = std::max(r.max_abs_t_raw, std::abs(x.t()));
        }
    return r;
}

}  // namespace deftime::mc
