#pragma once

// Copulas coupling several default times given the terminal information.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "deftime/errors.hpp"

namespace deftime {

class Copula {
public:
    virtual ~Copula() = default;

    [[nodiscard]] virtual double operator()(const std::vector<double>& x) const = 0;
    /// dC/dx_j. Copulas that are not continuously differentiable throw.
    [[nodiscard]] virtual double partial(const std::vector<double>& x, std::size_t j) const = 0;
    [[nodiscard]] virtual bool differentiable() const { return true; }
    [[nodiscard]] virtual std::string name() const = 0;

    /// Marginal C_J: coordinates outside the bitmask J are set to 1.
    [[nodiscard]] double marginal(const std::vector<double>& x, unsigned J) const {
        std::vector<double> y(x);
        for (std::size_t j = 0; j < y.size(); ++j)
            if (!(J & (1u << j))) y[j] = 1.0;
        return (*this)(y);
    }
    [[nodiscard]] double marginal_partial(const std::vector<double>& x, unsigned J, std::size_t j) const {
        if (!(J & (1u << j))) return 0.0;
        std::vector<double> y(x);
        for (std::size_t i = 0; i < y.size(); ++i)
            if (!(J & (1u << i))) y[i] = 1.0;
        return partial(y, j);
    }
};

class ProductCopula final : public Copula {
public:
    double operator()(const std::vector<double>& x) const override {
        double p = 1.0;
        for (double v : x) p *= v;
        return p;
    }
    double partial(const std::vector<double>& x, std::size_t j) const override {
        double p = 1.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (i != j) p *= x[i];
        return p;
    }
    std::string name() const override { return "product"; }
};

/// (sum x_i^-theta - k + 1)^(-1/theta), theta > 0.
class ClaytonCopula final : public Copula {
public:
    explicit ClaytonCopula(double theta) : theta_(theta) {
        if (!(theta > 0.0)) throw InvalidSpec("Clayton parameter must be positive");
    }
    double operator()(const std::vector<double>& x) const override {
        double s = 0.0;
        for (double v : x) {
            if (v <= 0.0) return 0.0;
            s += std::pow(v, -theta_) - 1.0;
        }
        return std::pow(s + 1.0, -1.0 / theta_);
    }
    double partial(const std::vector<double>& x, std::size_t j) const override {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] <= 0.0) return 0.0;
            s += std::pow(x[i], -theta_) - 1.0;
        }
        return std::pow(s + 1.0, -1.0 / theta_ - 1.0) * std::pow(x[j], -theta_ - 1.0);
    }
    std::string name() const override { return "clayton"; }

private:
    double theta_;
};

/// exp(-(sum (-ln x_i)^theta)^(1/theta)), theta >= 1.
class GumbelCopula final : public Copula {
public:
    explicit GumbelCopula(double theta) : theta_(theta) {
        if (!(theta >= 1.0)) throw InvalidSpec("Gumbel parameter must be at least 1");
    }
    double operator()(const std::vector<double>& x) const override {
        double s = 0.0;
        for (double v : x) {
            if (v <= 0.0) return 0.0;
            s += std::pow(-std::log(v), theta_);
        }
        return std::exp(-std::pow(s, 1.0 / theta_));
    }
    double partial(const std::vector<double>& x, std::size_t j) const override {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] <= 0.0) return 0.0;
            s += std::pow(-std::log(x[i]), theta_);
        }
        if (x[j] >= 1.0) return s == 0.0 ? 1.0 : (theta_ > 1.0 ? 0.0 : std::exp(-std::pow(s, 1.0 / theta_)));
        if (s == 0.0) return 1.0;
        const double C = std::exp(-std::pow(s, 1.0 / theta_));
        return C * std::pow(s, 1.0 / theta_ - 1.0) * std::pow(-std::log(x[j]), theta_ - 1.0) / x[j];
    }
    std::string name() const override { return "gumbel"; }

private:
    double theta_;
};

/// prod x_i (1 + theta prod (1 - x_i)), |theta| <= 1.
class FGMCopula final : public Copula {
public:
    explicit FGMCopula(double theta) : theta_(theta) {
        if (std::abs(theta) > 1.0) throw InvalidSpec("FGM parameter must lie in [-1, 1]");
    }
    double operator()(const std::vector<double>& x) const override {
        double p = 1.0, q = 1.0;
        for (double v : x) {
            p *= v;
            q *= 1.0 - v;
        }
        return p * (1.0 + theta_ * q);
    }
    double partial(const std::vector<double>& x, std::size_t j) const override {
        double p = 1.0, q = 1.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (i != j) {
                p *= x[i];
                q *= 1.0 - x[i];
            }
        return p * (1.0 + theta_ * q * (1.0 - x[j])) - p * x[j] * theta_ * q;
    }
    std::string name() const override { return "fgm"; }

private:
    double theta_;
};

/// Comonotone copula min(x). Not differentiable on the diagonal.
class MinCopula final : public Copula {
public:
    double operator()(const std::vector<double>& x) const override {
        return x.empty() ? 1.0 : *std::min_element(x.begin(), x.end());
    }
    double partial(const std::vector<double>&, std::size_t) const override {
        throw NotDifferentiableMarginal("the comonotone copula is not continuously differentiable");
    }
    bool differentiable() const override { return false; }
    std::string name() const override { return "min"; }
};

inline std::shared_ptr<Copula> make_copula(const std::string& name, double theta = 0.0) {
    if (name == "product") return std::make_shared<ProductCopula>();
    if (name == "clayton") return std::make_shared<ClaytonCopula>(theta);
    if (name == "gumbel") return std::make_shared<GumbelCopula>(theta);
    if (name == "fgm") return std::make_shared<FGMCopula>(theta);
    if (name == "min") return std::make_shared<MinCopula>();
    throw ConfigError("unknown copula '" + name + "'");
}

/// Probability that the coupled variables fall in the box prod (lo_j, hi_j],
/// given marginal distribution values lo, hi.
inline double box_mass(const Copula& C, const std::vector<double>& lo, const std::vector<double>& hi) {
    const std::size_t k = lo.size();
    double s = 0.0;
    std::vector<double> x(k);
    for (unsigned corner = 0; corner < (1u << k); ++corner) {
        int lows = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const bool low = corner & (1u << j);
            x[j] = low ? lo[j] : hi[j];
            lows += low ? 1 : 0;
        }
        s += (lows % 2 ? -1.0 : 1.0) * C(x);
    }
    return s;
}

/// Joint law on a finite product grid: cdf[j][v] is the distribution function of
/// coordinate j at grid point v (nondecreasing, last entry 1). Returns the mass
/// of every grid cell in row-major order over coordinates.
inline std::vector<double> grid_law(const Copula& C, const std::vector<std::vector<double>>& cdf) {
    const std::size_t k = cdf.size();
    const std::size_t U = cdf.front().size();
    std::size_t cells = 1;
    for (std::size_t j = 0; j < k; ++j) cells *= U;
    std::vector<double> out(cells);
    std::vector<double> lo(k), hi(k);
    for (std::size_t c = 0; c < cells; ++c) {
        std::size_t rest = c;
        for (std::size_t j = k; j-- > 0;) {
            const std::size_t v = rest % U;
            rest /= U;
            lo[j] = v == 0 ? 0.0 : cdf[j][v - 1];
            hi[j] = cdf[j][v];
        }
        out[c] = std::max(0.0, box_mass(C, lo, hi));
    }
    return out;
}

/// Sequential inverse-transform draw from a grid law: each coordinate from its
/// conditional distribution given the ones already drawn.
inline std::vector<std::size_t> sample_grid_law(const std::vector<double>& law, std::size_t k, std::size_t U,
                                                std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::size_t> out(k);
    std::size_t prefix = 0;  // index of the fixed leading coordinates
    std::size_t block = law.size();
    for (std::size_t j = 0; j < k; ++j) {
        block /= U;
        std::vector<double> w(U, 0.0);
        double total = 0.0;
        for (std::size_t v = 0; v < U; ++v) {
            const std::size_t base = (prefix * U + v) * block;
            for (std::size_t c = 0; c < block; ++c) w[v] += law[base + c];
            total += w[v];
        }
        const double target = unif(rng) * total;
        double acc = 0.0;
        std::size_t pick = U - 1;
        for (std::size_t v = 0; v < U; ++v) {
            acc += w[v];
            if (target < acc) {
                pick = v;
                break;
            }
        }
        out[j] = pick;
        prefix = prefix * U + pick;
    }
    return out;
}

}  // namespace deftime
