#pragma once

// Right-inverse of a nondecreasing function and the exponential
// renormalisation that squeezes an increasing process below 1.

#include <cmath>
#include <cstddef>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"

namespace deftime {

/// Nonnegative, nondecreasing, right-continuous function on [0, inf).
/// Knot i carries the left limit a(x_i-) and the value a(x_i); between knots
/// the function is linear from a(x_i) to a(x_{i+1}-). After the last knot it
/// stays constant. a(u) = 0 for u < x_0 = 0.
class PiecewiseFunction {
public:
    struct Knot {
        double x;
        double left;   // a(x-)
        double value;  // a(x)
    };

    PiecewiseFunction() = default;
    explicit PiecewiseFunction(std::vector<Knot> knots) : knots_(std::move(knots)) {
        if (knots_.empty() || knots_.front().x != 0.0) throw InvalidSpec("first knot must sit at 0");
        double prev = 0.0;
        for (std::size_t i = 0; i < knots_.size(); ++i) {
            const auto& k = knots_[i];
            if (i > 0 && !(k.x > knots_[i - 1].x)) throw InvalidSpec("knots must be strictly increasing");
            if (k.left < prev || k.value < k.left) throw NotIncreasing("function decreases at a knot");
            prev = k.value;
        }
        if (knots_.front().left != 0.0) throw InvalidSpec("a(0-) must be 0");
    }

    /// Step function with jumps `sizes[i]` at `points[i]`.
    static PiecewiseFunction steps(const std::vector<double>& points, const std::vector<double>& sizes) {
        std::vector<Knot> k;
        double level = 0.0;
        if (points.empty() || points.front() != 0.0) k.push_back({0.0, 0.0, 0.0});
        for (std::size_t i = 0; i < points.size(); ++i) {
            k.push_back({points[i], level, level + sizes.at(i)});
            level += sizes[i];
        }
        return PiecewiseFunction(std::move(k));
    }

    [[nodiscard]] double operator()(double u) const {
        if (u < 0.0) return 0.0;
        const std::size_t i = segment(u);
        const auto& k = knots_[i];
        if (u == k.x || i + 1 == knots_.size()) return k.value;
        const auto& n = knots_[i + 1];
        return k.value + (n.left - k.value) * (u - k.x) / (n.x - k.x);
    }

    [[nodiscard]] double left_limit(double u) const {
        if (u <= 0.0) return u < 0.0 ? 0.0 : knots_.front().left;
        const std::size_t i = segment(u);
        if (u == knots_[i].x) return knots_[i].left;
        return (*this)(u);
    }

    [[nodiscard]] const std::vector<Knot>& knots() const noexcept { return knots_; }

private:
    // Last knot with x <= u.
    [[nodiscard]] std::size_t segment(double u) const {
        std::size_t lo = 0, hi = knots_.size();
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            if (knots_[mid].x <= u) lo = mid; else hi = mid;
        }
        return lo;
    }

    std::vector<Knot> knots_;
};

/// c(s) = inf{u : a(u) > s}, with c(s-) = inf{u : a(u) >= s}.
class RightInverse {
public:
    explicit RightInverse(PiecewiseFunction a) : a_(std::move(a)) {}

    [[nodiscard]] double operator()(double s) const { return search(s, false); }
    [[nodiscard]] double left_limit(double s) const { return search(s, true); }
    [[nodiscard]] const PiecewiseFunction& function() const noexcept { return a_; }

private:
    [[nodiscard]] double search(double s, bool weak) const {
        auto hit = [&](double v) { return weak ? v >= s : v > s; };
        const auto& k = a_.knots();
        for (std::size_t i = 0; i < k.size(); ++i) {
            if (hit(k[i].value)) return k[i].x;
            if (i + 1 < k.size() && hit(k[i + 1].left)) {
                const double slope = (k[i + 1].left - k[i].value) / (k[i + 1].x - k[i].x);
                return k[i].x + (s - k[i].value) / slope;
            }
        }
        return kInfinity;
    }

    PiecewiseFunction a_;
};

inline RightInverse right_inverse(PiecewiseFunction a) { return RightInverse(std::move(a)); }

/// Stieltjes integral of exp(-a) against da over [0, t]; jumps are weighted by
/// the post-jump value.
inline double exp_integral(const PiecewiseFunction& a, double t) {
    double total = 0.0;
    const auto& k = a.knots();
    for (std::size_t i = 0; i < k.size() && k[i].x <= t; ++i) {
        total += std::exp(-k[i].value) * (k[i].value - k[i].left);
        if (i + 1 == k.size() || k[i].x == t) continue;
        const double end_value = t < k[i + 1].x ? a(t) : k[i + 1].left;
        total += std::exp(-k[i].value) - std::exp(-end_value);
    }
    return total;
}

/// Discrete renormalisation of one path of increments: returns the cumulative
/// sums of exp(-A_v) dA_v, A_v the post-jump value.
inline std::vector<double> normalize_increments(const std::vector<double>& dA) {
    std::vector<double> out(dA.size());
    double A = 0.0, bar = 0.0;
    for (std::size_t v = 0; v < dA.size(); ++v) {
        A += dA[v];
        bar += std::exp(-A) * dA[v];
        out[v] = bar;
    }
    return out;
}

/// Result of normalising an increasing adapted process.
struct NormalizedProcess {
    IncreasingProcess A;        // finite values < 1, A_infinity = 1
    AdaptedProcess rescale;     // exp(A_k): density of the original A against the new one
};

/// Abar_k = sum_{v<=k} exp(-A_v) dA_v node-wise, with the remaining mass put at infinity.
inline NormalizedProcess normalize_A(const ScenarioTree& tree, const AdaptedProcess& A) {
    NormalizedProcess out{{AdaptedProcess(tree), std::vector<double>(tree.num_leaves(), 1.0)},
                          AdaptedProcess(tree)};
    for (std::size_t k = 0; k < tree.num_levels(); ++k) {
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const double prev_A = k == 0 ? 0.0 : A(k - 1, tree.node(k, i).parent);
            const double prev_bar = k == 0 ? 0.0 : out.A.values(k - 1, tree.node(k, i).parent);
            const double dA = A(k, i) - prev_A;
            if (dA < -kSupermartingaleTol || A(k, i) < -kSupermartingaleTol)
                throw NotIncreasing("process to normalise is not nonnegative nondecreasing");
            out.A.values(k, i) = prev_bar + std::exp(-A(k, i)) * dA;
            out.rescale(k, i) = std::exp(A(k, i));
        }
    }
    return out;
}

}  // namespace deftime
