#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "parafreq/error.hpp"

namespace parafreq {

/// Scalar coefficient of time: the zeroth-order drive of the linear flow, the
/// drive of the p-flow, or the perturbation envelope. Integrals, squared
/// integrals, suprema and monotonicity are evaluated in closed form.
class TimeFunction {
public:
    enum class Kind { constant, linear, sinusoid, piecewise_linear };
    using Knot = std::pair<double, double>;

    TimeFunction() = default;

    static TimeFunction constant(double value) {
        TimeFunction f;
        f.kind_ = Kind::constant;
        f.c0_ = value;
        return f;
    }

    /// slope * t + intercept
    static TimeFunction linear(double slope, double intercept) {
        TimeFunction f;
        f.kind_ = Kind::linear;
        f.c0_ = slope;
        f.c1_ = intercept;
        return f;
    }

    /// amplitude * sin(omega * t + phase)
    static TimeFunction sinusoid(double amplitude, double omega, double phase) {
        TimeFunction f;
        f.kind_ = Kind::sinusoid;
        f.c0_ = amplitude;
        f.c1_ = omega;
        f.c2_ = phase;
        return f;
    }

    /// Linear interpolation between knots, constant extension outside them.
    static TimeFunction piecewise_linear(std::vector<Knot> knots) {
        if (knots.empty()) throw Error(ErrorKind::invalid_spec, "piecewise-linear function needs at least one knot");
        for (std::size_t k = 1; k < knots.size(); ++k) {
            if (!(knots[k].first > knots[k - 1].first)) {
                throw Error(ErrorKind::invalid_spec, "piecewise-linear knots must be strictly increasing in t");
            }
        }
        TimeFunction f;
        f.kind_ = Kind::piecewise_linear;
        f.knots_ = std::move(knots);
        return f;
    }

    Kind kind() const noexcept { return kind_; }
    double value() const noexcept { return c0_; }
    double slope() const noexcept { return c0_; }
    double intercept() const noexcept { return c1_; }
    double amplitude() const noexcept { return c0_; }
    double omega() const noexcept { return c1_; }
    double phase() const noexcept { return c2_; }
    const std::vector<Knot>& knots() const noexcept { return knots_; }

    double operator()(double t) const {
        switch (kind_) {
            case Kind::constant: return c0_;
            case Kind::linear: return c0_ * t + c1_;
            case Kind::sinusoid: return c0_ * std::sin(c1_ * t + c2_);
            case Kind::piecewise_linear: return eval_piecewise(t);
        }
        return 0.0;
    }

    bool is_identically_zero() const {
        switch (kind_) {
            case Kind::constant: return c0_ == 0.0;
            case Kind::linear: return c0_ == 0.0 && c1_ == 0.0;
            case Kind::sinusoid: return c0_ == 0.0;
            case Kind::piecewise_linear:
                return std::all_of(knots_.begin(), knots_.end(), [](const Knot& k) { return k.second == 0.0; });
        }
        return false;
    }

    /// Integral over [a, b].
    double integral(double a, double b) const {
        switch (kind_) {
            case Kind::constant: return c0_ * (b - a);
            case Kind::linear: return 0.5 * c0_ * (b - a) * (b + a) + c1_ * (b - a);
            case Kind::sinusoid:
                if (c1_ == 0.0) return c0_ * std::sin(c2_) * (b - a);
                return -c0_ / c1_ * (std::cos(c1_ * b + c2_) - std::cos(c1_ * a + c2_));
            case Kind::piecewise_linear: {
                // trapezoid is exact on each linear piece
                double sum = 0.0;
                for_each_piece(a, b, [&](double t0, double t1) {
                    sum += 0.5 * (t1 - t0) * (eval_piecewise(t0) + eval_piecewise(t1));
                });
                return sum;
            }
        }
        return 0.0;
    }

    /// Integral of the square over [a, b].
    double integral_of_square(double a, double b) const {
        switch (kind_) {
            case Kind::constant: return c0_ * c0_ * (b - a);
            case Kind::linear: {
                const double s = c0_, c = c1_;
                return s * s * (b * b * b - a * a * a) / 3.0 + s * c * (b * b - a * a) + c * c * (b - a);
            }
            case Kind::sinusoid: {
                const double amp2 = c0_ * c0_;
                if (c1_ == 0.0) return amp2 * std::sin(c2_) * std::sin(c2_) * (b - a);
                return amp2 * (0.5 * (b - a) -
                               (std::sin(2.0 * (c1_ * b + c2_)) - std::sin(2.0 * (c1_ * a + c2_))) / (4.0 * c1_));
            }
            case Kind::piecewise_linear: {
                // Simpson is exact for the quadratic on each piece
                double sum = 0.0;
                for_each_piece(a, b, [&](double t0, double t1) {
                    const double f0 = eval_piecewise(t0), f1 = eval_piecewise(t1);
                    const double fm = 0.5 * (f0 + f1);
                    sum += (t1 - t0) / 6.0 * (f0 * f0 + 4.0 * fm * fm + f1 * f1);
                });
                return sum;
            }
        }
        return 0.0;
    }

    double sup(double a, double b) const { return extreme(a, b, true); }
    double inf(double a, double b) const { return extreme(a, b, false); }

    bool nondecreasing_on(double a, double b) const {
        switch (kind_) {
            case Kind::constant: return true;
            case Kind::linear: return c0_ >= 0.0;
            case Kind::sinusoid: {
                if (c0_ == 0.0 || c1_ == 0.0) return true;
                // derivative is amplitude*omega * sin(omega t + phase + pi/2)
                const TimeFunction deriv = sinusoid(c0_ * c1_, c1_, c2_ + std::numbers::pi / 2.0);
                return deriv.inf(a, b) >= -1e-14 * std::abs(c0_ * c1_);
            }
            case Kind::piecewise_linear: {
                double prev = eval_piecewise(a);
                for (const auto& [t, v] : knots_) {
                    if (t <= a || t >= b) continue;
                    if (v < prev) return false;
                    prev = v;
                }
                return eval_piecewise(b) >= prev;
            }
        }
        return false;
    }

private:
    double eval_piecewise(double t) const {
        if (t <= knots_.front().first) return knots_.front().second;
        if (t >= knots_.back().first) return knots_.back().second;
        auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                   [](double x, const Knot& k) { return x < k.first; });
        const Knot& hi = *it;
        const Knot& lo = *(it - 1);
        const double w = (t - lo.first) / (hi.first - lo.first);
        return lo.second + w * (hi.second - lo.second);
    }

    // Splits [a, b] at interior knots and calls fn on each sub-interval.
    // For b < a the pieces run backwards, so the integrals come out signed.
    template <typename Fn>
    void for_each_piece(double a, double b, Fn&& fn) const {
        std::vector<double> cuts{a};
        for (const auto& k : knots_) {
            if (k.first > std::min(a, b) && k.first < std::max(a, b)) cuts.push_back(k.first);
        }
        cuts.push_back(b);
        if (b < a) std::sort(cuts.begin() + 1, cuts.end() - 1, std::greater<>());
        for (std::size_t k = 1; k < cuts.size(); ++k) fn(cuts[k - 1], cuts[k]);
    }

    double extreme(double a, double b, bool want_max) const {
        auto better = [&](double x, double y) { return want_max ? std::max(x, y) : std::min(x, y); };
        double best = better((*this)(a), (*this)(b));
        switch (kind_) {
            case Kind::constant:
            case Kind::linear: return best;
            case Kind::sinusoid: {
                if (c1_ == 0.0 || c0_ == 0.0) return best;
                // critical points: omega t + phase = pi/2 + k pi
                const double lo = std::min(c1_ * a, c1_ * b) + c2_;
                const double hi = std::max(c1_ * a, c1_ * b) + c2_;
                const double half_pi = std::numbers::pi / 2.0;
                double k = std::ceil((lo - half_pi) / std::numbers::pi);
                for (; half_pi + k * std::numbers::pi <= hi; k += 1.0) {
                    const double theta = half_pi + k * std::numbers::pi;
                    best = better(best, c0_ * std::sin(theta));
                }
                return best;
            }
            case Kind::piecewise_linear:
                for (const auto& [t, v] : knots_) {
                    if (t > a && t < b) best = better(best, v);
                }
                return best;
        }
        return best;
    }

    Kind kind_ = Kind::constant;
    double c0_ = 0.0;
    double c1_ = 0.0;
    double c2_ = 0.0;
    std::vector<Knot> knots_;
};

} // namespace parafreq
