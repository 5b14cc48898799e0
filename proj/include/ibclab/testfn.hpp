#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "ibclab/model.hpp"
#include "ibclab/quad.hpp"

namespace ibclab {

// g(x) = A (pi a)^{-3/4} exp(-|x-c|^2/(2a)),  ghat(p) = A (a/pi)^{3/4} exp(-a|p|^2/2 - i p.c)
// with the unitary (2 pi)^{-3/2} Fourier convention.
struct RadialTestFunction {
    double a = 1.0;
    Vec3 center{0.0, 0.0, 0.0};
    double amplitude = 1.0;

    void validate() const {
        if (!(a > 0.0)) throw ConfigError("test function width a must be > 0");
    }
    bool centered() const { return center[0] == 0.0 && center[1] == 0.0 && center[2] == 0.0; }

    double radial(double r) const {
        return amplitude * std::pow(std::numbers::pi * a, -0.75) * std::exp(-r * r / (2.0 * a));
    }
    double eval(const Vec3& x) const { return radial(norm(x - center)); }

    // Modulus of the transform at |p| = k; equals the transform itself when centered.
    double fourier_radial(double k) const {
        return amplitude * std::pow(a / std::numbers::pi, 0.75) * std::exp(-a * k * k / 2.0);
    }
    std::complex<double> fourier_eval(const Vec3& p) const {
        return fourier_radial(norm(p)) * std::polar(1.0, -dot(p, center));
    }
    // Standard deviation of each momentum component under |ghat|^2.
    double momentum_width() const { return 1.0 / std::sqrt(2.0 * a); }

    RadialTestFunction scaled(double s) const { return {a, center, amplitude * s}; }
};

// Tensor product of M x-particle factors and n identical boson factors.
struct ProductState {
    std::vector<RadialTestFunction> x_factors;
    RadialTestFunction boson;
    int n = 0;

    int M() const { return static_cast<int>(x_factors.size()); }

    void validate() const {
        if (x_factors.empty()) throw ConfigError("product state needs at least one x factor");
        if (n < 0) throw ConfigError("product state: n must be >= 0");
        for (const auto& f : x_factors) f.validate();
        boson.validate();
    }
    void check_against(const ModelParams& p) const {
        validate();
        if (M() != p.M || n != p.n) throw ConfigError("product state dimensions do not match the model parameters");
    }
    std::vector<RadialTestFunction> factors() const {
        std::vector<RadialTestFunction> out = x_factors;
        out.insert(out.end(), static_cast<std::size_t>(n), boson);
        return out;
    }
    bool centered() const {
        for (const auto& f : x_factors)
            if (!f.centered()) return false;
        return n == 0 || boson.centered();
    }

    double eval(const std::vector<Vec3>& X, const std::vector<Vec3>& Y) const {
        double v = 1.0;
        for (int i = 0; i < M(); ++i) v *= x_factors[i].eval(X[i]);
        for (int j = 0; j < n; ++j) v *= boson.eval(Y[j]);
        return v;
    }
    std::complex<double> fourier_eval(const std::vector<Vec3>& P, const std::vector<Vec3>& K) const {
        std::complex<double> v = 1.0;
        for (int i = 0; i < M(); ++i) v *= x_factors[i].fourier_eval(P[i]);
        for (int j = 0; j < n; ++j) v *= boson.fourier_eval(K[j]);
        return v;
    }
    // Real transform; valid for centered factors.
    double fourier_real(const std::vector<Vec3>& P, const std::vector<Vec3>& K) const {
        double v = 1.0;
        for (int i = 0; i < M(); ++i) v *= x_factors[i].fourier_radial(norm(P[i]));
        for (int j = 0; j < n; ++j) v *= boson.fourier_radial(norm(K[j]));
        return v;
    }
    double norm2_closed_form() const {
        double v = 1.0;
        for (const auto& f : x_factors) v *= f.amplitude * f.amplitude;
        for (int j = 0; j < n; ++j) v *= boson.amplitude * boson.amplitude;
        return v;
    }
};

inline ProductState single_particle_state(const RadialTestFunction& f) { return {{f}, {}, 0}; }

// L2 norms by radial quadrature in position and momentum space.
inline Estimate position_norm(const RadialTestFunction& f, const QuadSpec& q = {}) {
    QuadSpec s = q;
    s.scale = std::sqrt(f.a);
    Estimate e = integrate_semi_infinite(
        [&](double r) {
            const double g = f.radial(r);
            return 4.0 * std::numbers::pi * r * r * g * g;
        },
        s);
    e.error /= 2.0 * std::sqrt(e.value);
    e.value = std::sqrt(e.value);
    return e;
}

inline Estimate momentum_norm(const RadialTestFunction& f, const QuadSpec& q = {}) {
    QuadSpec s = q;
    s.scale = 1.0 / std::sqrt(f.a);
    Estimate e = integrate_semi_infinite(
        [&](double k) {
            const double g = f.fourier_radial(k);
            return 4.0 * std::numbers::pi * k * k * g * g;
        },
        s);
    e.error /= 2.0 * std::sqrt(e.value);
    e.value = std::sqrt(e.value);
    return e;
}

namespace detail {

// Under |ghat|^2 each squared momentum a|p|^2 is Gamma(3/2)-distributed, so L is
// n plus a weighted sum of independent Gamma variables. Factors with equal weight
// are merged into one Gamma(3k/2) variable.
struct GammaGroup {
    double theta;
    double shape;
};

inline std::vector<GammaGroup> kinetic_groups(const ModelParams& p, const ProductState& st) {
    std::vector<GammaGroup> groups;
    auto add = [&](double theta) {
        for (auto& g : groups)
            if (g.theta == theta) {
                g.shape += 1.5;
                return;
            }
        groups.push_back({theta, 1.5});
    };
    for (const auto& f : st.x_factors) add(1.0 / (2.0 * p.m * f.a));
    for (int j = 0; j < st.n; ++j) add(1.0 / st.boson.a);
    return groups;
}

// E[h(offset + sum_g theta_g G_g)] with v^2 = G substitution to smooth the Gamma density at 0.
inline Estimate gamma_expectation(const std::vector<GammaGroup>& groups, std::size_t idx, double offset,
                                  const std::function<double(double)>& h, const QuadSpec& q) {
    if (idx == groups.size()) return closed_form(h(offset));
    const auto& g = groups[idx];
    const double lnorm = std::lgamma(g.shape);
    long evals = 0;
    double err = 0.0;
    QuadSpec s = q;
    s.scale = std::sqrt(g.shape);
    Estimate e = integrate_semi_infinite(
        [&](double v) {
            const double u = v * v;
            const double w = 2.0 * std::exp((2.0 * g.shape - 1.0) * std::log(v) - u - lnorm);
            if (w == 0.0) return 0.0;
            Estimate inner = gamma_expectation(groups, idx + 1, offset + g.theta * u, h, q);
            evals += inner.evaluations;
            err = std::max(err, inner.error);
            return w * inner.value;
        },
        s);
    e.evaluations += evals;
    e.error += err;
    return e;
}

}  // namespace detail

// Expectation of h(L(P,K)) under |psi-hat|^2, times the squared norm of psi.
inline Estimate symbol_expectation(const ModelParams& p, const ProductState& st, const std::function<double(double)>& h,
                                   const QuadSpec& q = {}) {
    st.check_against(p);
    Estimate e = detail::gamma_expectation(detail::kinetic_groups(p, st), 0, static_cast<double>(st.n), h, q);
    return st.norm2_closed_form() * e;
}

// || (1+L)^s psi ||.
inline Estimate sobolev_norm(const ModelParams& p, const ProductState& st, double s, const QuadSpec& q = {}) {
    if (!(s >= -1.0 && s <= 2.0)) throw DomainError("sobolev_norm: s must lie in [-1, 2]");
    Estimate e = symbol_expectation(p, st, [s](double L) { return std::pow(1.0 + L, 2.0 * s); }, q);
    const double v = std::sqrt(e.value);
    return {v, e.error / (2.0 * v), e.evaluations, e.method, 0.0};
}

// || (1 + L^{1/2}) psi ||.
inline Estimate graph_norm_half(const ModelParams& p, const ProductState& st, const QuadSpec& q = {}) {
    Estimate e = symbol_expectation(
        p, st,
        [](double L) {
            const double v = 1.0 + std::sqrt(L);
            return v * v;
        },
        q);
    const double v = std::sqrt(e.value);
    return {v, e.error / (2.0 * v), e.evaluations, e.method, 0.0};
}

}  // namespace ibclab
