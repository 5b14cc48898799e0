#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ibclab/errors.hpp"

namespace ibclab {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

// m: x-particle mass, M: x-particle count, n: boson number,
// lambda_cut: UV cutoff, c0: resolvent shift. Boson mass is 1/2.
struct ModelParams {
    double m = 0.5;
    int M = 1;
    int n = 0;
    double lambda_cut = 0.0;
    double c0 = 1.0;

    void validate() const {
        if (!(m > 0.0)) throw ConfigError("model.m must be > 0");
        if (M < 1) throw ConfigError("model.M must be >= 1");
        if (n < 0) throw ConfigError("model.n must be >= 0");
        if (!(lambda_cut >= 0.0)) throw ConfigError("model.lambda_cut must be >= 0");
        if (!(c0 > 0.0)) throw ConfigError("model.c0 must be > 0");
    }
    double reduced_mass_factor() const { return 2.0 * m / (2.0 * m + 1.0); }
    double c2() const { return (2.0 * m + 1.0) / (2.0 * m); }
};

// |P|^2/(2m) + |K|^2 + n, with n read off K.
inline double free_symbol(const ModelParams& p, const std::vector<Vec3>& P, const std::vector<Vec3>& K) {
    if (static_cast<int>(P.size()) != p.M)
        throw ConfigError("free_symbol: expected " + std::to_string(p.M) + " x-momenta, got " +
                          std::to_string(P.size()));
    if (static_cast<int>(K.size()) != p.n)
        throw ConfigError("free_symbol: expected " + std::to_string(p.n) + " boson momenta, got " +
                          std::to_string(K.size()));
    double e = static_cast<double>(K.size());
    for (const auto& v : P) e += norm2(v) / (2.0 * p.m);
    for (const auto& v : K) e += norm2(v);
    return e;
}

namespace detail {

// (2m+1) atan(x) with the leading term p/q cancelled: returns p/q - q atan(1/p).
inline long double gamma_bracket(long double m) {
    const long double q = 2.0L * m + 1.0L;
    const long double p = 2.0L * std::sqrt(m * (m + 1.0L));
    const long double x = 1.0L / p;
    if (x >= 1e-4L) return p / q - q * std::atan(x);
    // q*atan(x) = q*x - q*x^3/3 + ...; p/q - q*x = (p^2 - q^2)/(p q) = -x/q.
    long double tail = 0.0L;
    long double xp = x * x * x;
    for (int k = 1; k < 12; ++k) {
        const long double term = xp / static_cast<long double>(2 * k + 1);
        tail += (k % 2 == 1) ? term : -term;
        xp *= x * x;
    }
    return -x / q + q * tail;
}

}  // namespace detail

inline double gamma_m(double m) {
    if (!(m > 0.0)) throw DomainError("gamma_m: m must be > 0");
    const long double lm = m;
    const long double rmf = 2.0L * lm / (2.0L * lm + 1.0L);
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    return static_cast<double>(rmf * rmf * rmf * detail::gamma_bracket(lm) / (two_pi * two_pi * two_pi));
}

inline double linear_counterterm(double m, double lambda_cut) {
    if (!(m > 0.0)) throw DomainError("linear_counterterm: m must be > 0");
    if (!(lambda_cut >= 0.0)) throw DomainError("linear_counterterm: lambda_cut must be >= 0");
    const long double lm = m;
    const long double pi = std::numbers::pi_v<long double>;
    return static_cast<double>(lm * lambda_cut / (pi * pi * (2.0L * lm + 1.0L)));
}

inline double b_coefficient(double m) {
    if (!(m > 0.0)) throw DomainError("b_coefficient: m must be > 0");
    return static_cast<double>(static_cast<long double>(m) /
                               (2.0L * std::numbers::pi_v<long double> * (2.0L * m + 1.0L)));
}

inline double singular_profile(double m, int M, double r) {
    if (!(r > 0.0)) throw DomainError("singular_profile: r must be > 0");
    if (M < 1) throw DomainError("singular_profile: M must be >= 1");
    return (b_coefficient(m) / r + gamma_m(m) * std::log(r)) / M;
}

// Closed form of the xi-convolution of two shifted quadratic denominators.
inline double arctan_convolution(double m, double beta, double gamma, double rho) {
    if (!(m > 0.0) || !(beta > 0.0) || !(gamma > 0.0) || !(rho >= 0.0))
        throw DomainError("arctan_convolution: need m, beta, gamma > 0 and rho >= 0");
    const double q = 2.0 * m + 1.0;
    const double rmf = 2.0 * m / q;
    const double denom = std::sqrt(2.0 * m * q) * (std::sqrt(beta) + std::sqrt(gamma));
    const double z = rho / denom;
    double atan_over_z;
    if (z < 1e-4) {
        const double z2 = z * z;
        atan_over_z = 1.0 - z2 / 3.0 + z2 * z2 / 5.0;
    } else {
        atan_over_z = std::atan(z) / z;
    }
    const double pi = std::numbers::pi;
    return 2.0 * pi * pi * rmf * rmf * q * atan_over_z / denom;
}

}  // namespace ibclab
