#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "ibclab/model.hpp"
#include "ibclab/quad.hpp"
#include "ibclab/testfn.hpp"

namespace ibclab {

// Coefficients of the sector-one T_d symbol in centre-of-mass momentum sigma and
// relative momentum rho = k - sigma/(2m+1):
//   n+1 + p^2/(2m+1) + k^2 = 2 + cr rho^2 + b1 sigma^2 + b2 sigma.rho.
struct KernelConstants {
    double b1, b2, c2, rmf, cr;

    static KernelConstants of(double m) {
        if (!(m > 0.0)) throw DomainError("kernel constants need m > 0");
        const double q = 2.0 * m + 1.0;
        return {(4.0 * m * m + 2.0 * m + 1.0) / (q * q * q), 2.0 / (q * q), q / (2.0 * m), 2.0 * m / q,
                (2.0 * m + 2.0) / q};
    }
};

enum class RdKernel { exact, asymptotic };

namespace detail {

constexpr double kPi = std::numbers::pi;
inline double two_pi_pow(double e) { return std::pow(2.0 * kPi, e); }

inline void require_single_particle(const ModelParams& p, const char* what) {
    p.validate();
    if (p.M != 1 || p.n != 0) throw ConfigError(std::string(what) + " requires M = 1 and n = 0");
}

// 4 pi int_0^inf k^2 sinc(k u) h(k) dk.
template <class H>
Estimate radial_fourier(H&& h, double u, const QuadSpec& q) {
    if (u == 0.0) {
        Estimate e = integrate_semi_infinite([&](double k) { return 4.0 * kPi * k * k * h(k); }, q);
        return e;
    }
    Estimate e = integrate_oscillatory([&](double k) { return 4.0 * kPi * k * h(k) / u; }, u, q);
    return e;
}

// int_0^inf rho^2 sinc(rho d) g(rho) d rho for d > 0: plain adaptive up to a zero
// X >= x_min of sin(rho d), oscillatory panels beyond.
template <class G>
Estimate sinc_transform(G&& g, double d, const QuadSpec& q, double x_min = 50.0) {
    const double half = kPi / d;
    const long k = std::max(1L, static_cast<long>(std::ceil(x_min / half)));
    const double X = k * half;
    Estimate head = integrate_range(
        [&](double r) {
            const double x = r * d;
            const double sinc = x < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
            return r * r * sinc * g(r);
        },
        0.0, X, q);
    QuadSpec tq = q;
    tq.abs_tol = std::max(q.abs_tol, 0.1 * q.rel_tol * std::abs(head.value));
    Estimate tail = integrate_oscillatory([&](double t) { return (X + t) * g(X + t) / d; }, d, tq);
    if (k % 2 == 1) tail.value = -tail.value;
    return head + tail;
}

// Angular integral over the sigma-rho angle of sqrt(A + B u), u in [-1, 1].
inline double sqrt_angle_integral(double A, double B) {
    const double x = A + B, y = A - B;
    const double sx = std::sqrt(x), sy = std::sqrt(y);
    return 4.0 / 3.0 * (x + sx * sy + y) / (sx + sy);
}

}  // namespace detail

// ---------------------------------------------------------------- G

// (G psi)(s, r) for M = 1, n = 0, with G = -L^{-1} a^*(delta): negative near r = 0,
// behaving like -b(m) psi(s)/|r|.
inline Estimate apply_G_probe(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s, double r,
                              const QuadSpec& q = {}) {
    detail::require_single_particle(p, "apply_G_probe");
    if (!(r > 0.0)) throw DomainError("apply_G_probe: |r| must be > 0");
    const auto kc = KernelConstants::of(p.m);
    const double R = std::sqrt(kc.rmf) * r;
    const double qm = 2.0 * p.m + 1.0;
    QuadSpec qs = q;
    qs.scale = 1.0 / std::sqrt(psi.a);
    Estimate e = detail::radial_fourier(
        [&](double xi) { return std::exp(-R * std::sqrt(1.0 + xi * xi / qm)) * psi.fourier_radial(xi); },
        norm(s - psi.center), qs);
    const double pre = -detail::two_pi_pow(-1.5) * std::pow(kc.rmf, 1.5) / (4.0 * detail::kPi * R);
    return pre * e;
}

inline Estimate apply_G_probe(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s, const Vec3& r,
                              const QuadSpec& q = {}) {
    return apply_G_probe(p, psi, s, norm(r), q);
}

// ---------------------------------------------------------------- T_d

// Real multiplier of T_d at momenta (P, K).
inline double td_multiplier(const ModelParams& p, const std::vector<Vec3>& P, const std::vector<Vec3>& K) {
    free_symbol(p, P, K);  // dimension check
    const double rmf = p.reduced_mass_factor();
    double k2 = 0.0, p2 = 0.0;
    for (const auto& k : K) k2 += norm2(k);
    for (const auto& v : P) p2 += norm2(v);
    double sum = 0.0;
    for (const auto& v : P) {
        const double pm2 = norm2(v);
        sum += std::sqrt(p.n + 1.0 + pm2 / (2.0 * p.m + 1.0) + (p2 - pm2) / (2.0 * p.m) + k2);
    }
    return std::pow(rmf, 1.5) / (4.0 * detail::kPi) * sum;
}

inline std::complex<double> apply_Td(const ModelParams& p, const ProductState& psi, const std::vector<Vec3>& P,
                                     const std::vector<Vec3>& K) {
    psi.check_against(p);
    return td_multiplier(p, P, K) * psi.fourier_eval(P, K);
}

// (T_d psi)(s) in position space for M = 1, n = 0.
inline Estimate td_position_value(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s,
                                  const QuadSpec& q = {}) {
    detail::require_single_particle(p, "td_position_value");
    const double rmf = p.reduced_mass_factor();
    const double qm = 2.0 * p.m + 1.0;
    QuadSpec qs = q;
    qs.scale = 1.0 / std::sqrt(psi.a);
    Estimate e = detail::radial_fourier(
        [&](double xi) {
            return std::pow(rmf, 1.5) / (4.0 * detail::kPi) * std::sqrt(1.0 + xi * xi / qm) * psi.fourier_radial(xi);
        },
        norm(s - psi.center), qs);
    return detail::two_pi_pow(-1.5) * e;
}

// ---------------------------------------------------------------- T_od

namespace detail {

// Gaussian integral of exp(-sum_t w_t |c_t . X + b_t|^2) over X in R^{3N}.
class QuadraticForm {
public:
    explicit QuadraticForm(int n) : A_(Eigen::MatrixXd::Zero(n, n)), B_(Eigen::MatrixXd::Zero(n, 3)) {}

    void add(double w, const Eigen::VectorXd& c, const Vec3& b = {0, 0, 0}) {
        A_.noalias() += w * c * c.transpose();
        for (int d = 0; d < 3; ++d) B_.col(d) += w * b[d] * c;
        C_ += w * norm2(b);
    }
    void add_diag(double w) { A_.diagonal().array() += w; }

    // Log of the integral.
    double log_integral() const {
        Eigen::LLT<Eigen::MatrixXd> llt(A_);
        if (llt.info() != Eigen::Success) throw DiagnosticsError("degenerate Gaussian form");
        const int n = static_cast<int>(A_.rows());
        double logdet = 0.0;
        for (int i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
        const Eigen::MatrixXd S = llt.solve(B_);
        const double quad = (B_.transpose() * S).trace();
        return 1.5 * (n * std::log(kPi) - logdet) + quad - C_;
    }

private:
    Eigen::MatrixXd A_;
    Eigen::MatrixXd B_;
    double C_ = 0.0;
};

// Linear combination of integration variables plus a constant vector.
struct Affine {
    Eigen::VectorXd c;
    Vec3 b{0, 0, 0};
};

// One summand of T_od: xi removed from x-particle mu and given to x-particle nu,
// either through boson i (boson >= 0) or directly (boson < 0, mu != nu).
struct TodTerm {
    int mu, nu, boson;
};

inline std::vector<TodTerm> tod_terms(int M, int n) {
    std::vector<TodTerm> out;
    for (int mu = 0; mu < M; ++mu)
        for (int nu = 0; nu < M; ++nu) {
            for (int i = 0; i < n; ++i) out.push_back({mu, nu, i});
            if (mu != nu) out.push_back({mu, nu, -1});
        }
    return out;
}

// Momenta (P, K) as affine functions of the integration variables.
struct MomentumLayout {
    std::vector<Affine> P, K;
};

// Arguments of psi-hat in a T_od term, given the outer momenta and the variable xi.
inline MomentumLayout tod_arguments(const MomentumLayout& outer, const Affine& xi, const TodTerm& t) {
    MomentumLayout out = outer;
    auto shift = [](Affine& a, const Affine& by, double s) {
        a.c += s * by.c;
        for (int d = 0; d < 3; ++d) a.b[d] += s * by.b[d];
    };
    shift(out.P[t.mu], xi, -1.0);
    if (t.boson >= 0) {
        shift(out.P[t.nu], outer.K[t.boson], 1.0);
        out.K[t.boson] = xi;
    } else {
        shift(out.P[t.nu], xi, 1.0);
    }
    return out;
}

// Adds the Gaussian exponent of a centered product state evaluated at the given arguments.
inline void add_state(QuadraticForm& f, const ProductState& st, const MomentumLayout& args) {
    for (int i = 0; i < st.M(); ++i) f.add(0.5 * st.x_factors[i].a, args.P[i].c, args.P[i].b);
    for (int j = 0; j < st.n; ++j) f.add(0.5 * st.boson.a, args.K[j].c, args.K[j].b);
}

// Adds t * (|P - e_mu xi|^2/(2m) + |K|^2 + |xi|^2), the non-constant part of the denominator.
inline void add_denominator(QuadraticForm& f, double t, double m, const MomentumLayout& outer, const Affine& xi,
                            int mu) {
    for (std::size_t l = 0; l < outer.P.size(); ++l) {
        Affine a = outer.P[l];
        if (static_cast<int>(l) == mu) {
            a.c -= xi.c;
            for (int d = 0; d < 3; ++d) a.b[d] -= xi.b[d];
        }
        f.add(t / (2.0 * m), a.c, a.b);
    }
    for (const auto& k : outer.K) f.add(t, k.c, k.b);
    f.add(t, xi.c, xi.b);
}

inline double state_prefactor(const ProductState& st) {
    double v = 1.0;
    for (const auto& f : st.x_factors) v *= f.amplitude * std::pow(f.a / kPi, 0.75);
    for (int j = 0; j < st.n; ++j) v *= st.boson.amplitude * std::pow(st.boson.a / kPi, 0.75);
    return v;
}

inline Affine variable(int N, int j) {
    Affine a{Eigen::VectorXd::Zero(N), {0, 0, 0}};
    a.c(j) = 1.0;
    return a;
}

inline Affine constant(int N, const Vec3& v) { return {Eigen::VectorXd::Zero(N), v}; }

inline MomentumLayout outer_variables(int M, int n, int N) {
    MomentumLayout L;
    for (int i = 0; i < M; ++i) L.P.push_back(variable(N, i));
    for (int j = 0; j < n; ++j) L.K.push_back(variable(N, M + j));
    return L;
}

inline void require_tod_state(const ModelParams& p, const ProductState& st) {
    st.check_against(p);
    if (!st.centered()) throw ConfigError("T_od evaluation supports centered Gaussian factors only");
    if (p.M > 2 || p.n > 2) throw ConfigError("T_od evaluation is implemented for M <= 2 and n <= 2");
}

}  // namespace detail

// (T_od psi)^(P, K) by the proper-time representation 1/D = int_0^inf e^{-tD} dt,
// which makes the xi-integral Gaussian and leaves a 1D t-quadrature.
inline Estimate apply_Tod(const ModelParams& p, const ProductState& psi, const std::vector<Vec3>& P,
                          const std::vector<Vec3>& K, const QuadSpec& q = {}) {
    detail::require_tod_state(p, psi);
    free_symbol(p, P, K);
    const auto terms = detail::tod_terms(p.M, p.n);
    if (terms.empty()) return closed_form(0.0);
    detail::MomentumLayout outer;
    for (const auto& v : P) outer.P.push_back(detail::constant(1, v));
    for (const auto& v : K) outer.K.push_back(detail::constant(1, v));
    const detail::Affine xi = detail::variable(1, 0);
    const double pref = detail::state_prefactor(psi);
    Estimate total = closed_form(0.0);
    for (const auto& t : terms) {
        const auto args = detail::tod_arguments(outer, xi, t);
        Estimate e = integrate_semi_infinite(
            [&](double tau) {
                detail::QuadraticForm f(1);
                detail::add_state(f, psi, args);
                detail::add_denominator(f, tau, p.m, outer, xi, t.mu);
                return std::exp(f.log_integral() - tau * (p.n + 1.0));
            },
            q);
        total += e;
    }
    return (-detail::two_pi_pow(-3.0) * pref) * total;
}

// Monte Carlo evaluation of the same xi-integral, sampling xi from a 3D Cauchy density.
inline Estimate apply_Tod_mc(const ModelParams& p, const ProductState& psi, const std::vector<Vec3>& P,
                             const std::vector<Vec3>& K, long samples, std::uint64_t seed) {
    detail::require_tod_state(p, psi);
    free_symbol(p, P, K);
    const auto terms = detail::tod_terms(p.M, p.n);
    if (terms.empty()) return closed_form(0.0);
    const double k2 = [&] {
        double s = 0;
        for (const auto& k : K) s += norm2(k);
        return s;
    }();
    auto f = [&](const std::vector<double>& x) {
        const Vec3 xi{x[0], x[1], x[2]};
        double sum = 0.0;
        for (const auto& t : terms) {
            std::vector<Vec3> Pa = P, Ka = K;
            Pa[t.mu] = Pa[t.mu] - xi;
            if (t.boson >= 0) {
                Pa[t.nu] = Pa[t.nu] + K[t.boson];
                Ka[t.boson] = xi;
            } else {
                Pa[t.nu] = Pa[t.nu] + xi;
            }
            double D = p.n + 1.0 + k2 + norm2(xi);
            for (int l = 0; l < p.M; ++l) D += norm2(l == t.mu ? P[l] - xi : P[l]) / (2.0 * p.m);
            sum += psi.fourier_real(Pa, Ka) / D;
        }
        return sum;
    };
    Estimate e = integrate_mc(f, 3, Sampler{SamplerKind::cauchy3, 1.0}, samples, seed);
    return -detail::two_pi_pow(-3.0) * e;
}

// <phi, T_od psi> in momentum space.
inline Estimate tod_inner_product(const ModelParams& p, const ProductState& phi, const ProductState& psi,
                                  const QuadSpec& q = {}) {
    detail::require_tod_state(p, phi);
    detail::require_tod_state(p, psi);
    const auto terms = detail::tod_terms(p.M, p.n);
    if (terms.empty()) return closed_form(0.0);
    const int N = p.M + p.n + 1;
    const auto outer = detail::outer_variables(p.M, p.n, N);
    const detail::Affine xi = detail::variable(N, N - 1);
    const double pref = detail::state_prefactor(phi) * detail::state_prefactor(psi);
    Estimate total = closed_form(0.0);
    for (const auto& t : terms) {
        const auto args = detail::tod_arguments(outer, xi, t);
        total += integrate_semi_infinite(
            [&](double tau) {
                detail::QuadraticForm f(N);
                detail::add_state(f, phi, outer);
                detail::add_state(f, psi, args);
                detail::add_denominator(f, tau, p.m, outer, xi, t.mu);
                return std::exp(f.log_integral() - tau * (p.n + 1.0));
            },
            q);
    }
    return (-detail::two_pi_pow(-3.0) * pref) * total;
}

// ||T_od psi||^2 as a double proper-time integral over pairs of terms.
inline Estimate tod_norm_squared(const ModelParams& p, const ProductState& psi, const QuadSpec& q = {}) {
    detail::require_tod_state(p, psi);
    const auto terms = detail::tod_terms(p.M, p.n);
    if (terms.empty()) return closed_form(0.0);
    const int N = p.M + p.n + 2;
    const auto outer = detail::outer_variables(p.M, p.n, N);
    const detail::Affine xi1 = detail::variable(N, N - 2), xi2 = detail::variable(N, N - 1);
    const double pref = std::pow(detail::state_prefactor(psi), 2);
    QuadSpec inner = q;
    inner.rel_tol = std::max(q.rel_tol * 0.1, 1e-12);
    Estimate total = closed_form(0.0);
    for (std::size_t i = 0; i < terms.size(); ++i)
        for (std::size_t j = i; j < terms.size(); ++j) {
            const auto a1 = detail::tod_arguments(outer, xi1, terms[i]);
            const auto a2 = detail::tod_arguments(outer, xi2, terms[j]);
            // Polar proper time (t1, t2) = x^2 (v, 1 - v): the Jacobian 2 x^3 cancels the
            // (t1 + t2)^{-3/2} growth of the Gaussian integral at the origin.
            double inner_err = 0.0;
            Estimate e = integrate_semi_infinite(
                [&](double x) {
                    const double T = x * x;
                    Estimate in = integrate_range(
                        [&](double v) {
                            const double t1 = T * v, t2 = T * (1.0 - v);
                            detail::QuadraticForm f(N);
                            detail::add_state(f, psi, a1);
                            detail::add_state(f, psi, a2);
                            detail::add_denominator(f, t1, p.m, outer, xi1, terms[i].mu);
                            detail::add_denominator(f, t2, p.m, outer, xi2, terms[j].mu);
                            return 2.0 * x * T * std::exp(f.log_integral() - T * (p.n + 1.0));
                        },
                        0.0, 1.0, inner);
                    inner_err = std::max(inner_err, in.error / std::max(std::abs(in.value), 1e-300));
                    return in.value;
                },
                q);
            e.error += inner_err * std::abs(e.value);
            total += (i == j ? 1.0 : 2.0) * e;
        }
    return (detail::two_pi_pow(-6.0) * pref) * total;
}

// ---------------------------------------------------------------- R = -L^{-1} T G probes

namespace detail {

struct SectorOneSymbols {
    double m, q, c2, cr, b1, b2, rmf;
    explicit SectorOneSymbols(double mass) : m(mass), q(2.0 * mass + 1.0) {
        const auto kc = KernelConstants::of(mass);
        c2 = kc.c2;
        cr = kc.cr;
        b1 = kc.b1;
        b2 = kc.b2;
        rmf = kc.rmf;
    }
    double L(double s2, double r2) const { return 1.0 + s2 / q + c2 * r2; }
    // Off-diagonal xi-integral with the sigma.xi cross terms dropped.
    double xi0(double s2, double r) const {
        return arctan_convolution(m, 1.0 + s2 / (2.0 * m), 2.0 + s2 / q + cr * r * r, r);
    }
    double td(double s2, double r2, double sr) const {
        return std::pow(rmf, 1.5) / (4.0 * kPi) * std::sqrt(2.0 + cr * r2 + b1 * s2 + b2 * sr);
    }
};

// 4 pi int sigma^2 sinc(sigma u) psi-hat(sigma) inner(sigma) d sigma. Inner errors enter through
// sup|inner error| * 4 pi int sigma^2 |psi-hat|, a bound since |sinc| <= 1.
template <class Inner>
Estimate outer_sigma(const RadialTestFunction& psi, double u, Inner&& inner, const QuadSpec& q) {
    QuadSpec qs = q;
    qs.scale = 1.0 / std::sqrt(psi.a);
    double sup_err = 0.0;
    long evals = 0;
    auto h = [&](double sig) {
        Estimate e = inner(sig);
        sup_err = std::max(sup_err, e.error);
        evals += e.evaluations;
        return psi.fourier_radial(sig) * e.value;
    };
    Estimate out = radial_fourier(h, u, qs);
    const double weight_l1 = std::abs(psi.amplitude) * std::pow(psi.a / kPi, 0.75) * std::pow(2.0 * kPi / psi.a, 1.5);
    out.error += sup_err * weight_l1;
    out.evaluations += evals;
    return out;
}

// Inner integrals of nested reductions are O(1) at their peak; the absolute floor
// keeps negligible tails from forcing refinement.
inline QuadSpec inner_spec(const QuadSpec& q) {
    QuadSpec s = q;
    s.rel_tol = std::max(q.rel_tol * 0.1, 1e-12);
    s.abs_tol = std::min(q.abs_tol, 1e-14);
    return s;
}

}  // namespace detail

// S^2-averaged (R_d psi)(s, r) for M = 1, n = 0.
inline Estimate apply_Rd_probe(const ModelParams& p, const RadialTestFunction& psi, double r,
                               RdKernel kernel = RdKernel::exact, const Vec3& s = {0, 0, 0},
                               const QuadSpec& q = {}) {
    detail::require_single_particle(p, "apply_Rd_probe");
    if (!(r > 0.0)) throw DomainError("apply_Rd_probe: r must be > 0");
    const detail::SectorOneSymbols S(p.m);
    const QuadSpec qi = detail::inner_spec(q);
    auto inner = [&](double sig) {
        const double s2 = sig * sig;
        return detail::sinc_transform(
            [&](double rho) {
                const double U = kernel == RdKernel::exact
                                     ? detail::sqrt_angle_integral(2.0 + S.cr * rho * rho + S.b1 * s2, S.b2 * rho * sig)
                                     : 2.0 * std::sqrt(S.cr) * rho;
                const double Lv = S.L(s2, rho * rho);
                return 2.0 * detail::kPi * U / (Lv * Lv);
            },
            r, qi);
    };
    Estimate e = detail::outer_sigma(psi, norm(s - psi.center), inner, q);
    const double pre = std::pow(S.rmf, 1.5) / (4.0 * detail::kPi) * detail::two_pi_pow(-4.5);
    return pre * e;
}

// S^2-averaged (R_od psi)(s, r) for M = 1, n = 0 with the simplified xi-kernel.
inline Estimate apply_Rod_probe(const ModelParams& p, const RadialTestFunction& psi, double r,
                                const Vec3& s = {0, 0, 0}, const QuadSpec& q = {}) {
    detail::require_single_particle(p, "apply_Rod_probe");
    if (!(r > 0.0)) throw DomainError("apply_Rod_probe: r must be > 0");
    const detail::SectorOneSymbols S(p.m);
    const QuadSpec qi = detail::inner_spec(q);
    auto inner = [&](double sig) {
        const double s2 = sig * sig;
        return detail::sinc_transform(
            [&](double rho) { return 4.0 * detail::kPi * S.xi0(s2, rho) / S.L(s2, rho * rho); }, r, qi);
    };
    Estimate e = detail::outer_sigma(psi, norm(s - psi.center), inner, q);
    return -detail::two_pi_pow(-7.5) * e;
}

// S^2-averaged (c0 L^{-1} G psi)(s, r) with the sign of -c0 L^{-1} G psi; continuous at r = 0.
inline Estimate apply_c0_probe(const ModelParams& p, const RadialTestFunction& psi, double r, const Vec3& s = {0, 0, 0},
                               const QuadSpec& q = {}) {
    detail::require_single_particle(p, "apply_c0_probe");
    const detail::SectorOneSymbols S(p.m);
    const QuadSpec qi = detail::inner_spec(q);
    auto inner = [&](double sig) {
        const double s2 = sig * sig;
        auto g = [&](double rho) {
            const double Lv = S.L(s2, rho * rho);
            return 4.0 * detail::kPi / (Lv * Lv);
        };
        if (r == 0.0) return integrate_semi_infinite([&](double rho) { return rho * rho * g(rho); }, qi);
        return detail::sinc_transform(g, r, qi);
    };
    Estimate e = detail::outer_sigma(psi, norm(s - psi.center), inner, q);
    return (p.c0 * detail::two_pi_pow(-4.5)) * e;
}

namespace detail {

// Fourier profile H1 of -L^{-1}(T + c0) G psi = psi-hat(sigma) H1(sigma, rho), vector arguments.
inline double h1_profile(const SectorOneSymbols& S, double c0, const Vec3& sig, const Vec3& rho) {
    const double s2 = norm2(sig), r2 = norm2(rho);
    const double Lv = S.L(s2, r2);
    return two_pi_pow(-1.5) * (S.td(s2, r2, dot(sig, rho)) + c0) / (Lv * Lv) -
           two_pi_pow(-4.5) * S.xi0(s2, std::sqrt(r2)) / Lv;
}

}  // namespace detail

// S^2-averaged second-order term (L^{-1}(T + c0))^2 G psi at (s, r), by Monte Carlo over
// (sigma, rho, xi). Common random numbers across r keep the r-dependence smooth.
inline Estimate apply_second_order_probe(const ModelParams& p, const RadialTestFunction& psi, double r,
                                         const Vec3& s, long samples, std::uint64_t seed) {
    detail::require_single_particle(p, "apply_second_order_probe");
    const detail::SectorOneSymbols S(p.m);
    const double m = p.m, c0 = p.c0;
    const Vec3 u = s - psi.center;
    const double un = norm(u);
    const double sig_scale = 1.0 / std::sqrt(psi.a);
    auto f = [&](const std::vector<double>& x) {
        const Vec3 sig{x[0], x[1], x[2]}, rho{x[3], x[4], x[5]}, xi{x[6], x[7], x[8]};
        const double s2 = norm2(sig), r2 = norm2(rho);
        const Vec3 k = rho + (1.0 / S.q) * sig;
        const Vec3 pp = sig - k;
        const double D = 2.0 + norm2(pp - xi) / (2.0 * m) + norm2(k) + norm2(xi);
        const double h1 = detail::h1_profile(S, c0, sig, rho);
        const double h1s = detail::h1_profile(S, c0, sig, xi - (1.0 / S.q) * sig);
        const double Lv = S.L(s2, r2);
        // The diagonal part does not depend on xi; weighting it by the xi sampling density
        // makes its xi-average exact.
        const double xq = 1.0 + norm2(xi);
        const double xi_density = 1.0 / (detail::kPi * detail::kPi * xq * xq);
        const double term = -(1.0 / Lv) * ((S.td(s2, r2, dot(sig, rho)) + c0) * h1 * xi_density -
                                           detail::two_pi_pow(-3.0) * h1s / D);
        // angular averages: sinc(|sigma| |s - c|) and sinc(|rho| r).
        const double a1 = std::sqrt(s2) * un, a2 = std::sqrt(r2) * r;
        const double sinc1 = a1 < 1e-8 ? 1.0 : std::sin(a1) / a1;
        const double sinc2 = a2 < 1e-8 ? 1.0 : std::sin(a2) / a2;
        return detail::two_pi_pow(-3.0) * psi.fourier_radial(std::sqrt(s2)) * term * sinc1 * sinc2;
    };
    struct Mixed {
        double sig_scale;
        void draw(detail::SampleRng& rng, std::vector<double>& x, double& density) const {
            std::vector<double> a(3), b(6);
            double da, db;
            Sampler{SamplerKind::gaussian, sig_scale}.draw(rng, a, da);
            Sampler{SamplerKind::cauchy3, 1.0}.draw(rng, b, db);
            for (int i = 0; i < 3; ++i) x[i] = a[i];
            for (int i = 0; i < 6; ++i) x[3 + i] = b[i];
            density = da * db;
        }
    };
    return integrate_mc(f, 9, Mixed{sig_scale}, samples, seed);
}

struct GTProbeOptions {
    long mc_samples = 200000;
    std::uint64_t seed = 1;
};

// Truncated resolvent series sum_{k <= K} (-L^{-1}(T + c0))^k G psi at (s, r), S^2-averaged.
inline Estimate gT_probe(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s, double r, int K,
                         const QuadSpec& q = {}, const GTProbeOptions& opt = {}) {
    if (K < 0 || K > 2) throw DomainError("gT_probe: series order must be 0, 1 or 2");
    Estimate e = apply_G_probe(p, psi, s, r, q);
    if (K >= 1) {
        e += apply_Rd_probe(p, psi, r, RdKernel::exact, s, q);
        e += apply_Rod_probe(p, psi, r, s, q);
        e += apply_c0_probe(p, psi, r, s, q);
    }
    if (K >= 2) e += apply_second_order_probe(p, psi, r, s, opt.mc_samples, opt.seed);
    return e;
}

// Off-diagonal xi-kernel tau(sigma, rho, xi) and its simplification tau0, in which the
// sigma.xi cross terms of the last two denominators are dropped.
inline double tau_exact(double m, const Vec3& sig, const Vec3& rho, const Vec3& xi) {
    const detail::SectorOneSymbols S(m);
    const double l1 = S.L(norm2(sig), norm2(rho));
    const double l2 = 1.0 + norm2(sig - xi) / (2.0 * m) + norm2(xi);
    const Vec3 k = rho + (1.0 / S.q) * sig;
    const double l3 = 2.0 + norm2(sig - k - xi) / (2.0 * m) + norm2(k) + norm2(xi);
    return 1.0 / (l1 * l2 * l3);
}

inline double tau_simplified(double m, const Vec3& sig, const Vec3& rho, const Vec3& xi) {
    const detail::SectorOneSymbols S(m);
    const double s2 = norm2(sig);
    const double l1 = S.L(s2, norm2(rho));
    const double l2 = 1.0 + (s2 + norm2(xi)) / (2.0 * m) + norm2(xi);
    const double l3 = 2.0 + s2 / S.q + norm2(rho + xi) / (2.0 * m) + norm2(rho) + norm2(xi);
    return 1.0 / (l1 * l2 * l3);
}

// Shape of the decay bound on |tau - tau0|.
inline double tau_difference_envelope(double eps, const Vec3& sig, const Vec3& rho, const Vec3& xi) {
    const double r2 = norm2(rho), x2 = norm2(xi);
    return std::pow(norm(sig), eps) / (std::pow(1.0 + 2.0 * r2, 0.5 + 0.5 * eps) * std::pow(1.0 + x2, 1.5) * (2.0 + x2 + r2));
}

// ---------------------------------------------------------------- kernel identity

// phi(x, y) = chi(s) eta(|y - x|) with eta(d) = d^k exp(-d^2/(2 width)); vanishes on x = y for k >= 1.
struct CollisionTestState {
    RadialTestFunction chi;
    double width = 1.0;
    int order = 1;

    double eta(double d) const { return std::pow(d, order) * std::exp(-d * d / (2.0 * width)); }
    // Radial Laplacian of eta.
    double laplacian_eta(double d) const {
        const double k = order, B = width, E = std::exp(-d * d / (2.0 * B));
        const double a = order >= 1 ? k * (k + 1.0) * std::pow(d, k - 2.0) : 0.0;
        return (a - (2.0 * k + 3.0) * std::pow(d, k) / B + std::pow(d, k + 2.0) / (B * B)) * E;
    }
};

struct GKerReport {
    Estimate pairing;      // <G psi, L phi>
    Estimate trace;        // <psi, a(delta) phi> = int psi(x) phi(x, x) dx
    Estimate residual;     // pairing + trace
};

// <G psi, L phi> + <psi, a(delta) phi> for M = 1, n = 0 in (s, d) coordinates,
// where L = -Delta_s/(2m+1) - c2 Delta_d + 1.
inline GKerReport g_ker_residual(const ModelParams& p, const RadialTestFunction& psi, const CollisionTestState& phi,
                                 const QuadSpec& q = {}) {
    detail::require_single_particle(p, "g_ker_residual");
    if (phi.order < 0 || phi.order > 2) throw DomainError("g_ker_residual: order must be 0, 1 or 2");
    if (norm(psi.center - phi.chi.center) != 0.0)
        throw ConfigError("g_ker_residual: psi and chi must share their centre");
    const double qm = 2.0 * p.m + 1.0;
    const auto kc = KernelConstants::of(p.m);
    const double kappa = std::sqrt(kc.rmf);
    const QuadSpec qi = detail::inner_spec(q);
    QuadSpec qd = qi;
    qd.scale = std::sqrt(phi.width);
    // At large w the two terms of the d-integrand cancel to leading order.
    qd.abs_tol = std::max(qd.abs_tol, 1e-12);
    double rel = 0.0;
    // d-integral of e^{-kappa w d} d [w^2 eta - c2 Delta eta] / kappa at fixed w.
    auto d_integral = [&](double w) {
        Estimate e = integrate_semi_infinite(
            [&](double d) {
                return std::exp(-kappa * w * d) * d * (w * w * phi.eta(d) - kc.c2 * phi.laplacian_eta(d)) / kappa;
            },
            qd);
        rel = std::max(rel, e.error / std::max(std::abs(e.value), 1e-300));
        return e.value;
    };
    QuadSpec qx = q;
    qx.scale = 1.0 / std::sqrt(std::min(psi.a, phi.chi.a));
    Estimate pairing = integrate_semi_infinite(
        [&](double xi) {
            const double w = std::sqrt(1.0 + xi * xi / qm);
            return 4.0 * detail::kPi * xi * xi * psi.fourier_radial(xi) * phi.chi.fourier_radial(xi) * d_integral(w);
        },
        qx);
    pairing.error += rel * std::abs(pairing.value) + 1e-14;
    pairing = (-std::pow(kc.rmf, 1.5)) * pairing;

    QuadSpec qt = q;
    qt.scale = std::sqrt(std::max(psi.a, phi.chi.a));
    Estimate trace = integrate_semi_infinite(
        [&](double x) { return 4.0 * detail::kPi * x * x * psi.radial(x) * phi.chi.radial(x) * phi.eta(0.0); }, qt);
    if (phi.order >= 1) trace = closed_form(0.0);
    return {pairing, trace, pairing + trace};
}

}  // namespace ibclab
