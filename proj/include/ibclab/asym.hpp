#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "ibclab/model.hpp"
#include "ibclab/ops.hpp"
#include "ibclab/quad.hpp"

namespace ibclab {

struct ProbeSeries {
    std::vector<double> r_values;  // strictly decreasing, > 0
    std::vector<Estimate> samples;
    std::string meta;

    void validate() const {
        if (r_values.size() != samples.size()) throw FitError("probe series: size mismatch");
        for (std::size_t i = 0; i < r_values.size(); ++i) {
            if (!(r_values[i] > 0.0)) throw FitError("probe series: r values must be > 0");
            if (i > 0 && !(r_values[i] < r_values[i - 1])) throw FitError("probe series: r values must decrease");
        }
    }
    // Series without the k largest-r samples.
    ProbeSeries drop_largest(std::size_t k) const {
        ProbeSeries s = *this;
        s.r_values.erase(s.r_values.begin(), s.r_values.begin() + static_cast<long>(k));
        s.samples.erase(s.samples.begin(), s.samples.begin() + static_cast<long>(k));
        return s;
    }
    ProbeSeries operator+(const ProbeSeries& o) const {
        if (r_values != o.r_values) throw FitError("probe series: grids differ");
        ProbeSeries s = *this;
        for (std::size_t i = 0; i < samples.size(); ++i) s.samples[i] += o.samples[i];
        s.meta = meta + "+" + o.meta;
        return s;
    }
    ProbeSeries operator-(const ProbeSeries& o) const {
        if (r_values != o.r_values) throw FitError("probe series: grids differ");
        ProbeSeries s = *this;
        for (std::size_t i = 0; i < samples.size(); ++i) s.samples[i] += -1.0 * o.samples[i];
        s.meta = meta + "-" + o.meta;
        return s;
    }
};

struct ProbeGrid {
    double r_min = 1e-4;
    double r_max = 1e-1;
    int points = 12;

    std::vector<double> values() const {
        if (!(r_min > 0.0) || !(r_min < r_max)) throw ConfigError("probe grid: need 0 < r_min < r_max");
        if (points < 6) throw ConfigError("probe grid: need at least 6 points");
        std::vector<double> r(static_cast<std::size_t>(points));
        const double lr = std::log(r_max / r_min);
        for (int i = 0; i < points; ++i) r[i] = r_max * std::exp(-lr * i / (points - 1));
        r.back() = r_min;
        return r;
    }
};

// Samples a probe on a descending geometric grid; grid points run on worker threads.
inline ProbeSeries collect_probe(const std::function<Estimate(double)>& probe, const ProbeGrid& grid,
                                 const std::string& meta = {}, unsigned threads = 0) {
    ProbeSeries s;
    s.r_values = grid.values();
    s.meta = meta;
    const std::size_t n = s.r_values.size();
    s.samples.resize(n);
    std::vector<std::exception_ptr> errs(n);
    auto work = [&](std::size_t i) {
        try {
            s.samples[i] = probe(s.r_values[i]);
        } catch (...) {
            errs[i] = std::current_exception();
        }
    };
    if (threads == 0) threads = worker_threads();
    threads = std::min<unsigned>(threads, static_cast<unsigned>(n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n; i += threads) work(i);
            });
        for (auto& th : pool) th.join();
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!errs[i]) continue;
        const std::string where = "probe " + meta + " failed at r = " + std::to_string(s.r_values[i]) + ": ";
        try {
            std::rethrow_exception(errs[i]);
        } catch (const NonConvergenceError& e) {
            throw NonConvergenceError(where + e.what(), e.best);
        } catch (const std::exception& e) {
            throw DiagnosticsError(where + e.what());
        }
    }
    return s;
}

inline ProbeSeries collect_probe(const std::function<Estimate(double)>& probe, double r_min, double r_max, int points,
                                 const std::string& meta = {}) {
    return collect_probe(probe, ProbeGrid{r_min, r_max, points}, meta);
}

// ---------------------------------------------------------------- least squares

struct LeastSquares {
    Eigen::VectorXd coeffs;
    Eigen::VectorXd uncertainty;  // covariance errors scaled by max(1, reduced chi^2)
    double residual_rms = 0.0;
    double condition = 0.0;
};

// Weighted least squares with weights 1/sigma^2. Columns are normalised before the
// condition number is taken, so it measures basis degeneracy rather than units.
inline LeastSquares weighted_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                           const Eigen::VectorXd& sigma, double max_condition = 1e10) {
    const long n = X.rows(), k = X.cols();
    if (n < k + 2) throw FitError("least squares: need at least #basis + 2 points");
    Eigen::MatrixXd Xw = X;
    Eigen::VectorXd yw = y;
    for (long i = 0; i < n; ++i) {
        Xw.row(i) /= sigma(i);
        yw(i) /= sigma(i);
    }
    Eigen::VectorXd scale(k);
    for (long j = 0; j < k; ++j) {
        scale(j) = Xw.col(j).norm();
        if (scale(j) == 0.0) throw FitError("least squares: empty basis column");
        Xw.col(j) /= scale(j);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xw, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    LeastSquares out;
    out.condition = sv(0) / sv(k - 1);
    if (!std::isfinite(out.condition) || out.condition > max_condition)
        throw FitError("least squares: condition number " + std::to_string(out.condition) + " exceeds limit");
    Eigen::VectorXd c = svd.solve(yw);
    const Eigen::VectorXd rw = yw - Xw * c;
    const double chi2_red = rw.squaredNorm() / static_cast<double>(n - k);
    Eigen::MatrixXd Vs = svd.matrixV() * sv.cwiseInverse().asDiagonal();
    Eigen::VectorXd var = (Vs * Vs.transpose()).diagonal();
    out.coeffs = c.cwiseQuotient(scale);
    out.uncertainty = (var.cwiseSqrt() * std::sqrt(std::max(1.0, chi2_red))).cwiseQuotient(scale);
    const Eigen::VectorXd r = y - X * out.coeffs;
    out.residual_rms = std::sqrt(r.squaredNorm() / static_cast<double>(n));
    return out;
}

// ---------------------------------------------------------------- singular fits

enum BasisFlag : unsigned { kInvR = 1u, kLogR = 2u, kConst = 4u, kLinear = 8u };

struct SingularFit {
    double coeff_inv_r = 0.0, coeff_log = 0.0, coeff_const = 0.0, coeff_linear = 0.0;
    double err_inv_r = 0.0, err_log = 0.0, err_const = 0.0, err_linear = 0.0;
    double residual_rms = 0.0;
    double condition = 0.0;
    unsigned basis = 0;
};

// Per-sample sigma: the quoted error, floored so that exact samples do not dominate.
inline Eigen::VectorXd fit_sigmas(const ProbeSeries& s) {
    const std::size_t n = s.samples.size();
    double emax = 0.0, vmax = 0.0;
    for (const auto& e : s.samples) {
        emax = std::max(emax, e.error);
        vmax = std::max(vmax, std::abs(e.value));
    }
    Eigen::VectorXd sig(static_cast<long>(n));
    if (emax == 0.0) {
        sig.setOnes();
        return sig;
    }
    const double floor = std::max(1e-3 * emax, 1e-15 * vmax);
    for (std::size_t i = 0; i < n; ++i) sig(static_cast<long>(i)) = std::max(s.samples[i].error, floor);
    return sig;
}

namespace detail {

inline LeastSquares singular_lsq(const ProbeSeries& s, const std::vector<unsigned>& flags, bool next_order) {
    const long n = static_cast<long>(s.r_values.size());
    const long k = static_cast<long>(flags.size()) + (next_order ? 1 : 0);
    bool has_log = false;
    for (unsigned f : flags) has_log = has_log || f == kLogR;
    Eigen::MatrixXd X(n, k);
    Eigen::VectorXd y(n);
    for (long i = 0; i < n; ++i) {
        const double r = s.r_values[static_cast<std::size_t>(i)];
        for (long j = 0; j < static_cast<long>(flags.size()); ++j) {
            switch (flags[static_cast<std::size_t>(j)]) {
                case kInvR: X(i, j) = 1.0 / r; break;
                case kLogR: X(i, j) = std::log(r); break;
                case kConst: X(i, j) = 1.0; break;
                default: X(i, j) = r; break;
            }
        }
        // First omitted term of the small-r expansion: r^2 log r after a log singularity, r^2 after 1/r.
        if (next_order) X(i, k - 1) = has_log ? r * r * std::log(r) : r * r;
        y(i) = s.samples[static_cast<std::size_t>(i)].value;
    }
    return weighted_least_squares(X, y, fit_sigmas(s));
}

}  // namespace detail

// Coefficient uncertainty combines the covariance estimate with the shift caused by adding
// the first omitted expansion term, which bounds the truncation bias of the basis.
inline SingularFit fit_singular(const ProbeSeries& s, unsigned basis) {
    s.validate();
    std::vector<unsigned> flags;
    for (unsigned f : {kInvR, kLogR, kConst, kLinear})
        if (basis & f) flags.push_back(f);
    if (flags.empty()) throw FitError("fit_singular: empty basis");
    const long k = static_cast<long>(flags.size());
    const auto ls = detail::singular_lsq(s, flags, false);
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(k);
    if (static_cast<long>(s.r_values.size()) >= k + 3) {
        try {
            shift = (detail::singular_lsq(s, flags, true).coeffs.head(k) - ls.coeffs).cwiseAbs();
        } catch (const FitError&) {
        }
    }
    SingularFit out;
    out.basis = basis;
    out.residual_rms = ls.residual_rms;
    out.condition = ls.condition;
    for (long j = 0; j < k; ++j) {
        const double c = ls.coeffs(j), e = std::hypot(ls.uncertainty(j), shift(j));
        switch (flags[static_cast<std::size_t>(j)]) {
            case kInvR: out.coeff_inv_r = c; out.err_inv_r = e; break;
            case kLogR: out.coeff_log = c; out.err_log = e; break;
            case kConst: out.coeff_const = c; out.err_const = e; break;
            default: out.coeff_linear = c; out.err_linear = e; break;
        }
    }
    return out;
}

// ---------------------------------------------------------------- boundary values

struct BoundaryValue {
    double value = 0.0;
    double uncertainty = 0.0;
    SingularFit fit;
};

// Normalised 1/r coefficient: -coeff_inv_r / b(m). Equals M psi(s) on G psi.
inline BoundaryValue extract_B(double m, const ProbeSeries& series) {
    const auto fit = fit_singular(series, kInvR | kConst | kLinear);
    const double b = b_coefficient(m);
    return {-fit.coeff_inv_r / b, fit.err_inv_r / b, fit};
}

inline ProbeSeries g_probe_series(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s,
                                  const ProbeGrid& grid = {}, const QuadSpec& q = {}) {
    return collect_probe([&](double r) { return apply_G_probe(p, psi, s, r, q); }, grid, "G");
}

inline BoundaryValue extract_B(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s = {0, 0, 0},
                               const ProbeGrid& grid = {}, const QuadSpec& q = {}) {
    return extract_B(p.m, g_probe_series(p, psi, s, grid, q));
}

// Finite part: constant term after the fitted 1/r divergence is removed.
inline BoundaryValue extract_A(const ProbeSeries& series) {
    const auto fit = fit_singular(series, kInvR | kConst | kLinear);
    return {fit.coeff_const, fit.err_const, fit};
}

inline BoundaryValue extract_A(const ModelParams& p, const RadialTestFunction& psi, const Vec3& s = {0, 0, 0},
                               const ProbeGrid& grid = {}, const QuadSpec& q = {}) {
    return extract_A(g_probe_series(p, psi, s, grid, q));
}

enum class RPiece { diagonal, off_diagonal, total };

inline const char* to_string(RPiece p) {
    switch (p) {
        case RPiece::diagonal: return "diagonal";
        case RPiece::off_diagonal: return "off_diagonal";
        case RPiece::total: return "total";
    }
    return "unknown";
}

inline ProbeSeries r_probe_series(const ModelParams& p, const RadialTestFunction& psi, RPiece piece,
                                  const ProbeGrid& grid = {}, const QuadSpec& q = {},
                                  RdKernel kernel = RdKernel::exact) {
    switch (piece) {
        case RPiece::diagonal:
            return collect_probe([&](double r) { return apply_Rd_probe(p, psi, r, kernel, {0, 0, 0}, q); }, grid, "R_d");
        case RPiece::off_diagonal:
            return collect_probe([&](double r) { return apply_Rod_probe(p, psi, r, {0, 0, 0}, q); }, grid, "R_od");
        case RPiece::total: break;
    }
    return r_probe_series(p, psi, RPiece::diagonal, grid, q, kernel) +
           r_probe_series(p, psi, RPiece::off_diagonal, grid, q, kernel);
}

// Coefficient of log r in an R probe series (basis {log r, 1, r}).
inline BoundaryValue extract_log_coefficient(const ProbeSeries& series) {
    const auto fit = fit_singular(series, kLogR | kConst | kLinear);
    return {fit.coeff_log, fit.err_log, fit};
}

inline BoundaryValue extract_log_coefficient(const ModelParams& p, const RadialTestFunction& psi, RPiece piece,
                                             const ProbeGrid& grid = {}, const QuadSpec& q = {}) {
    return extract_log_coefficient(r_probe_series(p, psi, piece, grid, q));
}

// Per-piece log coefficients predicted from the asymptotics of the rho-integrals.
inline double predicted_log_coefficient(double m, RPiece piece, double psi_at_s) {
    const double rmf = 2.0 * m / (2.0 * m + 1.0);
    const double pre = rmf * rmf * rmf / std::pow(2.0 * std::numbers::pi, 3);
    const double p = 2.0 * std::sqrt(m * (m + 1.0));
    switch (piece) {
        case RPiece::diagonal: return -pre * p / (2.0 * m + 1.0) * psi_at_s;
        case RPiece::off_diagonal: return pre * (2.0 * m + 1.0) * std::atan(1.0 / p) * psi_at_s;
        case RPiece::total: return -gamma_m(m) * psi_at_s;
    }
    return 0.0;
}

// Fourier multiplier of an R piece at centre-of-mass momentum |sigma|, sampled at
// separation r: the probe equals (2 pi)^{-3/2} int e^{i sigma s} psi-hat(sigma) S_r(sigma).
inline Estimate r_multiplier(const ModelParams& p, double sigma, double r, RPiece piece, const QuadSpec& q = {}) {
    detail::require_single_particle(p, "r_multiplier");
    const detail::SectorOneSymbols S(p.m);
    const QuadSpec qi = detail::inner_spec(q);
    const double s2 = sigma * sigma;
    Estimate out = closed_form(0.0);
    if (piece != RPiece::off_diagonal) {
        Estimate d = detail::sinc_transform(
            [&](double rho) {
                const double Lv = S.L(s2, rho * rho);
                return 2.0 * detail::kPi *
                       detail::sqrt_angle_integral(2.0 + S.cr * rho * rho + S.b1 * s2, S.b2 * rho * sigma) / (Lv * Lv);
            },
            r, qi);
        out += (std::pow(S.rmf, 1.5) / (4.0 * detail::kPi) * detail::two_pi_pow(-3.0)) * d;
    }
    if (piece != RPiece::diagonal) {
        Estimate o = detail::sinc_transform(
            [&](double rho) { return 4.0 * detail::kPi * S.xi0(s2, rho) / S.L(s2, rho * rho); }, r, qi);
        out += (-detail::two_pi_pow(-6.0)) * o;
    }
    return out;
}

}  // namespace ibclab
