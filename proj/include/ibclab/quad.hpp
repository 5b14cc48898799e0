#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ibclab/errors.hpp"

namespace ibclab {

enum class Method { adaptive, monte_carlo, closed_form };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::adaptive: return "adaptive";
        case Method::monte_carlo: return "monte_carlo";
        case Method::closed_form: return "closed_form";
    }
    return "unknown";
}

// error is an absolute error estimate; Monte Carlo errors are sigma_k * stderr.
struct Estimate {
    double value = 0.0;
    double error = 0.0;
    long evaluations = 0;
    Method method = Method::adaptive;
    double sigma_k = 0.0;

    Estimate& operator+=(const Estimate& o) {
        value += o.value;
        error += o.error;
        evaluations += o.evaluations;
        if (o.method == Method::monte_carlo) {
            method = Method::monte_carlo;
            sigma_k = o.sigma_k;
        } else if (method == Method::closed_form) {
            method = o.method;
        }
        return *this;
    }
    friend Estimate operator+(Estimate a, const Estimate& b) { return a += b; }
    friend Estimate operator*(double s, Estimate e) {
        e.value *= s;
        e.error *= std::abs(s);
        return e;
    }
};

inline Estimate closed_form(double v) { return {v, 0.0, 0, Method::closed_form, 0.0}; }

enum class Mapping { rational, exponential, none };

struct QuadSpec {
    double rel_tol = 1e-8;
    double abs_tol = 1e-12;
    int max_depth = 40;
    int max_intervals = 4000;
    Mapping mapping = Mapping::rational;
    double scale = 1.0;  // length scale of the semi-infinite mapping
    std::uint64_t seed = 0;

    void validate() const {
        if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw ConfigError("quad: rel_tol and abs_tol must be > 0");
        if (max_depth < 1 || max_intervals < 1) throw ConfigError("quad: max_depth and max_intervals must be >= 1");
        if (!(scale > 0.0)) throw ConfigError("quad: scale must be > 0");
    }
    QuadSpec with_tol(double rel, double abs) const {
        QuadSpec s = *this;
        s.rel_tol = rel;
        s.abs_tol = abs;
        return s;
    }
};

struct NonConvergenceError : std::runtime_error {
    Estimate best;
    NonConvergenceError(const std::string& what, Estimate b) : std::runtime_error(what), best(b) {}
};

namespace detail {

struct Panel {
    double a, b, value, error;
    int depth;
    bool operator<(const Panel& o) const { return error < o.error; }
};

// 21-point Kronrod rule with embedded 10-point Gauss rule; error scaled as in QUADPACK qk21.
template <class F>
Panel gk21(F& f, double a, double b, int depth) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 21>;
    using G = boost::math::quadrature::gauss<double, 10>;
    const auto& x = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G::weights();
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double fv[21];
    fv[0] = f(c);
    for (std::size_t i = 1; i < x.size(); ++i) {
        fv[2 * i - 1] = f(c + h * x[i]);
        fv[2 * i] = f(c - h * x[i]);
    }
    for (double v : fv) {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite integrand on [" << a << ", " << b << "]";
            throw DiagnosticsError(os.str());
        }
    }
    double rk = fv[0] * wk[0], rg = 0.0, resabs = std::abs(fv[0]) * wk[0];
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double s = fv[2 * i - 1] + fv[2 * i];
        rk += s * wk[i];
        resabs += (std::abs(fv[2 * i - 1]) + std::abs(fv[2 * i])) * wk[i];
        if (i % 2 == 1) rg += s * wg[i / 2];
    }
    const double mean = 0.5 * rk;
    double resasc = std::abs(fv[0] - mean) * wk[0];
    for (std::size_t i = 1; i < x.size(); ++i)
        resasc += (std::abs(fv[2 * i - 1] - mean) + std::abs(fv[2 * i] - mean)) * wk[i];
    rk *= h;
    resabs *= std::abs(h);
    resasc *= std::abs(h);
    double err = std::abs((rk - rg * h));
    if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    const double eps = std::numeric_limits<double>::epsilon();
    if (resabs > std::numeric_limits<double>::min() / (50.0 * eps)) err = std::max(50.0 * eps * resabs, err);
    return {a, b, rk, err, depth};
}

}  // namespace detail

// Globally adaptive GK21 on a finite interval.
template <class F>
Estimate integrate_range(F&& f, double a, double b, const QuadSpec& spec) {
    spec.validate();
    if (a == b) return {0.0, 0.0, 0, Method::adaptive, 0.0};
    std::priority_queue<detail::Panel> open;
    std::vector<detail::Panel> frozen;
    long evals = 21;
    auto first = detail::gk21(f, a, b, 0);
    open.push(first);
    double total = first.value, err = first.error;
    int intervals = 1;
    while (true) {
        if (err <= std::max(spec.abs_tol, spec.rel_tol * std::abs(total))) break;
        if (open.empty() || intervals >= spec.max_intervals) {
            std::ostringstream os;
            os << "quadrature did not converge on [" << a << ", " << b << "]: value " << total << ", error " << err;
            throw NonConvergenceError(os.str(), {total, err, evals, Method::adaptive, 0.0});
        }
        auto p = open.top();
        open.pop();
        if (p.depth >= spec.max_depth) {
            frozen.push_back(p);
            continue;
        }
        const double mid = 0.5 * (p.a + p.b);
        auto l = detail::gk21(f, p.a, mid, p.depth + 1);
        auto r = detail::gk21(f, mid, p.b, p.depth + 1);
        evals += 42;
        ++intervals;
        open.push(l);
        open.push(r);
        total += (l.value + r.value) - p.value;
        err += (l.error + r.error) - p.error;
        if (err <= std::max(spec.abs_tol, spec.rel_tol * std::abs(total)) || intervals % 64 == 0) {
            // Resum exactly so that drift in the running sums cannot fake convergence.
            long double tv = 0.0L, te = 0.0L;
            auto copy = open;
            while (!copy.empty()) {
                tv += copy.top().value;
                te += copy.top().error;
                copy.pop();
            }
            for (const auto& q : frozen) {
                tv += q.value;
                te += q.error;
            }
            total = static_cast<double>(tv);
            err = static_cast<double>(te);
        }
    }
    return {total, err, evals, Method::adaptive, 0.0};
}

// Integral over [0, inf) after mapping onto [0, 1).
template <class F>
Estimate integrate_semi_infinite(F&& f, const QuadSpec& spec) {
    const double L = spec.scale;
    switch (spec.mapping) {
        case Mapping::rational: {
            auto g = [&](double u) {
                const double w = 1.0 - u;
                return f(L * u / w) * L / (w * w);
            };
            return integrate_range(g, 0.0, 1.0, spec);
        }
        case Mapping::exponential: {
            auto g = [&](double u) {
                const double w = 1.0 - u;
                return f(-L * std::log(w)) * L / w;
            };
            return integrate_range(g, 0.0, 1.0, spec);
        }
        case Mapping::none: break;
    }
    throw ConfigError("integrate_semi_infinite: mapping 'none' needs a finite interval");
}

// Integral over [a, inf).
template <class F>
Estimate integrate_tail(F&& f, double a, const QuadSpec& spec) {
    auto g = [&](double t) { return f(a + t); };
    return integrate_semi_infinite(g, spec);
}

namespace detail {

// Wynn epsilon extrapolation of a sequence of partial sums; returns the last accepted even-column entry.
inline double wynn_epsilon(const std::vector<double>& s) {
    const std::size_t n = s.size();
    if (n < 3) return s.back();
    std::vector<double> prev(n + 1, 0.0), cur(s.begin(), s.end());
    double best = s.back();
    for (std::size_t k = 1; cur.size() > 1; ++k) {
        std::vector<double> next(cur.size() - 1);
        for (std::size_t i = 0; i + 1 < cur.size(); ++i) {
            const double d = cur[i + 1] - cur[i];
            if (d == 0.0 || !std::isfinite(d)) return best;
            next[i] = prev[i + 1] + 1.0 / d;
        }
        prev = cur;
        cur = std::move(next);
        if (k % 2 == 0 && std::isfinite(cur.back())) best = cur.back();
    }
    return best;
}

}  // namespace detail

// Integral of f(t) sin(omega t) over [0, inf): half-period panels between zeros, summed with Wynn epsilon.
template <class F>
Estimate integrate_oscillatory(F&& f, double omega, const QuadSpec& spec, int max_panels = 4000) {
    spec.validate();
    if (omega == 0.0) return closed_form(0.0);
    if (omega < 0.0) {
        Estimate e = integrate_oscillatory(f, -omega, spec, max_panels);
        e.value = -e.value;
        return e;
    }
    const double h = std::numbers::pi / omega;
    auto g = [&](double t) { return f(t) * std::sin(omega * t); };
    std::vector<double> partial;
    std::vector<double> accel;
    double sum = 0.0, panel_err = 0.0;
    long evals = 0;
    QuadSpec ps = spec;
    int agree = 0;
    for (int k = 0; k < max_panels; ++k) {
        Estimate p = integrate_range(g, k * h, (k + 1) * h, ps);
        sum += p.value;
        panel_err += p.error;
        evals += p.evaluations;
        partial.push_back(sum);
        const std::size_t window = std::min<std::size_t>(partial.size(), 40);
        std::vector<double> tail(partial.end() - window, partial.end());
        const double est = detail::wynn_epsilon(tail);
        accel.push_back(est);
        if (accel.size() >= 4) {
            const double d = std::abs(accel.back() - accel[accel.size() - 2]);
            const double tol = std::max(spec.abs_tol, spec.rel_tol * std::abs(est));
            agree = (d <= tol) ? agree + 1 : 0;
            if (agree >= 2) {
                const double d2 = std::abs(accel[accel.size() - 2] - accel[accel.size() - 3]);
                return {est, std::max(d, d2) + panel_err, evals, Method::adaptive, 0.0};
            }
        }
        // Once the first panel fixes the scale, later panels need only absolute accuracy.
        if (k == 0) ps.abs_tol = std::max(spec.abs_tol, 0.1 * spec.rel_tol * std::abs(p.value));
    }
    throw NonConvergenceError("oscillatory quadrature did not converge",
                              {accel.back(), std::abs(accel.back() - sum) + panel_err, evals, Method::adaptive, 0.0});
}

// ---- Monte Carlo ----

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Counter-based stream: the draws of sample i depend only on (seed, i).
struct SampleRng {
    std::uint64_t state;
    SampleRng(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t s = seed ^ (index * 0xD1B54A32D192ED03ULL);
        state = splitmix64(s);
    }
    double uniform() {  // (0, 1)
        return (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
    }
    double normal() {
        const double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
};

}  // namespace detail

enum class SamplerKind { gaussian, cauchy3 };

// Importance density: gaussian is N(0, scale^2) per coordinate; cauchy3 is the
// 3D multivariate Cauchy s/(pi^2 (s^2+|x|^2)^2) independently in each 3-vector block.
struct Sampler {
    SamplerKind kind = SamplerKind::cauchy3;
    double scale = 1.0;

    void draw(detail::SampleRng& rng, std::vector<double>& x, double& density) const {
        density = 1.0;
        if (kind == SamplerKind::gaussian) {
            const double c = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * scale);
            for (auto& v : x) {
                v = scale * rng.normal();
                density *= c * std::exp(-0.5 * v * v / (scale * scale));
            }
            return;
        }
        const double pi2 = std::numbers::pi * std::numbers::pi;
        for (std::size_t b = 0; b + 2 < x.size(); b += 3) {
            const double g0 = rng.normal(), g1 = rng.normal(), g2 = rng.normal();
            const double u = std::abs(rng.normal());
            x[b] = scale * g0 / u;
            x[b + 1] = scale * g1 / u;
            x[b + 2] = scale * g2 / u;
            const double r2 = x[b] * x[b] + x[b + 1] * x[b + 1] + x[b + 2] * x[b + 2];
            const double q = scale * scale + r2;
            density *= scale / (pi2 * q * q);
        }
    }
};

inline unsigned worker_threads() {
    if (const char* env = std::getenv("IBC_LAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Importance-sampled mean of f/q. Samples are summed in fixed blocks in index
// order, so the result depends on the seed only, not on the thread count.
// S is Sampler or any type with draw(SampleRng&, std::vector<double>&, double& density).
template <class F, class S = Sampler>
Estimate integrate_mc(F&& f, int dim, const S& sampler, long N, std::uint64_t seed, double k = 3.0,
                      unsigned threads = 0) {
    if (dim < 1 || N < 2) throw ConfigError("integrate_mc: need dim >= 1 and N >= 2");
    if constexpr (std::is_same_v<S, Sampler>) {
        if (sampler.kind == SamplerKind::cauchy3 && dim % 3 != 0)
            throw ConfigError("integrate_mc: cauchy3 sampler needs dim divisible by 3");
    }
    constexpr long block = 4096;
    const long nblocks = (N + block - 1) / block;
    std::vector<long double> s1(nblocks, 0.0L), s2(nblocks, 0.0L);
    std::vector<std::string> failure(nblocks);
    auto run_block = [&](long bi) {
        std::vector<double> x(dim);
        double q;
        const long lo = bi * block, hi = std::min(N, lo + block);
        for (long i = lo; i < hi; ++i) {
            detail::SampleRng rng(seed, static_cast<std::uint64_t>(i));
            sampler.draw(rng, x, q);
            const double w = f(x) / q;
            if (!std::isfinite(w)) {
                std::ostringstream os;
                os << "non-finite Monte Carlo sample " << i << " at (";
                for (int d = 0; d < dim; ++d) os << (d ? ", " : "") << x[d];
                os << ")";
                failure[bi] = os.str();
                return;
            }
            s1[bi] += w;
            s2[bi] += static_cast<long double>(w) * w;
        }
    };
    if (threads == 0) threads = worker_threads();
    threads = static_cast<unsigned>(std::min<long>(threads, nblocks));
    if (threads <= 1) {
        for (long bi = 0; bi < nblocks; ++bi) run_block(bi);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (long bi = t; bi < nblocks; bi += threads) run_block(bi);
            });
        for (auto& th : pool) th.join();
    }
    long double a = 0.0L, b = 0.0L;
    for (long bi = 0; bi < nblocks; ++bi) {
        if (!failure[bi].empty()) throw DiagnosticsError(failure[bi]);
        a += s1[bi];
        b += s2[bi];
    }
    const long double mean = a / N;
    const long double var = std::max(0.0L, (b / N - mean * mean) * N / (N - 1));
    const double stderr_ = static_cast<double>(std::sqrt(var / N));
    return {static_cast<double>(mean), k * stderr_, N, Method::monte_carlo, k};
}

}  // namespace ibclab
