// fit.hpp - least-squares fitting of traces, lines and recovery curves
//
// All curve fits share one Levenberg-Marquardt core with analytic Jacobians.
// Count data is weighted 1/max(y,1), the usual Poisson approximation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace snvsim {

struct FitParam {
    std::string name;
    double value = 0.0;
    double std_error = 0.0;
};

struct FitResult {
    std::vector<FitParam> params;
    double residual_rms = 0.0;
    bool converged = false;
    bool degenerate = false;
    size_t n_points = 0;
    std::string message;

    const FitParam* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
    double value(const std::string& name) const {
        const FitParam* p = find(name);
        if (!p) throw std::invalid_argument("fit result has no parameter '" + name + "'");
        return p->value;
    }
    double std_error(const std::string& name) const {
        const FitParam* p = find(name);
        if (!p) throw std::invalid_argument("fit result has no parameter '" + name + "'");
        return p->std_error;
    }
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
    return 0.5 * (hi + v[mid - 1]);
}

inline double median_abs_dev(const std::vector<double>& v) {
    double med = median(v);
    std::vector<double> dev(v.size());
    for (size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - med);
    return median(dev);
}

// Robust FWHM of a sample: MAD scaled to a Gaussian sigma, then to full width.
// Insensitive to the outliers that routinely contaminate center histograms.
inline double hist_fwhm(const std::vector<double>& values) {
    if (values.size() < 10)
        throw std::invalid_argument("hist_fwhm: need at least 10 values");
    constexpr double mad_to_sigma = 1.4826022185056018;
    constexpr double sigma_to_fwhm = 2.3548200450309493;  // 2 sqrt(2 ln 2)
    return sigma_to_fwhm * mad_to_sigma * median_abs_dev(values);
}

namespace detail {

struct LmOptions {
    int max_iter = 200;
    double step_tol = 1e-12;
    double lambda0 = 1e-3;
};

// Solve A x = b for small dense systems, partial pivoting; returns false when
// singular.  A and b are overwritten.
inline bool solve_inplace(std::vector<double>& A, std::vector<double>& b, int m) {
    for (int col = 0; col < m; ++col) {
        int piv = col;
        for (int r = col + 1; r < m; ++r)
            if (std::abs(A[r * m + col]) > std::abs(A[piv * m + col])) piv = r;
        if (std::abs(A[piv * m + col]) < 1e-300) return false;
        if (piv != col) {
            for (int c = 0; c < m; ++c) std::swap(A[col * m + c], A[piv * m + c]);
            std::swap(b[col], b[piv]);
        }
        double d = A[col * m + col];
        for (int r = col + 1; r < m; ++r) {
            double f = A[r * m + col] / d;
            if (f == 0.0) continue;
            for (int c = col; c < m; ++c) A[r * m + c] -= f * A[col * m + c];
            b[r] -= f * b[col];
        }
    }
    for (int col = m - 1; col >= 0; --col) {
        double s = b[col];
        for (int c = col + 1; c < m; ++c) s -= A[col * m + c] * b[c];
        b[col] = s / A[col * m + col];
    }
    return true;
}

// Model: model(x_i, p, y_out, grad_out[m]).  Bounds are applied by
// projection; pass -inf/+inf to leave a parameter free.
template <class Model>
FitResult lm_fit(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w, std::vector<double> p,
                 const std::vector<std::string>& names, const std::vector<double>& lo,
                 const std::vector<double>& hi, Model&& model, LmOptions opt = {}) {
    const size_t n = x.size();
    const int m = static_cast<int>(p.size());

    auto clamp_params = [&](std::vector<double>& q) {
        for (int j = 0; j < m; ++j) q[j] = std::min(std::max(q[j], lo[j]), hi[j]);
    };
    clamp_params(p);

    auto cost_of = [&](const std::vector<double>& q) {
        double c = 0.0;
        std::vector<double> g(m);
        for (size_t i = 0; i < n; ++i) {
            double yi;
            model(x[i], q.data(), yi, g.data());
            double r = yi - y[i];
            c += w[i] * r * r;
        }
        return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
    };

    std::vector<double> JtJ(m * m), Jtr(m), grad(m);
    auto build_normal = [&](const std::vector<double>& q) {
        std::fill(JtJ.begin(), JtJ.end(), 0.0);
        std::fill(Jtr.begin(), Jtr.end(), 0.0);
        double c = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double yi;
            model(x[i], q.data(), yi, grad.data());
            double r = yi - y[i];
            c += w[i] * r * r;
            for (int a = 0; a < m; ++a) {
                Jtr[a] += w[i] * grad[a] * r;
                for (int b = a; b < m; ++b) JtJ[a * m + b] += w[i] * grad[a] * grad[b];
            }
        }
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < a; ++b) JtJ[a * m + b] = JtJ[b * m + a];
        return c;
    };

    double cost = build_normal(p);
    double lambda = opt.lambda0;
    bool converged = false;
    std::string message;

    bool ever_solved = false;
    for (int iter = 0; iter < opt.max_iter && !converged; ++iter) {
        bool accepted = false;
        for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
            std::vector<double> A = JtJ;
            std::vector<double> rhs(m);
            for (int a = 0; a < m; ++a) {
                double d = JtJ[a * m + a];
                A[a * m + a] += lambda * (d > 0.0 ? d : 1e-12);
                rhs[a] = -Jtr[a];
            }
            if (!solve_inplace(A, rhs, m)) {
                lambda *= 10.0;
                continue;
            }
            ever_solved = true;
            std::vector<double> trial = p;
            for (int a = 0; a < m; ++a) trial[a] += rhs[a];
            clamp_params(trial);
            double trial_cost = cost_of(trial);
            if (trial_cost <= cost) {
                bool small_step = true;
                for (int a = 0; a < m; ++a)
                    if (std::abs(trial[a] - p[a]) >
                        opt.step_tol * (std::abs(p[a]) + opt.step_tol))
                        small_step = false;
                p = trial;
                cost = build_normal(p);
                lambda = std::max(lambda / 3.0, 1e-14);
                accepted = true;
                if (small_step) converged = true;
            } else {
                lambda *= 4.0;
                if (lambda > 1e14) break;
            }
        }
        if (!accepted) {
            // No downhill step at any damping: either a (possibly bounded)
            // minimum, or a singular problem that never produced a step.
            converged = ever_solved;
            if (!ever_solved) message = "normal equations singular";
            break;
        }
    }

    FitResult res;
    res.n_points = n;
    res.converged = converged;
    res.message = message;

    double ss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double yi;
        model(x[i], p.data(), yi, grad.data());
        double r = yi - y[i];
        ss += r * r;
    }
    res.residual_rms = std::sqrt(ss / static_cast<double>(n));

    // Parameter errors from the unridged normal matrix at the optimum.
    build_normal(p);
    double dof = static_cast<double>(n > static_cast<size_t>(m) ? n - m : 1);
    double s2 = cost / dof;
    std::vector<double> errs(m, 0.0);
    {
        // Invert by solving against unit vectors.
        for (int j = 0; j < m; ++j) {
            std::vector<double> A = JtJ;
            std::vector<double> e(m, 0.0);
            e[j] = 1.0;
            if (solve_inplace(A, e, m) && e[j] > 0.0) errs[j] = std::sqrt(e[j] * s2);
        }
    }
    for (int j = 0; j < m; ++j) res.params.push_back({names[j], p[j], errs[j]});
    return res;
}

inline std::vector<double> poisson_weights(const std::vector<double>& y) {
    std::vector<double> w(y.size());
    for (size_t i = 0; i < y.size(); ++i) w[i] = 1.0 / std::max(y[i], 1.0);
    return w;
}

inline void require_sorted_x(const std::vector<double>& x, const char* who) {
    for (size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1]))
            throw std::invalid_argument(std::string(who) + ": x must be strictly increasing");
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace detail

// y = amplitude * exp(-rate * x) + offset
inline FitResult fit_exp_decay(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_exp_decay: size mismatch");
    if (x.size() < 5) throw std::invalid_argument("fit_exp_decay: need at least 5 points");
    detail::require_sorted_x(x, "fit_exp_decay");

    double ymin = *std::min_element(y.begin(), y.end());
    double ymax = *std::max_element(y.begin(), y.end());
    if (ymax - ymin <= 1e-12 * std::max(1.0, std::abs(ymax))) {
        FitResult res;
        res.params = {{"amplitude", 0.0, 0.0}, {"rate", 0.0, 0.0}, {"offset", ymax, 0.0}};
        res.converged = true;
        res.degenerate = true;
        res.n_points = x.size();
        res.message = "constant data, decay rate undetermined";
        return res;
    }

    double span = x.back() - x.front();
    double c0 = ymin;
    double a0 = ymax - c0;
    // Log-linear estimate of the rate over the clearly-decaying part.
    double k0 = 1.0 / span;
    {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int cnt = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            double d = y[i] - c0;
            if (d > 0.05 * a0) {
                double ly = std::log(d);
                sx += x[i];
                sy += ly;
                sxx += x[i] * x[i];
                sxy += x[i] * ly;
                ++cnt;
            }
        }
        double den = cnt * sxx - sx * sx;
        if (cnt >= 2 && std::abs(den) > 0.0) {
            double slope = (cnt * sxy - sx * sy) / den;
            if (slope < 0.0) k0 = -slope;
        }
    }

    auto model = [](double t, const double* p, double& yi, double* g) {
        double e = std::exp(-p[1] * t);
        yi = p[0] * e + p[2];
        g[0] = e;
        g[1] = -p[0] * t * e;
        g[2] = 1.0;
    };
    FitResult res = detail::lm_fit(x, y, detail::poisson_weights(y), {a0, k0, c0},
                                   {"amplitude", "rate", "offset"},
                                   {-detail::kInf, 0.0, -detail::kInf},
                                   {detail::kInf, detail::kInf, detail::kInf}, model);
    return res;
}

// y = amplitude / (1 + ((x - center) / (fwhm/2))^2) + offset
// Throws PeakNotFound when no point rises meaningfully above the background.
inline FitResult fit_lorentzian(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_lorentzian: size mismatch");
    if (x.size() < 7) throw std::invalid_argument("fit_lorentzian: need at least 7 points");
    detail::require_sorted_x(x, "fit_lorentzian");
    const size_t n = x.size();

    size_t n_edge = std::max<size_t>(2, n / 10);
    std::vector<double> edges;
    for (size_t i = 0; i < n_edge; ++i) edges.push_back(y[i]);
    for (size_t i = n - n_edge; i < n; ++i) edges.push_back(y[i]);
    double c0 = median(edges);
    double noise = std::max({1.4826 * median_abs_dev(edges),
                             std::sqrt(std::max(c0, 0.0)), 1e-12});

    double med_all = median(y);
    double ymax = *std::max_element(y.begin(), y.end());
    if (ymax - med_all < 3.0 * noise)
        throw PeakNotFound("no point exceeds background by 3 sigma (max " +
                           std::to_string(ymax) + ", background " + std::to_string(med_all) +
                           ", sigma " + std::to_string(noise) + ")");

    // Peak position from a lightly smoothed trace.
    size_t ipk = 0;
    double best = -detail::kInf;
    for (size_t i = 0; i < n; ++i) {
        double s = y[i];
        int c = 1;
        if (i > 0) { s += y[i - 1]; ++c; }
        if (i + 1 < n) { s += y[i + 1]; ++c; }
        s /= c;
        if (s > best) {
            best = s;
            ipk = i;
        }
    }
    double f0 = x[ipk];
    double a0 = std::max(ymax - c0, noise);
    double half = c0 + 0.5 * a0;
    double left = x.front(), right = x.back();
    for (size_t i = ipk; i-- > 0;)
        if (y[i] < half) { left = x[i]; break; }
    for (size_t i = ipk + 1; i < n; ++i)
        if (y[i] < half) { right = x[i]; break; }
    double w0 = right - left;
    double spacing = (x.back() - x.front()) / (n - 1);
    if (!(w0 > spacing)) w0 = 4.0 * spacing;

    auto model = [](double f, const double* p, double& yi, double* g) {
        double hw = 0.5 * p[2];
        double u = (f - p[1]) / hw;
        double den = 1.0 + u * u;
        yi = p[0] / den + p[3];
        g[0] = 1.0 / den;
        double common = p[0] * 2.0 * u / (den * den);
        g[1] = common / hw;
        g[2] = common * u / p[2];
        g[3] = 1.0;
    };
    FitResult res = detail::lm_fit(x, y, detail::poisson_weights(y), {a0, f0, w0, c0},
                                   {"amplitude", "center", "fwhm", "offset"},
                                   {0.0, x.front(), 0.01 * spacing, -detail::kInf},
                                   {detail::kInf, x.back(), detail::kInf, detail::kInf},
                                   model);
    return res;
}

// Ordinary least squares line; reports r_squared as a derived parameter.
inline FitResult fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_linear: size mismatch");
    if (x.size() < 3) throw std::invalid_argument("fit_linear: need at least 3 points");
    const size_t n = x.size();
    double sx = 0, sy = 0;
    for (size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    double xbar = sx / n, ybar = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = x[i] - xbar, dy = y[i] - ybar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }

    FitResult res;
    res.n_points = n;
    if (sxx <= 0.0) {
        res.params = {{"slope", 0.0, 0.0}, {"intercept", ybar, 0.0}, {"r_squared", 0.0, 0.0}};
        res.degenerate = true;
        res.converged = false;
        res.message = "all x identical, slope undetermined";
        return res;
    }
    double slope = sxy / sxx;
    double intercept = ybar - slope * xbar;
    double ssr = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double r = y[i] - (slope * x[i] + intercept);
        ssr += r * r;
    }
    double s2 = ssr / static_cast<double>(n - 2);
    double r2 = syy > 0.0 ? 1.0 - ssr / syy : (ssr == 0.0 ? 1.0 : 0.0);
    res.params = {{"slope", slope, std::sqrt(s2 / sxx)},
                  {"intercept", intercept,
                   std::sqrt(s2 * (1.0 / n + xbar * xbar / sxx))},
                  {"r_squared", r2, 0.0}};
    res.converged = true;
    res.residual_rms = std::sqrt(ssr / n);
    return res;
}

// Brightness after recovery pulse n (n = 1..N):
//   y_n = saturation_level * (1 - (1-q)^n) + offset,  q = rate_per_pulse.
// saturation_index_95 reports the first pulse reaching 95% of the plateau.
inline FitResult fit_recovery_steps(const std::vector<double>& counts) {
    if (counts.size() < 4)
        throw std::invalid_argument("fit_recovery_steps: need at least 4 blocks");
    const size_t n = counts.size();
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i + 1);

    double q0 = 0.5;
    if (n >= 3) {
        double d0 = counts[1] - counts[0];
        double d1 = counts[2] - counts[1];
        if (d0 > 0.0 && d1 > 0.0 && d1 < d0) q0 = std::clamp(1.0 - d1 / d0, 0.02, 0.98);
    }
    auto amp = [&](double q, double k) { return 1.0 - std::pow(1.0 - q, k); };
    double denom = amp(q0, static_cast<double>(n)) - amp(q0, 1.0);
    double s0 = denom > 1e-9 ? (counts.back() - counts.front()) / denom
                             : std::max(counts.back(), 1.0);
    double c0 = counts.front() - s0 * amp(q0, 1.0);

    auto model = [](double k, const double* p, double& yi, double* g) {
        double q = p[0];
        double base = std::pow(1.0 - q, k);
        yi = p[1] * (1.0 - base) + p[2];
        // d/dq (1-q)^k = -k (1-q)^(k-1)
        g[0] = p[1] * k * std::pow(1.0 - q, k - 1.0);
        g[1] = 1.0 - base;
        g[2] = 1.0;
    };
    FitResult res = detail::lm_fit(x, counts, detail::poisson_weights(counts), {q0, s0, c0},
                                   {"rate_per_pulse", "saturation_level", "offset"},
                                   {1e-9, 0.0, -detail::kInf}, {1.0, detail::kInf, detail::kInf},
                                   model);
    double q = res.value("rate_per_pulse");
    double idx95;
    if (q >= 1.0 - 1e-12) {
        idx95 = 1.0;
    } else {
        idx95 = std::ceil(std::log(0.05) / std::log(1.0 - q) - 1e-9);
    }
    res.params.push_back({"saturation_index_95", idx95, 0.0});
    return res;
}

}  // namespace snvsim
