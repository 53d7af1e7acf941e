// Parameter estimation for the empirical forms: Levenberg-Marquardt least
// squares and random-walk Metropolis sampling over the same objective.
#pragma once

#include <regpinn/dataio.hpp>
#include <regpinn/error.hpp>
#include <regpinn/models.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace regpinn {

/// r_obs - r_model for every record.
inline std::vector<double> residuals(const EmpiricalForm& form, std::span<const CrossingRecord> records) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!r.drivers) throw DomainError("record has no solar-wind drivers; merge first");
        out.push_back(r.polar.r - predict_r(form, r.drivers->bz, r.drivers->dp, r.polar.theta));
    }
    return out;
}

inline double sum_of_squares(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

/// +-50% around the printed coefficients of the form's alternative.
inline std::vector<AxisRange> default_bounds(const EmpiricalForm& like) {
    const auto base = to_vector(std::visit([](const auto& f) -> EmpiricalForm { return std::decay_t<decltype(f)>{}; },
                                           like));
    std::vector<AxisRange> b;
    for (double v : base) b.push_back({std::min(0.5 * v, 1.5 * v), std::max(0.5 * v, 1.5 * v)});
    return b;
}

struct FitProblem {
    std::span<const CrossingRecord> records;
    EmpiricalForm initial = ShueForm{};
    std::vector<bool> free;          ///< empty: all coefficients free
    std::vector<AxisRange> bounds;   ///< empty: default_bounds(initial)

    std::vector<bool> free_mask() const {
        return free.empty() ? std::vector<bool>(to_vector(initial).size(), true) : free;
    }
    std::vector<AxisRange> effective_bounds() const { return bounds.empty() ? default_bounds(initial) : bounds; }

    std::vector<std::size_t> free_indices() const {
        std::vector<std::size_t> idx;
        const auto mask = free_mask();
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) idx.push_back(i);
        return idx;
    }

    void validate() const {
        const auto x0 = to_vector(initial);
        const auto mask = free_mask();
        const auto b = effective_bounds();
        if (mask.size() != x0.size()) throw DomainError("free mask size does not match the model");
        if (b.size() != x0.size()) throw DomainError("bounds size does not match the model");
        if (std::none_of(mask.begin(), mask.end(), [](bool f) { return f; }))
            throw DomainError("at least one coefficient must be free");
        const auto names = coefficient_names(initial);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            if (!(b[i].lo <= b[i].hi)) throw DomainError("empty bounds for " + std::string(names[i]));
            if (!(x0[i] >= b[i].lo && x0[i] <= b[i].hi))
                throw DomainError("initial " + std::string(names[i]) + " lies outside its bounds");
        }
    }
};

namespace detail {

inline EmpiricalForm assemble(const FitProblem& p, std::span<const std::size_t> idx, std::span<const double> free) {
    auto x = to_vector(p.initial);
    for (std::size_t j = 0; j < idx.size(); ++j) x[idx[j]] = free[j];
    return with_vector(p.initial, x);
}

inline double sse_at(const FitProblem& p, std::span<const std::size_t> idx, std::span<const double> free) {
    const auto r = residuals(assemble(p, idx, free), p.records);
    return sum_of_squares(r);
}

} // namespace detail

// --- least squares ---------------------------------------------------------

struct FitOptions {
    double tol = 1e-10;
    int max_iters = 200;
    double jacobian_step = 1e-6; ///< relative forward-difference step
    double initial_damping = 1e-3;
};

struct FitResult {
    EmpiricalForm params;
    double initial_sse = 0.0;
    double sse = 0.0;
    int iterations = 0;
    bool converged = false;
    int singular_solves = 0;         ///< normal equations that needed extra damping
    std::vector<double> sse_history; ///< SSE after each accepted step, starting with the initial SSE
};

/// Levenberg-Marquardt over the free coefficients with a forward-difference
/// Jacobian and Marquardt (diagonal) damping. Steps are clipped to the bounds.
/// Converges when an accepted step lowers SSE by less than `tol` relative, or
/// the step norm drops below `tol` relative to the parameter norm.
inline FitResult least_squares_fit(const FitProblem& problem, const FitOptions& opt = {}) {
    problem.validate();
    const auto idx = problem.free_indices();
    const auto bounds = problem.effective_bounds();
    const auto x0 = to_vector(problem.initial);
    const std::size_t k = idx.size();
    const std::size_t n = problem.records.size();

    std::vector<double> p(k);
    for (std::size_t j = 0; j < k; ++j) p[j] = x0[idx[j]];

    auto clip = [&](std::vector<double>& v) {
        for (std::size_t j = 0; j < k; ++j) v[j] = std::clamp(v[j], bounds[idx[j]].lo, bounds[idx[j]].hi);
    };

    FitResult res;
    auto r = residuals(detail::assemble(problem, idx, p), problem.records);
    double sse = sum_of_squares(r);
    res.initial_sse = sse;
    res.sse_history.push_back(sse);
    double mu = opt.initial_damping;

    for (int iter = 0; iter < opt.max_iters && !res.converged; ++iter) {
        res.iterations = iter + 1;
        if (sse == 0.0) {
            res.converged = true;
            break;
        }
        // J is d(residual)/d(p).
        Eigen::MatrixXd J(n, k);
        for (std::size_t j = 0; j < k; ++j) {
            auto q = p;
            double h = opt.jacobian_step * std::max(std::abs(p[j]), 1e-3);
            if (q[j] + h > bounds[idx[j]].hi) h = -h;
            q[j] += h;
            const auto rq = residuals(detail::assemble(problem, idx, q), problem.records);
            for (std::size_t i = 0; i < n; ++i) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (rq[i] - r[i]) / h;
        }
        const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(n));
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * rv;

        for (;;) {
            Eigen::MatrixXd damped = A;
            for (Eigen::Index j = 0; j < damped.rows(); ++j) damped(j, j) += mu * std::max(A(j, j), 1e-12);
            Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
            Eigen::VectorXd delta = ldlt.solve(-g);
            if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
                ++res.singular_solves;
                mu *= 10.0;
                if (mu > 1e30) break;
                continue;
            }
            auto cand = p;
            for (std::size_t j = 0; j < k; ++j) cand[j] += delta(static_cast<Eigen::Index>(j));
            clip(cand);
            double step = 0.0, pnorm = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                step += (cand[j] - p[j]) * (cand[j] - p[j]);
                pnorm += p[j] * p[j];
            }
            step = std::sqrt(step);
            pnorm = std::sqrt(pnorm);
            const bool tiny_step = step <= opt.tol * (pnorm + opt.tol);

            auto rc = residuals(detail::assemble(problem, idx, cand), problem.records);
            const double sse_c = sum_of_squares(rc);
            if (std::isfinite(sse_c) && sse_c < sse) {
                const double rel = (sse - sse_c) / sse;
                p = std::move(cand);
                r = std::move(rc);
                sse = sse_c;
                res.sse_history.push_back(sse);
                mu = std::max(mu / 3.0, 1e-15);
                if (rel < opt.tol || tiny_step) res.converged = true;
                break;
            }
            if (tiny_step) {
                res.converged = true;
                break;
            }
            mu *= 10.0;
            if (mu > 1e30) break;
        }
        if (mu > 1e30) break;
    }

    res.params = detail::assemble(problem, idx, p);
    res.sse = sse;
    return res;
}

// --- MCMC ------------------------------------------------------------------

struct McmcConfig {
    std::size_t n_steps = 20000;
    std::size_t burn_in = 5000;
    std::vector<double> proposal_sigma; ///< one per free coefficient
    std::uint64_t seed = 1;
    std::optional<double> likelihood_sigma; ///< default: std of residuals at the initial guess
    /// Re-estimate a full proposal covariance from the chain every
    /// `adapt_interval` burn-in steps (scaled by 2.38^2 / d) and tune its
    /// overall scale towards 23.4% acceptance. The proposal is frozen when
    /// burn-in ends, so the kept samples come from a fixed kernel.
    bool adapt_burn_in = false;
    std::size_t adapt_interval = 500;

    void validate(std::size_t n_free) const {
        if (burn_in >= n_steps) throw DomainError("burn_in must be < n_steps");
        if (proposal_sigma.size() != n_free)
            throw DomainError("need one proposal sigma per free coefficient (" + std::to_string(n_free) + ")");
        for (double s : proposal_sigma)
            if (!(s > 0.0 && std::isfinite(s))) throw DomainError("proposal sigma must be > 0");
        if (likelihood_sigma && !(*likelihood_sigma > 0.0)) throw DomainError("likelihood sigma must be > 0");
        if (adapt_burn_in && adapt_interval < 2) throw DomainError("adapt_interval must be >= 2");
    }
};

struct Chain {
    std::vector<std::string> names;   ///< free coefficients, column order
    std::size_t n_params = 0;
    std::size_t burn_in = 0;
    std::vector<double> samples;      ///< n_steps x n_params, row-major
    std::vector<double> log_post;     ///< per step
    double acceptance_rate = 0.0;     ///< over post-burn-in steps
    std::vector<double> mean;         ///< post-burn-in
    std::vector<double> stddev;       ///< post-burn-in
    double likelihood_sigma = 0.0;

    std::size_t n_steps() const { return log_post.size(); }
    double at(std::size_t step, std::size_t j) const { return samples[step * n_params + j]; }
};

/// Random-walk Metropolis with Gaussian proposals and a uniform prior on
/// `bounds`. `log_target` is evaluated only inside the bounds. With a nonzero
/// `adapt_interval` the proposal covariance is re-estimated and its overall
/// scale tuned during burn-in; both are frozen for the kept samples.
template <class LogTarget>
Chain random_walk_metropolis(LogTarget&& log_target, std::vector<double> start, std::span<const AxisRange> bounds,
                             std::span<const double> proposal_sigma, std::size_t n_steps, std::size_t burn_in,
                             std::uint64_t seed, std::size_t adapt_interval = 0) {
    const std::size_t k = start.size();
    if (bounds.size() != k || proposal_sigma.size() != k) throw DomainError("dimension mismatch in sampler");
    if (burn_in >= n_steps) throw DomainError("burn_in must be < n_steps");
    for (std::size_t j = 0; j < k; ++j)
        if (!(start[j] >= bounds[j].lo && start[j] <= bounds[j].hi)) throw DomainError("start lies outside bounds");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Chain c;
    c.n_params = k;
    c.burn_in = burn_in;
    c.samples.reserve(n_steps * k);
    c.log_post.reserve(n_steps);

    // Proposal y = x + L z with L lower-triangular; diagonal until adapted.
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) L(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) = proposal_sigma[j];

    auto adapt = [&](std::size_t step) {
        // Covariance of the later half of the burn-in so far.
        const std::size_t from = step / 2;
        const auto m = static_cast<double>(step - from);
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
        for (std::size_t s = from; s < step; ++s)
            for (std::size_t j = 0; j < k; ++j) mu(static_cast<Eigen::Index>(j)) += c.at(s, j);
        mu /= m;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        Eigen::VectorXd d(static_cast<Eigen::Index>(k));
        for (std::size_t s = from; s < step; ++s) {
            for (std::size_t j = 0; j < k; ++j) d(static_cast<Eigen::Index>(j)) = c.at(s, j) - mu(static_cast<Eigen::Index>(j));
            cov.noalias() += d * d.transpose();
        }
        cov *= (2.38 * 2.38) / (static_cast<double>(k) * m);
        for (std::size_t j = 0; j < k; ++j) {
            const double floor = 1e-6 * proposal_sigma[j];
            cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += floor * floor;
        }
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) L = llt.matrixL();
    };

    // Global step scale, pushed towards 0.234 acceptance during burn-in.
    double log_scale = 0.0;
    auto tune_scale = [&](std::size_t step, bool accepted_now) {
        if (adapt_interval == 0 || step >= burn_in) return;
        const double gain = 1.0 / std::sqrt(1.0 + static_cast<double>(step) / static_cast<double>(adapt_interval));
        log_scale += gain * ((accepted_now ? 1.0 : 0.0) - 0.234);
    };
    auto x = std::move(start);
    double lp = log_target(std::span<const double>(x));
    std::size_t accepted = 0;
    std::vector<double> y(k);
    Eigen::VectorXd z(static_cast<Eigen::Index>(k));
    for (std::size_t step = 0; step < n_steps; ++step) {
        if (adapt_interval > 0 && step < burn_in && step >= adapt_interval && step % adapt_interval == 0) adapt(step);
        for (std::size_t j = 0; j < k; ++j) z(static_cast<Eigen::Index>(j)) = gauss(rng);
        const Eigen::VectorXd dz = std::exp(log_scale) * (L * z);
        bool inside = true;
        for (std::size_t j = 0; j < k; ++j) {
            y[j] = x[j] + dz(static_cast<Eigen::Index>(j));
            inside = inside && y[j] >= bounds[j].lo && y[j] <= bounds[j].hi;
        }
        const double u = unif(rng);
        if (inside) {
            const double lq = log_target(std::span<const double>(y));
            const bool acc = std::isfinite(lq) && std::log(u) < lq - lp;
            if (acc) {
                x = y;
                lp = lq;
                if (step >= burn_in) ++accepted;
            }
            tune_scale(step, acc);
        } else {
            tune_scale(step, false);
        }
        c.samples.insert(c.samples.end(), x.begin(), x.end());
        c.log_post.push_back(lp);
    }

    const auto kept = static_cast<double>(n_steps - burn_in);
    c.acceptance_rate = static_cast<double>(accepted) / kept;
    c.mean.assign(k, 0.0);
    c.stddev.assign(k, 0.0);
    for (std::size_t s = burn_in; s < n_steps; ++s)
        for (std::size_t j = 0; j < k; ++j) c.mean[j] += c.at(s, j);
    for (auto& m : c.mean) m /= kept;
    for (std::size_t s = burn_in; s < n_steps; ++s)
        for (std::size_t j = 0; j < k; ++j) {
            const double d = c.at(s, j) - c.mean[j];
            c.stddev[j] += d * d;
        }
    for (auto& v : c.stddev) v = std::sqrt(v / kept);
    return c;
}

/// Samples the free coefficients of `problem` under the Gaussian likelihood
/// exp(-SSE / (2 sigma^2)) and a uniform prior on the bounds.
inline Chain mcmc_sample(const FitProblem& problem, const McmcConfig& cfg) {
    problem.validate();
    const auto idx = problem.free_indices();
    cfg.validate(idx.size());
    const auto all_bounds = problem.effective_bounds();
    const auto x0 = to_vector(problem.initial);
    const auto names = coefficient_names(problem.initial);

    double sigma = 0.0;
    if (cfg.likelihood_sigma) {
        sigma = *cfg.likelihood_sigma;
    } else {
        const auto r = residuals(problem.initial, problem.records);
        if (r.size() < 2) throw DomainError("need at least two records to estimate the likelihood sigma");
        const double mean = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        sigma = std::sqrt(var / static_cast<double>(r.size()));
        if (!(sigma > 0.0)) throw DomainError("residual spread at the initial guess is zero; set likelihood_sigma");
    }

    std::vector<double> start;
    std::vector<AxisRange> bounds;
    for (auto i : idx) {
        start.push_back(x0[i]);
        bounds.push_back(all_bounds[i]);
    }
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    auto log_target = [&](std::span<const double> free) { return -detail::sse_at(problem, idx, free) * inv_two_var; };

    Chain c = random_walk_metropolis(log_target, std::move(start), bounds, cfg.proposal_sigma, cfg.n_steps, cfg.burn_in,
                                     cfg.seed, cfg.adapt_burn_in ? cfg.adapt_interval : 0);
    for (auto i : idx) c.names.emplace_back(names[i]);
    c.likelihood_sigma = sigma;
    return c;
}

inline EmpiricalForm posterior_mean(const FitProblem& problem, const Chain& chain) {
    const auto idx = problem.free_indices();
    return detail::assemble(problem, idx, chain.mean);
}

// --- reports ---------------------------------------------------------------

/// `name = value` lines: model id, every coefficient, then the extras.
inline void write_fit_report(std::ostream& os, const EmpiricalForm& form,
                             const std::vector<std::pair<std::string, std::string>>& extras) {
    const auto old = os.precision(17);
    os << "model = " << form_id(form) << '\n';
    const auto names = coefficient_names(form);
    const auto values = to_vector(form);
    for (std::size_t i = 0; i < names.size(); ++i) os << names[i] << " = " << values[i] << '\n';
    for (const auto& [k, v] : extras) os << k << " = " << v << '\n';
    os.precision(old);
}

inline void write_fit_report(std::ostream& os, const FitResult& fit) {
    std::ostringstream sse;
    sse.precision(17);
    sse << fit.sse;
    write_fit_report(os, fit.params,
                     {{"sse", sse.str()},
                      {"n_iters", std::to_string(fit.iterations)},
                      {"converged", fit.converged ? "true" : "false"}});
}

/// Reads the coefficients back from a fit report. Unknown keys other than
/// the report extras are rejected.
inline EmpiricalForm read_fit_report(std::istream& in, std::string_view name) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError(std::string(name), lineno, "expected 'name = value'");
        kv[std::string(detail::trim(t.substr(0, eq)))] = std::string(detail::trim(t.substr(eq + 1)));
    }
    if (!kv.count("model")) throw ParseError(std::string(name), 0, "missing 'model' key");
    auto form = default_form(kv["model"]);
    const auto names = coefficient_names(form);
    auto values = to_vector(form);
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = kv.find(std::string(names[i]));
        if (it == kv.end()) throw ParseError(std::string(name), 0, "missing coefficient '" + std::string(names[i]) + "'");
        const auto v = detail::parse_double(it->second);
        if (!v || !std::isfinite(*v)) throw ParseError(std::string(name), 0, "bad value for " + it->first);
        values[i] = *v;
    }
    return with_vector(form, values);
}

inline void write_chain_csv(std::ostream& os, const Chain& c) {
    const auto old = os.precision(17);
    for (const auto& n : c.names) os << n << ',';
    os << "log_post\n";
    for (std::size_t s = 0; s < c.n_steps(); ++s) {
        for (std::size_t j = 0; j < c.n_params; ++j) os << c.at(s, j) << ',';
        os << c.log_post[s] << '\n';
    }
    os.precision(old);
}

} // namespace regpinn
