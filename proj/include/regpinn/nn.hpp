// Feedforward network with tanh hidden layers, reverse-mode gradients of the
// composite loss  L = MSE(net, obs) + lambda * MSE(net, empirical) + penalty,
// and RMSProp updates. Everything is double precision.
//
// Per-row arithmetic is performed in a fixed order, so a row's output does not
// depend on which batch it travels in.
#pragma once

#include <regpinn/error.hpp>
#include <regpinn/models.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace regpinn {

inline const std::vector<std::size_t>& default_layer_sizes() {
    static const std::vector<std::size_t> sizes{3, 27, 81, 27, 9, 1};
    return sizes;
}

/// Standardization applied to inputs and undone on the output.
/// Fitted on the training split and frozen afterwards.
struct Normalization {
    std::array<double, 3> in_mean{0.0, 0.0, 0.0};
    std::array<double, 3> in_std{1.0, 1.0, 1.0};
    double out_mean = 0.0;
    double out_std = 1.0;
};

/// Parameters live in one flat vector: for each layer the fan_in x fan_out
/// weight matrix (row-major) followed by the fan_out biases. Gradients and
/// optimizer state share this layout.
class Mlp {
public:
    Mlp() = default;

    explicit Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw DomainError("network needs at least an input and an output layer");
        if (sizes_.front() != 3) throw DomainError("input layer must have 3 units (bz, dp, theta)");
        if (sizes_.back() != 1) throw DomainError("output layer must have 1 unit");
        for (auto s : sizes_)
            if (s == 0) throw DomainError("layer sizes must be positive");
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            w_off_.push_back(off);
            off += sizes_[l] * sizes_[l + 1];
            b_off_.push_back(off);
            off += sizes_[l + 1];
        }
        params_.assign(off, 0.0);
    }

    const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
    std::size_t n_layers() const noexcept { return w_off_.size(); }
    std::size_t fan_in(std::size_t l) const { return sizes_[l]; }
    std::size_t fan_out(std::size_t l) const { return sizes_[l + 1]; }
    std::size_t weight_offset(std::size_t l) const { return w_off_[l]; }
    std::size_t bias_offset(std::size_t l) const { return b_off_[l]; }

    std::span<double> weights(std::size_t l) { return {params_.data() + w_off_[l], fan_in(l) * fan_out(l)}; }
    std::span<const double> weights(std::size_t l) const {
        return {params_.data() + w_off_[l], fan_in(l) * fan_out(l)};
    }
    std::span<double> biases(std::size_t l) { return {params_.data() + b_off_[l], fan_out(l)}; }
    std::span<const double> biases(std::size_t l) const { return {params_.data() + b_off_[l], fan_out(l)}; }

    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }

    /// True for entries of `params()` that are weights (penalized), false for biases.
    std::vector<bool> weight_mask() const {
        std::vector<bool> m(params_.size(), false);
        for (std::size_t l = 0; l < n_layers(); ++l)
            for (std::size_t i = 0; i < fan_in(l) * fan_out(l); ++i) m[w_off_[l] + i] = true;
        return m;
    }

    Normalization norm;
    static constexpr std::string_view activation = "tanh";

    bool operator==(const Mlp& o) const {
        return sizes_ == o.sizes_ && params_ == o.params_ && norm.in_mean == o.norm.in_mean &&
               norm.in_std == o.norm.in_std && norm.out_mean == o.norm.out_mean && norm.out_std == o.norm.out_std;
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> w_off_;
    std::vector<std::size_t> b_off_;
    std::vector<double> params_;
};

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline Mlp mlp_new(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    Mlp net(sizes);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const double bound = std::sqrt(6.0 / static_cast<double>(net.fan_in(l) + net.fan_out(l)));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& w : net.weights(l)) w = u(rng);
    }
    return net;
}

/// Per-feature mean/std of the inputs and mean/std of the targets.
/// Constant columns keep std = 1.
inline Normalization fit_normalization(std::span<const Features> rows, std::span<const double> targets) {
    Normalization n;
    if (rows.empty()) return n;
    const auto m = static_cast<double>(rows.size());
    std::array<double, 3> sum{0, 0, 0};
    for (const auto& x : rows) {
        sum[0] += x.bz;
        sum[1] += x.dp;
        sum[2] += x.theta;
    }
    for (int f = 0; f < 3; ++f) n.in_mean[f] = sum[f] / m;
    std::array<double, 3> var{0, 0, 0};
    for (const auto& x : rows) {
        const double v[3] = {x.bz, x.dp, x.theta};
        for (int f = 0; f < 3; ++f) var[f] += (v[f] - n.in_mean[f]) * (v[f] - n.in_mean[f]);
    }
    for (int f = 0; f < 3; ++f) {
        const double s = std::sqrt(var[f] / m);
        n.in_std[f] = s > 0.0 ? s : 1.0;
    }
    if (!targets.empty()) {
        const auto mt = static_cast<double>(targets.size());
        n.out_mean = std::accumulate(targets.begin(), targets.end(), 0.0) / mt;
        double v = 0.0;
        for (double t : targets) v += (t - n.out_mean) * (t - n.out_mean);
        const double s = std::sqrt(v / mt);
        n.out_std = s > 0.0 ? s : 1.0;
    }
    return n;
}

namespace detail {

// Layer activations for a batch: acts[0] is the normalized input (m x 3),
// acts[l + 1] the output of layer l (tanh for hidden layers, linear last).
inline std::vector<std::vector<double>> forward_pass(const Mlp& net, std::span<const Features> rows) {
    const std::size_t m = rows.size();
    std::vector<std::vector<double>> acts(net.n_layers() + 1);
    auto& in = acts[0];
    in.resize(m * 3);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& x = rows[i];
        if (!(std::isfinite(x.bz) && std::isfinite(x.dp) && std::isfinite(x.theta)))
            throw DomainError("non-finite network input at row " + std::to_string(i));
        in[i * 3 + 0] = (x.bz - net.norm.in_mean[0]) / net.norm.in_std[0];
        in[i * 3 + 1] = (x.dp - net.norm.in_mean[1]) / net.norm.in_std[1];
        in[i * 3 + 2] = (x.theta - net.norm.in_mean[2]) / net.norm.in_std[2];
    }
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const std::size_t fi = net.fan_in(l), fo = net.fan_out(l);
        const double* W = net.weights(l).data();
        const double* b = net.biases(l).data();
        const auto& x = acts[l];
        auto& y = acts[l + 1];
        y.resize(m * fo);
        const bool hidden = l + 1 < net.n_layers();
        for (std::size_t i = 0; i < m; ++i) {
            double* out = y.data() + i * fo;
            const double* xi = x.data() + i * fi;
            for (std::size_t j = 0; j < fo; ++j) out[j] = b[j];
            for (std::size_t k = 0; k < fi; ++k) {
                const double xv = xi[k];
                const double* Wk = W + k * fo;
                for (std::size_t j = 0; j < fo; ++j) out[j] += xv * Wk[j];
            }
            if (hidden)
                for (std::size_t j = 0; j < fo; ++j) out[j] = std::tanh(out[j]);
        }
    }
    return acts;
}

} // namespace detail

/// Predicted r for each row, in Re.
inline std::vector<double> forward(const Mlp& net, std::span<const Features> rows) {
    const auto acts = detail::forward_pass(net, rows);
    std::vector<double> out(acts.back());
    for (auto& v : out) v = net.norm.out_mean + net.norm.out_std * v;
    return out;
}

inline ModelHandle make_handle(Mlp net, std::string id = "mlp") {
    return ModelHandle(std::move(id),
                       [net = std::move(net)](std::span<const Features> rows) { return forward(net, rows); });
}

// --- loss ------------------------------------------------------------------

struct PenaltyKind {
    enum class Kind { None, L1, L2, Elastic };
    Kind kind = Kind::None;
    double strength = 0.0;
    double mix = 0.5; ///< Elastic: weight of the L1 part
};

struct LossBreakdown {
    double l_data = 0.0;
    double l_reg = 0.0;
    double penalty = 0.0;
    double l_total = 0.0;
    double lambda = 0.0;

    bool finite() const { return std::isfinite(l_data) && std::isfinite(l_reg) && std::isfinite(penalty) && std::isfinite(l_total); }
    bool operator==(const LossBreakdown&) const = default;
};

/// Weight-norm penalty and its gradient (biases are not penalized; the L1
/// subgradient at w = 0 is 0).
inline std::pair<double, std::vector<double>> penalty_value_and_grad(const Mlp& net, const PenaltyKind& pen) {
    if (!(pen.strength >= 0.0)) throw DomainError("penalty strength must be >= 0");
    if (pen.kind == PenaltyKind::Kind::Elastic && !(pen.mix >= 0.0 && pen.mix <= 1.0))
        throw DomainError("elastic mix must lie in [0, 1]");
    std::vector<double> grad(net.params().size(), 0.0);
    if (pen.kind == PenaltyKind::Kind::None || pen.strength == 0.0) return {0.0, std::move(grad)};

    double l1_weight = 0.0, l2_weight = 0.0;
    switch (pen.kind) {
    case PenaltyKind::Kind::L1: l1_weight = 1.0; break;
    case PenaltyKind::Kind::L2: l2_weight = 1.0; break;
    case PenaltyKind::Kind::Elastic:
        l1_weight = pen.mix;
        l2_weight = 1.0 - pen.mix;
        break;
    case PenaltyKind::Kind::None: break;
    }
    double abs_sum = 0.0, sq_sum = 0.0;
    const auto& p = net.params();
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const std::size_t off = net.weight_offset(l);
        for (std::size_t i = 0; i < net.fan_in(l) * net.fan_out(l); ++i) {
            const double w = p[off + i];
            abs_sum += std::abs(w);
            sq_sum += w * w;
            const double sign = w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0);
            grad[off + i] = pen.strength * (l1_weight * sign + l2_weight * 2.0 * w);
        }
    }
    return {pen.strength * (l1_weight * abs_sum + l2_weight * sq_sum), std::move(grad)};
}

/// Composite loss over one batch and, when `grad` is non-null, its gradient
/// with respect to every parameter.
///
/// `reg_targets` are the empirical model's predictions for the same rows; pass
/// an empty span to drop the regression term entirely (vanilla network).
/// The regression term only contributes to the gradient when lambda != 0.
inline LossBreakdown loss_and_gradients(const Mlp& net, std::span<const Features> batch,
                                        std::span<const double> targets, std::span<const double> reg_targets,
                                        double lambda, const PenaltyKind& penalty, std::vector<double>* grad) {
    const std::size_t m = batch.size();
    if (m == 0) throw DomainError("empty batch");
    if (targets.size() != m) throw DomainError("targets length does not match the batch");
    if (!reg_targets.empty() && reg_targets.size() != m)
        throw DomainError("regression targets length does not match the batch");
    if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");

    const auto acts = detail::forward_pass(net, batch);
    const auto& z = acts.back();
    const double scale = net.norm.out_std;
    const bool with_reg = !reg_targets.empty();
    const bool reg_grad = with_reg && lambda != 0.0;

    LossBreakdown lb;
    lb.lambda = lambda;
    std::vector<double> dz(m);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double yhat = net.norm.out_mean + scale * z[i];
        const double e = yhat - targets[i];
        lb.l_data += e * e;
        double g = e;
        if (with_reg) {
            const double er = yhat - reg_targets[i];
            lb.l_reg += er * er;
            if (reg_grad) g += lambda * er;
        }
        dz[i] = 2.0 * inv_m * scale * g;
    }
    lb.l_data *= inv_m;
    lb.l_reg *= inv_m;

    auto [pen_value, pen_grad] = penalty_value_and_grad(net, penalty);
    lb.penalty = pen_value;
    lb.l_total = with_reg ? lb.l_data + lambda * lb.l_reg + lb.penalty : lb.l_data + lb.penalty;

    if (!grad) return lb;
    auto& G = *grad;
    G = std::move(pen_grad);

    std::vector<double> delta = std::move(dz);
    for (std::size_t l = net.n_layers(); l-- > 0;) {
        const std::size_t fi = net.fan_in(l), fo = net.fan_out(l);
        const auto& x = acts[l];
        double* gW = G.data() + net.weight_offset(l);
        double* gb = G.data() + net.bias_offset(l);
        for (std::size_t i = 0; i < m; ++i) {
            const double* di = delta.data() + i * fo;
            const double* xi = x.data() + i * fi;
            for (std::size_t j = 0; j < fo; ++j) gb[j] += di[j];
            for (std::size_t k = 0; k < fi; ++k) {
                const double xv = xi[k];
                double* gWk = gW + k * fo;
                for (std::size_t j = 0; j < fo; ++j) gWk[j] += xv * di[j];
            }
        }
        if (l == 0) break;
        // Propagate through W and the tanh of the previous layer.
        const double* W = net.weights(l).data();
        std::vector<double> prev(m * fi);
        for (std::size_t i = 0; i < m; ++i) {
            const double* di = delta.data() + i * fo;
            const double* xi = x.data() + i * fi;
            for (std::size_t k = 0; k < fi; ++k) {
                const double* Wk = W + k * fo;
                double s = 0.0;
                for (std::size_t j = 0; j < fo; ++j) s += Wk[j] * di[j];
                prev[i * fi + k] = s * (1.0 - xi[k] * xi[k]);
            }
        }
        delta = std::move(prev);
    }
    return lb;
}

// --- optimizer -------------------------------------------------------------

struct RmsPropState {
    std::vector<double> accumulator;
    double decay = 0.9;
    double epsilon = 1e-8;
    double eta = 1e-3;

    static RmsPropState for_network(const Mlp& net, double eta = 1e-3, double decay = 0.9, double epsilon = 1e-8) {
        if (!(decay > 0.0 && decay < 1.0)) throw DomainError("RMSProp decay must lie in (0, 1)");
        if (!(epsilon > 0.0)) throw DomainError("RMSProp epsilon must be > 0");
        if (!(eta > 0.0)) throw DomainError("learning rate must be > 0");
        return {std::vector<double>(net.params().size(), 0.0), decay, epsilon, eta};
    }
};

inline void rmsprop_step(Mlp& net, RmsPropState& state, std::span<const double> grad) {
    auto& p = net.params();
    if (grad.size() != p.size() || state.accumulator.size() != p.size())
        throw DomainError("gradient / optimizer state shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i];
        double& acc = state.accumulator[i];
        acc = state.decay * acc + (1.0 - state.decay) * g * g;
        p[i] -= state.eta * g / (std::sqrt(acc) + state.epsilon);
    }
}

// --- artifact --------------------------------------------------------------

inline constexpr std::string_view kMlpMagic = "regpinn-mlp";
inline constexpr int kMlpVersion = 1;

/// Text container; all reals printed with 17 significant digits so a
/// save/load round trip reproduces every parameter bit for bit.
inline void save_mlp(std::ostream& os, const Mlp& net) {
    const auto old = os.precision(17);
    os << kMlpMagic << ' ' << kMlpVersion << '\n';
    os << "activation " << Mlp::activation << '\n';
    os << "sizes " << net.sizes().size();
    for (auto s : net.sizes()) os << ' ' << s;
    os << "\ninput_mean " << net.norm.in_mean[0] << ' ' << net.norm.in_mean[1] << ' ' << net.norm.in_mean[2];
    os << "\ninput_std " << net.norm.in_std[0] << ' ' << net.norm.in_std[1] << ' ' << net.norm.in_std[2];
    os << "\noutput_mean " << net.norm.out_mean << "\noutput_std " << net.norm.out_std;
    os << "\nparams " << net.params().size() << '\n';
    for (double v : net.params()) os << v << '\n';
    os.precision(old);
}

inline Mlp load_mlp(std::istream& is) {
    auto fail = [](const std::string& what) { return ParseError("model artifact", 0, what); };
    std::string word;
    int version = 0;
    if (!(is >> word >> version) || word != kMlpMagic) throw fail("not a regpinn network file");
    if (version != kMlpVersion) throw fail("unsupported version " + std::to_string(version));
    auto expect = [&](std::string_view key) {
        if (!(is >> word) || word != key) throw fail("expected '" + std::string(key) + "'");
    };
    expect("activation");
    if (!(is >> word) || word != Mlp::activation) throw fail("unsupported activation '" + word + "'");
    expect("sizes");
    std::size_t n = 0;
    if (!(is >> n) || n < 2 || n > 64) throw fail("bad layer count");
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes)
        if (!(is >> s)) throw fail("bad layer size");
    Mlp net(sizes);
    auto read_real = [&](double& v) {
        if (!(is >> word)) throw fail("truncated file");
        char* end = nullptr;
        v = std::strtod(word.c_str(), &end);
        if (end != word.c_str() + word.size()) throw fail("bad number '" + word + "'");
    };
    expect("input_mean");
    for (auto& v : net.norm.in_mean) read_real(v);
    expect("input_std");
    for (auto& v : net.norm.in_std) read_real(v);
    expect("output_mean");
    read_real(net.norm.out_mean);
    expect("output_std");
    read_real(net.norm.out_std);
    expect("params");
    std::size_t count = 0;
    if (!(is >> count) || count != net.params().size()) throw fail("parameter count does not match layer sizes");
    for (auto& v : net.params()) read_real(v);
    return net;
}

} // namespace regpinn
