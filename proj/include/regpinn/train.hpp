// Training loop for vanilla and regression-regularized networks.
#pragma once

#include <regpinn/dataio.hpp>
#include <regpinn/error.hpp>
#include <regpinn/models.hpp>
#include <regpinn/nn.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace regpinn {

/// splitmix64 finalizer; derives independent streams from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded uniform shuffle; the first ceil(fraction * n) indices train.
inline Split split(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split fraction must lie in (0, 1)");
    if (n < 2) throw DomainError("need at least two records to split");
    const auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    if (n_train == 0 || n_train >= n)
        throw DomainError("split of " + std::to_string(n) + " records leaves an empty side");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 1));
    std::shuffle(order.begin(), order.end(), rng);
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return s;
}

struct TrainConfig {
    double lambda = 1.0;
    double eta = 3e-4;
    std::size_t max_epochs = 500;
    double epsilon_threshold = 0.0; ///< stop once the training l_total is at or below it
    double split_fraction = 0.8;
    std::uint64_t seed = 7;
    std::size_t batch_size = 256;
    PenaltyKind penalty;
    std::optional<EmpiricalForm> regularizer = EmpiricalForm{ShueForm{}};
    std::vector<std::size_t> layer_sizes = default_layer_sizes();
    double rms_decay = 0.9;
    double rms_epsilon = 1e-8;

    void validate() const {
        if (!(lambda >= 0.0 && std::isfinite(lambda))) throw DomainError("lambda must be finite and >= 0");
        if (!(eta > 0.0)) throw DomainError("learning rate must be > 0");
        if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw DomainError("split fraction must lie in (0, 1)");
        if (batch_size == 0) throw DomainError("batch size must be > 0");
        if (!(epsilon_threshold >= 0.0)) throw DomainError("epsilon threshold must be >= 0");
        if (!(penalty.strength >= 0.0)) throw DomainError("penalty strength must be >= 0");
    }
};

enum class StopReason { Threshold, MaxEpochs, NonFinite };

inline std::string_view to_string(StopReason r) {
    switch (r) {
    case StopReason::Threshold: return "threshold";
    case StopReason::MaxEpochs: return "max_epochs";
    case StopReason::NonFinite: return "non_finite";
    }
    return "?";
}

struct TrainResult {
    Mlp model;
    std::vector<LossBreakdown> history;      ///< full training split, end of each epoch
    std::vector<LossBreakdown> test_history; ///< masked split, end of each epoch
    std::size_t epochs_run = 0;
    StopReason stop = StopReason::MaxEpochs;
    std::string message; ///< set when training aborted
    Split split;
};

namespace detail {

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

} // namespace detail

/// Mini-batch RMSProp on  l_data + lambda * l_reg + penalty.
///
/// The regression targets come from the configured empirical model evaluated
/// on the inputs only. When lambda is 0 or no regularizer is configured the
/// regression term is absent, which makes this exactly the vanilla network.
/// One iteration is one epoch; after each epoch the loss over the whole
/// training split decides whether to stop.
inline TrainResult train_reg_pinn(std::span<const CrossingRecord> records, const TrainConfig& config) {
    config.validate();
    TrainResult res;
    res.split = split(records.size(), config.split_fraction, config.seed);

    const auto features = features_of(records);
    const auto targets = observed_r(records);
    const auto x_train = detail::gather<Features>(features, res.split.train);
    const auto y_train = detail::gather<double>(targets, res.split.train);
    const auto x_test = detail::gather<Features>(features, res.split.test);
    const auto y_test = detail::gather<double>(targets, res.split.test);

    const bool with_reg = config.regularizer.has_value() && config.lambda != 0.0;
    std::vector<double> reg_train, reg_test;
    if (with_reg) {
        const auto handle = make_handle(*config.regularizer);
        reg_train = handle.predict(x_train);
        reg_test = handle.predict(x_test);
    }

    Mlp net = mlp_new(config.layer_sizes, derive_seed(config.seed, 2));
    net.norm = fit_normalization(x_train, y_train);
    auto opt = RmsPropState::for_network(net, config.eta, config.rms_decay, config.rms_epsilon);

    const std::size_t n = x_train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(config.seed, 3));

    std::vector<Features> bx;
    std::vector<double> by, breg, grad;
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t end = std::min(n, start + config.batch_size);
            bx.clear();
            by.clear();
            breg.clear();
            for (std::size_t i = start; i < end; ++i) {
                bx.push_back(x_train[order[i]]);
                by.push_back(y_train[order[i]]);
                if (with_reg) breg.push_back(reg_train[order[i]]);
            }
            loss_and_gradients(net, bx, by, breg, config.lambda, config.penalty, &grad);
            rmsprop_step(net, opt, grad);
        }

        const auto lb = loss_and_gradients(net, x_train, y_train, reg_train, config.lambda, config.penalty, nullptr);
        res.history.push_back(lb);
        if (!x_test.empty())
            res.test_history.push_back(
                loss_and_gradients(net, x_test, y_test, reg_test, config.lambda, config.penalty, nullptr));
        res.epochs_run = epoch + 1;
        if (!lb.finite()) {
            res.stop = StopReason::NonFinite;
            res.message = "non-finite loss at epoch " + std::to_string(epoch + 1);
            break;
        }
        if (lb.l_total <= config.epsilon_threshold) {
            res.stop = StopReason::Threshold;
            break;
        }
    }
    res.model = std::move(net);
    return res;
}

/// Data loss only (plus any weight penalty).
inline TrainResult train_vanilla(std::span<const CrossingRecord> records, TrainConfig config) {
    config.regularizer.reset();
    config.lambda = 0.0;
    return train_reg_pinn(records, config);
}

} // namespace regpinn
