// Test-only reference computations, kept independent of the library paths
// they check.
#pragma once

#include <regpinn/dataio.hpp>
#include <regpinn/nn.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace oracle {

// Bin membership by a plain double loop over (record, bin).
inline std::vector<std::vector<std::size_t>> bin_members(std::span<const regpinn::CrossingRecord> records,
                                                         std::span<const regpinn::Bin> bins) {
    std::vector<std::vector<std::size_t>> out(bins.size());
    for (std::size_t b = 0; b < bins.size(); ++b)
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& d = *records[i].drivers;
            if (bins[b].bz_lo <= d.bz && d.bz < bins[b].bz_hi && bins[b].dp_lo <= d.dp && d.dp < bins[b].dp_hi)
                out[b].push_back(i);
        }
    return out;
}

// Number of windows [lo + k*stride, lo + k*stride + width), start < hi, containing v.
inline std::size_t windows_covering(double v, double lo, double hi, double stride, double width) {
    std::size_t n = 0;
    for (std::size_t k = 0; lo + k * stride < hi; ++k) {
        const double s = lo + k * stride;
        if (s <= v && v < s + width) ++n;
    }
    return n;
}

// Composite loss recomputed from the raw parameters in extended precision,
// without going through the library's forward pass.
inline long double loss_ld(const regpinn::Mlp& net, std::span<const regpinn::Features> x, std::span<const double> y,
                           std::span<const double> y_reg, double lambda, const regpinn::PenaltyKind& pen) {
    using LD = long double;
    const auto& sizes = net.sizes();
    const auto& n = net.norm;
    LD data = 0, reg = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<LD> a{(LD(x[i].bz) - n.in_mean[0]) / n.in_std[0], (LD(x[i].dp) - n.in_mean[1]) / n.in_std[1],
                          (LD(x[i].theta) - n.in_mean[2]) / n.in_std[2]};
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const auto W = net.weights(l);
            const auto b = net.biases(l);
            std::vector<LD> z(sizes[l + 1]);
            for (std::size_t j = 0; j < z.size(); ++j) {
                LD s = b[j];
                for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * W[k * z.size() + j];
                z[j] = l + 2 < sizes.size() ? std::tanh(s) : s;
            }
            a = std::move(z);
        }
        const LD yhat = n.out_mean + LD(n.out_std) * a[0];
        data += (yhat - y[i]) * (yhat - y[i]);
        if (!y_reg.empty()) reg += (yhat - y_reg[i]) * (yhat - y_reg[i]);
    }
    const LD m = static_cast<LD>(x.size());
    LD l1 = 0, l2 = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        for (double w : net.weights(l)) {
            l1 += std::abs(LD(w));
            l2 += LD(w) * w;
        }
    using Kind = regpinn::PenaltyKind::Kind;
    LD penalty = 0;
    if (pen.kind == Kind::L1) penalty = pen.strength * l1;
    if (pen.kind == Kind::L2) penalty = pen.strength * l2;
    if (pen.kind == Kind::Elastic) penalty = pen.strength * (pen.mix * l1 + (1 - LD(pen.mix)) * l2);
    return data / m + (y_reg.empty() ? 0 : lambda * reg / m) + penalty;
}

// Central finite differences of the extended-precision loss.
inline std::vector<double> fd_gradient(const regpinn::Mlp& net, std::span<const regpinn::Features> x,
                                       std::span<const double> y, std::span<const double> y_reg, double lambda,
                                       const regpinn::PenaltyKind& pen, double h) {
    regpinn::Mlp probe = net;
    std::vector<double> g(net.params().size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double p0 = probe.params()[i];
        probe.params()[i] = p0 + h;
        const long double up = loss_ld(probe, x, y, y_reg, lambda, pen);
        probe.params()[i] = p0 - h;
        const long double dn = loss_ld(probe, x, y, y_reg, lambda, pen);
        probe.params()[i] = p0;
        // the actual spacing of the perturbed doubles, not the nominal 2h
        g[i] = static_cast<double>((up - dn) / ((long double)(p0 + h) - (long double)(p0 - h)));
    }
    return g;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // L1 kink: |w| within 2h of zero
};

// Largest |analytic - fd| / max(|analytic|, |fd|, floor) over all parameters.
inline GradCheck grad_check(const regpinn::Mlp& net, std::span<const regpinn::Features> x, std::span<const double> y,
                            std::span<const double> y_reg, double lambda, const regpinn::PenaltyKind& pen,
                            double h = 1e-5, double floor = 1e-8) {
    std::vector<double> analytic;
    regpinn::loss_and_gradients(net, x, y, y_reg, lambda, pen, &analytic);
    const auto fd = fd_gradient(net, x, y, y_reg, lambda, pen, h);
    const auto weights = net.weight_mask();
    const bool kinked = pen.kind == regpinn::PenaltyKind::Kind::L1 || pen.kind == regpinn::PenaltyKind::Kind::Elastic;
    GradCheck out;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        if (kinked && weights[i] && std::abs(net.params()[i]) < 2.0 * h) {
            ++out.skipped;
            continue;
        }
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), floor});
        out.max_rel = std::max(out.max_rel, std::abs(analytic[i] - fd[i]) / denom);
        ++out.checked;
    }
    return out;
}

} // namespace oracle
