// RMSE metrics, parameter-binned error curves, lambda sweeps and
// model-comparison tables. Nothing here mutates records or models.
#pragma once

#include <regpinn/dataio.hpp>
#include <regpinn/error.hpp>
#include <regpinn/models.hpp>
#include <regpinn/nn.hpp>
#include <regpinn/train.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace regpinn {

inline double rmse(const ModelHandle& model, std::span<const CrossingRecord> records) {
    if (records.empty()) throw DomainError("cannot compute RMSE of an empty record set");
    const auto pred = model.predict(features_of(records));
    double s = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const double e = records[i].polar.r - pred[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(records.size()));
}

enum class Axis { Theta, Dp, Bz };

inline std::string_view to_string(Axis a) {
    switch (a) {
    case Axis::Theta: return "theta";
    case Axis::Dp: return "dp";
    case Axis::Bz: return "bz";
    }
    return "?";
}

/// Theta in radians at 15 deg steps over [0, 165]; Bz at 3 nT over [-18, 15];
/// Dp at 1 nPa over [0.5, 8.5].
inline std::vector<double> default_edges(Axis axis) {
    std::vector<double> e;
    switch (axis) {
    case Axis::Theta:
        for (int d = 0; d <= 165; d += 15) e.push_back(d * kDegToRad);
        break;
    case Axis::Bz:
        for (int b = -18; b <= 15; b += 3) e.push_back(b);
        break;
    case Axis::Dp:
        for (int k = 0; k <= 8; ++k) e.push_back(0.5 + k);
        break;
    }
    return e;
}

struct CurvePoint {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    std::optional<double> rmse; ///< absent for empty bins

    double center() const { return 0.5 * (lo + hi); }
};

/// RMSE in non-overlapping half-open bins [edges[i], edges[i+1]) on one axis.
inline std::vector<CurvePoint> binned_rmse(const ModelHandle& model, std::span<const CrossingRecord> records, Axis axis,
                                           std::span<const double> edges) {
    if (edges.size() < 2) throw DomainError("need at least two bin edges");
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
        if (!(edges[i] < edges[i + 1])) throw DomainError("bin edges must be strictly increasing");

    std::vector<CurvePoint> curve(edges.size() - 1);
    std::vector<double> sq(curve.size(), 0.0);
    for (std::size_t b = 0; b < curve.size(); ++b) {
        curve[b].lo = edges[b];
        curve[b].hi = edges[b + 1];
    }
    if (!records.empty()) {
        const auto pred = model.predict(features_of(records));
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            const double v = axis == Axis::Theta ? r.polar.theta : axis == Axis::Dp ? r.drivers->dp : r.drivers->bz;
            if (!(v >= edges.front() && v < edges.back())) continue;
            const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
            const double e = r.polar.r - pred[i];
            sq[b] += e * e;
            ++curve[b].count;
        }
    }
    for (std::size_t b = 0; b < curve.size(); ++b)
        if (curve[b].count) curve[b].rmse = std::sqrt(sq[b] / static_cast<double>(curve[b].count));
    return curve;
}

struct EvalReport {
    std::string model_id;
    std::string dataset_id;
    std::size_t n_records = 0;
    double rmse = 0.0;
    std::vector<std::pair<Axis, std::vector<CurvePoint>>> curves;
};

inline EvalReport evaluate(const ModelHandle& model, std::span<const CrossingRecord> records, std::string dataset_id) {
    EvalReport rep;
    rep.model_id = model.id();
    rep.dataset_id = std::move(dataset_id);
    rep.n_records = records.size();
    rep.rmse = rmse(model, records);
    for (Axis a : {Axis::Theta, Axis::Dp, Axis::Bz}) {
        const auto edges = default_edges(a);
        rep.curves.emplace_back(a, binned_rmse(model, records, a, edges));
    }
    return rep;
}

/// `axis,lo,hi,center,count,rmse_re`, with an `overall` row first.
inline void write_report_csv(std::ostream& os, const EvalReport& rep) {
    const auto old = os.precision(12);
    os << "axis,lo,hi,center,count,rmse_re\n";
    os << "overall,,,," << rep.n_records << ',' << rep.rmse << '\n';
    for (const auto& [axis, curve] : rep.curves)
        for (const auto& p : curve) {
            os << to_string(axis) << ',' << p.lo << ',' << p.hi << ',' << p.center() << ',' << p.count << ',';
            if (p.rmse) os << *p.rmse;
            os << '\n';
        }
    os.precision(old);
}

inline void write_report_text(std::ostream& os, const EvalReport& rep) {
    os << "model   " << rep.model_id << "\ndataset " << rep.dataset_id << "\nrecords " << rep.n_records << "\nrmse    "
       << std::fixed << std::setprecision(4) << rep.rmse << " Re\n";
    for (const auto& [axis, curve] : rep.curves) {
        os << '\n' << to_string(axis) << (axis == Axis::Theta ? " (deg)" : "") << '\n';
        for (const auto& p : curve) {
            const double scale = axis == Axis::Theta ? 1.0 / kDegToRad : 1.0;
            os << "  [" << std::setw(7) << std::setprecision(2) << p.lo * scale << ", " << std::setw(7) << p.hi * scale
               << ")  n=" << std::setw(6) << p.count << "  rmse=";
            if (p.rmse)
                os << std::setprecision(4) << *p.rmse;
            else
                os << "-";
            os << '\n';
        }
    }
    os.unsetf(std::ios::floatfield);
}

// --- protocols, sweeps and tables -------------------------------------------

/// A split protocol is named by the share of records held out for testing.
struct Protocol {
    double train_fraction = 0.8;
    std::string name() const {
        return "masked" + std::to_string(static_cast<int>(std::lround((1.0 - train_fraction) * 100.0)));
    }
};

inline std::vector<Protocol> default_protocols() { return {{0.8}, {0.2}}; }

inline std::vector<CrossingRecord> subset(std::span<const CrossingRecord> records, std::span<const std::size_t> idx) {
    std::vector<CrossingRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(records[i]);
    return out;
}

/// RMSE of the trained network on the records it never saw.
inline double masked_rmse(std::span<const CrossingRecord> records, const TrainResult& result) {
    return rmse(make_handle(result.model), subset(records, result.split.test));
}

struct SweepRow {
    double lambda = 0.0;
    std::string protocol;
    double rmse = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

/// Trains one network per (lambda, protocol) with the same seed throughout
/// and reports the masked-split RMSE.
inline SweepResult lambda_sweep(std::span<const CrossingRecord> records, const TrainConfig& base,
                                std::span<const double> lambdas,
                                const std::vector<Protocol>& protocols = default_protocols()) {
    if (lambdas.empty()) throw DomainError("lambda list is empty");
    for (double l : lambdas)
        if (!(l >= 0.0)) throw DomainError("lambda values must be >= 0");
    SweepResult out;
    for (double l : lambdas)
        for (const auto& p : protocols) {
            TrainConfig cfg = base;
            cfg.lambda = l;
            cfg.split_fraction = p.train_fraction;
            const auto res = train_reg_pinn(records, cfg);
            if (res.stop == StopReason::NonFinite) throw NumericalError(res.message + " (lambda " + std::to_string(l) + ")");
            out.rows.push_back({l, p.name(), masked_rmse(records, res)});
        }
    return out;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
    const auto old = os.precision(12);
    os << "lambda,protocol,rmse_re\n";
    for (const auto& r : s.rows) os << r.lambda << ',' << r.protocol << ',' << r.rmse << '\n';
    os.precision(old);
}

/// A table row: either a fixed model or a training recipe.
struct ModelEntry {
    std::string name;
    std::variant<ModelHandle, TrainConfig> model;
};

struct ComparisonRow {
    std::string name;
    std::vector<double> rmse;      ///< per protocol
    std::vector<double> reduction; ///< 1 - rmse / baseline rmse, per protocol
};

struct ComparisonTable {
    std::vector<std::string> protocols;
    std::vector<ComparisonRow> rows; ///< rows[0] is the Shue baseline
};

/// Every row uses the same seed, so all models see identical splits. Fixed
/// models are scored on each protocol's masked subset; recipes are trained on
/// the complementary subset first.
inline ComparisonTable comparison_table(std::span<const CrossingRecord> records, const std::vector<ModelEntry>& entries,
                                        const std::vector<Protocol>& protocols, std::uint64_t seed) {
    std::vector<ModelEntry> all;
    all.push_back({"Baseline", make_handle(ShueForm{}, "shue")});
    all.insert(all.end(), entries.begin(), entries.end());

    ComparisonTable t;
    for (const auto& p : protocols) t.protocols.push_back(p.name());
    for (const auto& e : all) t.rows.push_back({e.name, {}, {}});

    for (const auto& p : protocols) {
        const auto s = split(records.size(), p.train_fraction, seed);
        const auto masked = subset(records, s.test);
        for (std::size_t r = 0; r < all.size(); ++r) {
            double value = 0.0;
            if (const auto* h = std::get_if<ModelHandle>(&all[r].model)) {
                value = rmse(*h, masked);
            } else {
                TrainConfig cfg = std::get<TrainConfig>(all[r].model);
                cfg.seed = seed;
                cfg.split_fraction = p.train_fraction;
                const auto res = train_reg_pinn(records, cfg);
                if (res.stop == StopReason::NonFinite) throw NumericalError(all[r].name + ": " + res.message);
                value = masked_rmse(records, res);
            }
            t.rows[r].rmse.push_back(value);
        }
    }
    for (auto& row : t.rows)
        for (std::size_t c = 0; c < row.rmse.size(); ++c) {
            const double base = t.rows.front().rmse[c];
            row.reduction.push_back(base > 0.0 ? 1.0 - row.rmse[c] / base : 0.0);
        }
    return t;
}

inline void write_table_text(std::ostream& os, const ComparisonTable& t) {
    std::size_t w = 5;
    for (const auto& r : t.rows) w = std::max(w, r.name.size());
    os << std::left << std::setw(static_cast<int>(w)) << "Model" << std::right;
    for (const auto& p : t.protocols) os << "  " << std::setw(12) << ("RMSE " + p) << "  " << std::setw(9) << "reduct.";
    os << '\n';
    for (const auto& r : t.rows) {
        os << std::left << std::setw(static_cast<int>(w)) << r.name << std::right << std::fixed;
        for (std::size_t c = 0; c < r.rmse.size(); ++c)
            os << "  " << std::setw(9) << std::setprecision(4) << r.rmse[c] << " Re" << "  " << std::setw(8)
               << std::setprecision(1) << 100.0 * r.reduction[c] << '%';
        os << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

inline void write_table_csv(std::ostream& os, const ComparisonTable& t) {
    const auto old = os.precision(12);
    os << "model";
    for (const auto& p : t.protocols) os << ",rmse_" << p << ",reduction_" << p;
    os << '\n';
    for (const auto& r : t.rows) {
        os << r.name;
        for (std::size_t c = 0; c < r.rmse.size(); ++c) os << ',' << r.rmse[c] << ',' << r.reduction[c];
        os << '\n';
    }
    os.precision(old);
}

} // namespace regpinn
