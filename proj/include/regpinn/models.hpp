// Closed-form empirical magnetopause models and standoff grids.
//
// The boundary shape is r = r0 * (2 / (1 + cos theta))^alpha with r0 and alpha
// driven by the IMF north-south component (Bz, nT) and the solar wind dynamic
// pressure (Dp, nPa). Two parameterizations are provided: the single-tanh
// Shue et al. (1998) form and a two-tanh refit that lets r0 decay again for
// northward Bz.
#pragma once

#include <regpinn/error.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

namespace regpinn {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDegToRad = kPi / 180.0;
/// Largest angle accepted by boundary_r; the shape diverges at theta = pi.
inline constexpr double kThetaMax = 165.0 * kDegToRad;

/// Point on the axisymmetric boundary: radial distance (Re) and angle from
/// the Earth-Sun line (radians).
struct PolarPoint {
    double r = 0.0;
    double theta = 0.0;
};

struct BoundaryParams {
    double r0 = 0.0;    ///< subsolar standoff distance, Re
    double alpha = 0.0; ///< tail flaring exponent
};

struct DriverInput {
    double bz = 0.0; ///< nT
    double dp = 0.0; ///< nPa, must be > 0
};

/// Network/model input row. theta in radians.
struct Features {
    double bz = 0.0;
    double dp = 0.0;
    double theta = 0.0;
};

/// r0 = (a0 + a1 tanh(a2 (Bz + a3))) Dp^p_r,  alpha = (b0 + b1 Bz)(1 + b2 ln Dp)
struct ShueForm {
    double a0 = 10.22;
    double a1 = 1.29;
    double a2 = 0.184;
    double a3 = 8.14;
    double p_r = -1.0 / 6.6;
    double b0 = 0.58;
    double b1 = -0.007;
    double b2 = 0.024;

    static constexpr std::string_view id = "shue";
    bool operator==(const ShueForm&) const = default;
};

/// r0 = (c0 + c1 tanh(c2 (Bz + c3)) - c4 tanh(c5 (Bz - c6))) Dp^q_r,
/// alpha = (d0 + d1 Bz) Dp^q_a
struct OverfitForm {
    double c0 = 9.332;
    double c1 = 1.308;
    double c2 = 0.213;
    double c3 = 11.191;
    double c4 = 0.568;
    double c5 = 0.479;
    double c6 = 7.188;
    double q_r = -1.0 / 6.22;
    double d0 = 0.493;
    double d1 = -3.5e-4;
    double q_a = 1.0 / 11.92;

    static constexpr std::string_view id = "overfit";
    bool operator==(const OverfitForm&) const = default;
};

using EmpiricalForm = std::variant<ShueForm, OverfitForm>;

namespace detail {

inline void require_finite(double v, const char* field) {
    if (!std::isfinite(v)) throw DomainError(std::string(field) + " is not finite");
}

inline void check_drivers(const DriverInput& in) {
    require_finite(in.bz, "bz");
    require_finite(in.dp, "dp");
    if (in.dp <= 0.0) throw DomainError("dp must be > 0, got " + std::to_string(in.dp));
}

// Field tables keep name/member pairs in one place for packing and reporting.
template <class Form>
struct FormFields;

template <>
struct FormFields<ShueForm> {
    static constexpr std::size_t size = 8;
    static constexpr std::string_view names[size] = {"a0", "a1", "a2", "a3", "p_r", "b0", "b1", "b2"};
    static constexpr double ShueForm::*members[size] = {&ShueForm::a0, &ShueForm::a1, &ShueForm::a2,
                                                        &ShueForm::a3, &ShueForm::p_r, &ShueForm::b0,
                                                        &ShueForm::b1, &ShueForm::b2};
};

template <>
struct FormFields<OverfitForm> {
    static constexpr std::size_t size = 11;
    static constexpr std::string_view names[size] = {"c0", "c1", "c2", "c3", "c4", "c5",
                                                     "c6", "q_r", "d0", "d1", "q_a"};
    static constexpr double OverfitForm::*members[size] = {
        &OverfitForm::c0, &OverfitForm::c1, &OverfitForm::c2, &OverfitForm::c3,
        &OverfitForm::c4, &OverfitForm::c5, &OverfitForm::c6, &OverfitForm::q_r,
        &OverfitForm::d0, &OverfitForm::d1, &OverfitForm::q_a};
};

} // namespace detail

inline BoundaryParams shue_params(const DriverInput& in, const ShueForm& f = {}) {
    detail::check_drivers(in);
    const double r0 = (f.a0 + f.a1 * std::tanh(f.a2 * (in.bz + f.a3))) * std::pow(in.dp, f.p_r);
    const double alpha = (f.b0 + f.b1 * in.bz) * (1.0 + f.b2 * std::log(in.dp));
    return {r0, alpha};
}

inline BoundaryParams overfit_params(const DriverInput& in, const OverfitForm& f = {}) {
    detail::check_drivers(in);
    const double shape = f.c0 + f.c1 * std::tanh(f.c2 * (in.bz + f.c3)) - f.c4 * std::tanh(f.c5 * (in.bz - f.c6));
    const double r0 = shape * std::pow(in.dp, f.q_r);
    const double alpha = (f.d0 + f.d1 * in.bz) * std::pow(in.dp, f.q_a);
    return {r0, alpha};
}

inline BoundaryParams boundary_params(const DriverInput& in, const EmpiricalForm& form) {
    return std::visit(
        [&](const auto& f) -> BoundaryParams {
            if constexpr (std::is_same_v<std::decay_t<decltype(f)>, ShueForm>)
                return shue_params(in, f);
            else
                return overfit_params(in, f);
        },
        form);
}

/// Boundary radius at angle theta. theta must lie in [0, kThetaMax].
inline double boundary_r(double theta, const BoundaryParams& p) {
    if (!(theta >= 0.0 && theta <= kThetaMax))
        throw DomainError("theta must lie in [0, 165 deg], got " + std::to_string(theta) + " rad");
    if (theta == 0.0) return p.r0;
    return p.r0 * std::pow(2.0 / (1.0 + std::cos(theta)), p.alpha);
}

inline double predict_r(const EmpiricalForm& form, double bz, double dp, double theta) {
    return boundary_r(theta, boundary_params({bz, dp}, form));
}

inline std::string_view form_id(const EmpiricalForm& form) {
    return std::visit([](const auto& f) { return std::decay_t<decltype(f)>::id; }, form);
}

// --- coefficient vectors -------------------------------------------------

inline std::vector<std::string_view> coefficient_names(const EmpiricalForm& form) {
    return std::visit(
        [](const auto& f) {
            using Fields = detail::FormFields<std::decay_t<decltype(f)>>;
            return std::vector<std::string_view>(std::begin(Fields::names), std::end(Fields::names));
        },
        form);
}

inline std::vector<double> to_vector(const EmpiricalForm& form) {
    return std::visit(
        [](const auto& f) {
            using Fields = detail::FormFields<std::decay_t<decltype(f)>>;
            std::vector<double> v;
            v.reserve(Fields::size);
            for (auto m : Fields::members) v.push_back(f.*m);
            return v;
        },
        form);
}

/// Same alternative as `like`, with coefficients taken from `values`.
inline EmpiricalForm with_vector(const EmpiricalForm& like, std::span<const double> values) {
    return std::visit(
        [&](auto f) -> EmpiricalForm {
            using Fields = detail::FormFields<decltype(f)>;
            if (values.size() != Fields::size)
                throw DomainError("coefficient vector has " + std::to_string(values.size()) + " entries, expected " +
                                  std::to_string(Fields::size));
            for (std::size_t i = 0; i < Fields::size; ++i) f.*(Fields::members[i]) = values[i];
            return f;
        },
        like);
}

inline EmpiricalForm default_form(std::string_view id) {
    if (id == ShueForm::id) return ShueForm{};
    if (id == OverfitForm::id) return OverfitForm{};
    throw DomainError("unknown empirical model '" + std::string(id) + "'");
}

// --- model handles ---------------------------------------------------------

/// Model-agnostic predictor: anything that maps (bz, dp, theta) rows to r.
/// Empirical forms and trained networks both expose this, so evaluation code
/// never needs to know which kind of model it is scoring.
class ModelHandle {
public:
    using BatchFn = std::function<std::vector<double>(std::span<const Features>)>;

    ModelHandle() = default;
    ModelHandle(std::string id, BatchFn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    const std::string& id() const noexcept { return id_; }

    std::vector<double> predict(std::span<const Features> rows) const { return fn_(rows); }

    double predict(double bz, double dp, double theta) const {
        const Features row{bz, dp, theta};
        return fn_(std::span<const Features>(&row, 1)).front();
    }

private:
    std::string id_;
    BatchFn fn_;
};

inline ModelHandle make_handle(EmpiricalForm form, std::string id = {}) {
    if (id.empty()) id = std::string(form_id(form));
    return ModelHandle(std::move(id), [form = std::move(form)](std::span<const Features> rows) {
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& x : rows) out.push_back(predict_r(form, x.bz, x.dp, x.theta));
        return out;
    });
}

// --- standoff grids --------------------------------------------------------

struct AxisRange {
    double lo = 0.0;
    double hi = 0.0;
};

/// Subsolar standoff over the (Bz, Dp) plane; values[i_bz * n_dp + i_dp].
struct StandoffGrid {
    std::string model_id;
    std::vector<double> bz_axis;
    std::vector<double> dp_axis;
    std::vector<double> values;

    double at(std::size_t i_bz, std::size_t i_dp) const { return values[i_bz * dp_axis.size() + i_dp]; }
};

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = (i + 1 == n) ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

/// Figure-style default: Bz in [-18, 15] nT, Dp in [0.5, 18] nPa, 100 x 100.
inline StandoffGrid standoff_grid(const ModelHandle& model, AxisRange bz = {-18.0, 15.0},
                                  AxisRange dp = {0.5, 18.0}, std::size_t n_bz = 100, std::size_t n_dp = 100) {
    if (!(std::isfinite(bz.lo) && std::isfinite(bz.hi) && bz.lo < bz.hi))
        throw DomainError("bz range must be finite with lo < hi");
    if (!(std::isfinite(dp.lo) && std::isfinite(dp.hi) && dp.lo < dp.hi))
        throw DomainError("dp range must be finite with lo < hi");
    if (dp.lo <= 0.0) throw DomainError("dp range must be strictly positive");
    if (n_bz < 2 || n_dp < 2) throw DomainError("grid needs at least 2 nodes per axis");

    StandoffGrid g;
    g.model_id = model.id();
    g.bz_axis = linspace(bz.lo, bz.hi, n_bz);
    g.dp_axis = linspace(dp.lo, dp.hi, n_dp);
    std::vector<Features> rows;
    rows.reserve(n_bz * n_dp);
    for (double b : g.bz_axis)
        for (double d : g.dp_axis) rows.push_back({b, d, 0.0});
    g.values = model.predict(rows);
    return g;
}

inline void write_grid_csv(std::ostream& os, const StandoffGrid& g) {
    const auto old = os.precision(17);
    os << "bz,dp,r0\n";
    for (std::size_t i = 0; i < g.bz_axis.size(); ++i)
        for (std::size_t j = 0; j < g.dp_axis.size(); ++j)
            os << g.bz_axis[i] << ',' << g.dp_axis[j] << ',' << g.at(i, j) << '\n';
    os.precision(old);
}

inline void write_grid_meta(std::ostream& os, const StandoffGrid& g) {
    nlohmann::ordered_json j;
    j["bz_min"] = g.bz_axis.front();
    j["bz_max"] = g.bz_axis.back();
    j["dp_min"] = g.dp_axis.front();
    j["dp_max"] = g.dp_axis.back();
    j["n_bz"] = g.bz_axis.size();
    j["n_dp"] = g.dp_axis.size();
    j["model_id"] = g.model_id;
    os << j.dump(2) << '\n';
}

} // namespace regpinn
