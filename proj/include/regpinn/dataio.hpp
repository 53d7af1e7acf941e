// Crossing / solar-wind ingestion, 5-minute merge, range filtering,
// overlapping (Bz, Dp) binning and seeded synthetic datasets.
#pragma once

#include <regpinn/error.hpp>
#include <regpinn/models.hpp>
#include <regpinn/timeutil.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace regpinn {

inline constexpr std::int64_t kCadenceSeconds = 300;

struct GsmPosition {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

struct CrossingRecord {
    std::int64_t timestamp = 0; ///< UTC epoch seconds
    GsmPosition pos;
    PolarPoint polar;
    std::optional<DriverInput> drivers; ///< empty until merged
    std::string source;
    std::optional<double> r_true; ///< noiseless radius, synthetic data only

    Features features() const { return {drivers->bz, drivers->dp, polar.theta}; }
};

struct SolarWindSample {
    std::int64_t timestamp = 0; ///< multiple of 300 s
    double bz = 0.0;
    double dp = 0.0;
    bool flagged = false; ///< fill value or unusable pressure
};

/// A value at or beyond the threshold (in magnitude) is treated as missing.
struct FillValues {
    double bz = 99.99;
    double dp = 99.99;
};

struct Diagnostic {
    std::size_t line = 0;
    std::string message;
};

template <class Row>
struct ParseResult {
    std::vector<Row> rows;
    std::vector<Diagnostic> warnings;
};

inline PolarPoint to_polar(const GsmPosition& p) {
    if (!(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z)))
        throw DomainError("position has non-finite components");
    const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    if (r == 0.0) throw DomainError("position is the zero vector");
    return {r, std::acos(std::clamp(p.x / r, -1.0, 1.0))};
}

/// Inverse of to_polar on the y = 0 half-plane (z >= 0).
inline GsmPosition from_polar(const PolarPoint& p) {
    return {p.r * std::cos(p.theta), 0.0, p.r * std::sin(p.theta)};
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    return in;
}

inline void expect_header(std::istream& in, std::string_view name, const std::vector<std::string_view>& required,
                          std::vector<std::string>& header) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(std::string(name), 1, "missing header");
    header.clear();
    for (auto f : split_csv(line)) header.emplace_back(f);
    if (header.size() < required.size() || !std::equal(required.begin(), required.end(), header.begin()))
        throw ParseError(std::string(name), 1, "malformed header '" + std::string(trim(line)) + "'");
}

} // namespace detail

// --- crossings -------------------------------------------------------------

inline const std::vector<std::string_view>& crossing_columns() {
    static const std::vector<std::string_view> cols{"timestamp", "x_gsm_re", "y_gsm_re", "z_gsm_re", "source"};
    return cols;
}

/// Reads crossings, merged datasets and synthetic datasets. The first five
/// columns are mandatory; `bz_nt,dp_npa` and `r_true_re` are picked up when
/// present. Rows with non-finite values are skipped and reported as warnings;
/// rows that cannot be parsed at all throw ParseError with the line number.
inline ParseResult<CrossingRecord> read_crossings(std::istream& in, std::string_view name) {
    std::vector<std::string> header;
    detail::expect_header(in, name, crossing_columns(), header);
    const bool has_drivers = header.size() >= 7 && header[5] == "bz_nt" && header[6] == "dp_npa";
    const bool has_truth = has_drivers && header.size() >= 8 && header[7] == "r_true_re";
    const std::size_t n_cols = 5 + (has_drivers ? 2 : 0) + (has_truth ? 1 : 0);
    if (header.size() != n_cols)
        throw ParseError(std::string(name), 1, "unexpected columns after '" + header[n_cols - 1] + "'");

    ParseResult<CrossingRecord> out;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::is_blank(line)) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != n_cols)
            throw ParseError(std::string(name), lineno,
                             "expected " + std::to_string(n_cols) + " fields, got " + std::to_string(f.size()));
        CrossingRecord rec;
        const auto t = parse_iso8601(f[0]);
        if (!t) throw ParseError(std::string(name), lineno, "bad timestamp '" + std::string(f[0]) + "'");
        if (*t < 0) throw ParseError(std::string(name), lineno, "timestamp before 1970");
        rec.timestamp = *t;
        std::vector<double> nums;
        for (std::size_t i = 1; i < n_cols; ++i) {
            if (i == 4) continue;
            const auto v = detail::parse_double(f[i]);
            if (!v) throw ParseError(std::string(name), lineno, "bad number '" + std::string(f[i]) + "'");
            nums.push_back(*v);
        }
        if (!std::all_of(nums.begin(), nums.end(), [](double v) { return std::isfinite(v); })) {
            out.warnings.push_back({lineno, "non-finite value, row rejected"});
            continue;
        }
        rec.pos = {nums[0], nums[1], nums[2]};
        rec.source = std::string(f[4]);
        try {
            rec.polar = to_polar(rec.pos);
        } catch (const DomainError& e) {
            out.warnings.push_back({lineno, std::string(e.what()) + ", row rejected"});
            continue;
        }
        if (has_drivers) {
            if (nums[4] <= 0.0) {
                out.warnings.push_back({lineno, "dp must be > 0, row rejected"});
                continue;
            }
            rec.drivers = DriverInput{nums[3], nums[4]};
        }
        if (has_truth) rec.r_true = nums[5];
        out.rows.push_back(std::move(rec));
    }
    return out;
}

inline ParseResult<CrossingRecord> parse_crossings(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    return read_crossings(in, path.string());
}

/// Writes the crossings schema, extended with drivers (and ground truth when
/// every record carries one).
inline void write_dataset(std::ostream& os, std::span<const CrossingRecord> records) {
    const bool drivers = !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) {
        return r.drivers.has_value();
    });
    const bool truth = drivers && std::all_of(records.begin(), records.end(), [](const auto& r) {
        return r.r_true.has_value();
    });
    const auto old = os.precision(17);
    os << "timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source";
    if (drivers) os << ",bz_nt,dp_npa";
    if (truth) os << ",r_true_re";
    os << '\n';
    for (const auto& r : records) {
        os << format_iso8601(r.timestamp) << ',' << r.pos.x << ',' << r.pos.y << ',' << r.pos.z << ',' << r.source;
        if (drivers) os << ',' << r.drivers->bz << ',' << r.drivers->dp;
        if (truth) os << ',' << *r.r_true;
        os << '\n';
    }
    os.precision(old);
}

// --- solar wind ------------------------------------------------------------

/// Reads `timestamp,bz_nt,dp_npa`. Off-cadence timestamps are snapped down to
/// the 300 s boundary with a warning; fill values flag the sample.
inline ParseResult<SolarWindSample> read_solarwind(std::istream& in, std::string_view name, FillValues fill = {}) {
    std::vector<std::string> header;
    detail::expect_header(in, name, {"timestamp", "bz_nt", "dp_npa"}, header);
    if (header.size() != 3) throw ParseError(std::string(name), 1, "unexpected extra columns");

    ParseResult<SolarWindSample> out;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::is_blank(line)) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3)
            throw ParseError(std::string(name), lineno, "expected 3 fields, got " + std::to_string(f.size()));
        const auto t = parse_iso8601(f[0]);
        if (!t) throw ParseError(std::string(name), lineno, "bad timestamp '" + std::string(f[0]) + "'");
        const auto bz = detail::parse_double(f[1]);
        const auto dp = detail::parse_double(f[2]);
        if (!bz || !dp) throw ParseError(std::string(name), lineno, "bad number");

        SolarWindSample s;
        s.timestamp = *t - ((*t % kCadenceSeconds) + kCadenceSeconds) % kCadenceSeconds;
        if (s.timestamp != *t) out.warnings.push_back({lineno, "timestamp snapped to 5-minute boundary"});
        s.bz = *bz;
        s.dp = *dp;
        s.flagged = !std::isfinite(s.bz) || !std::isfinite(s.dp) || std::abs(s.bz) >= fill.bz ||
                    std::abs(s.dp) >= fill.dp || s.dp <= 0.0;
        out.rows.push_back(s);
    }
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    return out;
}

inline ParseResult<SolarWindSample> parse_solarwind(const std::filesystem::path& path, FillValues fill = {}) {
    auto in = detail::open_input(path);
    return read_solarwind(in, path.string(), fill);
}

// --- merge -----------------------------------------------------------------

struct MergeResult {
    std::vector<CrossingRecord> records;
    std::size_t dropped = 0;
};

/// Attaches the solar-wind sample whose 5-minute window [t0, t0 + 300)
/// contains each crossing. Crossings without an unflagged sample are dropped.
inline MergeResult merge(std::span<const CrossingRecord> crossings, std::span<const SolarWindSample> solarwind) {
    MergeResult out;
    out.records.reserve(crossings.size());
    for (const auto& c : crossings) {
        const std::int64_t window = c.timestamp - ((c.timestamp % kCadenceSeconds) + kCadenceSeconds) % kCadenceSeconds;
        auto it = std::lower_bound(solarwind.begin(), solarwind.end(), window,
                                   [](const SolarWindSample& s, std::int64_t t) { return s.timestamp < t; });
        while (it != solarwind.end() && it->timestamp == window && it->flagged) ++it;
        if (it == solarwind.end() || it->timestamp != window) {
            ++out.dropped;
            continue;
        }
        CrossingRecord rec = c;
        rec.drivers = DriverInput{it->bz, it->dp};
        out.records.push_back(std::move(rec));
    }
    return out;
}

// --- range filter and binning ---------------------------------------------

/// Sliding-window bin layout. Windows on each axis start at lo + k * stride
/// for every start below hi and are half-open [start, start + width).
struct BinSpec {
    double bz_width = 3.0;
    double bz_stride = 1.0;
    double dp_width = 2.0;
    double dp_stride = 0.5;
    AxisRange bz_range{-18.0, 15.0};
    AxisRange dp_range{0.5, 8.5};

    void validate() const {
        if (!(bz_width > 0 && dp_width > 0)) throw DomainError("bin widths must be > 0");
        if (!(bz_stride > 0 && dp_stride > 0)) throw DomainError("bin strides must be > 0");
        if (bz_stride > bz_width || dp_stride > dp_width) throw DomainError("bin strides must not exceed widths");
        if (!(bz_range.lo < bz_range.hi && dp_range.lo < dp_range.hi)) throw DomainError("empty bin range");
    }
};

/// Keeps merged records with lo < Bz < hi and lo < Dp < hi (strict) whose
/// angle is inside the model domain [0, 165 deg].
inline std::vector<CrossingRecord> filter_range(std::span<const CrossingRecord> records, const BinSpec& spec) {
    std::vector<CrossingRecord> out;
    for (const auto& r : records) {
        if (!r.drivers) continue;
        const auto& d = *r.drivers;
        if (d.bz > spec.bz_range.lo && d.bz < spec.bz_range.hi && d.dp > spec.dp_range.lo && d.dp < spec.dp_range.hi &&
            r.polar.theta <= kThetaMax)
            out.push_back(r);
    }
    return out;
}

struct Bin {
    double bz_lo = 0.0, bz_hi = 0.0;
    double dp_lo = 0.0, dp_hi = 0.0;
    std::vector<std::size_t> members;
    double mean_bz = 0.0;
    double mean_dp = 0.0;
    /// Mean of r * ((1 + cos theta) / 2)^alpha with the default Shue alpha:
    /// each crossing projected back to the subsolar point.
    double mean_r0_proxy = 0.0;
};

namespace detail {

inline std::vector<double> window_starts(AxisRange range, double stride) {
    std::vector<double> starts;
    for (std::size_t k = 0;; ++k) {
        const double s = range.lo + static_cast<double>(k) * stride;
        if (s >= range.hi) break;
        starts.push_back(s);
    }
    return starts;
}

// Indices k with starts[k] <= v < starts[k] + width.
inline std::vector<std::size_t> covering_windows(const std::vector<double>& starts, double width, double v) {
    std::vector<std::size_t> ks;
    if (starts.empty()) return ks;
    const double lo = starts.front();
    const double stride = starts.size() > 1 ? starts[1] - starts[0] : width;
    const auto first = static_cast<long long>(std::floor((v - width - lo) / stride)) - 1;
    const auto last = static_cast<long long>(std::floor((v - lo) / stride)) + 1;
    for (long long k = std::max(0LL, first); k <= last && k < static_cast<long long>(starts.size()); ++k) {
        const double s = starts[static_cast<std::size_t>(k)];
        if (s <= v && v < s + width) ks.push_back(static_cast<std::size_t>(k));
    }
    return ks;
}

} // namespace detail

/// Overlapping 2-D bins, Bz-major. Every record joins every window covering
/// it; records without drivers are ignored.
inline std::vector<Bin> bin_records(std::span<const CrossingRecord> records, const BinSpec& spec) {
    spec.validate();
    const auto bz_starts = detail::window_starts(spec.bz_range, spec.bz_stride);
    const auto dp_starts = detail::window_starts(spec.dp_range, spec.dp_stride);
    std::vector<Bin> bins;
    bins.reserve(bz_starts.size() * dp_starts.size());
    for (double b : bz_starts)
        for (double d : dp_starts) {
            Bin bin;
            bin.bz_lo = b;
            bin.bz_hi = b + spec.bz_width;
            bin.dp_lo = d;
            bin.dp_hi = d + spec.dp_width;
            bins.push_back(std::move(bin));
        }

    const ShueForm shue;
    std::vector<double> proxy_sum(bins.size(), 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (!r.drivers) continue;
        const auto bz_ks = detail::covering_windows(bz_starts, spec.bz_width, r.drivers->bz);
        if (bz_ks.empty()) continue;
        const auto dp_ks = detail::covering_windows(dp_starts, spec.dp_width, r.drivers->dp);
        if (dp_ks.empty()) continue;
        const double alpha = shue_params(*r.drivers, shue).alpha;
        const double proxy = r.polar.r * std::pow((1.0 + std::cos(r.polar.theta)) / 2.0, alpha);
        for (auto kb : bz_ks)
            for (auto kd : dp_ks) {
                const std::size_t idx = kb * dp_starts.size() + kd;
                auto& bin = bins[idx];
                bin.members.push_back(i);
                bin.mean_bz += r.drivers->bz;
                bin.mean_dp += r.drivers->dp;
                proxy_sum[idx] += proxy;
            }
    }
    for (std::size_t j = 0; j < bins.size(); ++j) {
        auto& bin = bins[j];
        if (bin.members.empty()) continue;
        const auto n = static_cast<double>(bin.members.size());
        bin.mean_bz /= n;
        bin.mean_dp /= n;
        bin.mean_r0_proxy = proxy_sum[j] / n;
    }
    return bins;
}

// --- synthetic data --------------------------------------------------------

struct UniformRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct SynthSpec {
    std::size_t n = 1000;
    double noise_sigma = 0.0; ///< Re
    std::uint64_t seed = 1;
    UniformRange bz{-18.0, 15.0};
    UniformRange dp{0.5, 8.5};
    UniformRange theta{0.0, 120.0 * kDegToRad};
    std::int64_t start_time = 1546300800; ///< 2019-01-01T00:00:00Z
};

/// Draws (Bz, Dp, theta) uniformly, evaluates `model`, adds Gaussian noise to
/// r and places the crossing on the y = 0 half-plane. Deterministic per seed.
inline std::vector<CrossingRecord> synth_generate(const ModelHandle& model, const SynthSpec& spec) {
    auto check = [](UniformRange r, double lo, double hi, const char* what) {
        if (!(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo < r.hi && r.lo >= lo && r.hi <= hi))
            throw DomainError(std::string("invalid ") + what + " distribution bounds");
    };
    check(spec.bz, -18.0, 15.0, "bz");
    check(spec.dp, 0.5, 8.5, "dp");
    check(spec.theta, 0.0, kThetaMax, "theta");
    if (!(spec.noise_sigma >= 0.0 && std::isfinite(spec.noise_sigma)))
        throw DomainError("noise_sigma must be finite and >= 0");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> bz(spec.bz.lo, spec.bz.hi), dp(spec.dp.lo, spec.dp.hi),
        theta(spec.theta.lo, spec.theta.hi);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<Features> rows(spec.n);
    for (auto& x : rows) {
        x.bz = bz(rng);
        x.dp = dp(rng);
        x.theta = theta(rng);
    }
    const auto truth = model.predict(rows);

    std::vector<CrossingRecord> out(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        double r = truth[i];
        if (spec.noise_sigma > 0.0) {
            do {
                r = truth[i] + spec.noise_sigma * noise(rng);
            } while (r <= 0.0);
        }
        auto& rec = out[i];
        rec.timestamp = spec.start_time + static_cast<std::int64_t>(i) * kCadenceSeconds;
        rec.polar = {r, rows[i].theta};
        rec.pos = from_polar(rec.polar);
        rec.drivers = DriverInput{rows[i].bz, rows[i].dp};
        rec.source = "SYNTH";
        rec.r_true = truth[i];
    }
    return out;
}

inline std::vector<Features> features_of(std::span<const CrossingRecord> records) {
    std::vector<Features> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!r.drivers) throw DomainError("record has no solar-wind drivers; merge first");
        out.push_back(r.features());
    }
    return out;
}

inline std::vector<double> observed_r(std::span<const CrossingRecord> records) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.polar.r);
    return out;
}

} // namespace regpinn
