#include "oracles.hpp"

#include <regpinn/dataio.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace regpinn;

namespace {

ParseResult<CrossingRecord> crossings(const std::string& text) {
    std::istringstream in(text);
    return read_crossings(in, "mem.csv");
}

ParseResult<SolarWindSample> solarwind(const std::string& text) {
    std::istringstream in(text);
    return read_solarwind(in, "sw.csv");
}

CrossingRecord at(std::int64_t t) {
    CrossingRecord r;
    r.timestamp = t;
    r.pos = {10, 0, 0};
    r.polar = {10, 0};
    return r;
}

CrossingRecord with_drivers(double bz, double dp, double theta = 0.0) {
    CrossingRecord r;
    r.polar = {10.0, theta};
    r.pos = from_polar(r.polar);
    r.drivers = DriverInput{bz, dp};
    return r;
}

} // namespace

TEST(Time, IsoRoundTrip) {
    EXPECT_EQ(parse_iso8601("1970-01-01T00:00:00Z"), 0);
    EXPECT_EQ(parse_iso8601("2019-01-01T00:05:00Z"), 1546301100);
    EXPECT_EQ(parse_iso8601("2019-01-01 00:05:00"), 1546301100);
    EXPECT_EQ(format_iso8601(1546301100), "2019-01-01T00:05:00Z");
    EXPECT_FALSE(parse_iso8601("2019-02-30T00:00:00Z"));
    EXPECT_FALSE(parse_iso8601("2019-01-01T24:00:00Z"));
    EXPECT_FALSE(parse_iso8601("yesterday"));
    for (std::int64_t t : {0LL, 951782400LL, 1700000123LL}) EXPECT_EQ(parse_iso8601(format_iso8601(t)), t);
}

TEST(Polar, Conversions) {
    auto p = to_polar({10, 0, 0});
    EXPECT_DOUBLE_EQ(p.r, 10.0);
    EXPECT_DOUBLE_EQ(p.theta, 0.0);
    p = to_polar({0, 6, 8});
    EXPECT_DOUBLE_EQ(p.r, 10.0);
    EXPECT_DOUBLE_EQ(p.theta, kPi / 2);
    p = to_polar({-5, 0, 5 * std::sqrt(3.0)});
    EXPECT_NEAR(p.r, 10.0, 1e-14);
    EXPECT_NEAR(p.theta, 2 * kPi / 3, 1e-14);
    EXPECT_THROW(to_polar({0, 0, 0}), DomainError);
}

TEST(Polar, RoundTripProperty) {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> r(0.5, 200.0), th(0.0, kThetaMax);
    for (int i = 0; i < 10000; ++i) {
        const PolarPoint p{r(rng), th(rng)};
        const auto q = to_polar(from_polar(p));
        EXPECT_LE(std::abs(q.r - p.r), 1e-12 * p.r);
        EXPECT_LE(std::abs(q.theta - p.theta), 1e-12 * std::max(p.theta, 1.0));
    }
}

TEST(ParseCrossings, DerivesPolarCoordinates) {
    const auto res = crossings(
        "timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n"
        "2019-01-01T00:05:00Z,10.0,0.0,0.0,THEMIS\n"
        "2019-01-01T00:10:00Z,0,10,0,GEOTAIL\n");
    ASSERT_EQ(res.rows.size(), 2u);
    EXPECT_TRUE(res.warnings.empty());
    EXPECT_EQ(res.rows[0].timestamp, 1546301100);
    EXPECT_EQ(res.rows[0].source, "THEMIS");
    EXPECT_DOUBLE_EQ(res.rows[0].polar.r, 10.0);
    EXPECT_DOUBLE_EQ(res.rows[0].polar.theta, 0.0);
    EXPECT_DOUBLE_EQ(res.rows[1].polar.theta, kPi / 2);
    EXPECT_FALSE(res.rows[0].drivers);
}

TEST(ParseCrossings, EmptyBodyAndRejections) {
    auto res = crossings("timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n");
    EXPECT_TRUE(res.rows.empty());
    EXPECT_TRUE(res.warnings.empty());

    res = crossings(
        "timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n"
        "2019-01-01T00:05:00Z,nan,0,0,A\n"
        "2019-01-01T00:05:00Z,0,0,0,A\n"
        "2019-01-01T00:05:00Z,9,1,1,A\n");
    ASSERT_EQ(res.rows.size(), 1u);
    ASSERT_EQ(res.warnings.size(), 2u);
    EXPECT_EQ(res.warnings[0].line, 2u);
    EXPECT_EQ(res.warnings[1].line, 3u);
}

TEST(ParseCrossings, ErrorsCarryLineNumbers) {
    try {
        crossings("timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n2019-01-01T00:05:00Z,1,2,3,A\n2019-01-01T00:05:00Z,x,2,3,A\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    try {
        crossings("time,x,y,z,src\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
    }
    EXPECT_THROW(crossings("timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\nnot-a-time,1,2,3,A\n"), ParseError);
    EXPECT_THROW(crossings("timestamp,x_gsm_re,y_gsm_re,z_gsm_re,source\n2019-01-01T00:05:00Z,1,2,A\n"), ParseError);
    EXPECT_THROW(parse_crossings("/nonexistent/crossings.csv"), ParseError);
}

TEST(ParseSolarWind, FlagsSortsAndSnaps) {
    const auto res = solarwind(
        "timestamp,bz_nt,dp_npa\n"
        "2019-01-01T00:10:00Z,-2.0,3.0\n"
        "2019-01-01T00:05:00Z,99.99,2.0\n"
        "2019-01-01T00:17:30Z,1.0,9999.99\n"
        "2019-01-01T00:00:00Z,1.0,2.0\n");
    ASSERT_EQ(res.rows.size(), 4u);
    EXPECT_EQ(res.rows[0].timestamp, 1546300800);
    EXPECT_EQ(res.rows[1].timestamp, 1546301100);
    EXPECT_TRUE(res.rows[1].flagged);
    EXPECT_FALSE(res.rows[2].flagged);
    EXPECT_EQ(res.rows[3].timestamp, 1546301700); // 00:17:30 snapped to 00:15
    EXPECT_TRUE(res.rows[3].flagged);
    ASSERT_EQ(res.warnings.size(), 1u);
    EXPECT_EQ(res.warnings[0].line, 4u);
    for (const auto& s : res.rows) EXPECT_EQ(s.timestamp % 300, 0);
}

TEST(ParseSolarWind, FillOverride) {
    std::istringstream in("timestamp,bz_nt,dp_npa\n2019-01-01T00:00:00Z,-50,2\n");
    const auto res = read_solarwind(in, "sw", FillValues{40.0, 40.0});
    EXPECT_TRUE(res.rows[0].flagged);
}

TEST(Merge, FloorWindowMatching) {
    const auto sw = solarwind(
        "timestamp,bz_nt,dp_npa\n"
        "2019-01-01T00:00:00Z,1.0,1.0\n"
        "2019-01-01T00:05:00Z,2.0,2.0\n"
        "2019-01-01T00:10:00Z,99.99,3.0\n");
    const std::int64_t t0 = 1546300800;
    const std::vector<CrossingRecord> c{at(t0 + 450), at(t0 + 300), at(t0 + 299), at(t0 + 610), at(t0 + 3600)};
    const auto m = merge(c, sw.rows);
    ASSERT_EQ(m.records.size(), 3u);
    EXPECT_EQ(m.dropped, 2u);
    EXPECT_EQ(m.records[0].drivers->bz, 2.0); // 00:07:30 -> 00:05
    EXPECT_EQ(m.records[1].drivers->bz, 2.0); // boundary 00:05 -> [00:05, 00:10)
    EXPECT_EQ(m.records[2].drivers->bz, 1.0); // 00:04:59 -> 00:00
}

TEST(Merge, Idempotent) {
    const auto sw = solarwind("timestamp,bz_nt,dp_npa\n2019-01-01T00:00:00Z,1.0,1.5\n2019-01-01T00:05:00Z,2.0,2.5\n");
    const std::int64_t t0 = 1546300800;
    const std::vector<CrossingRecord> c{at(t0 + 10), at(t0 + 310), at(t0 + 900)};
    const auto once = merge(c, sw.rows);
    const auto twice = merge(once.records, sw.rows);
    ASSERT_EQ(once.records.size(), twice.records.size());
    EXPECT_EQ(twice.dropped, 0u);
    for (std::size_t i = 0; i < once.records.size(); ++i) {
        EXPECT_EQ(once.records[i].drivers->bz, twice.records[i].drivers->bz);
        EXPECT_EQ(once.records[i].drivers->dp, twice.records[i].drivers->dp);
    }
}

TEST(FilterRange, StrictBounds) {
    const BinSpec spec;
    const std::vector<CrossingRecord> recs{with_drivers(-18.0, 2.0), with_drivers(0.0, 2.0), with_drivers(0.0, 8.5),
                                           with_drivers(15.0, 2.0), with_drivers(0.0, 0.5), with_drivers(14.99, 8.49),
                                           with_drivers(0.0, 2.0, 170 * kDegToRad)};
    const auto kept = filter_range(recs, spec);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].drivers->bz, 0.0);
    EXPECT_EQ(kept[1].drivers->bz, 14.99);
    const auto again = filter_range(kept, spec);
    EXPECT_EQ(again.size(), kept.size());
}

TEST(Binning, WindowCountsFromEnumeration) {
    const BinSpec s;
    // Enumeration oracle: edge records sit in fewer windows than interior ones.
    EXPECT_EQ(oracle::windows_covering(-16.5, -18, 15, 1, 3), 2u);
    EXPECT_EQ(oracle::windows_covering(0.5, -18, 15, 1, 3), 3u);
    EXPECT_EQ(oracle::windows_covering(1.0, 0.5, 8.5, 0.5, 2), 2u);
    EXPECT_EQ(oracle::windows_covering(0.7, 0.5, 8.5, 0.5, 2), 1u);
    EXPECT_EQ(oracle::windows_covering(4.2, 0.5, 8.5, 0.5, 2), 4u);

    const std::vector<CrossingRecord> recs{with_drivers(-16.5, 4.2), with_drivers(0.5, 1.0), with_drivers(0.5, 0.7)};
    const auto bins = bin_records(recs, s);
    std::vector<std::size_t> memberships(recs.size(), 0);
    for (const auto& b : bins)
        for (auto i : b.members) ++memberships[i];
    EXPECT_EQ(memberships[0], 2u * 4u);
    EXPECT_EQ(memberships[1], 3u * 2u);
    EXPECT_EQ(memberships[2], 3u * 1u);
}

TEST(Binning, LayoutAndAggregates) {
    const BinSpec s;
    const auto empty = bin_records({}, s);
    EXPECT_EQ(empty.size(), 33u * 16u);
    for (const auto& b : empty) EXPECT_TRUE(b.members.empty());
    EXPECT_EQ(empty.front().bz_lo, -18.0);
    EXPECT_EQ(empty.front().bz_hi, -15.0);
    EXPECT_EQ(empty.front().dp_lo, 0.5);
    EXPECT_EQ(empty.front().dp_hi, 2.5);

    const std::vector<CrossingRecord> recs{with_drivers(-17.0, 1.0), with_drivers(-16.0, 2.0)};
    const auto bins = bin_records(recs, s);
    const auto& first = bins.front();
    ASSERT_EQ(first.members.size(), 2u);
    EXPECT_DOUBLE_EQ(first.mean_bz, -16.5);
    EXPECT_DOUBLE_EQ(first.mean_dp, 1.5);
    EXPECT_DOUBLE_EQ(first.mean_r0_proxy, 10.0); // theta = 0: proxy is r itself
}

TEST(Binning, MatchesBruteForce) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> bz(-18.0, 15.0), dp(0.5, 8.5);
    std::vector<CrossingRecord> recs;
    for (int i = 0; i < 1000; ++i) recs.push_back(with_drivers(bz(rng), dp(rng)));
    recs.push_back(with_drivers(-15.0, 2.5)); // exact window edges
    recs.push_back(with_drivers(3.0, 4.0));
    const BinSpec s;
    const auto bins = bin_records(recs, s);
    const auto brute = oracle::bin_members(recs, bins);
    std::size_t total = 0, expected_total = 0;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        EXPECT_EQ(bins[b].members, brute[b]);
        total += bins[b].members.size();
    }
    for (const auto& r : recs)
        expected_total += oracle::windows_covering(r.drivers->bz, -18, 15, 1, 3) *
                          oracle::windows_covering(r.drivers->dp, 0.5, 8.5, 0.5, 2);
    EXPECT_EQ(total, expected_total);
}

TEST(Binning, InvalidSpec) {
    BinSpec s;
    s.bz_stride = 4.0;
    EXPECT_THROW(bin_records({}, s), DomainError);
    s = {};
    s.dp_width = 0.0;
    EXPECT_THROW(bin_records({}, s), DomainError);
}

TEST(Synth, NoiselessMatchesModel) {
    const auto h = make_handle(ShueForm{});
    SynthSpec spec;
    spec.n = 500;
    spec.seed = 5;
    const auto recs = synth_generate(h, spec);
    ASSERT_EQ(recs.size(), 500u);
    for (const auto& r : recs) {
        const double want = h.predict(r.drivers->bz, r.drivers->dp, r.polar.theta);
        EXPECT_LE(std::abs(r.polar.r - want), 1e-12 * want);
        EXPECT_EQ(r.pos.y, 0.0);
        EXPECT_LE(std::abs(to_polar(r.pos).r - r.polar.r), 1e-12 * r.polar.r);
        EXPECT_GT(r.drivers->bz, -18.0);
        EXPECT_LT(r.drivers->dp, 8.5);
    }
}

TEST(Synth, DeterministicAndValidated) {
    const auto h = make_handle(OverfitForm{});
    SynthSpec spec;
    spec.n = 50;
    spec.noise_sigma = 0.3;
    spec.seed = 77;
    const auto a = synth_generate(h, spec);
    const auto b = synth_generate(h, spec);
    std::ostringstream sa, sb;
    write_dataset(sa, a);
    write_dataset(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    spec.n = 0;
    EXPECT_TRUE(synth_generate(h, spec).empty());
    spec.bz = {-20.0, 0.0};
    EXPECT_THROW(synth_generate(h, spec), DomainError);
    spec = {};
    spec.noise_sigma = -1.0;
    EXPECT_THROW(synth_generate(h, spec), DomainError);
}

TEST(Dataset, WriteReadRoundTrip) {
    SynthSpec spec;
    spec.n = 100;
    spec.noise_sigma = 0.5;
    const auto recs = synth_generate(make_handle(ShueForm{}), spec);
    std::ostringstream out;
    write_dataset(out, recs);
    std::istringstream in(out.str());
    const auto back = read_crossings(in, "roundtrip");
    ASSERT_EQ(back.rows.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(back.rows[i].timestamp, recs[i].timestamp);
        EXPECT_EQ(back.rows[i].drivers->bz, recs[i].drivers->bz);
        EXPECT_EQ(back.rows[i].drivers->dp, recs[i].drivers->dp);
        EXPECT_EQ(back.rows[i].r_true, recs[i].r_true);
        EXPECT_LE(std::abs(back.rows[i].polar.r - recs[i].polar.r), 1e-12 * recs[i].polar.r);
        EXPECT_LE(std::abs(back.rows[i].polar.theta - recs[i].polar.theta), 1e-12);
    }
}
