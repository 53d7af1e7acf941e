#include "oracle_values.hpp"

#include <regpinn/models.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace regpinn;

namespace {

using oracle::kOracle;

void expect_rel(double got, double want, double tol) { EXPECT_LE(std::abs(got - want), tol * std::abs(want)) << got << " vs " << want; }

} // namespace

TEST(Models, ShueMatchesOracle) {
    for (const auto& p : kOracle) {
        const auto b = shue_params({p.bz, p.dp});
        expect_rel(b.r0, p.shue_r0, 1e-12);
        expect_rel(b.alpha, p.shue_alpha, 1e-12);
    }
}

TEST(Models, OverfitMatchesOracle) {
    for (const auto& p : kOracle) {
        const auto b = overfit_params({p.bz, p.dp});
        expect_rel(b.r0, p.of_r0, 1e-12);
        expect_rel(b.alpha, p.of_alpha, 1e-12);
    }
}

TEST(Models, UnitPressureNeutralizesPowerLaws) {
    const auto s = shue_params({0.0, 1.0});
    EXPECT_DOUBLE_EQ(s.r0, 10.22 + 1.29 * std::tanh(0.184 * 8.14));
    EXPECT_DOUBLE_EQ(s.alpha, 0.58);
    const auto o = overfit_params({0.0, 1.0});
    EXPECT_DOUBLE_EQ(o.r0, 9.332 + 1.308 * std::tanh(0.213 * 11.191) - 0.568 * std::tanh(0.479 * -7.188));
    EXPECT_DOUBLE_EQ(o.alpha, 0.493);
}

TEST(Models, OverfitSaturatesForLargeBz) {
    const OverfitForm f;
    const double hi = f.c0 + f.c1 - f.c4, lo = f.c0 - f.c1 + f.c4;
    EXPECT_NEAR(overfit_params({500.0, 1.0}).r0, hi, 1e-9);
    EXPECT_NEAR(overfit_params({-500.0, 1.0}).r0, lo, 1e-9);
}

TEST(Models, DomainErrorsNameTheField) {
    try {
        shue_params({0.0, 0.0});
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("dp"), std::string::npos);
    }
    try {
        overfit_params({NAN, 1.0});
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("bz"), std::string::npos);
    }
    EXPECT_THROW(shue_params({0.0, -1.0}), DomainError);
    EXPECT_THROW(shue_params({0.0, INFINITY}), DomainError);
}

TEST(Models, BoundaryShape) {
    const BoundaryParams p{10.251872972379905, 0.58964860875339444};
    EXPECT_EQ(boundary_r(0.0, p), p.r0);
    expect_rel(boundary_r(kPi / 2, p), 15.427840293822531, 1e-12);
    EXPECT_DOUBLE_EQ(boundary_r(kPi / 3, {7.0, 0.0}), 7.0);
    EXPECT_THROW(boundary_r(-1e-9, p), DomainError);
    EXPECT_THROW(boundary_r(kThetaMax + 1e-9, p), DomainError);
    EXPECT_NO_THROW(boundary_r(kThetaMax, p));
}

TEST(Models, BoundaryMonotoneInTheta) {
    for (double alpha : {0.3, -0.2}) {
        double prev = boundary_r(0.0, {10.0, alpha});
        for (int i = 1; i <= 200; ++i) {
            const double r = boundary_r(kThetaMax * (i / 200.0), {10.0, alpha});
            if (alpha > 0) EXPECT_GT(r, prev);
            else EXPECT_LT(r, prev);
            prev = r;
        }
    }
}

TEST(Models, ShueStandoffMonotonicity) {
    for (double bz = -17.5; bz < 15.0; bz += 2.5) {
        double prev = INFINITY;
        for (double dp = 0.6; dp < 8.5; dp += 0.4) {
            const double r0 = shue_params({bz, dp}).r0;
            EXPECT_LT(r0, prev);
            prev = r0;
        }
    }
    for (double dp = 0.6; dp < 8.5; dp += 1.1) {
        double prev = -INFINITY;
        for (double bz = -17.9; bz < 15.0; bz += 0.5) {
            const double r0 = shue_params({bz, dp}).r0;
            EXPECT_GT(r0, prev);
            prev = r0;
        }
    }
}

TEST(Models, OverfitStandoffHasInteriorMaximum) {
    for (double dp : {0.7, 2.0, 5.0, 8.0}) {
        double best = -INFINITY, arg = 0.0;
        for (int i = 0; i <= 3300; ++i) {
            const double bz = -18.0 + i * 0.01;
            const double r0 = overfit_params({bz, dp}).r0;
            if (r0 > best) {
                best = r0;
                arg = bz;
            }
        }
        EXPECT_GT(arg, -18.0);
        EXPECT_LT(arg, 15.0);
    }
}

TEST(Models, FiniteAcrossDatasetRange) {
    for (double bz = -17.99; bz < 15.0; bz += 0.37)
        for (double dp = 0.51; dp < 8.5; dp += 0.23)
            for (double th = 0.0; th <= kThetaMax; th += 0.2) {
                EXPECT_TRUE(std::isfinite(predict_r(ShueForm{}, bz, dp, th)));
                EXPECT_TRUE(std::isfinite(predict_r(OverfitForm{}, bz, dp, th)));
            }
}

TEST(Models, PredictComposesParamsAndShape) {
    expect_rel(predict_r(ShueForm{}, 0.0, 2.0, 0.0), 10.251872972379905, 1e-12);
    expect_rel(predict_r(ShueForm{}, 0.0, 1.0, 0.0), 11.387118017307763, 1e-12);
    expect_rel(predict_r(OverfitForm{}, 0.0, 1.0, 0.0), 11.18478466868362, 1e-12);
    expect_rel(predict_r(ShueForm{}, 0.0, 1.0, 2 * kPi / 3), 25.445361000896805, 1e-12);
    const auto h = make_handle(ShueForm{});
    EXPECT_EQ(h.id(), "shue");
    EXPECT_EQ(h.predict(3.0, 4.0, 0.5), predict_r(ShueForm{}, 3.0, 4.0, 0.5));
}

TEST(Models, CoefficientVectorsRoundTrip) {
    for (const EmpiricalForm& f : {EmpiricalForm{ShueForm{}}, EmpiricalForm{OverfitForm{}}}) {
        auto v = to_vector(f);
        EXPECT_EQ(v.size(), coefficient_names(f).size());
        for (auto& x : v) x *= 1.5;
        const auto g = with_vector(f, v);
        EXPECT_EQ(to_vector(g), v);
        EXPECT_EQ(g.index(), f.index());
    }
    EXPECT_THROW(with_vector(ShueForm{}, std::vector<double>(3)), DomainError);
    EXPECT_THROW(default_form("tsyganenko"), DomainError);
}

TEST(Models, GridIsPointwiseEvaluation) {
    const auto h = make_handle(ShueForm{});
    const auto g = standoff_grid(h, {-1.0, 1.0}, {1.0, 2.0}, 2, 2);
    ASSERT_EQ(g.values.size(), 4u);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(g.at(i, j), h.predict(g.bz_axis[i], g.dp_axis[j], 0.0));
    EXPECT_EQ(g.bz_axis, (std::vector<double>{-1.0, 1.0}));
    EXPECT_EQ(g.dp_axis, (std::vector<double>{1.0, 2.0}));
}

TEST(Models, DefaultGridShapeAndErrors) {
    const auto g = standoff_grid(make_handle(OverfitForm{}));
    EXPECT_EQ(g.bz_axis.size(), 100u);
    EXPECT_EQ(g.dp_axis.size(), 100u);
    EXPECT_EQ(g.bz_axis.front(), -18.0);
    EXPECT_EQ(g.dp_axis.back(), 18.0);
    EXPECT_EQ(g.model_id, "overfit");
    const auto h = make_handle(ShueForm{});
    EXPECT_THROW(standoff_grid(h, {1.0, 1.0}, {1.0, 2.0}, 2, 2), DomainError);
    EXPECT_THROW(standoff_grid(h, {-1.0, 1.0}, {0.0, 2.0}, 2, 2), DomainError);
    EXPECT_THROW(standoff_grid(h, {-1.0, 1.0}, {1.0, 2.0}, 1, 2), DomainError);
}

TEST(Models, GridCsvAndMeta) {
    const auto g = standoff_grid(make_handle(ShueForm{}), {-1.0, 1.0}, {1.0, 2.0}, 3, 2);
    std::ostringstream csv, meta;
    write_grid_csv(csv, g);
    write_grid_meta(meta, g);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "bz,dp,r0");
    int rows = 0;
    double bz = 0, dp = 0, r0 = 0;
    char c1 = 0, c2 = 0;
    while (in >> bz >> c1 >> dp >> c2 >> r0) {
        EXPECT_EQ(r0, predict_r(ShueForm{}, bz, dp, 0.0)); // 17 digits round-trip exactly
        ++rows;
    }
    EXPECT_EQ(rows, 6);
    const auto j = nlohmann::json::parse(meta.str());
    EXPECT_EQ(j["n_bz"], 3);
    EXPECT_EQ(j["n_dp"], 2);
    EXPECT_EQ(j["model_id"], "shue");
    EXPECT_EQ(j["dp_max"], 2.0);
}
