#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "canalnav/ocp.hpp"

using namespace canal;

namespace
{
constexpr double kPi = std::numbers::pi;

WaypointPath straight_path()
{
    return {{Vec2(0.0, 0.0), Vec2(100.0, 0.0)}, 0};
}

WaypointPath corner_path()
{
    return {{Vec2(0.0, 0.0), Vec2(20.0, 0.0), Vec2(20.0, 40.0)}, 0};
}
} // namespace

TEST_CASE("reference_heading")
{
    CHECK(reference_heading({0.0, 0.0}, {1.0, 1.0}) == doctest::Approx(kPi / 4.0));
    CHECK(reference_heading({0.0, 0.0}, {-1.0, 0.0}) == doctest::Approx(kPi));
    CHECK(reference_heading({2.0, 3.0}, {2.0, 7.0}) == doctest::Approx(kPi / 2.0));
    CHECK_THROWS_AS(reference_heading({1.0, 1.0}, {1.0, 1.0}), InvalidPath);
}

TEST_CASE("path validation and projection")
{
    CHECK_THROWS_AS((WaypointPath{{Vec2(0.0, 0.0)}, 0}.validate()), InvalidPath);
    CHECK_THROWS_AS((WaypointPath{{Vec2(0.0, 0.0), Vec2(0.0, 0.0)}, 0}.validate()), InvalidPath);

    const PathProjection p = project_onto_path(straight_path(), {30.0, 3.0});
    CHECK(p.leg == 0);
    CHECK(p.along == doctest::Approx(30.0));
    CHECK(p.cross_track == doctest::Approx(3.0));
    CHECK_FALSE(p.complete);

    const PathProjection past = project_onto_path(corner_path(), {25.0, -1.0});
    CHECK(past.leg == 1);

    const PathProjection done = project_onto_path(straight_path(), {120.0, 0.0});
    CHECK(done.complete);
}

TEST_CASE("build_reference")
{
    const NmpcConfig cfg;

    SUBCASE("straight leg advances u_ref * T_s per step")
    {
        const VesselState pose{10.0, 0.0, 0.0, 2.0, 0.0, 0.0};
        const ReferenceTrajectory ref = build_reference(straight_path(), pose, cfg);
        REQUIRE(ref.points.size() == 26);
        for (std::size_t i = 1; i < ref.points.size(); ++i)
        {
            const Vec2 d = ref.points[i].head<2>() - ref.points[i - 1].head<2>();
            CHECK(std::abs(d.norm() - 2.0) < 1e-9);
            const double psi = ref.points[i - 1][2];
            CHECK(std::abs(d.x() - 2.0 * std::cos(psi)) < 1e-9);
            CHECK(std::abs(d.y() - 2.0 * std::sin(psi)) < 1e-9);
            CHECK(ref.points[i][3] == cfg.u_ref);
        }
    }

    SUBCASE("lateral offset projects onto the leg")
    {
        const WaypointPath diag{{Vec2(0.0, 0.0), Vec2(60.0, 80.0)}, 0};
        const VesselState pose{30.0 - 2.4, 40.0 + 1.8, 0.9, 2.0, 0.0, 0.0};
        const ReferenceTrajectory ref = build_reference(diag, pose, cfg);
        // Dense-sampling oracle for the foot of the perpendicular.
        double best = 1e300;
        Vec2 foot;
        for (int k = 0; k <= 100000; ++k)
        {
            const Vec2 q = Vec2(60.0, 80.0) * (k / 100000.0);
            const double d = (q - Vec2(pose.x, pose.y)).norm();
            if (d < best)
            {
                best = d;
                foot = q;
            }
        }
        CHECK((ref.points[0].head<2>() - foot).norm() < 1e-3);
        CHECK(best == doctest::Approx(3.0).epsilon(1e-6));
    }

    SUBCASE("corner switches heading and conserves arc length")
    {
        const VesselState pose{19.0, 0.0, 0.0, 2.0, 0.0, 0.0};
        const ReferenceTrajectory ref = build_reference(corner_path(), pose, cfg);
        CHECK(ref.points[0][2] == doctest::Approx(0.0));
        CHECK(ref.points[1][2] == doctest::Approx(kPi / 2.0));
        CHECK(ref.points[1].head<2>().isApprox(Vec2(20.0, 1.0)));

        double arc = 0.0;
        const WaypointPath &path = corner_path();
        // Arc length along the polyline between consecutive references.
        auto arclen = [&](const Vec2 &p) {
            if (p.y() <= 1e-12)
                return p.x();
            return 20.0 + p.y();
        };
        (void)path;
        for (std::size_t i = 1; i < ref.points.size(); ++i)
            arc += arclen(ref.points[i].head<2>()) - arclen(ref.points[i - 1].head<2>());
        CHECK(std::abs(arc - cfg.N_p * cfg.u_ref * cfg.T_s) < 1e-6);
    }

    SUBCASE("heading stays on the branch of the vessel heading")
    {
        const WaypointPath west{{Vec2(0.0, 0.0), Vec2(-100.0, 0.0)}, 0};
        const VesselState pose{-10.0, 0.0, -kPi + 0.01 + 4.0 * kPi, 2.0, 0.0, 0.0};
        const ReferenceTrajectory ref = build_reference(west, pose, cfg);
        CHECK(std::abs(ref.points[0][2] - pose.psi) < 0.02);
    }
}

TEST_CASE("costs")
{
    const NmpcConfig cfg;
    const Vec8 r = (Vec8() << 1.0, 2.0, 0.3, 2.0, 0.0, 0.0, 0.0, 0.0).finished();
    CHECK(stage_cost(r, r, Vec2::Zero(), 0.0, cfg) == 0.0);
    CHECK(terminal_cost(r, r, 0.0, cfg) == 0.0);

    Vec8 x = r;
    x[2] += 0.1;
    CHECK(stage_cost(x, r, Vec2::Zero(), 0.0, cfg) == doctest::Approx(5.0));
    CHECK(terminal_cost(x, r, 0.0, cfg) == doctest::Approx(125.0));
    CHECK(stage_cost(r, r, Vec2(10.0, 0.0), 0.0, cfg) == doctest::Approx(0.01));
    CHECK(terminal_cost(r, r, 1.0, cfg) == doctest::Approx(10000.0));

    Vec8 wrapped = x;
    wrapped[2] += 2.0 * kPi;
    CHECK(stage_cost(wrapped, r, Vec2::Zero(), 0.0, cfg) == doctest::Approx(5.0));
    wrapped[2] -= 6.0 * kPi;
    CHECK(terminal_cost(wrapped, r, 0.0, cfg) == doctest::Approx(125.0));

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-5.0, 5.0);
    for (int i = 0; i < 100; ++i)
    {
        Vec8 a, b;
        for (int k = 0; k < 8; ++k)
        {
            a[k] = d(rng);
            b[k] = d(rng);
        }
        CHECK(stage_cost(a, b, Vec2(d(rng), d(rng)), std::abs(d(rng)), cfg) >= 0.0);
    }
}

TEST_CASE("safety circles")
{
    const NmpcConfig cfg;
    const SafetyCircles c0 = safety_circle_centers({}, cfg);
    CHECK(c0.bow.isApprox(Vec2(2.0, 0.0)));
    CHECK(c0.stern.isApprox(Vec2(-2.0, 0.0)));

    VesselState up;
    up.psi = kPi / 2.0;
    const SafetyCircles c1 = safety_circle_centers(up, cfg);
    CHECK((c1.bow - Vec2(0.0, 2.0)).norm() < 1e-12);
    CHECK((c1.stern - Vec2(0.0, -2.0)).norm() < 1e-12);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-50.0, 50.0);
    for (int i = 0; i < 100; ++i)
    {
        const SafetyCircles c = safety_circle_centers({d(rng), d(rng), d(rng)}, cfg);
        CHECK((c.bow - c.stern).norm() == doctest::Approx(cfg.l_b + cfg.l_s));
    }
}

TEST_CASE("quartic obstacle constraint")
{
    const NmpcConfig cfg;
    const LineSegment seg{0.0, 0.0, 0.0, 10.0};
    CHECK(obstacle_constraint_value({0.0, 0.0}, seg, 0.0, cfg) == doctest::Approx(-1.0));
    CHECK(obstacle_constraint_value({0.0, 5.0}, seg, 0.0, cfg) == doctest::Approx(0.0));
    CHECK(obstacle_constraint_value({0.0, 10.0}, seg, 0.0, cfg) == doctest::Approx(15.0));

    // Slack softens: at distance 4.5 the constraint is violated at s = 0, satisfied at s = 0.5.
    CHECK(obstacle_constraint_value({0.0, 4.5}, seg, 0.0, cfg) < 0.0);
    CHECK(obstacle_constraint_value({0.0, 4.5}, seg, 0.5, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(required_slack({0.0, 4.5}, seg, cfg) == doctest::Approx(0.5));
    CHECK(required_slack({0.0, 7.0}, seg, cfg) == 0.0);

    // Denominator floor.
    const double floored = obstacle_constraint_value({0.0, 0.2}, seg, 10.0, cfg);
    CHECK(floored == doctest::Approx(std::pow(0.2 / 0.1, 4) - 1.0));

    CHECK(quartic_clearance({0.0, 8.0}, seg, cfg) == doctest::Approx(3.0));
    CHECK(quartic_clearance({0.0, -5.0}, seg, cfg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("constraint gradient matches central differences")
{
    const NmpcConfig cfg;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> pos(-20.0, 20.0), ang(0.0, kPi), len(1.0, 30.0), slack(0.0, 4.0);
    int tested = 0;
    while (tested < 100)
    {
        const LineSegment seg{pos(rng), pos(rng), ang(rng), len(rng)};
        const Vec2 p(pos(rng), pos(rng));
        const double s = slack(rng);
        if (cfg.separation() - s < kDenominatorFloor + 0.05)
            continue;
        const ConstraintGradient g = obstacle_constraint_gradient(p, seg, s, cfg);
        const double h = 1e-6;
        const Vec2 ex(h, 0.0), ey(0.0, h);
        const Vec3 fd((obstacle_constraint_value(p + ex, seg, s, cfg) - obstacle_constraint_value(p - ex, seg, s, cfg)) /
                          (2.0 * h),
                      (obstacle_constraint_value(p + ey, seg, s, cfg) - obstacle_constraint_value(p - ey, seg, s, cfg)) /
                          (2.0 * h),
                      (obstacle_constraint_value(p, seg, s + h, cfg) - obstacle_constraint_value(p, seg, s - h, cfg)) /
                          (2.0 * h));
        const Vec3 an(g.d_position.x(), g.d_position.y(), g.d_slack);
        CHECK((fd - an).norm() <= 1e-5 * std::max(1.0, an.norm()));
        CHECK(g.value == doctest::Approx(obstacle_constraint_value(p, seg, s, cfg)));
        ++tested;
    }
}

TEST_CASE("quartic approximation agrees with the exact distance rule")
{
    const NmpcConfig cfg;
    const double D = cfg.separation();
    std::mt19937_64 rng(77);
    for (const LineSegment &seg : {LineSegment{0.0, 0.0, 0.0, 10.0}, LineSegment{3.0, -2.0, 0.7, 20.0}})
    {
        const double hw = 4.0 * (0.5 * seg.l + D), hh = 4.0 * D;
        std::uniform_real_distribution<double> u(-hw, hw), v(-hh, hh);
        int agree = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i)
        {
            const Vec2 local(u(rng), v(rng));
            const Vec2 p = seg.center() + rotation_matrix(seg.theta).topLeftCorner<2, 2>() * local;
            const bool quartic_ok = obstacle_constraint_value(p, seg, 0.0, cfg) >= 0.0;
            const bool exact_ok = point_segment_distance(p.x(), p.y(), seg) >= D;
            agree += quartic_ok == exact_ok;
        }
        CHECK(static_cast<double>(agree) / n >= 0.97);
    }
}

TEST_CASE("segments_in_range and assemble")
{
    NmpcConfig cfg;
    const ParamSet params = canal_boat_params();
    const std::vector<LineSegment> walls = {{50.0, 7.5, 0.0, 100.0}, {50.0, -7.5, 0.0, 100.0}, {300.0, 0.0, 0.0, 10.0}};
    const VesselState pose{40.0, 0.0, 0.0, 2.0, 0.0, 0.0};
    const ActuatorState act{46.0, 0.0};

    CHECK(segments_in_range(walls, {40.0, 0.0}, 50.0).size() == 2);

    const OcpProblem open = assemble(pose, act, straight_path(), {}, cfg, params);
    CHECK(open.num_obstacle_constraints() == 0);

    const OcpProblem ocp = assemble(pose, act, straight_path(), walls, cfg, params);
    CHECK(ocp.segments.size() == 2);
    CHECK(ocp.num_obstacle_constraints() == 104);

    // Cold start.
    REQUIRE(ocp.guess.states.size() == 26);
    REQUIRE(ocp.guess.inputs.size() == 25);
    REQUIRE(ocp.guess.slacks.size() == 26);
    CHECK(ocp.guess.states[0] == ocp.x_init);
    for (std::size_t k = 1; k < ocp.guess.states.size(); ++k)
    {
        CHECK(ocp.guess.states[k].head<6>() == ocp.reference.points[k].head<6>());
        CHECK(ocp.guess.states[k][6] == act.n_T);
    }
    for (const Vec2 &u : ocp.guess.inputs)
        CHECK(u.isZero());

    // Deterministic.
    const OcpProblem again = assemble(pose, act, straight_path(), walls, cfg, params);
    for (std::size_t k = 0; k < ocp.reference.points.size(); ++k)
        CHECK(again.reference.points[k] == ocp.reference.points[k]);

    CHECK_THROWS_AS(assemble({150.0, 0.0, 0.0, 2.0, 0.0, 0.0}, act, straight_path(), walls, cfg, params),
                    PathComplete);

    cfg.N_p = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
