#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "canalnav/vessel.hpp"

using namespace canal;

namespace
{
constexpr double kPi = std::numbers::pi;

// Steering toggles every 2 s between +50 and -50, throttle 42 %.
ActuatorState zigzag_input(double t)
{
    const int phase = static_cast<int>(std::floor(t / 2.0 + 1e-9));
    return {42.0, phase % 2 == 0 ? 50.0 : -50.0};
}

VesselState integrate(VesselState s, double T, double dt, const ParamSet &p)
{
    const int steps = static_cast<int>(std::lround(T / dt));
    for (int i = 0; i < steps; ++i)
        s = rk4_step(s, zigzag_input(i * dt), p, dt);
    return s;
}
} // namespace

TEST_CASE("wrap_angle maps into (-pi, pi]")
{
    CHECK(wrap_angle(0.0) == doctest::Approx(0.0));
    CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0));
    CHECK(wrap_angle(-7.0) == doctest::Approx(-7.0 + 2.0 * kPi));
}

TEST_CASE("rotation_matrix")
{
    CHECK(rotation_matrix(0.0).isApprox(Mat3::Identity()));
    Mat3 quarter;
    quarter << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK((rotation_matrix(kPi / 2.0) - quarter).cwiseAbs().maxCoeff() < 1e-15);

    const Mat3 R = rotation_matrix(0.7);
    CHECK((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> psi(-20.0, 20.0);
    for (int i = 0; i < 1000; ++i)
    {
        const Mat3 Ri = rotation_matrix(psi(rng));
        CHECK((Ri * Ri.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(Ri.determinant() - 1.0) < 1e-12);
    }
}

TEST_CASE("coriolis_matrix")
{
    const ParamSet p = published_params();
    CHECK(coriolis_matrix(Vec3::Zero(), p).isZero());

    const Mat3 C = coriolis_matrix(Vec3(1.0, 0.5, 0.1), p);
    CHECK(C(0, 2) == doctest::Approx(-911.9));
    CHECK(C(1, 2) == doctest::Approx(1914.9));
    CHECK(C(2, 0) == doctest::Approx(911.9));
    CHECK(C(2, 1) == doctest::Approx(-1914.9));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    for (int i = 0; i < 100; ++i)
    {
        const Mat3 Ci = coriolis_matrix(Vec3(d(rng), d(rng), d(rng)), p);
        CHECK((Ci + Ci.transpose()).isZero(0.0));
    }
}

TEST_CASE("damping_matrix")
{
    const ParamSet p = published_params();
    CHECK(damping_matrix(Vec3::Zero(), p)(0, 0) == doctest::Approx(29.220));
    CHECK(damping_matrix(Vec3(2.0, 0.0, 0.0), p)(0, 0) == doctest::Approx(137.908));

    const double d0 = damping_matrix(Vec3::Zero(), p)(0, 0);
    const double d1 = damping_matrix(Vec3(1.5, 0.0, 0.0), p)(0, 0) - d0;
    const double d2 = damping_matrix(Vec3(-3.0, 0.0, 0.0), p)(0, 0) - d0;
    CHECK(d2 == doctest::Approx(2.0 * d1));
    CHECK(d1 == doctest::Approx(-p.X_uu * 1.5));
}

TEST_CASE("thrust_map")
{
    const ParamSet p = published_params();
    for (double nS : {-100.0, 0.0, 37.0})
    {
        const Wrench w = thrust_map({0.0, nS}, p);
        CHECK(w.X == 0.0);
        CHECK(w.Y == 0.0);
        CHECK(w.N == 0.0);
    }
    const Wrench full = thrust_map({100.0, 0.0}, p);
    CHECK(full.X == doctest::Approx(0.13331));
    CHECK(full.Y == 0.0);
    CHECK(full.N == 0.0);

    const Wrench turn = thrust_map({50.0, 100.0}, p);
    const double tauY = 1.3331e-5 * 2500.0 * std::sin(25.0 * kPi / 180.0);
    CHECK(turn.Y == doctest::Approx(tauY));
    CHECK(turn.N == doctest::Approx(-3.0 * tauY));

    const Wrench astern = thrust_map({-60.0, 0.0}, p);
    CHECK(astern.X < 0.0);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-100.0, 100.0);
    for (int i = 0; i < 200; ++i)
    {
        const ActuatorState a{d(rng), d(rng)};
        const Wrench w = thrust_map(a, p);
        const double mag = p.c * a.n_T * a.n_T;
        CHECK(w.X * w.X + w.Y * w.Y == doctest::Approx(mag * mag).epsilon(1e-12));
        CHECK(w.N == -p.l_y * w.Y);
    }
}

TEST_CASE("state_derivative")
{
    const ParamSet p = published_params();
    const VesselState rest;
    const Vec6 d0 = state_derivative(rest, {}, p).to_vector();
    CHECK(d0.isZero(0.0));

    VesselState moving;
    moving.u = 2.0;
    CHECK(state_derivative(moving, {}, p).u == doctest::Approx(-0.14404).epsilon(1e-4));

    VesselState turned;
    turned.psi = kPi / 2.0;
    turned.u = 1.0;
    const VesselState dt = state_derivative(turned, {}, p);
    CHECK(dt.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dt.y == doctest::Approx(1.0));

    ParamSet bad = p;
    bad.m22 = 0.0;
    CHECK_THROWS_AS(state_derivative(moving, {}, bad), InvalidParameters);
    CHECK_THROWS_AS(rk4_step(moving, {}, bad, 0.1), InvalidParameters);
}

TEST_CASE("rk4_step")
{
    const ParamSet p = canal_boat_params();
    const VesselState rest;
    const VesselState next = rk4_step(rest, {}, p, 0.1);
    CHECK(next.to_vector() == rest.to_vector());
    CHECK_THROWS_AS(rk4_step(rest, {}, p, 0.0), std::invalid_argument);

    SUBCASE("free deceleration is monotone")
    {
        VesselState s;
        s.u = 2.0;
        double prev = s.u;
        for (int i = 0; i < 600; ++i)
        {
            s = rk4_step(s, {}, p, 0.1);
            CHECK(s.u < prev);
            CHECK(s.u > 0.0);
            prev = s.u;
        }
    }

    SUBCASE("fourth-order convergence on a zigzag input")
    {
        VesselState s0;
        s0.u = 1.8;
        const VesselState ref = integrate(s0, 10.0, 0.001, p);
        const VesselState coarse = integrate(s0, 10.0, 0.1, p);
        const VesselState fine = integrate(s0, 10.0, 0.05, p);
        const double e1 = (coarse.to_vector() - ref.to_vector()).norm();
        const double e2 = (fine.to_vector() - ref.to_vector()).norm();
        REQUIRE(e2 > 0.0);
        CHECK(std::log2(e1 / e2) >= 3.8);
    }
}

TEST_CASE("kinetic energy never increases without actuation")
{
    const ParamSet p = published_params();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    for (int trial = 0; trial < 100; ++trial)
    {
        VesselState s;
        s.u = d(rng);
        s.v = d(rng);
        s.r = d(rng);
        double e = kinetic_energy(s, p);
        for (int k = 0; k < 300; ++k)
        {
            s = rk4_step(s, {}, p, 0.1);
            const double e1 = kinetic_energy(s, p);
            REQUIRE(e1 <= e * (1.0 + 1e-9));
            e = e1;
        }
    }
}

TEST_CASE("augmented_step")
{
    const ParamSet p = canal_boat_params();
    VesselState s;
    s.u = 1.0;

    const AugmentedState a0 = augmented_step(s, {30.0, -20.0}, {}, p, 0.1);
    CHECK(a0.act.n_T == 30.0);
    CHECK(a0.act.n_S == -20.0);

    const AugmentedState a1 = augmented_step({}, {}, {10.0, 0.0}, p, 1.0);
    CHECK(a1.act.n_T == doctest::Approx(10.0).epsilon(1e-12));

    const AugmentedState a2 = augmented_step({}, {95.0, 0.0}, {10.0, 0.0}, p, 1.0);
    CHECK(a2.act.n_T == 100.0);
    const AugmentedState a3 = augmented_step({}, {0.0, -95.0}, {0.0, -40.0}, p, 1.0);
    CHECK(a3.act.n_S == -100.0);
}

TEST_CASE("augmented_jacobian matches central differences")
{
    const ParamSet p = canal_boat_params();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> pos(-50.0, 50.0), vel(-3.0, 3.0), yaw(-0.5, 0.5), act(-100.0, 100.0);
    for (int trial = 0; trial < 100; ++trial)
    {
        Vec8 x;
        x << pos(rng), pos(rng), yaw(rng) * 6.0, vel(rng), vel(rng) * 0.3, yaw(rng), act(rng), act(rng);
        Mat8 A;
        Mat82 B;
        augmented_jacobian(x, p, A, B);
        const Eigen::Vector2d w(1.0, -2.0);
        for (int j = 0; j < 8; ++j)
        {
            const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
            Vec8 xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const Vec8 fd = (augmented_derivative(xp, w, p) - augmented_derivative(xm, w, p)) / (2.0 * h);
            const double scale = std::max(1.0, A.col(j).cwiseAbs().maxCoeff());
            CHECK((fd - A.col(j)).cwiseAbs().maxCoeff() / scale < 1e-5);
        }
        CHECK(B(6, 0) == 1.0);
        CHECK(B(7, 1) == 1.0);
    }
}

TEST_CASE("parameter file round trip")
{
    const ParamSet p = published_params();
    p.validate();
    canal_boat_params().validate();

    std::stringstream ss;
    write_params(ss, p);
    const ParamSet q = read_params(ss);
    CHECK(q == p);

    std::istringstream missing("m11 1\n");
    CHECK_THROWS_AS(read_params(missing), ParseError);

    std::stringstream dup;
    write_params(dup, p);
    dup << "m11 5\n";
    CHECK_THROWS_AS(read_params(dup), ParseError);

    std::stringstream unknown;
    write_params(unknown, p);
    unknown << "bogus 1\n";
    CHECK_THROWS_AS(read_params(unknown), ParseError);

    std::stringstream commented;
    commented << "# fitted\n";
    write_params(commented, p);
    CHECK(read_params(commented) == p);
}

TEST_CASE("ParamSet validation")
{
    ParamSet p = published_params();
    p.X_u = 1.0;
    CHECK_THROWS_AS(p.validate(), InvalidParameters);
    p = published_params();
    p.delta_max = 2.0;
    CHECK_THROWS_AS(p.validate(), InvalidParameters);
    p = published_params();
    p.c = 0.0;
    CHECK_THROWS_AS(p.validate(), InvalidParameters);
}
