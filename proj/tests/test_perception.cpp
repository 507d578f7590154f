#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "canalnav/perception.hpp"
#include "perception_fixtures.hpp"

using namespace canal;
using fixtures::line_angle_diff;

namespace
{
constexpr double kPi = std::numbers::pi;

OccupancyGrid grid_of(const std::vector<Vec2> &pts, double res = 0.2, double extent = 50.0)
{
    PointCloud c;
    for (const Vec2 &p : pts)
        c.points.emplace_back(p.x(), p.y(), 0.0);
    return rasterize(c, res, extent);
}

// Segment in `found` whose center is closest to the truth's center.
const LineSegment *match(const std::vector<LineSegment> &found, const LineSegment &truth)
{
    const LineSegment *best = nullptr;
    double best_d = 1e300;
    for (const LineSegment &s : found)
    {
        const double d = (s.center() - truth.center()).norm() + 10.0 * line_angle_diff(s.theta, truth.theta);
        if (d < best_d)
        {
            best_d = d;
            best = &s;
        }
    }
    return best;
}
} // namespace

TEST_CASE("LineSegment geometry")
{
    const LineSegment s = LineSegment::from_endpoints({1.0, 1.0}, {1.0, -3.0});
    CHECK(s.theta == doctest::Approx(kPi / 2.0));
    CHECK(s.l == doctest::Approx(4.0));
    CHECK(s.center().isApprox(Vec2(1.0, -1.0)));
    CHECK(normalize_line_angle(-kPi / 4.0) == doctest::Approx(3.0 * kPi / 4.0));
    CHECK(normalize_line_angle(kPi) == doctest::Approx(0.0));
    CHECK(normalize_line_angle(7.0 * kPi + 0.25) == doctest::Approx(0.25));
}

TEST_CASE("point_segment_distance")
{
    const LineSegment seg{0.0, 0.0, 0.0, 10.0};
    CHECK(point_segment_distance(0.0, 3.0, seg) == doctest::Approx(3.0));
    CHECK(point_segment_distance(8.0, 4.0, seg) == doctest::Approx(5.0));
    CHECK(point_segment_distance(-2.5, 0.0, seg) == doctest::Approx(0.0));

    // Dense-sampling oracle.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-15.0, 15.0);
    const LineSegment tilted{1.0, -2.0, 0.6, 7.0};
    for (int i = 0; i < 50; ++i)
    {
        const Vec2 p(d(rng), d(rng));
        double best = 1e300;
        for (int k = 0; k <= 100000; ++k)
        {
            const Vec2 q = tilted.endpoint_a() + (tilted.endpoint_b() - tilted.endpoint_a()) * (k / 100000.0);
            best = std::min(best, (p - q).norm());
        }
        CHECK(point_segment_distance(p.x(), p.y(), tilted) == doctest::Approx(best).epsilon(1e-6));

        LineSegment flipped = tilted;
        flipped.theta += kPi;
        CHECK(point_segment_distance(p.x(), p.y(), flipped) ==
              doctest::Approx(point_segment_distance(p.x(), p.y(), tilted)));
    }
}

TEST_CASE("filter_points")
{
    FilterSpec spec;
    CHECK(filter_points({}, spec).points.empty());

    PointCloud edge;
    edge.points = {{10.0, 0.0, spec.z_max}, {10.0, 0.0, spec.z_max + 1e-9}, {-5.0, 0.0, 1.0}, {-3.95, 0.0, 1.0}};
    const PointCloud kept = filter_points(edge, spec);
    REQUIRE(kept.points.size() == 2);
    CHECK(kept.points[0] == edge.points[0]);
    CHECK(kept.points[1] == edge.points[3]);

    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> xy(-100.0, 100.0), z(-3.5, 5.5);
    PointCloud cloud;
    for (int i = 0; i < 1000; ++i)
        cloud.points.emplace_back(xy(rng), xy(rng), z(rng));
    // A few points in the wake box.
    for (int i = 0; i < 20; ++i)
        cloud.points.emplace_back(-5.0 + 0.05 * i, -1.0 + 0.1 * i, 0.0);

    std::size_t expected = 0;
    for (const Vec3 &p : cloud.points)
    {
        const bool in_box = p.z() >= -0.5 && p.z() <= 2.5 && std::abs(p.x()) <= 50.0 && std::abs(p.y()) <= 50.0;
        const bool in_wake = p.x() > -6.95 && p.x() < -3.95 && p.y() > -2.0 && p.y() < 2.0;
        expected += in_box && !in_wake;
    }
    const PointCloud once = filter_points(cloud, spec);
    CHECK(once.points.size() == expected);
    CHECK(filter_points(once, spec).points == once.points);

    FilterSpec bad;
    bad.z_min = 3.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("rasterize")
{
    const OccupancyGrid g = grid_of({Vec2(0.0, 0.0)}, 0.2, 5.0);
    CHECK(g.width == 50);
    CHECK(g.height == 50);
    REQUIRE(g.occupied_count() == 1);
    for (int iy = 0; iy < g.height; ++iy)
        for (int ix = 0; ix < g.width; ++ix)
            if (g.occupied(ix, iy))
            {
                const Vec2 c = g.cell_center(ix, iy);
                CHECK(std::abs(c.x()) <= 0.1 + 1e-12);
                CHECK(std::abs(c.y()) <= 0.1 + 1e-12);
            }

    CHECK(grid_of({Vec2(0.31, 0.41), Vec2(0.36, 0.45)}).occupied_count() == 1);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::vector<Vec2> pts;
    for (int i = 0; i < 500; ++i)
        pts.emplace_back(d(rng), d(rng));
    CHECK(grid_of(pts).occupied_count() <= pts.size());

    CHECK_THROWS_AS(rasterize({}, 0.0, 5.0), std::invalid_argument);
}

TEST_CASE("hough_lines on constructed walls")
{
    const HoughParams hp;
    CHECK(hough_lines(grid_of({}), hp).empty());

    SUBCASE("single wall along y = 5")
    {
        PointCloud c;
        fixtures::add_wall(c, {0.0, 5.0}, {20.0, 5.0});
        const auto segs = hough_lines(rasterize(c, 0.2, 50.0), hp);
        REQUIRE(segs.size() == 1);
        CHECK(line_angle_diff(segs[0].theta, 0.0) < kPi / 90.0);
        CHECK((segs[0].center() - Vec2(10.0, 5.0)).norm() <= 0.2);
        CHECK(std::abs(segs[0].l - 20.0) <= 0.4);
    }

    SUBCASE("perpendicular walls")
    {
        const auto segs = hough_lines(rasterize(fixtures::cloud_of(fixtures::l_corner_walls()), 0.2, 50.0), hp);
        REQUIRE(segs.size() == 2);
        CHECK(std::abs(line_angle_diff(segs[0].theta, segs[1].theta) - kPi / 2.0) < kPi / 90.0);
    }

    SUBCASE("gap splits a wall")
    {
        PointCloud c;
        fixtures::add_wall(c, {-10.0, 3.0}, {-2.0, 3.0});
        fixtures::add_wall(c, {2.0, 3.0}, {10.0, 3.0});
        const auto segs = hough_lines(rasterize(c, 0.2, 50.0), hp);
        CHECK(segs.size() == 2);
    }

    SUBCASE("short blobs are dropped")
    {
        PointCloud c;
        fixtures::add_wall(c, {0.0, 0.0}, {1.0, 0.0});
        CHECK(hough_lines(rasterize(c, 0.2, 50.0), hp).empty());
    }
}

TEST_CASE("hough support lies near the reported line")
{
    const HoughParams hp;
    const OccupancyGrid g = rasterize(fixtures::cloud_of(fixtures::rotate(fixtures::l_corner_walls(), 0.4)), 0.2, 50.0);
    const auto found = hough_lines_detailed(g, hp);
    REQUIRE(!found.empty());
    for (const DetectedSegment &d : found)
    {
        CHECK(static_cast<int>(d.support.size()) >= hp.vote_threshold);
        const Vec2 n(-std::sin(d.segment.theta), std::cos(d.segment.theta));
        for (const Vec2 &p : d.support)
            CHECK(std::abs(n.dot(p - d.segment.center())) <= hp.rho_resolution + 0.5 * g.resolution + 1e-9);
    }
}

TEST_CASE("hough accuracy on corridor, corner and rotated scenes")
{
    const HoughParams hp;
    for (const auto &walls : {fixtures::corridor_walls(), fixtures::l_corner_walls()})
    {
        for (double rot : {0.0, kPi / 6.0})
        {
            const auto scene = fixtures::rotate(walls, rot);
            const auto segs = hough_lines(rasterize(fixtures::cloud_of(scene), 0.2, 50.0), hp);
            REQUIRE(segs.size() == scene.size());
            for (const auto &w : scene)
            {
                const LineSegment *s = match(segs, w.truth());
                REQUIRE(s != nullptr);
                CHECK(line_angle_diff(s->theta, w.truth().theta) <= kPi / 90.0);
                CHECK((s->center() - w.truth().center()).norm() <= 0.2);
                CHECK(std::abs(s->l - w.truth().l) <= 0.4);
            }
        }
    }
}

TEST_CASE("segment frame transforms")
{
    const std::vector<LineSegment> segs = {{1.0, 2.0, 0.3, 4.0}, {-3.0, 5.0, 2.9, 1.5}};
    const auto same = segments_to_world(segs, VesselState{});
    for (std::size_t i = 0; i < segs.size(); ++i)
    {
        CHECK(same[i].x_c == doctest::Approx(segs[i].x_c));
        CHECK(same[i].theta == doctest::Approx(segs[i].theta));
    }

    VesselState quarter;
    quarter.psi = kPi / 2.0;
    const auto q = segments_to_world({{0.0, 0.0, 0.0, 2.0}}, quarter);
    CHECK(q[0].theta == doctest::Approx(kPi / 2.0));

    VesselState pose;
    pose.x = 12.0;
    pose.y = -4.0;
    pose.psi = 7.1;
    const auto back = segments_to_world(segments_to_body(segs, pose), pose);
    for (std::size_t i = 0; i < segs.size(); ++i)
    {
        CHECK(std::abs(back[i].x_c - segs[i].x_c) < 1e-9);
        CHECK(std::abs(back[i].y_c - segs[i].y_c) < 1e-9);
        CHECK(line_angle_diff(back[i].theta, segs[i].theta) < 1e-9);
        CHECK(back[i].l == segs[i].l);
    }
}

TEST_CASE("detect_segments pipeline")
{
    DetectionConfig cfg;
    const auto segs = detect_segments(fixtures::cloud_of(fixtures::corridor_walls()), cfg);
    REQUIRE(segs.size() == 2);
    CHECK(line_angle_diff(segs[0].theta, segs[1].theta) < kPi / 90.0);

    PointCloud high;
    for (int i = 0; i < 100; ++i)
        high.points.emplace_back(0.1 * i, 3.0, 10.0);
    CHECK(detect_segments(high, cfg).empty());

    const auto again = detect_segments(fixtures::cloud_of(fixtures::corridor_walls()), cfg);
    REQUIRE(again.size() == segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i)
        CHECK(again[i].x_c == segs[i].x_c);
}

TEST_CASE("CSV input and output")
{
    PointCloud c;
    c.points = {{1.0, 2.0, 0.5}, {-3.25, 4.0, 1.0}};
    std::stringstream ss;
    write_cloud_csv(ss, c);
    CHECK(read_cloud_csv(ss).points == c.points);

    std::istringstream bad("x,y,z\n1,2\n");
    CHECK_THROWS_AS(read_cloud_csv(bad), ParseError);
    std::istringstream header("a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(read_cloud_csv(header), ParseError);

    const std::vector<LineSegment> segs = {{1.0, 2.0, 0.5, 3.0}};
    std::stringstream s2;
    write_segments_csv(s2, segs);
    const auto back = read_segments_csv(s2);
    REQUIRE(back.size() == 1);
    CHECK(back[0].l == 3.0);

    std::ostringstream pgm;
    write_pgm(pgm, grid_of({Vec2(0.0, 0.0)}, 0.2, 1.0));
    CHECK(pgm.str().rfind("P2", 0) == 0);
}
