#include "canalnav/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "csv_util.hpp"

namespace canal
{

Vec2 LineSegment::direction() const
{
    return {std::cos(theta), std::sin(theta)};
}

Vec2 LineSegment::endpoint_a() const
{
    return center() - 0.5 * l * direction();
}

Vec2 LineSegment::endpoint_b() const
{
    return center() + 0.5 * l * direction();
}

LineSegment LineSegment::from_endpoints(const Vec2 &a, const Vec2 &b)
{
    const Vec2 d = b - a;
    const Vec2 c = 0.5 * (a + b);
    return {c.x(), c.y(), normalize_line_angle(std::atan2(d.y(), d.x())), d.norm()};
}

double normalize_line_angle(double theta)
{
    double t = std::fmod(theta, std::numbers::pi);
    if (t < 0.0)
        t += std::numbers::pi;
    if (t >= std::numbers::pi)
        t -= std::numbers::pi;
    return t;
}

double point_segment_distance(double x, double y, const LineSegment &seg)
{
    const Vec2 d = seg.direction();
    const Vec2 rel = Vec2(x, y) - seg.center();
    const double t = std::clamp(rel.dot(d), -0.5 * seg.l, 0.5 * seg.l);
    return (rel - t * d).norm();
}

bool FilterSpec::accepts(const Vec3 &p) const
{
    if (p.z() < z_min || p.z() > z_max || p.x() < x_min || p.x() > x_max || p.y() < y_min || p.y() > y_max)
        return false;
    if (keepout_enabled && p.x() > keepout_x_min && p.x() < keepout_x_max && p.y() > keepout_y_min &&
        p.y() < keepout_y_max)
        return false;
    return true;
}

void FilterSpec::validate() const
{
    if (!(z_min < z_max && x_min < x_max && y_min < y_max))
        throw std::invalid_argument("FilterSpec: each min must be below its max");
}

PointCloud filter_points(const PointCloud &cloud, const FilterSpec &spec)
{
    PointCloud out;
    std::copy_if(cloud.points.begin(), cloud.points.end(), std::back_inserter(out.points),
                 [&](const Vec3 &p) { return spec.accepts(p); });
    return out;
}

Vec2 OccupancyGrid::cell_center(int ix, int iy) const
{
    return origin + resolution * Vec2(ix + 0.5, iy + 0.5);
}

std::size_t OccupancyGrid::occupied_count() const
{
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](auto c) { return c != 0; }));
}

OccupancyGrid rasterize(const PointCloud &cloud, double resolution, double extent)
{
    if (!(resolution > 0.0))
        throw std::invalid_argument("rasterize: resolution must be positive");
    if (!(extent > 0.0))
        throw std::invalid_argument("rasterize: extent must be positive");
    OccupancyGrid g;
    g.resolution = resolution;
    g.origin = Vec2(-extent, -extent);
    g.width = g.height = static_cast<int>(std::ceil(2.0 * extent / resolution - 1e-9));
    g.cells.assign(static_cast<std::size_t>(g.width) * g.height, 0);
    for (const Vec3 &p : cloud.points)
    {
        const double fx = (p.x() - g.origin.x()) / resolution;
        const double fy = (p.y() - g.origin.y()) / resolution;
        if (!(fx >= 0.0 && fy >= 0.0))
            continue;
        const int ix = static_cast<int>(std::floor(fx));
        const int iy = static_cast<int>(std::floor(fy));
        if (ix >= g.width || iy >= g.height)
            continue;
        g.set(ix, iy);
    }
    return g;
}

void HoughParams::validate() const
{
    if (theta_bins < 2)
        throw std::invalid_argument("HoughParams: theta_bins must be >= 2");
    if (!(rho_resolution > 0.0))
        throw std::invalid_argument("HoughParams: rho_resolution must be positive");
}

namespace
{

struct LineFit
{
    Vec2 dir;     // unit direction
    Vec2 normal;  // unit normal
    double offset = 0.0; // normal . p for points on the line
};

LineFit fit_line(const std::vector<Vec2> &pts)
{
    Vec2 mean = Vec2::Zero();
    for (const Vec2 &p : pts)
        mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const Vec2 &p : pts)
        cov += (p - mean) * (p - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    LineFit f;
    f.dir = es.eigenvectors().col(1).normalized();
    f.normal = Vec2(-f.dir.y(), f.dir.x());
    f.offset = f.normal.dot(mean);
    return f;
}

// Hough space indexed by normal angle phi_k = k * pi / bins and rho = x cos(phi) + y sin(phi).
class Accumulator
{
public:
    Accumulator(int theta_bins, double rho_res, double rho_max)
        : bins_(theta_bins), rho_res_(rho_res), rho_max_(rho_max),
          rho_count_(static_cast<int>(std::ceil(2.0 * rho_max / rho_res)) + 1),
          votes_(static_cast<std::size_t>(bins_) * rho_count_, 0)
    {
        cos_.resize(bins_);
        sin_.resize(bins_);
        for (int k = 0; k < bins_; ++k)
        {
            const double phi = k * std::numbers::pi / bins_;
            cos_[k] = std::cos(phi);
            sin_[k] = std::sin(phi);
        }
    }

    void vote(const Vec2 &p, int delta)
    {
        for (int k = 0; k < bins_; ++k)
        {
            const int ir = rho_index(p.x() * cos_[k] + p.y() * sin_[k]);
            votes_[static_cast<std::size_t>(k) * rho_count_ + ir] += delta;
        }
    }

    // Highest bin; ties resolved toward the lowest index for determinism.
    std::pair<std::size_t, int> peak() const
    {
        const auto it = std::max_element(votes_.begin(), votes_.end());
        return {static_cast<std::size_t>(it - votes_.begin()), *it};
    }

    void clear(std::size_t idx) { votes_[idx] = 0; }

    double phi(std::size_t idx) const { return static_cast<double>(idx / rho_count_) * std::numbers::pi / bins_; }
    double rho(std::size_t idx) const { return static_cast<double>(idx % rho_count_) * rho_res_ - rho_max_; }

private:
    int rho_index(double rho) const
    {
        return std::clamp(static_cast<int>(std::lround((rho + rho_max_) / rho_res_)), 0, rho_count_ - 1);
    }

    int bins_;
    double rho_res_;
    double rho_max_;
    int rho_count_;
    std::vector<int> votes_;
    std::vector<double> cos_, sin_;
};

} // namespace

std::vector<DetectedSegment> hough_lines_detailed(const OccupancyGrid &grid, const HoughParams &hp)
{
    hp.validate();
    std::vector<Vec2> cells;
    for (int iy = 0; iy < grid.height; ++iy)
        for (int ix = 0; ix < grid.width; ++ix)
            if (grid.occupied(ix, iy))
                cells.push_back(grid.cell_center(ix, iy));

    std::vector<DetectedSegment> out;
    if (cells.empty())
        return out;

    double rho_max = 0.0;
    for (const Vec2 &c : cells)
        rho_max = std::max(rho_max, c.norm());
    rho_max += 2.0 * hp.rho_resolution;

    Accumulator acc(hp.theta_bins, hp.rho_resolution, rho_max);
    for (const Vec2 &c : cells)
        acc.vote(c, +1);
    std::vector<bool> used(cells.size(), false);

    auto collect = [&](const Vec2 &normal, double offset) {
        std::vector<std::size_t> idx;
        // Cells claimed by earlier lines stay eligible so that walls meeting at
        // a corner both reach it; emit_run demands enough unclaimed cells.
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (std::abs(normal.dot(cells[i]) - offset) <= hp.rho_resolution)
                idx.push_back(i);
        return idx;
    };
    auto points_of = [&](const std::vector<std::size_t> &idx) {
        std::vector<Vec2> pts;
        pts.reserve(idx.size());
        for (std::size_t i : idx)
            pts.push_back(cells[i]);
        return pts;
    };

    while (true)
    {
        const auto [peak_idx, peak_votes] = acc.peak();
        if (peak_votes < hp.vote_threshold)
            break;

        const double phi = acc.phi(peak_idx);
        Vec2 normal(std::cos(phi), std::sin(phi));
        double offset = acc.rho(peak_idx);
        std::vector<std::size_t> support = collect(normal, offset);

        // Refine the quantized peak with a total-least-squares fit of its support.
        for (int pass = 0; pass < 2 && support.size() >= 2; ++pass)
        {
            const LineFit f = fit_line(points_of(support));
            auto refined = collect(f.normal, f.offset);
            if (refined.size() < 2)
                break;
            normal = f.normal;
            offset = f.offset;
            support = std::move(refined);
        }

        const bool any_fresh = std::any_of(support.begin(), support.end(), [&](std::size_t i) { return !used[i]; });
        if (!any_fresh)
        {
            acc.clear(peak_idx);
            continue;
        }

        const Vec2 dir(-normal.y(), normal.x());
        std::sort(support.begin(), support.end(),
                  [&](std::size_t a, std::size_t b) { return dir.dot(cells[a]) < dir.dot(cells[b]); });

        std::size_t run_begin = 0;
        auto emit_run = [&](std::size_t b, std::size_t e) {
            const std::vector<std::size_t> run(support.begin() + static_cast<std::ptrdiff_t>(b),
                                               support.begin() + static_cast<std::ptrdiff_t>(e));
            const auto fresh = std::count_if(run.begin(), run.end(), [&](std::size_t i) { return !used[i]; });
            if (fresh < hp.vote_threshold)
                return;
            std::vector<Vec2> pts = points_of(run);
            const LineFit f = fit_line(pts);
            double tmin = 1e300, tmax = -1e300;
            for (const Vec2 &p : pts)
            {
                tmin = std::min(tmin, f.dir.dot(p));
                tmax = std::max(tmax, f.dir.dot(p));
            }
            const double length = tmax - tmin + grid.resolution;
            if (length < hp.min_length)
                return;
            const Vec2 c = f.offset * f.normal + 0.5 * (tmin + tmax) * f.dir;
            DetectedSegment ds;
            ds.segment = {c.x(), c.y(), normalize_line_angle(std::atan2(f.dir.y(), f.dir.x())), length};
            ds.support = std::move(pts);
            out.push_back(std::move(ds));
        };
        for (std::size_t k = 1; k <= support.size(); ++k)
        {
            const bool split = k == support.size() ||
                               dir.dot(cells[support[k]]) - dir.dot(cells[support[k - 1]]) > hp.max_gap;
            if (split)
            {
                emit_run(run_begin, k);
                run_begin = k;
            }
        }

        for (std::size_t i : support)
        {
            if (used[i])
                continue;
            used[i] = true;
            acc.vote(cells[i], -1);
        }
    }
    return out;
}

std::vector<LineSegment> hough_lines(const OccupancyGrid &grid, const HoughParams &hp)
{
    std::vector<LineSegment> out;
    for (auto &d : hough_lines_detailed(grid, hp))
        out.push_back(d.segment);
    return out;
}

std::vector<LineSegment> segments_to_world(const std::vector<LineSegment> &segs, const VesselState &pose)
{
    const double c = std::cos(pose.psi), s = std::sin(pose.psi);
    std::vector<LineSegment> out;
    out.reserve(segs.size());
    for (const LineSegment &seg : segs)
    {
        out.push_back({pose.x + c * seg.x_c - s * seg.y_c, pose.y + s * seg.x_c + c * seg.y_c,
                       normalize_line_angle(seg.theta + pose.psi), seg.l});
    }
    return out;
}

std::vector<LineSegment> segments_to_body(const std::vector<LineSegment> &segs, const VesselState &pose)
{
    const double c = std::cos(pose.psi), s = std::sin(pose.psi);
    std::vector<LineSegment> out;
    out.reserve(segs.size());
    for (const LineSegment &seg : segs)
    {
        const double dx = seg.x_c - pose.x, dy = seg.y_c - pose.y;
        out.push_back({c * dx + s * dy, -s * dx + c * dy, normalize_line_angle(seg.theta - pose.psi), seg.l});
    }
    return out;
}

std::vector<LineSegment> detect_segments(const PointCloud &cloud, const DetectionConfig &cfg)
{
    const PointCloud kept = filter_points(cloud, cfg.filter);
    if (kept.points.empty())
        return {};
    return hough_lines(rasterize(kept, cfg.grid_resolution, cfg.grid_extent), cfg.hough);
}

PointCloud read_cloud_csv(std::istream &is)
{
    PointCloud cloud;
    const auto rows = csv::read_numeric(is, {"x", "y", "z"}, "point cloud");
    cloud.points.reserve(rows.size());
    for (const auto &r : rows)
        cloud.points.emplace_back(r[0], r[1], r[2]);
    return cloud;
}

PointCloud load_cloud_csv(const std::string &path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open " + path);
    return read_cloud_csv(is);
}

void write_cloud_csv(std::ostream &os, const PointCloud &cloud)
{
    std::ostringstream buf;
    buf << std::setprecision(17) << "x,y,z\n";
    for (const Vec3 &p : cloud.points)
        buf << p.x() << ',' << p.y() << ',' << p.z() << '\n';
    os << buf.str();
}

void write_segments_csv(std::ostream &os, const std::vector<LineSegment> &segs)
{
    std::ostringstream buf;
    buf << std::setprecision(12) << "x_c,y_c,theta,l\n";
    for (const LineSegment &s : segs)
        buf << s.x_c << ',' << s.y_c << ',' << s.theta << ',' << s.l << '\n';
    os << buf.str();
}

std::vector<LineSegment> read_segments_csv(std::istream &is)
{
    std::vector<LineSegment> out;
    for (const auto &r : csv::read_numeric(is, {"x_c", "y_c", "theta", "l"}, "segments"))
        out.push_back({r[0], r[1], r[2], r[3]});
    return out;
}

void write_pgm(std::ostream &os, const OccupancyGrid &grid)
{
    // Plain PGM, north up: row 0 of the image is the top (largest y) row of the grid.
    std::ostringstream buf;
    buf << "P2\n" << grid.width << ' ' << grid.height << "\n255\n";
    for (int iy = grid.height - 1; iy >= 0; --iy)
    {
        for (int ix = 0; ix < grid.width; ++ix)
            buf << (grid.occupied(ix, iy) ? 0 : 255) << (ix + 1 < grid.width ? ' ' : '\n');
    }
    os << buf.str();
}

} // namespace canal
