#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "canalnav/vessel.hpp"

namespace canal
{

/// Straight obstacle edge given by its center, direction angle in [0, pi), and length.
struct LineSegment
{
    double x_c = 0.0;
    double y_c = 0.0;
    double theta = 0.0;
    double l = 0.0;

    Vec2 center() const { return {x_c, y_c}; }
    Vec2 direction() const;
    Vec2 endpoint_a() const; // center - l/2 * direction
    Vec2 endpoint_b() const; // center + l/2 * direction

    static LineSegment from_endpoints(const Vec2 &a, const Vec2 &b);
};

double normalize_line_angle(double theta); // [0, pi)

double point_segment_distance(double x, double y, const LineSegment &seg);

struct PointCloud
{
    std::vector<Vec3> points;
};

struct FilterSpec
{
    double z_min = -0.5, z_max = 2.5;
    double x_min = -50.0, x_max = 50.0;
    double y_min = -50.0, y_max = 50.0;

    // Wake keep-out box in the body frame; points strictly inside are dropped.
    bool keepout_enabled = true;
    double keepout_x_min = -6.95, keepout_x_max = -3.95;
    double keepout_y_min = -2.0, keepout_y_max = 2.0;

    bool accepts(const Vec3 &p) const;
    void validate() const;
};

PointCloud filter_points(const PointCloud &cloud, const FilterSpec &spec);

struct OccupancyGrid
{
    double resolution = 0.2;
    Vec2 origin = Vec2::Zero(); // body-frame coordinates of the lower-left corner of cell (0, 0)
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> cells; // row-major, index = iy * width + ix

    bool occupied(int ix, int iy) const { return cells[static_cast<std::size_t>(iy) * width + ix] != 0; }
    void set(int ix, int iy) { cells[static_cast<std::size_t>(iy) * width + ix] = 1; }
    Vec2 cell_center(int ix, int iy) const;
    std::size_t occupied_count() const;
};

// Square grid covering [-extent, extent]^2 around the body origin.
OccupancyGrid rasterize(const PointCloud &cloud, double resolution, double extent);

struct HoughParams
{
    int theta_bins = 180;
    double rho_resolution = 0.2;
    int vote_threshold = 10;
    double max_gap = 1.0;
    double min_length = 2.0;

    void validate() const;
};

struct DetectedSegment
{
    LineSegment segment;
    std::vector<Vec2> support; // centers of the occupied cells assigned to this segment
};

std::vector<DetectedSegment> hough_lines_detailed(const OccupancyGrid &grid, const HoughParams &hp);
std::vector<LineSegment> hough_lines(const OccupancyGrid &grid, const HoughParams &hp);

std::vector<LineSegment> segments_to_world(const std::vector<LineSegment> &segs, const VesselState &pose);
std::vector<LineSegment> segments_to_body(const std::vector<LineSegment> &segs, const VesselState &pose);

struct DetectionConfig
{
    FilterSpec filter;
    HoughParams hough;
    double grid_resolution = 0.2;
    double grid_extent = 50.0;
};

// filter -> rasterize -> Hough, all in the body frame.
std::vector<LineSegment> detect_segments(const PointCloud &cloud, const DetectionConfig &cfg);

PointCloud read_cloud_csv(std::istream &is);
PointCloud load_cloud_csv(const std::string &path);
void write_cloud_csv(std::ostream &os, const PointCloud &cloud);
void write_segments_csv(std::ostream &os, const std::vector<LineSegment> &segs);
std::vector<LineSegment> read_segments_csv(std::istream &is);
void write_pgm(std::ostream &os, const OccupancyGrid &grid);

} // namespace canal
