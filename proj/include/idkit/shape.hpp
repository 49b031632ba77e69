#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "idkit/design_space.hpp"

namespace idkit::shape {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

// Closed polygon; the last vertex connects back to the first.
using Polyline = std::vector<Vec2>;

// Uniform periodic cubic B-spline through `controls` (>= 4), evaluated at
// `samples` equally spaced parameters. Sample s*m+t of segment s sits at
// local parameter t/m, m = samples / controls.size() (samples must be a
// multiple of the control count).
Polyline bspline_closed(std::span<const Vec2> controls, std::size_t samples);

// Four radii at the fixed quadrant-I angles pi/16, 3pi/16, 5pi/16, 7pi/16.
class ControlPolygon {
public:
    static constexpr std::array<double, 4> kAngles = {std::numbers::pi / 16, 3 * std::numbers::pi / 16,
                                                      5 * std::numbers::pi / 16, 7 * std::numbers::pi / 16};
    static constexpr double kMinRadius = 40.0;

    // Radii must lie in [40, cell/2].
    ControlPolygon(std::array<double, 4> radii, double cell_nm);

    const std::array<double, 4>& radii() const { return radii_; }
    double cell() const { return cell_; }

    // 16 control points, counter-clockwise from angle pi/16, built from the
    // quadrant-I points by exact sign flips.
    std::vector<Vec2> mirrored_controls() const;

private:
    std::array<double, 4> radii_;
    double cell_;
};

// Sub-cell outline centred on the origin. Quadrant I is evaluated on the
// spline and the other three quadrants are exact reflections of it.
Polyline subcell_shape(const ControlPolygon& cp, std::size_t samples_per_segment = 8);

struct Raster {
    std::size_t size = 0;        // N x N
    double resolution_nm = 0.0;  // nm per pixel
    std::vector<std::uint8_t> cells;  // row-major, row 0 at the top

    Raster() = default;
    Raster(std::size_t n, double resolution);

    std::uint8_t at(std::size_t row, std::size_t col) const { return cells[row * size + col]; }
    std::uint8_t& at(std::size_t row, std::size_t col) { return cells[row * size + col]; }
    std::size_t count() const;
    Raster mirrored_horizontal() const;  // x -> -x
    Raster mirrored_vertical() const;    // y -> -y
    bool operator==(const Raster&) const = default;
};

// Square window [cx - extent/2, cx + extent/2] x [cy - extent/2, cy + extent/2]
// sampled at pixel centres.
struct Window {
    double extent_nm = 0.0;
    Vec2 centre{};
};

// Even-odd fill of the polylines; a pixel is set when its centre is inside.
// Self-intersecting input raises std::invalid_argument.
Raster rasterize(std::span<const Polyline> shapes, const Window& window, std::size_t resolution);
Raster rasterize_serial(std::span<const Polyline> shapes, const Window& window, std::size_t resolution);

bool self_intersects(const Polyline& poly);

// One 4-connected foreground component and one 8-connected background
// component (i.e. no holes).
bool check_single_connected(const Raster& r);

struct SupercellRaster {
    std::string problem;
    Raster grid;                       // whole supercell
    std::array<Raster, 4> subcells;    // block k: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
    std::array<Polyline, 4> outlines;  // sub-cell outlines in supercell coordinates (origin at centre)
    double pitch_nm = 0.0;             // sub-cell pitch (x0); the supercell side is 2 * pitch
    double pillar_height_nm = 0.0;     // SCF only
    double film_thickness_nm = 0.0;    // SCF only (70 nm SiN3 film)
    DesignPoint provenance;
};

constexpr std::size_t kDefaultResolution = 256;

SupercellRaster tpv_layout(const DesignPoint& point, std::size_t resolution = kDefaultResolution);
SupercellRaster scf_layout(const DesignPoint& point, std::size_t resolution = kDefaultResolution);
// Dispatches on the space name ("tpv" | "scf").
SupercellRaster layout_for(const DesignSpace& space, const DesignPoint& point,
                           std::size_t resolution = kDefaultResolution);

// Geometry payload for external simulators: binary PGM (P5, 0/255) plus a
// JSON sidecar at <path>.json.
void write_pgm(const SupercellRaster& raster, const DesignSpace& space, const std::filesystem::path& path);

}  // namespace idkit::shape
