#include "idkit/shape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "idkit/error.hpp"
#include "idkit/records.hpp"

namespace idkit::shape {

namespace {

// Uniform cubic B-spline basis at local parameter u.
std::array<double, 4> basis(double u) {
    const double u2 = u * u;
    const double u3 = u2 * u;
    const double v = 1.0 - u;
    return {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0};
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
    const double d1 = cross(c, d, a);
    const double d2 = cross(c, d, b);
    const double d3 = cross(a, b, c);
    const double d4 = cross(a, b, d);
    if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
    if (d1 == 0 && on_segment(a, c, d)) return true;
    if (d2 == 0 && on_segment(b, c, d)) return true;
    if (d3 == 0 && on_segment(c, a, b)) return true;
    if (d4 == 0 && on_segment(d, a, b)) return true;
    return false;
}

void fill_row(std::span<const Polyline> shapes, const Window& window, std::size_t resolution, double res,
              std::size_t row, std::uint8_t* out, std::vector<double>& xs) {
    const double half = static_cast<double>(resolution) / 2.0;
    // Centres are formed as (i + 0.5 - N/2) * res so mirrored pixels get exactly negated coordinates.
    const double y = window.centre.y - (static_cast<double>(row) + 0.5 - half) * res;
    xs.clear();
    for (const auto& poly : shapes) {
        const std::size_t n = poly.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& a = poly[i];
            const Vec2& b = poly[(i + 1) % n];
            if ((a.y <= y && y < b.y) || (b.y <= y && y < a.y)) {
                xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        const double lo = xs[k];
        const double hi = xs[k + 1];
        for (std::size_t col = 0; col < resolution; ++col) {
            const double x = window.centre.x + (static_cast<double>(col) + 0.5 - half) * res;
            if (x >= lo && x <= hi) out[col] = 1;
        }
    }
}

Raster rasterize_impl(std::span<const Polyline> shapes, const Window& window, std::size_t resolution, bool parallel) {
    if (resolution == 0 || !(window.extent_nm > 0.0)) throw std::invalid_argument("raster window must be non-empty");
    for (const auto& poly : shapes) {
        if (poly.size() < 3) throw std::invalid_argument("polyline needs at least 3 vertices");
        if (self_intersects(poly)) throw std::invalid_argument("self-intersecting outline is not fabricable");
    }
    const double res = window.extent_nm / static_cast<double>(resolution);
    Raster r(resolution, res);
    const auto rows = static_cast<std::ptrdiff_t>(resolution);
    if (!parallel) {
        std::vector<double> xs;
        for (std::ptrdiff_t row = 0; row < rows; ++row) {
            fill_row(shapes, window, resolution, res, static_cast<std::size_t>(row),
                     r.cells.data() + static_cast<std::size_t>(row) * resolution, xs);
        }
        return r;
    }
#pragma omp parallel
    {
        std::vector<double> xs;
#pragma omp for schedule(static)
        for (std::ptrdiff_t row = 0; row < rows; ++row) {
            fill_row(shapes, window, resolution, res, static_cast<std::size_t>(row),
                     r.cells.data() + static_cast<std::size_t>(row) * resolution, xs);
        }
    }
    return r;
}

Polyline translated(const Polyline& p, Vec2 by) {
    Polyline out(p);
    for (auto& v : out) {
        v.x += by.x;
        v.y += by.y;
    }
    return out;
}

SupercellRaster build_layout(std::string problem, const DesignPoint& point, double pitch,
                             std::size_t first_radius, std::size_t resolution) {
    if (resolution < 128 || resolution % 4 != 0)
        throw std::invalid_argument("supercell resolution must be >= 128 and a multiple of 4");
    SupercellRaster out;
    out.problem = std::move(problem);
    out.pitch_nm = pitch;
    out.provenance = point;
    const std::size_t block = resolution / 2;
    out.grid = Raster(resolution, 2.0 * pitch / static_cast<double>(resolution));
    // Block k: row = k / 2 (0 = top), col = k % 2 (0 = left).
    for (std::size_t k = 0; k < 4; ++k) {
        const std::array<double, 4> radii = {point.number(first_radius + 4 * k), point.number(first_radius + 4 * k + 1),
                                             point.number(first_radius + 4 * k + 2),
                                             point.number(first_radius + 4 * k + 3)};
        const auto outline = subcell_shape(ControlPolygon(radii, pitch));
        const Polyline shapes[] = {outline};
        out.subcells[k] = rasterize(shapes, Window{pitch, {0.0, 0.0}}, block);
        const double cx = (k % 2 == 0 ? -0.5 : 0.5) * pitch;
        const double cy = (k / 2 == 0 ? 0.5 : -0.5) * pitch;
        out.outlines[k] = translated(outline, {cx, cy});
        const std::size_t row0 = (k / 2) * block;
        const std::size_t col0 = (k % 2) * block;
        for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t j = 0; j < block; ++j) out.grid.at(row0 + i, col0 + j) = out.subcells[k].at(i, j);
        }
    }
    return out;
}

}  // namespace

Polyline bspline_closed(std::span<const Vec2> controls, std::size_t samples) {
    const std::size_t n = controls.size();
    if (n < 4) throw std::invalid_argument("closed B-spline needs at least 4 control points");
    if (samples == 0 || samples % n != 0) throw std::invalid_argument("sample count must be a positive multiple of the control count");
    const std::size_t per = samples / n;
    Polyline out;
    out.reserve(samples);
    for (std::size_t s = 0; s < n; ++s) {
        const Vec2& p0 = controls[(s + n - 1) % n];
        const Vec2& p1 = controls[s];
        const Vec2& p2 = controls[(s + 1) % n];
        const Vec2& p3 = controls[(s + 2) % n];
        for (std::size_t t = 0; t < per; ++t) {
            const auto b = basis(static_cast<double>(t) / static_cast<double>(per));
            out.push_back({b[0] * p0.x + b[1] * p1.x + b[2] * p2.x + b[3] * p3.x,
                           b[0] * p0.y + b[1] * p1.y + b[2] * p2.y + b[3] * p3.y});
        }
    }
    return out;
}

ControlPolygon::ControlPolygon(std::array<double, 4> radii, double cell_nm) : radii_(radii), cell_(cell_nm) {
    if (!(cell_nm > 2.0 * kMinRadius)) throw std::invalid_argument("cell too small for the minimum radius");
    for (const double r : radii_) {
        if (!(r >= kMinRadius && r <= cell_nm / 2.0))
            throw std::invalid_argument(fmt::format("radius {} outside [{}, {}]", r, kMinRadius, cell_nm / 2.0));
    }
}

std::vector<Vec2> ControlPolygon::mirrored_controls() const {
    std::array<Vec2, 4> q;
    for (std::size_t j = 0; j < 4; ++j) q[j] = {radii_[j] * std::cos(kAngles[j]), radii_[j] * std::sin(kAngles[j])};
    std::vector<Vec2> out;
    out.reserve(16);
    for (std::size_t j = 0; j < 4; ++j) out.push_back(q[j]);
    for (std::size_t j = 0; j < 4; ++j) out.push_back({-q[3 - j].x, q[3 - j].y});
    for (std::size_t j = 0; j < 4; ++j) out.push_back({-q[j].x, -q[j].y});
    for (std::size_t j = 0; j < 4; ++j) out.push_back({q[3 - j].x, -q[3 - j].y});
    return out;
}

Polyline subcell_shape(const ControlPolygon& cp, std::size_t samples_per_segment) {
    if (samples_per_segment < 2 || samples_per_segment % 2 != 0)
        throw std::invalid_argument("samples per segment must be even and >= 2");
    const std::size_t m = samples_per_segment;
    const auto controls = cp.mirrored_controls();
    const auto full = bspline_closed(controls, 16 * m);
    // Quadrant I runs from the x-axis crossing (segment 15, u = 1/2) to the
    // y-axis crossing (segment 3, u = 1/2): 4m + 1 samples.
    std::vector<Vec2> q;
    q.reserve(4 * m + 1);
    for (std::size_t i = 0; i <= 4 * m; ++i) q.push_back(full[(15 * m + m / 2 + i) % (16 * m)]);
    q.front().y = 0.0;
    q.back().x = 0.0;
    Polyline out;
    out.reserve(16 * m);
    for (std::size_t i = 0; i <= 4 * m; ++i) out.push_back(q[i]);
    for (std::size_t i = 4 * m; i-- > 0;) out.push_back({-q[i].x, q[i].y});
    for (std::size_t i = 1; i <= 4 * m; ++i) out.push_back({-q[i].x, -q[i].y});
    for (std::size_t i = 4 * m; i-- > 1;) out.push_back({q[i].x, -q[i].y});
    return out;
}

Raster::Raster(std::size_t n, double resolution) : size(n), resolution_nm(resolution), cells(n * n, 0) {}

std::size_t Raster::count() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

Raster Raster::mirrored_horizontal() const {
    Raster out(size, resolution_nm);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) out.at(i, size - 1 - j) = at(i, j);
    }
    return out;
}

Raster Raster::mirrored_vertical() const {
    Raster out(size, resolution_nm);
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) out.at(size - 1 - i, j) = at(i, j);
    }
    return out;
}

bool self_intersects(const Polyline& poly) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;  // adjacent through the closing edge
            if (segments_intersect(a, b, poly[j], poly[(j + 1) % n])) return true;
        }
    }
    return false;
}

Raster rasterize(std::span<const Polyline> shapes, const Window& window, std::size_t resolution) {
    return rasterize_impl(shapes, window, resolution, true);
}

Raster rasterize_serial(std::span<const Polyline> shapes, const Window& window, std::size_t resolution) {
    return rasterize_impl(shapes, window, resolution, false);
}

bool check_single_connected(const Raster& r) {
    const std::size_t n = r.size;
    if (n == 0 || r.count() == 0) return false;
    // Foreground: 4-connected flood fill from the first set pixel.
    std::vector<std::uint8_t> seen(n * n, 0);
    std::vector<std::size_t> stack;
    const auto first = static_cast<std::size_t>(std::find(r.cells.begin(), r.cells.end(), 1) - r.cells.begin());
    stack.push_back(first);
    seen[first] = 1;
    std::size_t reached = 0;
    while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        ++reached;
        const std::size_t i = p / n;
        const std::size_t j = p % n;
        const auto visit = [&](std::size_t q) {
            if (r.cells[q] == 1 && seen[q] == 0) {
                seen[q] = 1;
                stack.push_back(q);
            }
        };
        if (i > 0) visit(p - n);
        if (i + 1 < n) visit(p + n);
        if (j > 0) visit(p - 1);
        if (j + 1 < n) visit(p + 1);
    }
    if (reached != r.count()) return false;

    // Background: 8-connected fill on a grid padded by one empty ring, so
    // everything outside the shape joins a single component.
    const std::size_t m = n + 2;
    const auto background = [&](std::size_t i, std::size_t j) {
        if (i == 0 || j == 0 || i == m - 1 || j == m - 1) return true;
        return r.at(i - 1, j - 1) == 0;
    };
    std::vector<std::uint8_t> bseen(m * m, 0);
    std::size_t total_bg = 0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) total_bg += background(i, j) ? 1 : 0;
    }
    stack.assign(1, 0);
    bseen[0] = 1;
    std::size_t reached_bg = 0;
    while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        ++reached_bg;
        const auto i = static_cast<std::ptrdiff_t>(p / m);
        const auto j = static_cast<std::ptrdiff_t>(p % m);
        for (std::ptrdiff_t di = -1; di <= 1; ++di) {
            for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
                const auto a = i + di;
                const auto b = j + dj;
                if (a < 0 || b < 0 || a >= static_cast<std::ptrdiff_t>(m) || b >= static_cast<std::ptrdiff_t>(m)) continue;
                const auto q = static_cast<std::size_t>(a) * m + static_cast<std::size_t>(b);
                if (bseen[q] == 0 && background(static_cast<std::size_t>(a), static_cast<std::size_t>(b))) {
                    bseen[q] = 1;
                    stack.push_back(q);
                }
            }
        }
    }
    return reached_bg == total_bg;
}

SupercellRaster tpv_layout(const DesignPoint& point, std::size_t resolution) {
    const auto space = DesignSpace::tpv();
    if (const auto v = validate(space, point); !v) throw StructuralError("invalid TPV point: " + v.violations.front().message);
    return build_layout("tpv", point, point.number(0), 3, resolution);
}

SupercellRaster scf_layout(const DesignPoint& point, std::size_t resolution) {
    const auto space = DesignSpace::scf();
    if (const auto v = validate(space, point); !v) throw StructuralError("invalid SCF point: " + v.violations.front().message);
    auto out = build_layout("scf", point, point.number(0), 2, resolution);
    out.pillar_height_nm = point.number(1);
    out.film_thickness_nm = 70.0;
    return out;
}

SupercellRaster layout_for(const DesignSpace& space, const DesignPoint& point, std::size_t resolution) {
    if (space.name() == "tpv") return tpv_layout(point, resolution);
    if (space.name() == "scf") return scf_layout(point, resolution);
    throw ConfigError("problem " + space.name() + " has no supercell geometry");
}

void write_pgm(const SupercellRaster& raster, const DesignSpace& space, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << "P5\n" << raster.grid.size << " " << raster.grid.size << "\n255\n";
        for (const auto c : raster.grid.cells) out.put(static_cast<char>(c ? 255 : 0));
    }
    nlohmann::ordered_json meta;
    meta["problem"] = raster.problem;
    meta["pitch_nm"] = raster.pitch_nm;
    meta["supercell_nm"] = 2.0 * raster.pitch_nm;
    meta["pixels"] = raster.grid.size;
    meta["resolution_nm_per_px"] = raster.grid.resolution_nm;
    if (space.name() == "scf") {
        meta["pillar_height_nm"] = raster.pillar_height_nm;
        meta["film_thickness_nm"] = raster.film_thickness_nm;
    }
    meta["point"] = point_to_json(raster.provenance);
    std::ofstream side(path.string() + ".json", std::ios::binary | std::ios::trunc);
    side << meta.dump(2) << '\n';
}

}  // namespace idkit::shape
