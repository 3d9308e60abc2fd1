#pragma once

// Octree-refined lattice evaluation of an occupancy field, marching cubes,
// and OBJ files.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "contrec/autodiff.hpp"
#include "contrec/util.hpp"

namespace contrec {

using Point3 = std::array<double, 3>;

// Batched field: points in [-0.5, 0.5]^3 to occupancy probabilities.
using FieldFn = std::function<std::vector<double>(const std::vector<Point3>&)>;

inline FieldFn pointwise(std::function<double(const Point3&)> f) {
    return [f = std::move(f)](const std::vector<Point3>& pts) {
        std::vector<double> out(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) out[i] = f(pts[i]);
        return out;
    };
}

// Corner values on an (res+1)^3 lattice over the unit cube; NaN marks
// points never evaluated. `cells` lists the cells to polygonise (all cells
// when `dense`).
struct Lattice {
    std::size_t res = 0;
    std::vector<double> values;
    std::vector<std::size_t> cells;
    bool dense = false;
    std::size_t evaluations = 0;

    std::size_t side() const { return res + 1; }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * side() + j) * side() + i; }
    Point3 position(std::size_t i, std::size_t j, std::size_t k) const {
        const double r = static_cast<double>(res);
        return {static_cast<double>(i) / r - 0.5, static_cast<double>(j) / r - 0.5, static_cast<double>(k) / r - 0.5};
    }
};

namespace detail {

inline bool power_of_two(std::size_t v) { return v && !(v & (v - 1)); }

// Evaluates every listed lattice point not yet known, in one batch.
inline void evaluate_points(Lattice& lat, const FieldFn& field, std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    std::vector<std::size_t> todo;
    std::vector<Point3> pts;
    const std::size_t s = lat.side();
    for (auto p : idx) {
        if (!std::isnan(lat.values[p])) continue;
        todo.push_back(p);
        pts.push_back(lat.position(p % s, (p / s) % s, p / (s * s)));
    }
    if (todo.empty()) return;
    const auto vals = field(pts);
    if (vals.size() != pts.size()) throw ad::ContractError("field returned " + std::to_string(vals.size()) + " values for " + std::to_string(pts.size()) + " points");
    for (std::size_t n = 0; n < todo.size(); ++n) {
        if (!std::isfinite(vals[n])) {
            throw ad::NumericError("field is non-finite at (" + fmt_double(pts[n][0]) + ", " + fmt_double(pts[n][1]) + ", " + fmt_double(pts[n][2]) + ")");
        }
        lat.values[todo[n]] = vals[n];
    }
    lat.evaluations += todo.size();
}

// Fine-lattice indices of the 8 corners of cell (ci, cj, ck) at a level
// whose cells span `step` fine cells. Bit b of the corner number selects +x,
// +y, +z for b = 0, 1, 2.
inline std::array<std::size_t, 8> cell_corners(const Lattice& lat, std::size_t ci, std::size_t cj, std::size_t ck, std::size_t step) {
    std::array<std::size_t, 8> c{};
    for (std::size_t b = 0; b < 8; ++b) c[b] = lat.index((ci + (b & 1)) * step, (cj + ((b >> 1) & 1)) * step, (ck + ((b >> 2) & 1)) * step);
    return c;
}

}  // namespace detail

inline Lattice dense_lattice(const FieldFn& field, std::size_t res) {
    if (res == 0) throw ConfigError("mesh resolution must be >= 1");
    Lattice lat;
    lat.res = res;
    lat.dense = true;
    lat.values.assign(lat.side() * lat.side() * lat.side(), std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> all(lat.values.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    detail::evaluate_points(lat, field, std::move(all));
    return lat;
}

// Dense r0^3 evaluation, then straddling cells are split level by level up
// to r_final. At each level a straddling cell whose face has mixed corners
// also activates the neighbour across that face, so every surface sheet
// reached by the coarse pass is followed through cells the coarse pass saw
// as uniform.
inline Lattice mise_refine(const FieldFn& field, std::size_t r0, std::size_t r_final, double tau) {
    if (!detail::power_of_two(r0) || !detail::power_of_two(r_final) || r0 >= r_final) {
        throw ConfigError("mesh.r0 and mesh.r_final must be powers of two with r0 < r_final");
    }
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("mesh.tau must lie in (0, 1)");
    Lattice lat;
    lat.res = r_final;
    lat.values.assign(lat.side() * lat.side() * lat.side(), std::numeric_limits<double>::quiet_NaN());

    std::vector<std::array<std::size_t, 3>> active;
    for (std::size_t k = 0; k < r0; ++k)
        for (std::size_t j = 0; j < r0; ++j)
            for (std::size_t i = 0; i < r0; ++i) active.push_back({i, j, k});

    for (std::size_t r = r0;; r *= 2) {
        const std::size_t step = r_final / r;
        auto key = [r](const std::array<std::size_t, 3>& c) { return (c[2] * r + c[1]) * r + c[0]; };
        std::vector<std::uint8_t> seen(r * r * r, 0);
        for (const auto& c : active) seen[key(c)] = 1;

        std::vector<std::array<std::size_t, 3>> straddle;
        std::vector<std::array<std::size_t, 3>> queue = active;
        for (std::size_t head = 0; head < queue.size();) {
            // Evaluate the corners of everything queued so far in one batch.
            std::vector<std::size_t> pts;
            for (std::size_t q = head; q < queue.size(); ++q) {
                const auto corners = detail::cell_corners(lat, queue[q][0], queue[q][1], queue[q][2], step);
                pts.insert(pts.end(), corners.begin(), corners.end());
            }
            detail::evaluate_points(lat, field, std::move(pts));
            const std::size_t end = queue.size();
            for (; head < end; ++head) {
                const auto c = queue[head];
                const auto corners = detail::cell_corners(lat, c[0], c[1], c[2], step);
                std::uint8_t mask = 0;
                for (std::size_t b = 0; b < 8; ++b) mask |= static_cast<std::uint8_t>((lat.values[corners[b]] > tau) << b);
                if (mask == 0 || mask == 0xFF) continue;
                straddle.push_back(c);
                for (std::size_t axis = 0; axis < 3; ++axis)
                    for (std::size_t side = 0; side < 2; ++side) {
                        bool in = false, out = false;
                        for (std::size_t b = 0; b < 8; ++b)
                            if (((b >> axis) & 1) == side) ((mask >> b) & 1 ? in : out) = true;
                        if (!(in && out)) continue;
                        auto n = c;
                        if (side == 0) {
                            if (n[axis] == 0) continue;
                            --n[axis];
                        } else {
                            if (n[axis] + 1 >= r) continue;
                            ++n[axis];
                        }
                        if (!seen[key(n)]) {
                            seen[key(n)] = 1;
                            queue.push_back(n);
                        }
                    }
            }
        }
        if (r == r_final) {
            for (const auto& c : straddle) lat.cells.push_back((c[2] * r + c[1]) * r + c[0]);
            std::sort(lat.cells.begin(), lat.cells.end());
            break;
        }
        active.clear();
        for (const auto& c : straddle)
            for (std::size_t b = 0; b < 8; ++b) active.push_back({2 * c[0] + (b & 1), 2 * c[1] + ((b >> 1) & 1), 2 * c[2] + ((b >> 2) & 1)});
    }
    return lat;
}

// ---- marching cubes ---------------------------------------------------------

struct TriMesh {
    std::vector<Point3> vertices;
    std::vector<std::array<std::size_t, 3>> triangles;

    friend bool operator==(const TriMesh&, const TriMesh&) = default;
};

// Cube edges as corner pairs (corner bits: x, y, z).
inline constexpr std::array<std::array<std::uint8_t, 2>, 12> kCubeEdges = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // along x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // along y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // along z
}};

using McCase = std::vector<std::array<std::uint8_t, 3>>;

namespace detail {

inline std::uint8_t edge_between(std::uint8_t a, std::uint8_t b) {
    for (std::uint8_t e = 0; e < 12; ++e)
        if ((kCubeEdges[e][0] == a && kCubeEdges[e][1] == b) || (kCubeEdges[e][0] == b && kCubeEdges[e][1] == a)) return e;
    throw ad::ContractError("corners are not adjacent");
}

// Builds the 256-case triangle table. On every face the inside corners
// (value above threshold) are cut off separately, runs of adjacent inside
// corners together; neighbouring cells therefore agree on every shared face.
// Face corners are listed counter-clockwise about the outward normal, and a
// run's segment goes from the edge entering it to the edge leaving it, which
// orients the chained loops with normals pointing from inside to outside.
inline std::array<McCase, 256> build_mc_table() {
    // {axis, side, u-axis, v-axis} with u x v = outward normal.
    constexpr std::array<std::array<std::uint8_t, 4>, 6> faces = {{
        {0, 1, 1, 2}, {0, 0, 2, 1}, {1, 1, 2, 0}, {1, 0, 0, 2}, {2, 1, 0, 1}, {2, 0, 1, 0},
    }};
    std::array<McCase, 256> table;
    for (std::size_t mask = 1; mask < 255; ++mask) {
        std::array<int, 12> next;
        next.fill(-1);
        for (const auto& f : faces) {
            std::array<std::uint8_t, 4> ring{};
            const std::array<std::array<int, 2>, 4> uv = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
            for (std::size_t q = 0; q < 4; ++q) {
                std::uint8_t c = static_cast<std::uint8_t>(f[1] << f[0]);
                c |= static_cast<std::uint8_t>(uv[q][0] << f[2]);
                c |= static_cast<std::uint8_t>(uv[q][1] << f[3]);
                ring[q] = c;
            }
            auto inside = [&](std::size_t q) { return (mask >> ring[q % 4]) & 1; };
            for (std::size_t q = 0; q < 4; ++q) {
                if (!inside(q) || inside(q + 3)) continue;  // q starts a run
                std::size_t last = q;
                while (inside(last + 1)) ++last;
                const auto from = edge_between(ring[(q + 3) % 4], ring[q]);
                const auto to = edge_between(ring[last % 4], ring[(last + 1) % 4]);
                next[from] = to;
            }
        }
        std::array<bool, 12> used{};
        for (std::uint8_t start = 0; start < 12; ++start) {
            if (next[start] < 0 || used[start]) continue;
            std::vector<std::uint8_t> loop;
            for (int e = start; !used[e]; e = next[e]) {
                used[e] = true;
                loop.push_back(static_cast<std::uint8_t>(e));
            }
            for (std::size_t t = 1; t + 1 < loop.size(); ++t) table[mask].push_back({loop[0], loop[t], loop[t + 1]});
        }
    }
    return table;
}

}  // namespace detail

inline const std::array<McCase, 256>& mc_table() {
    static const auto table = detail::build_mc_table();
    return table;
}

// Vertices are shared through their lattice edge and numbered in order of
// first use, cells visited in raster order.
inline TriMesh marching_cubes(const Lattice& lat, double tau) {
    TriMesh mesh;
    const std::size_t r = lat.res;
    std::unordered_map<std::uint64_t, std::size_t> vertex_of;
    const auto& table = mc_table();
    auto polygonise = [&](std::size_t cell) {
        const std::size_t ci = cell % r, cj = (cell / r) % r, ck = cell / (r * r);
        const auto corners = detail::cell_corners(lat, ci, cj, ck, 1);
        std::uint8_t mask = 0;
        for (std::size_t b = 0; b < 8; ++b) {
            const double v = lat.values[corners[b]];
            if (std::isnan(v)) return;
            mask |= static_cast<std::uint8_t>((v > tau) << b);
        }
        const auto& tris = table[mask];
        if (tris.empty()) return;
        auto vertex = [&](std::uint8_t e) {
            const std::size_t a = corners[kCubeEdges[e][0]], b = corners[kCubeEdges[e][1]];
            const std::uint64_t key = (static_cast<std::uint64_t>(std::min(a, b)) << 32) | std::max(a, b);
            auto it = vertex_of.find(key);
            if (it != vertex_of.end()) return it->second;
            const std::size_t s = lat.side();
            const Point3 pa = lat.position(a % s, (a / s) % s, a / (s * s));
            const Point3 pb = lat.position(b % s, (b / s) % s, b / (s * s));
            const double va = lat.values[a], vb = lat.values[b];
            const double t = (tau - va) / (vb - va);
            Point3 p;
            for (int d = 0; d < 3; ++d) p[d] = pa[d] + t * (pb[d] - pa[d]);
            mesh.vertices.push_back(p);
            vertex_of.emplace(key, mesh.vertices.size() - 1);
            return mesh.vertices.size() - 1;
        };
        for (const auto& tri : tris) {
            std::array<std::size_t, 3> f = {vertex(tri[0]), vertex(tri[1]), vertex(tri[2])};
            const auto &p0 = mesh.vertices[f[0]], &p1 = mesh.vertices[f[1]], &p2 = mesh.vertices[f[2]];
            const Point3 u{p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]}, v{p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
            const Point3 n{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
            if (0.5 * std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) <= 1e-12) continue;
            mesh.triangles.push_back(f);
        }
    };
    if (lat.dense) {
        for (std::size_t c = 0; c < r * r * r; ++c) polygonise(c);
    } else {
        for (auto c : lat.cells) polygonise(c);
    }
    return mesh;
}

// ---- mesh checks ------------------------------------------------------------

struct MeshTopology {
    std::size_t vertices = 0, edges = 0, faces = 0;
    bool watertight = false;  // every edge in exactly two triangles
    long euler() const { return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces); }
};

inline MeshTopology mesh_topology(const TriMesh& m) {
    std::unordered_map<std::uint64_t, int> edge_count;
    for (const auto& t : m.triangles)
        for (int e = 0; e < 3; ++e) {
            const std::uint64_t a = t[e], b = t[(e + 1) % 3];
            ++edge_count[(std::min(a, b) << 32) | std::max(a, b)];
        }
    MeshTopology topo;
    topo.vertices = m.vertices.size();
    topo.edges = edge_count.size();
    topo.faces = m.triangles.size();
    topo.watertight = !m.triangles.empty();
    for (const auto& [k, n] : edge_count) topo.watertight = topo.watertight && n == 2;
    return topo;
}

inline double signed_volume(const TriMesh& m) {
    double v = 0.0;
    for (const auto& t : m.triangles) {
        const auto &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
        v += (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])) / 6.0;
    }
    return v;
}

// ---- OBJ ----------------------------------------------------------------------

inline std::string encode_obj(const TriMesh& m) {
    std::string out = "# contrec mesh: " + std::to_string(m.vertices.size()) + " vertices, " + std::to_string(m.triangles.size()) + " faces\n";
    for (const auto& v : m.vertices) out += "v " + fmt_double(v[0]) + " " + fmt_double(v[1]) + " " + fmt_double(v[2]) + "\n";
    for (const auto& t : m.triangles) out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
    return out;
}

inline TriMesh decode_obj(const std::string& text) {
    TriMesh m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        std::string kind;
        row >> kind;
        if (kind == "v") {
            std::array<std::string, 3> s;
            row >> s[0] >> s[1] >> s[2];
            if (!row) throw IoError("OBJ: malformed vertex line '" + line + "'");
            m.vertices.push_back({std::stod(s[0]), std::stod(s[1]), std::stod(s[2])});
        } else if (kind == "f") {
            std::array<std::size_t, 3> f{};
            row >> f[0] >> f[1] >> f[2];
            if (!row) throw IoError("OBJ: malformed face line '" + line + "'");
            for (auto& i : f) {
                if (i == 0 || i > m.vertices.size()) throw IoError("OBJ: face index out of range");
                --i;
            }
            m.triangles.push_back(f);
        }
    }
    return m;
}

inline void export_obj(const TriMesh& m, const std::string& path) { write_file(path, encode_obj(m)); }

inline TriMesh import_obj(const std::string& path) { return decode_obj(read_file(path)); }

}  // namespace contrec
