#pragma once

// Procedural shape corpus: class-labelled voxel shapes, single-view
// renderings, occupancy point samples and the class-incremental session
// split, plus the on-disk dataset format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/image.hpp"
#include "contrec/util.hpp"

namespace contrec {

enum class ShapeClass : int {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Cone,
    Pyramid,
    Ellipsoid,
    Tube,
    Cross,
    LBracket,
    RingStack,
    Capsule,
    Wedge,
};

inline constexpr std::array<std::string_view, 13> kClassNames = {
    "sphere", "box",   "cylinder", "torus",      "cone",    "pyramid", "ellipsoid",
    "tube",   "cross", "L-bracket", "ring-stack", "capsule", "wedge",
};

inline std::string class_name(ShapeClass c) { return std::string(kClassNames.at(static_cast<std::size_t>(c))); }

inline ShapeClass parse_class(std::string_view name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<ShapeClass>(i);
    throw ConfigError("unknown shape class '" + std::string(name) + "'");
}

inline std::vector<ShapeClass> all_classes() {
    std::vector<ShapeClass> out;
    for (std::size_t i = 0; i < kClassNames.size(); ++i) out.push_back(static_cast<ShapeClass>(i));
    return out;
}

struct VoxelGrid {
    std::size_t res = 0;
    std::vector<std::uint8_t> occ;  // index (z * res + y) * res + x

    VoxelGrid() = default;
    explicit VoxelGrid(std::size_t r, std::uint8_t fill = 0) : res(r), occ(r * r * r, fill) {}

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * res + y) * res + x; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return occ[index(x, y, z)]; }
    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return occ[index(x, y, z)]; }

    std::size_t count() const { return static_cast<std::size_t>(std::count(occ.begin(), occ.end(), 1)); }

    // Centre of a voxel in the unit cube [-0.5, 0.5]^3.
    double center(std::size_t i) const { return (static_cast<double>(i) + 0.5) / static_cast<double>(res) - 0.5; }

    // Value of the cell containing p; outside the cube is empty.
    std::uint8_t lookup(double x, double y, double z) const {
        auto cell = [this](double v) {
            const double f = std::floor((v + 0.5) * static_cast<double>(res));
            return std::min(static_cast<std::size_t>(f), res - 1);
        };
        for (double v : {x, y, z})
            if (!(v >= -0.5 && v < 0.5)) return 0;
        return at(cell(x), cell(y), cell(z));
    }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

// Per-class parameters; meaning of p[i] is documented in shape_inside().
struct ShapeParams {
    std::array<double, 4> p{};
};

// Uniform ranges per class; every class stays inside [-0.4, 0.4]^3.
inline ShapeParams sample_params(ShapeClass c, std::uint64_t seed) {
    Rng rng(seed);
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    ShapeParams s;
    switch (c) {
        case ShapeClass::Sphere: s.p = {u(0.25, 0.4), 0, 0, 0}; break;
        case ShapeClass::Box: s.p = {u(0.15, 0.4), u(0.15, 0.4), u(0.15, 0.4), 0}; break;
        case ShapeClass::Cylinder: s.p = {u(0.15, 0.35), u(0.2, 0.4), 0, 0}; break;
        case ShapeClass::Torus: s.p = {u(0.2, 0.28), u(0.08, 0.12), 0, 0}; break;
        case ShapeClass::Cone: s.p = {u(0.2, 0.4), u(0.25, 0.4), 0, 0}; break;
        case ShapeClass::Pyramid: s.p = {u(0.2, 0.4), u(0.25, 0.4), 0, 0}; break;
        case ShapeClass::Ellipsoid: s.p = {u(0.15, 0.4), u(0.15, 0.4), u(0.15, 0.4), 0}; break;
        case ShapeClass::Tube: s.p = {u(0.25, 0.4), u(0.35, 0.6), u(0.2, 0.4), 0}; break;
        case ShapeClass::Cross: s.p = {u(0.3, 0.4), u(0.07, 0.12), u(0.07, 0.2), 0}; break;
        case ShapeClass::LBracket: s.p = {u(0.3, 0.4), u(0.08, 0.14), u(0.15, 0.35), 0}; break;
        case ShapeClass::RingStack: s.p = {u(2.0, 4.0), u(0.22, 0.3), u(0.06, 0.09), 0}; break;
        case ShapeClass::Capsule: {
            const double r = u(0.12, 0.25);
            s.p = {r, u(0.1, 0.4 - r), 0, 0};
            break;
        }
        case ShapeClass::Wedge: s.p = {u(0.2, 0.4), u(0.2, 0.4), u(0.2, 0.4), 0}; break;
    }
    return s;
}

// Point-membership test in unit-cube coordinates, y up.
inline bool shape_inside(ShapeClass c, const ShapeParams& sp, double x, double y, double z) {
    const auto& p = sp.p;
    const double rxz = std::sqrt(x * x + z * z);
    switch (c) {
        case ShapeClass::Sphere:  // p0 radius
            return x * x + y * y + z * z <= p[0] * p[0];
        case ShapeClass::Box:  // half extents
            return std::abs(x) <= p[0] && std::abs(y) <= p[1] && std::abs(z) <= p[2];
        case ShapeClass::Cylinder:  // radius, half height
            return rxz <= p[0] && std::abs(y) <= p[1];
        case ShapeClass::Torus: {  // major, minor radius; ring in xz
            const double q = rxz - p[0];
            return q * q + y * y <= p[1] * p[1];
        }
        case ShapeClass::Cone:  // base radius, half height; apex up
            return std::abs(y) <= p[1] && rxz <= p[0] * (p[1] - y) / (2.0 * p[1]);
        case ShapeClass::Pyramid:  // base half width, half height
            return std::abs(y) <= p[1] && std::max(std::abs(x), std::abs(z)) <= p[0] * (p[1] - y) / (2.0 * p[1]);
        case ShapeClass::Ellipsoid:
            return (x * x) / (p[0] * p[0]) + (y * y) / (p[1] * p[1]) + (z * z) / (p[2] * p[2]) <= 1.0;
        case ShapeClass::Tube:  // outer radius, wall fraction, half height
            return rxz <= p[0] && rxz >= p[0] * (1.0 - p[1]) && std::abs(y) <= p[2];
        case ShapeClass::Cross:  // arm half length, arm half width, half height
            return std::abs(y) <= p[2] && ((std::abs(x) <= p[0] && std::abs(z) <= p[1]) ||
                                           (std::abs(z) <= p[0] && std::abs(x) <= p[1]));
        case ShapeClass::LBracket: {  // arm length, thickness, half depth
            if (std::abs(z) > p[2] || std::abs(x) > p[0] || std::abs(y) > p[0]) return false;
            return x <= -p[0] + 2.0 * p[1] || y <= -p[0] + 2.0 * p[1];
        }
        case ShapeClass::RingStack: {  // ring count, major radius, minor radius
            const int n = static_cast<int>(std::floor(p[0]));
            const double span = 0.4 - p[2];
            for (int i = 0; i < n; ++i) {
                const double yc = n == 1 ? 0.0 : -span + 2.0 * span * i / (n - 1);
                const double q = rxz - p[1];
                if (q * q + (y - yc) * (y - yc) <= p[2] * p[2]) return true;
            }
            return false;
        }
        case ShapeClass::Capsule: {  // radius, half length of the axis segment
            const double yc = std::clamp(y, -p[1], p[1]);
            return x * x + (y - yc) * (y - yc) + z * z <= p[0] * p[0];
        }
        case ShapeClass::Wedge:  // half extents; height ramps down along +x
            return std::abs(x) <= p[0] && std::abs(z) <= p[2] && y >= -p[1] &&
                   y <= -p[1] + 2.0 * p[1] * (p[0] - x) / (2.0 * p[0]);
    }
    return false;
}

// Voxelizes a class instance by sampling voxel centres.
inline VoxelGrid generate_shape(ShapeClass c, const ShapeParams& params, std::size_t res) {
    if (res < 4) throw ConfigError("generate_shape: res must be >= 4, got " + std::to_string(res));
    VoxelGrid g(res);
    for (std::size_t z = 0; z < res; ++z)
        for (std::size_t y = 0; y < res; ++y)
            for (std::size_t x = 0; x < res; ++x)
                g.at(x, y, z) = shape_inside(c, params, g.center(x), g.center(y), g.center(z)) ? 1 : 0;
    const std::size_t n = g.count();
    if (n == 0 || n == g.occ.size()) {
        throw ConfigError("generate_shape: degenerate " + class_name(c) + " at res " + std::to_string(res));
    }
    return g;
}

inline VoxelGrid generate_shape(ShapeClass c, std::size_t res, std::uint64_t seed) {
    return generate_shape(c, sample_params(c, seed), res);
}

struct RenderedView {
    Image image;
    double azimuth = 0.0;
    double elevation = 0.0;
};

inline constexpr double kViewHalfExtent = 0.6;

// Orthographic ray-marched silhouette, shaded by depth (nearer is
// brighter). Background is 0.
inline RenderedView render_view(const VoxelGrid& grid, double azimuth, double elevation, std::size_t width, std::size_t height) {
    if (width < 16 || height < 16) throw ConfigError("render_view: image must be at least 16x16");
    const double ca = std::cos(azimuth), sa = std::sin(azimuth), ce = std::cos(elevation), se = std::sin(elevation);
    const std::array<double, 3> cam{ce * sa, se, ce * ca};
    const std::array<double, 3> right{ca, 0.0, -sa};
    const std::array<double, 3> up{-se * sa, ce, -se * ca};
    const double dist = 1.0;
    const double step = 1.0 / (4.0 * static_cast<double>(grid.res));
    const auto steps = static_cast<std::size_t>(2.0 * dist / step) + 1;

    RenderedView view{Image(width, height), azimuth, elevation};
    for (std::size_t py = 0; py < height; ++py) {
        const double t = (0.5 - (static_cast<double>(py) + 0.5) / static_cast<double>(height)) * 2.0 * kViewHalfExtent;
        for (std::size_t px = 0; px < width; ++px) {
            const double s = ((static_cast<double>(px) + 0.5) / static_cast<double>(width) - 0.5) * 2.0 * kViewHalfExtent;
            for (std::size_t k = 0; k < steps; ++k) {
                const double d = static_cast<double>(k) * step;
                const double along = dist - d;
                const double x = s * right[0] + t * up[0] + along * cam[0];
                const double y = s * right[1] + t * up[1] + along * cam[1];
                const double z = s * right[2] + t * up[2] + along * cam[2];
                if (grid.lookup(x, y, z)) {
                    const double depth = d - dist;
                    view.image.at(px, py) = std::clamp(0.65 - 0.5 * depth, 0.05, 1.0);
                    break;
                }
            }
        }
    }
    return view;
}

struct PointSample {
    std::vector<double> points;           // N x 3, row-major
    std::vector<std::uint8_t> occupancy;  // N labels

    std::size_t size() const { return occupancy.size(); }

    friend bool operator==(const PointSample&, const PointSample&) = default;
};

inline constexpr std::size_t kDefaultPointsPerObject = 1024;

// Half the points jittered within two voxels of the surface, half uniform
// in the cube; labels come from the containing voxel.
inline PointSample sample_points(const VoxelGrid& grid, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("sample_points: n must be >= 1");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const double voxel = 1.0 / static_cast<double>(grid.res);
    std::uniform_real_distribution<double> jitter(-2.0 * voxel, 2.0 * voxel);

    std::vector<std::array<std::size_t, 3>> surface;
    const auto r = static_cast<long>(grid.res);
    for (long z = 0; z < r; ++z)
        for (long y = 0; y < r; ++y)
            for (long x = 0; x < r; ++x) {
                if (!grid.at(x, y, z)) continue;
                bool boundary = false;
                const long nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (const auto& d : nb) {
                    const long nx = x + d[0], ny = y + d[1], nz = z + d[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= r || ny >= r || nz >= r || !grid.at(nx, ny, nz)) {
                        boundary = true;
                        break;
                    }
                }
                if (boundary) surface.push_back({static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)});
            }

    PointSample out;
    out.points.reserve(3 * n);
    out.occupancy.reserve(n);
    const double hi = std::nextafter(0.5, 0.0);
    const std::size_t near = surface.empty() ? 0 : n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 3> p{};
        if (i < near) {
            const auto& v = surface[std::uniform_int_distribution<std::size_t>(0, surface.size() - 1)(rng)];
            for (int a = 0; a < 3; ++a) p[a] = std::clamp(grid.center(v[a]) + jitter(rng), -0.5, hi);
        } else {
            for (int a = 0; a < 3; ++a) p[a] = unit(rng);
        }
        out.points.insert(out.points.end(), p.begin(), p.end());
        out.occupancy.push_back(grid.lookup(p[0], p[1], p[2]));
    }
    return out;
}

struct Instance {
    std::string name;  // "<class>_<split>_<k>"
    ShapeClass cls{};
    std::uint64_t seed = 0;
    VoxelGrid grid;
    RenderedView view;
    PointSample sample;
};

struct SessionDataset {
    std::size_t index = 0;
    std::vector<ShapeClass> classes;
    std::vector<Instance> train;
    std::vector<Instance> val;
    std::vector<Instance> test;
};

struct DataConfig {
    std::vector<ShapeClass> classes = all_classes();
    std::vector<std::size_t> session_sizes = {5, 2, 2, 2, 2};
    bool shuffle = false;
    std::size_t res = 16;
    std::size_t image_size = 32;
    std::size_t instances_per_class = 20;
    std::size_t points_per_object = kDefaultPointsPerObject;
};

// Partitions the configured classes into sessions, optionally shuffled.
inline std::vector<std::vector<ShapeClass>> assign_sessions(const DataConfig& cfg, std::uint64_t seed) {
    std::set<ShapeClass> seen;
    for (auto c : cfg.classes) {
        if (!seen.insert(c).second) throw ConfigError("class '" + class_name(c) + "' assigned twice");
    }
    std::size_t total = 0;
    for (auto s : cfg.session_sizes) {
        if (s == 0) throw ConfigError("data.sessions: empty session");
        total += s;
    }
    if (total != cfg.classes.size()) {
        throw ConfigError("data.sessions: sizes sum to " + std::to_string(total) + " but " +
                          std::to_string(cfg.classes.size()) + " classes configured");
    }
    std::vector<ShapeClass> order = cfg.classes;
    if (cfg.shuffle) {
        Rng rng(derive_seed(seed, tag("class-order")));
        std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<std::vector<ShapeClass>> out;
    std::size_t pos = 0;
    for (auto s : cfg.session_sizes) {
        out.emplace_back(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(pos + s));
        pos += s;
    }
    return out;
}

struct SplitCounts {
    std::size_t train, val, test;
};

// 70 / 10 / 20 per class.
inline SplitCounts split_counts(std::size_t n) {
    const auto train = static_cast<std::size_t>(std::lround(0.7 * static_cast<double>(n)));
    const auto val = static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n)));
    return {train, val, n - train - val};
}

inline Instance make_instance(ShapeClass c, std::size_t class_slot, std::size_t k, const DataConfig& cfg, std::uint64_t seed) {
    Instance inst;
    inst.cls = c;
    inst.seed = derive_seed(seed, static_cast<std::uint64_t>(class_slot) + 1000, k);
    inst.grid = generate_shape(c, cfg.res, derive_seed(inst.seed, tag("shape")));
    Rng view_rng(derive_seed(inst.seed, tag("view")));
    const double az = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(view_rng);
    const double el = std::uniform_real_distribution<double>(0.2, 0.6)(view_rng);
    inst.view = render_view(inst.grid, az, el, cfg.image_size, cfg.image_size);
    inst.sample = sample_points(inst.grid, cfg.points_per_object, derive_seed(inst.seed, tag("points")));
    return inst;
}

inline std::vector<SessionDataset> build_sessions(const DataConfig& cfg, std::uint64_t seed) {
    const auto assignment = assign_sessions(cfg, seed);
    const SplitCounts counts = split_counts(cfg.instances_per_class);
    if (counts.train == 0 || counts.test == 0) {
        throw ConfigError("data.instances_per_class: too few instances for train/test splits");
    }
    std::vector<SessionDataset> sessions;
    for (std::size_t t = 0; t < assignment.size(); ++t) {
        SessionDataset s;
        s.index = t;
        s.classes = assignment[t];
        for (auto c : s.classes) {
            const auto slot = static_cast<std::size_t>(c);
            for (std::size_t k = 0; k < cfg.instances_per_class; ++k) {
                Instance inst = make_instance(c, slot, k, cfg, seed);
                std::vector<Instance>* split = &s.test;
                std::size_t local = k - counts.train - counts.val;
                if (k < counts.train) {
                    split = &s.train;
                    local = k;
                } else if (k < counts.train + counts.val) {
                    split = &s.val;
                    local = k - counts.train;
                }
                const char* split_name = split == &s.train ? "train" : split == &s.val ? "val" : "test";
                inst.name = class_name(c) + "_" + split_name + "_" + std::to_string(local);
                split->push_back(std::move(inst));
            }
        }
        sessions.push_back(std::move(s));
    }
    return sessions;
}

// ---- dataset files ------------------------------------------------------

inline std::string encode_voxg(const VoxelGrid& g) {
    if (g.res > 0xFFFF) throw IoError("voxel resolution exceeds u16");
    std::string out = "VOXG";
    out.push_back(static_cast<char>(g.res & 0xFF));
    out.push_back(static_cast<char>((g.res >> 8) & 0xFF));
    out.push_back('\0');
    out.push_back('\0');
    for (auto v : g.occ) out.push_back(static_cast<char>(v));
    return out;
}

inline VoxelGrid decode_voxg(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 4, "VOXG") != 0) throw IoError("bad VOXG header");
    const std::size_t res = static_cast<unsigned char>(bytes[4]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[5])) << 8);
    if (bytes.size() != 8 + res * res * res) throw IoError("VOXG payload size mismatch");
    VoxelGrid g(res);
    for (std::size_t i = 0; i < g.occ.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[8 + i]);
        if (v > 1) throw IoError("VOXG payload is not binary");
        g.occ[i] = v;
    }
    return g;
}

inline std::string encode_points_csv(const PointSample& s) {
    std::string out = "x,y,z,occ\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += fmt_double(s.points[3 * i]) + "," + fmt_double(s.points[3 * i + 1]) + "," +
               fmt_double(s.points[3 * i + 2]) + "," + std::to_string(s.occupancy[i]) + "\n";
    }
    return out;
}

inline PointSample decode_points_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "x,y,z,occ") throw IoError("point CSV: bad header");
    PointSample s;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::array<double, 3> p{};
        for (int a = 0; a < 3; ++a) {
            if (!std::getline(row, cell, ',')) throw IoError("point CSV: short row");
            p[a] = std::stod(cell);
        }
        if (!std::getline(row, cell)) throw IoError("point CSV: missing occupancy");
        s.points.insert(s.points.end(), p.begin(), p.end());
        s.occupancy.push_back(static_cast<std::uint8_t>(std::stoi(cell)));
    }
    return s;
}

inline void write_dataset(const std::string& dir, const std::vector<SessionDataset>& sessions, const DataConfig& cfg, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["seed"] = seed;
    manifest["res"] = cfg.res;
    manifest["image_size"] = cfg.image_size;
    manifest["points_per_object"] = cfg.points_per_object;
    manifest["sessions"] = nlohmann::ordered_json::array();
    for (const auto& s : sessions) {
        const std::string sdir = dir + "/session_" + std::to_string(s.index);
        fs::create_directories(sdir);
        nlohmann::ordered_json js;
        js["session"] = s.index;
        js["classes"] = nlohmann::ordered_json::array();
        for (auto c : s.classes) js["classes"].push_back(class_name(c));
        auto emit = [&](const std::vector<Instance>& split) {
            auto arr = nlohmann::ordered_json::array();
            for (const auto& inst : split) {
                write_file(sdir + "/" + inst.name + ".voxg", encode_voxg(inst.grid));
                write_file(sdir + "/" + inst.name + ".pgm", encode_pgm(inst.view.image));
                write_file(sdir + "/" + inst.name + ".csv", encode_points_csv(inst.sample));
                nlohmann::ordered_json e;
                e["name"] = inst.name;
                e["class"] = class_name(inst.cls);
                e["seed"] = inst.seed;
                e["azimuth"] = inst.view.azimuth;
                e["elevation"] = inst.view.elevation;
                arr.push_back(std::move(e));
            }
            return arr;
        };
        js["splits"]["train"] = emit(s.train);
        js["splits"]["val"] = emit(s.val);
        js["splits"]["test"] = emit(s.test);
        manifest["sessions"].push_back(std::move(js));
    }
    write_file(dir + "/manifest.json", manifest.dump(2) + "\n");
}

// Images come back quantized to 8 bits.
inline std::vector<SessionDataset> read_dataset(const std::string& dir) {
    const auto manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    std::vector<SessionDataset> sessions;
    for (const auto& js : manifest.at("sessions")) {
        SessionDataset s;
        s.index = js.at("session").get<std::size_t>();
        for (const auto& c : js.at("classes")) s.classes.push_back(parse_class(c.get<std::string>()));
        const std::string sdir = dir + "/session_" + std::to_string(s.index);
        auto load = [&](const nlohmann::json& arr, std::vector<Instance>& split) {
            for (const auto& e : arr) {
                Instance inst;
                inst.name = e.at("name").get<std::string>();
                inst.cls = parse_class(e.at("class").get<std::string>());
                inst.seed = e.at("seed").get<std::uint64_t>();
                inst.grid = decode_voxg(read_file(sdir + "/" + inst.name + ".voxg"));
                inst.view.image = decode_pgm(read_file(sdir + "/" + inst.name + ".pgm"));
                inst.view.azimuth = e.at("azimuth").get<double>();
                inst.view.elevation = e.at("elevation").get<double>();
                inst.sample = decode_points_csv(read_file(sdir + "/" + inst.name + ".csv"));
                split.push_back(std::move(inst));
            }
        };
        load(js.at("splits").at("train"), s.train);
        load(js.at("splits").at("val"), s.val);
        load(js.at("splits").at("test"), s.test);
        sessions.push_back(std::move(s));
    }
    return sessions;
}

}  // namespace contrec
