#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>

#include "contrec/isosurface.hpp"
#include "support.hpp"

using namespace contrec;
using contrec::testing::blob_field;
using contrec::testing::sphere_field;

namespace {

FieldFn constant(double v) { return pointwise([v](const Point3&) { return v; }); }

// Explicit lattice with one occupied point in the middle of a 3^3 block.
Lattice single_point() {
    Lattice l;
    l.res = 2;
    l.dense = true;
    l.values.assign(27, 0.0);
    l.values[l.index(1, 1, 1)] = 1.0;
    return l;
}

double field_at(const FieldFn& f, const Point3& p) { return f({p})[0]; }

}  // namespace

TEST(Mise, ConstantFieldsStayCoarse) {
    for (double v : {0.9, 0.0}) {
        const Lattice l = mise_refine(constant(v), 8, 32, 0.2);
        EXPECT_EQ(l.evaluations, 9u * 9u * 9u);
        EXPECT_TRUE(l.cells.empty());
        EXPECT_TRUE(marching_cubes(l, 0.2).triangles.empty());
    }
    EXPECT_TRUE(marching_cubes(dense_lattice(constant(0.0), 8), 0.2).triangles.empty());
}

TEST(Mise, ConfigErrors) {
    const auto f = constant(0.5);
    EXPECT_THROW(mise_refine(f, 6, 32, 0.2), ConfigError);
    EXPECT_THROW(mise_refine(f, 8, 24, 0.2), ConfigError);
    EXPECT_THROW(mise_refine(f, 32, 32, 0.2), ConfigError);
    EXPECT_THROW(mise_refine(f, 8, 32, 0.0), ConfigError);
    EXPECT_THROW(mise_refine(f, 8, 32, 1.0), ConfigError);
    EXPECT_THROW(dense_lattice(f, 0), ConfigError);
}

TEST(Mise, NonFiniteFieldAbortsWithCoordinates) {
    const auto f = pointwise([](const Point3& p) { return p[0] > 0.2 ? std::nan("") : 0.5; });
    try {
        mise_refine(f, 4, 8, 0.2);
        FAIL() << "expected NumericError";
    } catch (const ad::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("("), std::string::npos);
    }
}

TEST(Mise, EachLatticePointEvaluatedOnce) {
    std::atomic<std::size_t> calls{0};
    const auto inner = sphere_field();
    const FieldFn counted = [&](const std::vector<Point3>& pts) {
        calls += pts.size();
        return inner(pts);
    };
    const Lattice l = mise_refine(counted, 8, 32, 0.2);
    EXPECT_EQ(calls.load(), l.evaluations);
    std::size_t known = 0;
    for (double v : l.values) known += !std::isnan(v);
    EXPECT_EQ(known, l.evaluations);
}

TEST(Mise, SphereMatchesDenseWithFewEvaluations) {
    const auto f = sphere_field();
    const Lattice dense = dense_lattice(f, 32);
    const Lattice mise = mise_refine(f, 8, 32, 0.2);
    EXPECT_LT(static_cast<double>(mise.evaluations), 0.2 * 33 * 33 * 33);
    EXPECT_EQ(marching_cubes(mise, 0.2), marching_cubes(dense, 0.2));
}

TEST(Mise, MatchesDenseOnRandomFields) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto f = blob_field(100 + seed);
        const TriMesh d = marching_cubes(dense_lattice(f, 32), 0.2);
        const TriMesh m = marching_cubes(mise_refine(f, 8, 32, 0.2), 0.2);
        ASSERT_FALSE(d.triangles.empty());
        ASSERT_EQ(m.triangles, d.triangles) << "seed " << seed;
        ASSERT_EQ(m.vertices.size(), d.vertices.size());
        for (std::size_t i = 0; i < d.vertices.size(); ++i)
            for (int a = 0; a < 3; ++a) EXPECT_NEAR(m.vertices[i][a], d.vertices[i][a], 1e-9);
    }
}

TEST(MarchingCubes, SinglePointIsOctahedron) {
    const TriMesh m = marching_cubes(single_point(), 0.2);
    const auto t = mesh_topology(m);
    EXPECT_EQ(t.vertices, 6u);
    EXPECT_EQ(t.edges, 12u);
    EXPECT_EQ(t.faces, 8u);
    EXPECT_TRUE(t.watertight);
    EXPECT_EQ(t.euler(), 2);
    EXPECT_GT(signed_volume(m), 0.0);
}

TEST(MarchingCubes, EveryCubeCaseIsClosedAndOutward) {
    for (int mask = 1; mask < 255; ++mask) {
        Lattice l;
        l.res = 3;
        l.dense = true;
        l.values.assign(64, 0.0);
        for (int b = 0; b < 8; ++b)
            if (mask >> b & 1) l.values[l.index(1 + (b & 1), 1 + ((b >> 1) & 1), 1 + ((b >> 2) & 1))] = 1.0;
        const TriMesh m = marching_cubes(l, 0.5);
        EXPECT_TRUE(mesh_topology(m).watertight) << "case " << mask;
        EXPECT_GT(signed_volume(m), 0.0) << "case " << mask;
    }
}

TEST(MarchingCubes, SphereIsWatertightGenusZero) {
    const TriMesh m = marching_cubes(dense_lattice(sphere_field(), 32), 0.2);
    const auto t = mesh_topology(m);
    EXPECT_TRUE(t.watertight);
    EXPECT_EQ(t.euler(), 2);
    const double v = 4.0 / 3.0 * M_PI * 0.027;
    EXPECT_NEAR(signed_volume(m), v, 0.1 * v);
    for (const auto& tri : m.triangles) {
        std::set<std::size_t> ids(tri.begin(), tri.end());
        EXPECT_EQ(ids.size(), 3u);
        for (auto i : tri) EXPECT_LT(i, m.vertices.size());
    }
}

TEST(MarchingCubes, VerticesLieNearTheLevelSet) {
    // Quadratic along every cell edge, so linear interpolation is off by at
    // most h^2 / 4 for curvature 2.
    const auto f = pointwise([](const Point3& p) { return 0.3 - (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]); });
    const double h = 1.0 / 32.0;
    const TriMesh m = marching_cubes(dense_lattice(f, 32), 0.2);
    ASSERT_FALSE(m.vertices.empty());
    for (const auto& v : m.vertices) EXPECT_NEAR(field_at(f, v), 0.2, h * h / 4.0 + 1e-12);

    const auto plane = pointwise([](const Point3& p) { return 0.5 + p[0] + 0.3 * p[1]; });
    for (const auto& v : marching_cubes(dense_lattice(plane, 8), 0.2).vertices) EXPECT_NEAR(field_at(plane, v), 0.2, 1e-12);
}

TEST(Obj, Format) {
    EXPECT_EQ(encode_obj(TriMesh{}), "# contrec mesh: 0 vertices, 0 faces\n");
    TriMesh t;
    t.vertices = {{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 0.25, 0.0}};
    t.triangles = {{0, 1, 2}};
    const std::string s = encode_obj(t);
    EXPECT_NE(s.find("\nv 1 0 0\n"), std::string::npos);
    EXPECT_NE(s.find("\nf 1 2 3\n"), std::string::npos);
    EXPECT_EQ(decode_obj(s), t);
}

TEST(Obj, RoundTripIsByteIdentical) {
    const TriMesh m = marching_cubes(dense_lattice(blob_field(3), 16), 0.2);
    const auto dir = std::filesystem::temp_directory_path() / "contrec_obj_test";
    std::filesystem::create_directories(dir);
    export_obj(m, (dir / "a.obj").string());
    const TriMesh back = import_obj((dir / "a.obj").string());
    EXPECT_EQ(back, m);
    export_obj(back, (dir / "b.obj").string());
    EXPECT_EQ(read_file((dir / "a.obj").string()), read_file((dir / "b.obj").string()));
    std::filesystem::remove_all(dir);

    EXPECT_THROW(decode_obj("v 1 2\n"), IoError);
    EXPECT_THROW(decode_obj("v 0 0 0\nf 1 2 3\n"), IoError);
    EXPECT_THROW(export_obj(m, "/nonexistent_dir/x/y.obj"), IoError);
}
