#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "contrec/shapes.hpp"

using namespace contrec;

namespace {

ShapeParams params(std::initializer_list<double> p) {
    ShapeParams s;
    std::size_t i = 0;
    for (double v : p) s.p[i++] = v;
    return s;
}

DataConfig small_config() {
    DataConfig cfg;
    cfg.classes = {ShapeClass::Sphere, ShapeClass::Box, ShapeClass::Cylinder, ShapeClass::Torus};
    cfg.session_sizes = {2, 2};
    cfg.instances_per_class = 10;
    cfg.points_per_object = 128;
    return cfg;
}

}  // namespace

TEST(Shapes, ClassNamesRoundTrip) {
    EXPECT_EQ(kClassNames.size(), 13u);
    for (auto c : all_classes()) EXPECT_EQ(parse_class(class_name(c)), c);
    EXPECT_THROW(parse_class("teapot"), ConfigError);
}

TEST(Shapes, SphereVolumeMatchesAnalytic) {
    const VoxelGrid g = generate_shape(ShapeClass::Sphere, params({0.4}), 16);
    const double expected = 4.0 / 3.0 * std::numbers::pi * std::pow(0.4 * 16, 3);
    EXPECT_NEAR(static_cast<double>(g.count()), expected, 0.1 * expected);
}

TEST(Shapes, FullExtentBoxFillsInterior) {
    const VoxelGrid g = generate_shape(ShapeClass::Box, params({0.4, 0.4, 0.4}), 16);
    for (std::size_t z = 0; z < 16; ++z)
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const bool interior = x >= 2 && x < 14 && y >= 2 && y < 14 && z >= 2 && z < 14;
                EXPECT_EQ(g.at(x, y, z), interior ? 1 : 0) << x << "," << y << "," << z;
            }
}

TEST(Shapes, EveryClassIsDeterministicCentredAndNonDegenerate) {
    for (auto c : all_classes()) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const VoxelGrid a = generate_shape(c, 16, seed);
            EXPECT_EQ(a, generate_shape(c, 16, seed));
            EXPECT_GT(a.count(), 0u);
            EXPECT_LT(a.count(), a.occ.size());
            // Extent stays within 0.8 of the cube: the outer voxel shell is empty.
            for (std::size_t i = 0; i < 16; ++i)
                for (std::size_t j = 0; j < 16; ++j) {
                    EXPECT_EQ(a.at(0, i, j) + a.at(15, i, j) + a.at(i, 0, j) + a.at(i, 15, j) + a.at(i, j, 0) + a.at(i, j, 15), 0)
                        << class_name(c);
                }
        }
    }
}

TEST(Shapes, GenerateRejectsTinyResolution) { EXPECT_THROW(generate_shape(ShapeClass::Sphere, 3, 0), ConfigError); }

TEST(Render, EmptyGridIsBlack) {
    const VoxelGrid g(16);
    const auto v = render_view(g, 0.3, 0.2, 32, 32);
    for (double p : v.image.pixels) EXPECT_EQ(p, 0.0);
}

TEST(Render, FullCubeFrontalIsCentredSquare) {
    const VoxelGrid g = generate_shape(ShapeClass::Box, params({0.4, 0.4, 0.4}), 16);
    const auto v = render_view(g, 0.0, 0.0, 32, 32);
    // Image spans [-0.6, 0.6]; the box face spans [-0.375, 0.375] (voxel 2..13).
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            const double s = ((x + 0.5) / 32.0 - 0.5) * 1.2, t = (0.5 - (y + 0.5) / 32.0) * 1.2;
            const bool inside = std::abs(s) < 0.375 && std::abs(t) < 0.375;
            if (inside) {
                EXPECT_GT(v.image.at(x, y), 0.0);
                EXPECT_DOUBLE_EQ(v.image.at(x, y), v.image.at(16, 16));
            } else if (std::abs(s) > 0.375 + 1e-9 || std::abs(t) > 0.375 + 1e-9) {
                EXPECT_EQ(v.image.at(x, y), 0.0);
            }
        }
}

TEST(Render, SphereIsRotationallySymmetric) {
    const VoxelGrid g = generate_shape(ShapeClass::Sphere, params({0.35}), 16);
    const auto a = render_view(g, 0.4, 0.3, 32, 32);
    const auto b = render_view(g, 0.4 + std::numbers::pi / 2, 0.3, 32, 32);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.image.pixels.size(); ++i) diff += std::abs(a.image.pixels[i] - b.image.pixels[i]);
    EXPECT_LE(diff / static_cast<double>(a.image.pixels.size()), 0.02);
}

TEST(Render, ValuesInUnitRangeAndRejectsSmallImages) {
    const VoxelGrid g = generate_shape(ShapeClass::Torus, 16, 4);
    const auto v = render_view(g, 1.0, 0.5, 24, 20);
    EXPECT_EQ(v.image.width, 24u);
    EXPECT_EQ(v.image.height, 20u);
    for (double p : v.image.pixels) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
    EXPECT_THROW(render_view(g, 0, 0, 8, 32), ConfigError);
}

TEST(Points, FullCubeLabelsAreAllPositive) {
    const VoxelGrid g(8, 1);
    const auto s = sample_points(g, 500, 3);
    ASSERT_EQ(s.size(), 500u);
    for (auto o : s.occupancy) EXPECT_EQ(o, 1);
}

TEST(Points, LabelsMatchGridAndCoordinatesInCube) {
    const VoxelGrid g = generate_shape(ShapeClass::Cross, 16, 9);
    const auto s = sample_points(g, kDefaultPointsPerObject, 11);
    ASSERT_EQ(s.size(), 1024u);
    const double voxel = 1.0 / 16;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double x = s.points[3 * i], y = s.points[3 * i + 1], z = s.points[3 * i + 2];
        for (double c : {x, y, z}) {
            EXPECT_GE(c, -0.5);
            EXPECT_LT(c, 0.5);
        }
        EXPECT_EQ(s.occupancy[i], g.lookup(x, y, z));
        if (i < 512) {
            // Near-surface half: some occupied voxel lies within two voxels per axis.
            bool near = false;
            for (std::size_t v = 0; v < g.occ.size() && !near; ++v) {
                if (!g.occ[v]) continue;
                const std::size_t vx = v % 16, vy = (v / 16) % 16, vz = v / 256;
                near = std::abs(g.center(vx) - x) <= 2 * voxel + 1e-12 && std::abs(g.center(vy) - y) <= 2 * voxel + 1e-12 &&
                       std::abs(g.center(vz) - z) <= 2 * voxel + 1e-12;
            }
            EXPECT_TRUE(near) << i;
        }
    }
    EXPECT_THROW(sample_points(g, 0, 1), ConfigError);
}

TEST(Points, UniformHalfMatchesVolumeFraction) {
    const VoxelGrid g = generate_shape(ShapeClass::Sphere, params({0.4}), 16);
    const auto s = sample_points(g, 20000, 5);
    std::size_t pos = 0;
    for (std::size_t i = 10000; i < 20000; ++i) pos += s.occupancy[i];
    const double frac = static_cast<double>(g.count()) / static_cast<double>(g.occ.size());
    EXPECT_NEAR(static_cast<double>(pos) / 10000.0, frac, 0.05);
}

TEST(Sessions, DefaultSplitIsFiveTwoTwoTwoTwo) {
    const auto a = assign_sessions(DataConfig{}, 1);
    std::vector<std::size_t> sizes;
    std::set<ShapeClass> seen;
    for (const auto& s : a) {
        sizes.push_back(s.size());
        for (auto c : s) EXPECT_TRUE(seen.insert(c).second);
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{5, 2, 2, 2, 2}));
    EXPECT_EQ(seen.size(), 13u);
}

TEST(Sessions, ShuffleIsSeedDeterministic) {
    DataConfig cfg;
    cfg.shuffle = true;
    EXPECT_EQ(assign_sessions(cfg, 42), assign_sessions(cfg, 42));
}

TEST(Sessions, ConfigErrors) {
    DataConfig cfg = small_config();
    cfg.classes.push_back(ShapeClass::Sphere);
    cfg.session_sizes = {2, 3};
    EXPECT_THROW(assign_sessions(cfg, 0), ConfigError);
    cfg = small_config();
    cfg.session_sizes = {2, 1};
    EXPECT_THROW(assign_sessions(cfg, 0), ConfigError);
    cfg.session_sizes = {4, 0};
    EXPECT_THROW(assign_sessions(cfg, 0), ConfigError);
}

TEST(Sessions, SplitsAndInstanceInvariants) {
    const auto counts = split_counts(20);
    EXPECT_EQ(counts.train, 14u);
    EXPECT_EQ(counts.val, 2u);
    EXPECT_EQ(counts.test, 4u);

    const DataConfig cfg = small_config();
    const auto sessions = build_sessions(cfg, 7);
    ASSERT_EQ(sessions.size(), 2u);
    std::set<std::string> names;
    for (const auto& s : sessions) {
        EXPECT_EQ(s.train.size(), 2 * 7u);
        EXPECT_EQ(s.val.size(), 2 * 1u);
        EXPECT_EQ(s.test.size(), 2 * 2u);
        for (const auto* split : {&s.train, &s.val, &s.test})
            for (const auto& inst : *split) {
                EXPECT_TRUE(names.insert(inst.name).second) << inst.name;
                EXPECT_NE(std::find(s.classes.begin(), s.classes.end(), inst.cls), s.classes.end());
                double brightest = 0.0;
                for (double p : inst.view.image.pixels) brightest = std::max(brightest, p);
                EXPECT_GT(brightest, 0.0);
                for (std::size_t i = 0; i < inst.sample.size(); ++i) {
                    EXPECT_EQ(inst.sample.occupancy[i],
                              inst.grid.lookup(inst.sample.points[3 * i], inst.sample.points[3 * i + 1], inst.sample.points[3 * i + 2]));
                }
            }
    }
    EXPECT_EQ(sessions[0].train.front().name, "sphere_train_0");
    EXPECT_EQ(sessions[0].test.front().name, "sphere_test_0");
}

TEST(Dataset, FilesRoundTripAndAreByteIdentical) {
    namespace fs = std::filesystem;
    const DataConfig cfg = small_config();
    const auto sessions = build_sessions(cfg, 3);
    const fs::path root = fs::temp_directory_path() / "contrec_test_dataset";
    fs::remove_all(root);
    write_dataset((root / "a").string(), sessions, cfg, 3);
    write_dataset((root / "b").string(), build_sessions(cfg, 3), cfg, 3);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root / "a");
        EXPECT_EQ(read_file(e.path().string()), read_file((root / "b" / rel).string())) << rel;
        ++files;
    }
    EXPECT_EQ(files, 1 + 2 * 20 * 3u);

    const auto back = read_dataset((root / "a").string());
    ASSERT_EQ(back.size(), sessions.size());
    for (std::size_t t = 0; t < back.size(); ++t) {
        EXPECT_EQ(back[t].classes, sessions[t].classes);
        ASSERT_EQ(back[t].train.size(), sessions[t].train.size());
        for (std::size_t i = 0; i < back[t].train.size(); ++i) {
            const auto& a = back[t].train[i];
            const auto& b = sessions[t].train[i];
            EXPECT_EQ(a.name, b.name);
            EXPECT_EQ(a.grid, b.grid);
            EXPECT_EQ(a.sample, b.sample);
            for (std::size_t p = 0; p < a.view.image.pixels.size(); ++p)
                EXPECT_NEAR(a.view.image.pixels[p], b.view.image.pixels[p], 0.5 / 255.0 + 1e-12);
        }
    }
    fs::remove_all(root);
}

TEST(Dataset, CorruptFilesAreRejected) {
    EXPECT_THROW(decode_voxg("VOXX\x04\0\0\0"), IoError);
    std::string bytes = encode_voxg(VoxelGrid(4, 1));
    bytes.pop_back();
    EXPECT_THROW(decode_voxg(bytes), IoError);
    EXPECT_THROW(decode_points_csv("a,b,c\n"), IoError);
}

TEST(Seeds, DerivedStreamsAreDistinct) {
    std::set<std::uint64_t> seen;
    std::size_t n = 0;
    for (std::uint64_t base = 0; base < 32; ++base)
        for (std::uint64_t a = 0; a < 16; ++a)
            for (std::uint64_t b = 0; b < 8; ++b, ++n) seen.insert(derive_seed(base, a, b));
    EXPECT_EQ(seen.size(), n);
    EXPECT_NE(derive_seed(1, 2), derive_seed(3, 0));
    EXPECT_EQ(derive_seed(5, 6, 7), derive_seed(5, 6, 7));
}
