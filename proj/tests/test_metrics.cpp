#include <gtest/gtest.h>

#include <random>

#include "contrec/metrics.hpp"

using namespace contrec;
using Row = std::vector<IouMatrix::ClassIous>;

namespace {

IouMatrix::ClassIous one(double v) { return {{"c", v}}; }

// T=3 with diagonal (0.6, 0.7, 0.8) and final row (0.55, 0.65, 0.8).
IouMatrix forgetting_matrix() {
    IouMatrix m(3);
    m.update(0, {one(0.6)});
    m.update(1, {one(0.58), one(0.7)});
    m.update(2, {one(0.55), one(0.65), one(0.8)});
    return m;
}

}  // namespace

TEST(VoxelIou, HandCases) {
    const std::vector<std::uint8_t> gt{1, 1, 1, 1, 0, 0, 0, 0};
    EXPECT_EQ(voxel_iou({0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1}, gt), 1.0);
    EXPECT_EQ(voxel_iou({0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9}, gt), 0.0);
    // 4 predicted, 4 true, 2 shared.
    EXPECT_NEAR(voxel_iou({0.9, 0.9, 0.1, 0.1, 0.9, 0.9, 0.1, 0.1}, gt), 2.0 / 6.0, 1e-15);
    // Threshold is strict.
    EXPECT_EQ(voxel_iou(std::vector<double>(8, 0.2), gt), 0.0);
    EXPECT_EQ(voxel_iou(std::vector<double>(8, 0.0), std::vector<std::uint8_t>(8, 0)), 1.0);
    EXPECT_THROW(voxel_iou(std::vector<double>(7, 0.5), gt), ad::ContractError);
}

TEST(VoxelIou, MatchesBruteForceOnRandomGrids) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> pred(64);
        std::vector<std::uint8_t> gt(64), pbin(64);
        for (std::size_t i = 0; i < 64; ++i) {
            pred[i] = u(rng);
            gt[i] = u(rng) < 0.4;
            pbin[i] = pred[i] > 0.2;
        }
        double inter = 0, uni = 0;
        for (int x = 0; x < 4; ++x)
            for (int y = 0; y < 4; ++y)
                for (int z = 0; z < 4; ++z) {
                    const std::size_t i = (z * 4 + y) * 4 + x;
                    inter += (pbin[i] && gt[i]) ? 1 : 0;
                    uni += (pbin[i] || gt[i]) ? 1 : 0;
                }
        const double v = voxel_iou(pred, gt);
        EXPECT_EQ(v, uni == 0 ? 1.0 : inter / uni);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        // Swapping the thresholded prediction and the ground truth.
        std::vector<double> gtp(gt.begin(), gt.end());
        EXPECT_EQ(voxel_iou(gtp, pbin, 0.5), v);
    }
}

TEST(Matrix, UpdateSetsRowCells) {
    IouMatrix m(3);
    m.update(0, {one(0.5)});
    EXPECT_TRUE(m.cell(0, 0));
    EXPECT_FALSE(m.cell(0, 1));
    EXPECT_FALSE(m.cell(1, 0));
    update_matrix(m, 1, {one(0.4), one(0.6)});
    update_matrix(m, 2, {one(0.1), one(0.2), one(0.3)});
    int defined = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) defined += m.cell(i, j).has_value();
    EXPECT_EQ(defined, 6);

    EXPECT_THROW(m.update(2, {one(0.1), one(0.2), one(0.3)}), ad::ContractError);
    IouMatrix n(2);
    EXPECT_THROW(n.update(1, {one(0.1)}), ad::ContractError);
    EXPECT_THROW(n.update(2, {one(0.1), one(0.1), one(0.1)}), ad::ContractError);
    EXPECT_THROW(n.update(0, {IouMatrix::ClassIous{}}), ad::ContractError);
    EXPECT_THROW(n.update(0, {one(1.5)}), ad::ContractError);
    EXPECT_FALSE(n.has_row(0));
}

TEST(Matrix, PerClassMeans) {
    IouMatrix m(1);
    m.update(0, {{{"a", 0.2}, {"b", 0.6}, {"c", 1.0}}});
    EXPECT_NEAR(*m.cell(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(incremental_iou(m), 0.6, 1e-15);
}

TEST(IncrementalIou, Formula) {
    IouMatrix single(1);
    single.update(0, {one(0.7)});
    EXPECT_EQ(incremental_iou(single), 0.7);

    IouMatrix two(2);
    two.update(0, {one(0.9)});
    two.update(1, {one(0.6), one(0.4)});
    EXPECT_NEAR(incremental_iou(two), 0.5, 1e-15);

    IouMatrix flat(4);
    for (std::size_t i = 0; i < 4; ++i) flat.update(i, Row(i + 1, one(0.375)));
    EXPECT_EQ(incremental_iou(flat), 0.375);
    EXPECT_EQ(backward_transfer(flat), 0.0);

    IouMatrix partial(2);
    partial.update(0, {one(0.9)});
    EXPECT_THROW(incremental_iou(partial), ad::ContractError);
}

TEST(BackwardTransfer, Formula) {
    EXPECT_NEAR(backward_transfer(forgetting_matrix()), -0.05, 1e-12);

    IouMatrix better(2);
    better.update(0, {one(0.5)});
    better.update(1, {one(0.7), one(0.6)});
    EXPECT_GT(backward_transfer(better), 0.0);

    IouMatrix single(1);
    single.update(0, {one(0.7)});
    EXPECT_THROW(backward_transfer(single), ad::ContractError);
    IouMatrix partial(3);
    partial.update(0, {one(0.5)});
    partial.update(2, {one(0.5), one(0.5), one(0.5)});
    EXPECT_THROW(backward_transfer(partial), ad::ContractError);
}

TEST(Metrics, InvariantToClassOrder) {
    IouMatrix a(2), b(2);
    a.update(0, {{{"x", 0.3}, {"y", 0.9}}});
    a.update(1, {{{"x", 0.2}, {"y", 0.8}}, {{"z", 0.5}, {"w", 0.25}}});
    b.update(0, {{{"y", 0.9}, {"x", 0.3}}});
    b.update(1, {{{"y", 0.8}, {"x", 0.2}}, {{"w", 0.25}, {"z", 0.5}}});
    EXPECT_EQ(incremental_iou(a), incremental_iou(b));
    EXPECT_EQ(backward_transfer(a), backward_transfer(b));
}

TEST(Persistence, CsvLayout) {
    IouMatrix m(2);
    m.update(0, {one(0.5)});
    m.update(1, {one(0.25), one(0.75)});
    EXPECT_EQ(encode_matrix_csv(m), "trained_session,eval_session,mean_iou\n0,0,0.5\n1,0,0.25\n1,1,0.75\n");
}

TEST(Persistence, JsonRoundTripIsExact) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    IouMatrix m(4);
    for (std::size_t i = 0; i < 4; ++i) {
        Row row;
        for (std::size_t j = 0; j <= i; ++j) row.push_back({{"a" + std::to_string(j), u(rng)}, {"b" + std::to_string(j), u(rng)}});
        m.update(i, row);
    }
    const IouMatrix back = decode_matrix_json(encode_matrix_json(m));
    EXPECT_EQ(back, m);
    EXPECT_EQ(incremental_iou(back), incremental_iou(m));
    EXPECT_EQ(backward_transfer(back), backward_transfer(m));
    EXPECT_EQ(encode_matrix_csv(back), encode_matrix_csv(m));

    IouMatrix partial(3);
    partial.update(0, {one(0.5)});
    EXPECT_EQ(decode_matrix_json(encode_matrix_json(partial)), partial);
}

TEST(Persistence, SummaryJson) {
    const auto js = nlohmann::json::parse(encode_summary_json(forgetting_matrix()));
    EXPECT_NEAR(js["bwt"].get<double>(), -0.05, 1e-12);
    EXPECT_NEAR(js["i_iou"].get<double>(), (0.55 + 0.65 + 0.8) / 3.0, 1e-12);
    EXPECT_EQ(js["per_session"].size(), 3u);
    EXPECT_NEAR(js["per_session"]["1"]["diagonal"].get<double>(), 0.7, 1e-15);

    IouMatrix single(1);
    single.update(0, {one(0.7)});
    const auto s = nlohmann::json::parse(encode_summary_json(single));
    EXPECT_EQ(s["i_iou"].get<double>(), 0.7);
    EXPECT_TRUE(s["bwt"].is_null());

    const auto e = nlohmann::json::parse(encode_summary_json(IouMatrix(2)));
    EXPECT_TRUE(e["i_iou"].is_null());
    EXPECT_TRUE(e["bwt"].is_null());
    EXPECT_TRUE(e["per_session"].empty());
}
