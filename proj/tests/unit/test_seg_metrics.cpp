#include <gtest/gtest.h>

#include <random>

#include <hnpipe/seg_metrics.hpp>

#include "metric_oracle.hpp"
#include "test_support.hpp"

using namespace hnpipe;
using namespace hnpipe::testing;

namespace {

Mask mask_with(const Geometry& g, std::initializer_list<Index3> fg)
{
    Mask m(g);
    for (const auto& c : fg) m.at(c[0], c[1], c[2]) = 1;
    return m;
}

} // namespace

TEST(Dice, HandCases)
{
    const auto g = make_geom(4, 4, 1);
    const auto a = mask_with(g, {{0, 0, 0}, {1, 0, 0}});
    EXPECT_EQ(dice_similarity(a, a), 1.0);
    EXPECT_EQ(dice_similarity(a, mask_with(g, {{3, 3, 0}})), 0.0);
    // |P|=3, |G|=4, overlap 2
    const auto p = mask_with(g, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
    const auto t = mask_with(g, {{1, 0, 0}, {2, 0, 0}, {0, 1, 0}, {1, 1, 0}});
    EXPECT_NEAR(dice_similarity(p, t), 4.0 / 7.0, 1e-12);
    EXPECT_EQ(dice_similarity(Mask(g), Mask(g)), 1.0);
    EXPECT_THROW(dice_similarity(Mask(g), Mask(make_geom(4, 4, 2))), ShapeMismatch);
}

TEST(DirectedHd, HandCases)
{
    const auto g = make_geom(8, 1, 1);
    const auto a = mask_with(g, {{0, 0, 0}});
    EXPECT_EQ(directed_avg_hd(a, a), 0.0);
    EXPECT_DOUBLE_EQ(directed_avg_hd(a, mask_with(g, {{3, 0, 0}})), 3.0);
    // from-voxels at distance 0 and 4 from the target
    const auto from = mask_with(g, {{2, 0, 0}, {6, 0, 0}});
    EXPECT_DOUBLE_EQ(directed_avg_hd(from, mask_with(g, {{2, 0, 0}})), 2.0);
    EXPECT_THROW(directed_avg_hd(Mask(g), a), DegenerateInput);
}

TEST(AverageHd, HandCases)
{
    const auto g = make_geom(8, 1, 1);
    const auto a = mask_with(g, {{1, 0, 0}});
    const auto b = mask_with(g, {{4, 0, 0}});
    EXPECT_EQ(average_hd(a, a), 0.0);
    EXPECT_DOUBLE_EQ(average_hd(a, b), 3.0);
    try {
        average_hd(Mask(g), b);
        FAIL() << "expected an empty-mask error";
    } catch (const DegenerateInput& e) {
        EXPECT_NE(std::string(e.what()).find("prediction"), std::string::npos);
    }
    try {
        average_hd(a, Mask(g));
        FAIL() << "expected an empty-mask error";
    } catch (const DegenerateInput& e) {
        EXPECT_NE(std::string(e.what()).find("ground-truth"), std::string::npos);
    }
}

TEST(Hd95, HandCases)
{
    const auto g = make_geom(30, 1, 1);
    const auto a = mask_with(g, {{1, 0, 0}, {2, 0, 0}});
    EXPECT_EQ(hd95(a, a), 0.0);
    // every pooled distance equals 5
    EXPECT_DOUBLE_EQ(hd95(mask_with(g, {{0, 0, 0}}), mask_with(g, {{5, 0, 0}})), 5.0);

    // mostly zero distances plus one of 10: 9 identical voxels in both masks and
    // one prediction voxel 10 mm from the nearest truth voxel
    Mask truth(g), pred(g);
    for (std::size_t i = 0; i < 9; ++i) truth.at(i, 0, 0) = pred.at(i, 0, 0) = 1;
    pred.at(18, 0, 0) = 1;
    const auto pooled = [&] {
        auto d = brute_directed(pred, truth);
        auto e = brute_directed(truth, pred);
        d.insert(d.end(), e.begin(), e.end());
        return d;
    }();
    ASSERT_EQ(pooled.size(), 19u); // 10 + 9
    const double expected = brute_percentile(pooled, 95.0);
    EXPECT_GT(expected, 0.0);
    EXPECT_LT(expected, 10.0);
    EXPECT_EQ(hd95(pred, truth), expected);
    EXPECT_NEAR(expected, 1.0, 1e-12); // rank 17.1 of 18 zeros then 10
}

TEST(Percentile, LinearInterpolation)
{
    EXPECT_DOUBLE_EQ(percentile_linear({1.0, 2.0, 3.0, 4.0}, 50.0), 2.5);
    EXPECT_DOUBLE_EQ(percentile_linear({0.0, 10.0}, 95.0), 9.5);
    EXPECT_DOUBLE_EQ(percentile_linear({7.0}, 95.0), 7.0);
    EXPECT_THROW(percentile_linear({}, 95.0), DegenerateInput);
}

TEST(DistanceTransform, MatchesBruteForceExactly)
{
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    std::uniform_real_distribution<double> sp(0.3, 3.0);
    for (int trial = 0; trial < 150; ++trial) {
        Geometry g = make_geom(dim(rng), dim(rng), dim(rng), {sp(rng), sp(rng), sp(rng)});
        if (trial % 3 == 0) g.spacing = {1.0, 1.0, 1.0};
        const double density = std::uniform_real_distribution<double>(0.02, 0.6)(rng);
        auto p = random_mask(rng, g, density);
        auto t = random_mask(rng, g, density);
        p.data[0] = 1;
        t.data[t.size() - 1] = 1;
        EXPECT_EQ(directed_distances(p, t), brute_directed(p, t)) << "trial " << trial;
        EXPECT_EQ(average_hd(p, t), brute_avg_hd(p, t));
        EXPECT_EQ(hd95(p, t), brute_hd95(p, t));
        EXPECT_EQ(dice_similarity(p, t), brute_dice(p, t));
    }
}

TEST(SegMetrics, SymmetryBoundsAndScaling)
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = make_geom(6, 5, 4, {1.0, 0.8, 2.5});
        auto p = random_mask(rng, g, 0.2);
        auto t = random_mask(rng, g, 0.2);
        p.data[3] = t.data[50] = 1;
        EXPECT_EQ(dice_similarity(p, t), dice_similarity(t, p));
        EXPECT_DOUBLE_EQ(average_hd(p, t), average_hd(t, p));
        EXPECT_EQ(hd95(p, t), hd95(t, p));

        auto pooled = directed_distances(p, t);
        const auto back = directed_distances(t, p);
        pooled.insert(pooled.end(), back.begin(), back.end());
        const double mx = *std::max_element(pooled.begin(), pooled.end());
        EXPECT_LE(hd95(p, t), mx);
        EXPECT_LE(average_hd(p, t), mx);

        // scale spacing by 2 (exact in binary floating point)
        auto p2 = p, t2 = t;
        for (auto* m : {&p2, &t2})
            for (auto& s : m->geom.spacing) s *= 2.0;
        EXPECT_EQ(dice_similarity(p2, t2), dice_similarity(p, t));
        EXPECT_NEAR(average_hd(p2, t2), 2.0 * average_hd(p, t), 1e-12);
        EXPECT_NEAR(hd95(p2, t2), 2.0 * hd95(p, t), 1e-12);
    }
}

TEST(EvaluateBatch, Aggregation)
{
    const auto g = make_geom(6, 1, 1);
    const auto a = mask_with(g, {{0, 0, 0}, {1, 0, 0}});
    const auto b = mask_with(g, {{4, 0, 0}, {5, 0, 0}});
    const auto c = mask_with(g, {{1, 0, 0}, {2, 0, 0}});

    std::vector<std::pair<Mask, Mask>> one{{a, a}};
    const auto r1 = evaluate_batch(one);
    EXPECT_EQ(r1.mean.dsc, 1.0);
    EXPECT_EQ(r1.mean.hd95, 0.0);

    std::vector<std::pair<Mask, Mask>> two{{a, a}, {a, b}};
    EXPECT_DOUBLE_EQ(evaluate_batch(two).mean.dsc, 0.5);

    // hand values: (a,a): dsc 1, avg 0; (a,c): dsc 0.5, avg 0.5; (a,b): dsc 0, avg 3.5
    std::vector<std::pair<Mask, Mask>> three{{a, a}, {a, c}, {a, b}};
    const auto r3 = evaluate_batch(three);
    EXPECT_NEAR(r3.mean.dsc, 0.5, 1e-12);
    EXPECT_NEAR(r3.mean.avg_hd, 4.0 / 3.0, 1e-12);
    EXPECT_NEAR(r3.cases[1].avg_hd, 0.5, 1e-12);

    std::vector<std::pair<Mask, Mask>> bad{{a, a}, {Mask(g), a}};
    try {
        evaluate_batch(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("case 1"), std::string::npos);
    }
}
