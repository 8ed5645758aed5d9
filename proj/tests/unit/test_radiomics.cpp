#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include <hnpipe/radiomics.hpp>

#include "test_support.hpp"

using namespace hnpipe;
using namespace hnpipe::radiomics;
using hnpipe::testing::make_geom;

namespace {

const std::vector<Direction> kX{{1, 0, 0}};

DiscretizedRoi roi_from_levels(const Geometry& g, const std::vector<int>& levels)
{
    // level 0 marks voxels outside the ROI
    DiscretizedRoi roi;
    roi.levels = *std::max_element(levels.begin(), levels.end());
    roi.dims = g.dims;
    roi.spacing = g.spacing;
    for (std::size_t n = 0; n < levels.size(); ++n)
        if (levels[n] > 0) {
            roi.voxel_levels.push_back(levels[n]);
            roi.voxel_coords.push_back(g.coords(n));
        }
    return roi;
}

// GLCM contrast by enumerating every ordered voxel pair and testing whether
// their offset is one of the 13 directions or its negation.
double brute_glcm_contrast(const DiscretizedRoi& roi)
{
    double num = 0.0, pairs = 0.0;
    for (std::size_t a = 0; a < roi.size(); ++a)
        for (std::size_t b = 0; b < roi.size(); ++b) {
            if (a == b) continue;
            int cheb = 0;
            for (int k = 0; k < 3; ++k)
                cheb = std::max(cheb, std::abs(static_cast<int>(roi.voxel_coords[a][k]) - static_cast<int>(roi.voxel_coords[b][k])));
            if (cheb != 1) continue;
            const double d = roi.voxel_levels[a] - roi.voxel_levels[b];
            num += d * d;
            pairs += 1.0;
        }
    return num / pairs;
}

// Connected components by repeated label propagation.
std::vector<std::size_t> brute_zone_sizes(const DiscretizedRoi& roi)
{
    const std::size_t n = roi.size();
    std::vector<std::size_t> label(n);
    std::iota(label.begin(), label.end(), 0);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                if (roi.voxel_levels[a] != roi.voxel_levels[b]) continue;
                int cheb = 0;
                for (int k = 0; k < 3; ++k)
                    cheb = std::max(cheb, std::abs(static_cast<int>(roi.voxel_coords[a][k]) - static_cast<int>(roi.voxel_coords[b][k])));
                if (cheb != 1) continue;
                const auto m = std::min(label[a], label[b]);
                if (label[a] != m || label[b] != m) {
                    label[a] = label[b] = m;
                    changed = true;
                }
            }
    }
    std::map<std::size_t, std::size_t> sizes;
    for (auto l : label) ++sizes[l];
    std::vector<std::size_t> out;
    for (auto [l, s] : sizes) out.push_back(s);
    std::sort(out.begin(), out.end());
    return out;
}

Mask full_mask(const Geometry& g) { return Mask(g, std::uint8_t{1}); }

} // namespace

TEST(Discretize, HandCases)
{
    const auto g = make_geom(4, 1, 1);
    const auto roi = discretize(Volume(g, std::vector<double>{0, 1, 2, 3}), full_mask(g), 4);
    EXPECT_EQ(roi.voxel_levels, (std::vector<int>{1, 2, 3, 4}));
    const auto c = discretize(Volume(g, 5.0), full_mask(g), 8);
    EXPECT_EQ(c.voxel_levels, (std::vector<int>{1, 1, 1, 1}));
    EXPECT_THROW(discretize(Volume(g), Mask(g), 4), DegenerateInput);
    EXPECT_THROW(discretize(Volume(g), full_mask(g), 1), InvalidArgument);
}

TEST(IntensityFeatures, HandCases)
{
    const auto g2 = make_geom(2, 1, 1);
    const auto f = intensity_features(Volume(g2, std::vector<double>{-1, 1}), full_mask(g2));
    EXPECT_NEAR(f.at("mean"), 0.0, 1e-12);
    EXPECT_NEAR(f.at("variance"), 1.0, 1e-12);
    EXPECT_NEAR(f.at("entropy"), 1.0, 1e-12);

    const auto g4 = make_geom(4, 1, 1);
    const std::vector<double> sym{-2, -1, 1, 2};
    EXPECT_NEAR(skewness(sym), 0.0, 1e-12);
    // kurtosis by hand: m2 = 2.5, m4 = (16+1+1+16)/4 = 8.5
    EXPECT_NEAR(kurtosis(sym), 8.5 / 6.25 - 3.0, 1e-12);

    const std::vector<double> constant(5, 3.5);
    const auto m = central_moments(constant);
    EXPECT_EQ(m.mean, 3.5);
    EXPECT_EQ(m.variance, 0.0);
    EXPECT_EQ(histogram_entropy(constant), 0.0);
    EXPECT_THROW(skewness(constant), DegenerateInput);
    EXPECT_THROW(kurtosis(constant), DegenerateInput);
    EXPECT_THROW(intensity_features(Volume(g4, 3.5), full_mask(g4)), DegenerateInput);
}

TEST(IntensityFeatures, PermutationInvariant)
{
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd(10.0, 3.0);
    const auto g = make_geom(5, 4, 3);
    Volume v(g);
    for (auto& x : v.data) x = nd(rng);
    Volume w = v;
    std::shuffle(w.data.begin(), w.data.end(), rng);
    const auto a = intensity_features(v, full_mask(g)), b = intensity_features(w, full_mask(g));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.items()[i].second, b.items()[i].second, 1e-9);
}

TEST(ShapeFeatures, HandCases)
{
    const auto g = make_geom(3, 3, 3);
    Mask one(g);
    one.at(1, 1, 1) = 1;
    const auto f1 = shape_features(one);
    EXPECT_DOUBLE_EQ(f1.at("volume"), 1.0);
    EXPECT_DOUBLE_EQ(f1.at("surface_area"), 6.0);
    EXPECT_NEAR(f1.at("sphericity"), std::cbrt(std::numbers::pi) * std::pow(6.0, 2.0 / 3.0) / 6.0, 1e-12);
    EXPECT_NEAR(f1.at("sphericity"), 0.806, 1e-3);

    Mask two(g);
    two.at(0, 0, 0) = two.at(1, 0, 0) = 1; // touches the grid border
    const auto f2 = shape_features(two);
    EXPECT_DOUBLE_EQ(f2.at("volume"), 2.0);
    EXPECT_DOUBLE_EQ(f2.at("surface_area"), 10.0);

    Mask scaled = two;
    for (auto& s : scaled.geom.spacing) s = 1.5;
    const auto fs = shape_features(scaled);
    EXPECT_NEAR(fs.at("volume"), 2.0 * 1.5 * 1.5 * 1.5, 1e-12);
    EXPECT_NEAR(fs.at("surface_area"), 10.0 * 1.5 * 1.5, 1e-12);
    EXPECT_NEAR(fs.at("sphericity"), f2.at("sphericity"), 1e-12);
    EXPECT_THROW(shape_features(Mask(g)), DegenerateInput);
}

TEST(Glcm, HandCases)
{
    const auto g = make_geom(3, 2, 2);
    const auto constant = roi_from_levels(g, std::vector<int>(12, 2));
    EXPECT_EQ(glcm_features(constant).at("glcm_contrast"), 0.0);

    const auto g2 = make_geom(2, 1, 1);
    const auto pair = roi_from_levels(g2, {1, 2});
    const auto m = glcm_matrix(pair, kX);
    EXPECT_DOUBLE_EQ(m[0][1], 0.5);
    EXPECT_DOUBLE_EQ(m[1][0], 0.5);
    const auto f = glcm_features(pair, kX);
    EXPECT_NEAR(f.at("glcm_contrast"), 1.0, 1e-12);
    EXPECT_NEAR(f.at("glcm_joint_entropy"), 1.0, 1e-12);

    const auto checker = roi_from_levels(make_geom(2, 2, 1), {1, 2, 2, 1});
    EXPECT_NEAR(glcm_features(checker).at("glcm_contrast"), brute_glcm_contrast(checker), 1e-12);

    EXPECT_THROW(glcm_features(roi_from_levels(make_geom(1, 1, 1), {1})), DegenerateInput);
}

TEST(Glrlm, HandCases)
{
    const auto single = roi_from_levels(make_geom(1, 1, 1), {3});
    const auto f1 = glrlm_features(single, kX);
    EXPECT_DOUBLE_EQ(f1.at("glrlm_short_run_emphasis"), 1.0);
    EXPECT_DOUBLE_EQ(f1.at("glrlm_long_run_emphasis"), 1.0);

    const auto line = roi_from_levels(make_geom(3, 1, 1), {2, 2, 2});
    const auto f3 = glrlm_features(line, kX);
    EXPECT_NEAR(f3.at("glrlm_short_run_emphasis"), 1.0 / 9.0, 1e-12);
    EXPECT_NEAR(f3.at("glrlm_long_run_emphasis"), 9.0, 1e-12);

    const auto alt = roi_from_levels(make_geom(5, 1, 1), {1, 2, 1, 2, 1});
    const auto fa = glrlm_features(alt, kX);
    EXPECT_DOUBLE_EQ(fa.at("glrlm_short_run_emphasis"), 1.0);
    EXPECT_DOUBLE_EQ(fa.at("glrlm_long_run_emphasis"), 1.0);
}

TEST(Glszm, HandCases)
{
    const auto block = roi_from_levels(make_geom(2, 2, 2), std::vector<int>(8, 1));
    const auto f = glszm_features(block);
    EXPECT_NEAR(f.at("glszm_small_zone_emphasis"), 1.0 / 64.0, 1e-12);
    EXPECT_NEAR(f.at("glszm_zone_size_nonuniformity"), 1.0, 1e-12);

    const auto two = roi_from_levels(make_geom(3, 1, 1), {1, 0, 2});
    EXPECT_EQ(brute_zone_sizes(two), (std::vector<std::size_t>{1, 1}));
    const auto f2 = glszm_features(two);
    EXPECT_DOUBLE_EQ(f2.at("glszm_small_zone_emphasis"), 1.0);
    EXPECT_DOUBLE_EQ(f2.at("glszm_zone_size_nonuniformity"), 2.0);

    const auto single = glszm_features(roi_from_levels(make_geom(1, 1, 1), {1}));
    EXPECT_DOUBLE_EQ(single.at("glszm_small_zone_emphasis"), 1.0);
    EXPECT_DOUBLE_EQ(single.at("glszm_zone_size_nonuniformity"), 1.0);
}

TEST(Texture, ConservationAndOracles)
{
    std::mt19937_64 rng(321);
    std::uniform_int_distribution<std::size_t> edge(1, 6);
    std::uniform_int_distribution<int> lvl(1, 4);
    std::bernoulli_distribution inside(0.7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto g = make_geom(edge(rng), edge(rng), edge(rng));
        std::vector<int> levels(g.size());
        for (auto& l : levels) l = inside(rng) ? lvl(rng) : 0;
        levels[0] = std::max(levels[0], 1);
        auto roi = roi_from_levels(g, levels);
        roi.levels = 4;

        const auto rl = glrlm_matrix(roi);
        double weighted = 0.0;
        for (const auto& row : rl.counts)
            for (std::size_t l = 0; l < row.size(); ++l) weighted += row[l] * static_cast<double>(l + 1);
        EXPECT_EQ(weighted, static_cast<double>(roi.size() * all_directions().size()));

        const auto zones = glszm_zones(roi);
        double covered = 0.0;
        std::vector<std::size_t> sizes;
        for (const auto& [key, count] : zones) {
            covered += count * static_cast<double>(key.second);
            for (int c = 0; c < static_cast<int>(count); ++c) sizes.push_back(key.second);
        }
        std::sort(sizes.begin(), sizes.end());
        EXPECT_EQ(covered, static_cast<double>(roi.size()));
        EXPECT_EQ(sizes, brute_zone_sizes(roi));

        bool has_pair = false;
        try {
            const auto m = glcm_matrix(roi);
            has_pair = true;
            for (std::size_t i = 0; i < m.size(); ++i)
                for (std::size_t j = 0; j < m.size(); ++j) EXPECT_EQ(m[i][j], m[j][i]);
        } catch (const DegenerateInput&) {
        }
        if (has_pair) {
            EXPECT_NEAR(glcm_features(roi).at("glcm_contrast"), brute_glcm_contrast(roi), 1e-12);
        }
    }
}

TEST(Texture, TranslationInvariant)
{
    const auto g = make_geom(8, 8, 8);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    Volume v(g), w(g);
    Mask m(g), mt(g);
    for (std::size_t k = 1; k < 4; ++k)
        for (std::size_t j = 1; j < 5; ++j)
            for (std::size_t i = 0; i < 4; ++i) {
                const double x = u(rng);
                v.at(i, j, k) = x;
                m.at(i, j, k) = 1;
                w.at(i + 3, j + 2, k + 4) = x;
                mt.at(i + 3, j + 2, k + 4) = 1;
            }
    const auto a = modality_features(v, m, 8), b = modality_features(w, mt, 8);
    ASSERT_EQ(a.size(), 14u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.items()[i].second, b.items()[i].second, 1e-12) << a.items()[i].first;
}

TEST(ExtractAll, ModalitiesAndErrors)
{
    const auto g = make_geom(6, 6, 6);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    Volume v(g);
    for (auto& x : v.data) x = u(rng);
    Mask m(g);
    for (std::size_t k = 1; k < 5; ++k)
        for (std::size_t j = 1; j < 5; ++j)
            for (std::size_t i = 1; i < 4; ++i) m.at(i, j, k) = 1;

    const auto both = extract_all(v, v, m);
    ASSERT_EQ(both.size(), 28u);
    for (std::size_t i = 0; i < 14; ++i) {
        EXPECT_EQ(both.items()[i].first.substr(0, 3), "ct_");
        EXPECT_EQ(both.items()[i + 14].first.substr(0, 4), "pet_");
        EXPECT_EQ(both.items()[i].second, both.items()[i + 14].second);
    }
    RadiomicsConfig ct_only;
    ct_only.pet = false;
    EXPECT_EQ(extract_all(v, v, m, ct_only).size(), 14u);
    try {
        extract_all(v, v, Mask(g));
        FAIL();
    } catch (const DegenerateInput& e) {
        EXPECT_NE(std::string(e.what()).find("mask"), std::string::npos);
    }
}

TEST(FeatureVector, RejectsDuplicatesAndNonFinite)
{
    FeatureVector f;
    f.add("a", 1.0);
    EXPECT_THROW(f.add("a", 2.0), InvalidArgument);
    EXPECT_THROW(f.add("b", std::nan("")), DegenerateInput);
}
