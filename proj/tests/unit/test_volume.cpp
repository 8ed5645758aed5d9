#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <hnpipe/volume.hpp>
#include <hnpipe/volume_io.hpp>

#include "test_support.hpp"

using namespace hnpipe;
using hnpipe::testing::make_geom;
using hnpipe::testing::TempDir;

namespace {

Volume random_volume(std::mt19937_64& rng, const Geometry& g)
{
    Volume v(g);
    std::uniform_real_distribution<double> u(-1000.0, 1000.0);
    // float32-representable so that the on-disk float payload round-trips exactly
    for (auto& x : v.data) x = static_cast<float>(u(rng));
    return v;
}

} // namespace

TEST(VolumeIo, RawJsonZerosLoad)
{
    TempDir dir;
    Volume v(make_geom(4, 4, 4));
    save_volume(v, dir.file("zeros.json"), VolumeFormat::raw_json);
    const auto back = load_volume(dir.file("zeros.json"), VolumeFormat::raw_json);
    EXPECT_EQ(back.size(), 64u);
    for (double x : back.data) EXPECT_EQ(x, 0.0);
}

TEST(VolumeIo, RoundTripBothFormats)
{
    TempDir dir;
    std::mt19937_64 rng(7);
    Geometry g = make_geom(5, 3, 4, {0.75, 1.25, 2.0});
    g.origin = {-10.5, 3.25, 100.0};
    const Volume v = random_volume(rng, g);

    for (const std::string name : {"v.json", "v.nii", "v.nii.gz"}) {
        save_volume(v, dir.file(name));
        const auto back = load_volume(dir.file(name));
        EXPECT_EQ(back.data, v.data) << name;
        EXPECT_EQ(back.geom.dims, v.geom.dims) << name;
        for (int a = 0; a < 3; ++a) {
            EXPECT_NEAR(back.geom.spacing[a], v.geom.spacing[a], 1e-6) << name;
            EXPECT_NEAR(back.geom.origin[a], v.geom.origin[a], 1e-4) << name;
        }
    }
}

TEST(VolumeIo, ConstantAndMaskRoundTrip)
{
    TempDir dir;
    Volume c(make_geom(3, 3, 3), 42.0);
    save_volume(c, dir.file("c.nii.gz"));
    EXPECT_EQ(load_volume(dir.file("c.nii.gz")).data, c.data);

    Mask m(make_geom(3, 2, 2));
    m.data = {0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 1};
    save_volume(to_volume(m), dir.file("m.json"));
    const auto back = Mask::from_volume(load_volume(dir.file("m.json")));
    EXPECT_EQ(back.data, m.data);
}

TEST(VolumeIo, NiftiLengthMismatchIsError)
{
    TempDir dir;
    Volume v(make_geom(4, 4, 4), 1.0);
    save_volume(v, dir.file("v.nii"));
    // drop the last voxel from the payload
    std::filesystem::resize_file(dir.file("v.nii"), std::filesystem::file_size(dir.file("v.nii")) - 4);
    EXPECT_THROW(load_volume(dir.file("v.nii")), IoError);
    EXPECT_THROW(load_volume(dir.file("missing.nii")), IoError);
}

TEST(VolumeIo, NiftiInt16WithScaling)
{
    TempDir dir;
    Volume v(make_geom(2, 1, 1));
    save_volume(v, dir.file("a.nii"));
    // rewrite the header as int16 with slope 2, intercept -1
    std::vector<char> bytes(352 + 4);
    {
        std::ifstream in(dir.file("a.nii"), std::ios::binary);
        in.read(bytes.data(), 352);
    }
    const std::int16_t dt = 4, bitpix = 16;
    const float slope = 2.0f, inter = -1.0f;
    std::memcpy(bytes.data() + 70, &dt, 2);
    std::memcpy(bytes.data() + 72, &bitpix, 2);
    std::memcpy(bytes.data() + 112, &slope, 4);
    std::memcpy(bytes.data() + 116, &inter, 4);
    const std::int16_t vals[2] = {10, -20};
    std::memcpy(bytes.data() + 352, vals, 4);
    {
        std::ofstream out(dir.file("a.nii"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    const auto back = load_volume(dir.file("a.nii"));
    EXPECT_EQ(back.data, (std::vector<double>{19.0, -41.0}));
}

TEST(VolumeIo, BoundingBoxCsv)
{
    TempDir dir;
    {
        std::ofstream out(dir.file("bb.csv"));
        out << "patient_id,x0,y0,z0,sx,sy,sz\nP1,1,2,3,144,144,144\n";
    }
    const auto boxes = load_bounding_boxes(dir.file("bb.csv"));
    ASSERT_EQ(boxes.count("P1"), 1u);
    EXPECT_EQ(boxes.at("P1").start, (Index3{1, 2, 3}));
    EXPECT_EQ(boxes.at("P1").size, (Index3{144, 144, 144}));
}

TEST(Resample, ConstantStaysConstant)
{
    Volume v(make_geom(6, 5, 4, {1.0, 2.0, 3.0}), 7.0);
    for (Vec3 s : {Vec3{0.5, 0.5, 0.5}, Vec3{2.0, 3.0, 1.7}, Vec3{1.0, 1.0, 1.0}}) {
        const auto r = resample_trilinear(v, s);
        for (double x : r.data) EXPECT_EQ(x, 7.0);
    }
}

TEST(Resample, IdentitySpacingIsIdentity)
{
    std::mt19937_64 rng(3);
    const auto v = random_volume(rng, make_geom(5, 6, 7, {0.9, 1.1, 2.5}));
    const auto r = resample_trilinear(v, v.geom.spacing);
    EXPECT_EQ(r.geom.dims, v.geom.dims);
    EXPECT_EQ(r.data, v.data);
}

TEST(Resample, AffineFieldExactInInterior)
{
    // value = a*x + b*y + c*z of the voxel-center physical position
    const double a = 0.7, b = -1.3, c = 2.1;
    Geometry g = make_geom(16, 12, 10, {1.0, 1.5, 2.0});
    Volume v(g);
    auto center = [](const Geometry& gg, std::size_t i, int axis) {
        return gg.origin[axis] + (static_cast<double>(i) + 0.5) * gg.spacing[axis];
    };
    for (std::size_t k = 0; k < g.dims[2]; ++k)
        for (std::size_t j = 0; j < g.dims[1]; ++j)
            for (std::size_t i = 0; i < g.dims[0]; ++i)
                v.at(i, j, k) = a * center(g, i, 0) + b * center(g, j, 1) + c * center(g, k, 2);

    const auto r = resample_trilinear(v, {2.0, 3.0, 4.0});
    EXPECT_EQ(r.geom.dims, (Index3{8, 6, 5}));
    // interior: output centers that fall strictly inside the input center hull
    for (std::size_t k = 0; k < r.geom.dims[2]; ++k)
        for (std::size_t j = 0; j < r.geom.dims[1]; ++j)
            for (std::size_t i = 0; i < r.geom.dims[0]; ++i) {
                const double x = center(r.geom, i, 0), y = center(r.geom, j, 1), z = center(r.geom, k, 2);
                const bool inside = x >= center(g, 0, 0) && x <= center(g, g.dims[0] - 1, 0) &&
                                    y >= center(g, 0, 1) && y <= center(g, g.dims[1] - 1, 1) &&
                                    z >= center(g, 0, 2) && z <= center(g, g.dims[2] - 1, 2);
                if (inside) {
                    EXPECT_NEAR(r.at(i, j, k), a * x + b * y + c * z, 1e-9);
                }
            }
}

TEST(Resample, OutputWithinInputRange)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto v = random_volume(rng, make_geom(5, 4, 6, {1.0, 1.3, 0.8}));
        std::uniform_real_distribution<double> s(0.3, 3.0);
        const auto r = resample_trilinear(v, {s(rng), s(rng), s(rng)});
        const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
        for (double x : r.data) {
            EXPECT_GE(x, *lo);
            EXPECT_LE(x, *hi);
        }
    }
}

TEST(Resample, RejectsNonPositiveSpacing)
{
    Volume v(make_geom(2, 2, 2));
    EXPECT_THROW(resample_trilinear(v, {1.0, 0.0, 1.0}), InvalidArgument);
    EXPECT_THROW(resample_trilinear(v, {1.0, -2.0, 1.0}), InvalidArgument);
}

TEST(ZScore, TwoVoxels)
{
    Volume v(make_geom(2, 1, 1), std::vector<double>{0.0, 2.0});
    const auto z = zscore_normalize(v);
    EXPECT_NEAR(z.data[0], -1.0, 1e-12);
    EXPECT_NEAR(z.data[1], 1.0, 1e-12);
}

TEST(ZScore, IdempotentAndAffineInvariant)
{
    std::mt19937_64 rng(5);
    const auto v = random_volume(rng, make_geom(6, 5, 4));
    const auto z = zscore_normalize(v);
    const auto zz = zscore_normalize(z);
    const auto st = population_stats(z.data);
    EXPECT_NEAR(st.mean, 0.0, 1e-9);
    EXPECT_NEAR(st.stddev, 1.0, 1e-9);
    Volume affine = v;
    for (double& x : affine.data) x = 3.5 * x - 120.0;
    const auto za = zscore_normalize(affine);
    for (std::size_t n = 0; n < v.size(); ++n) {
        EXPECT_NEAR(zz.data[n], z.data[n], 1e-9);
        EXPECT_NEAR(za.data[n], z.data[n], 1e-9);
    }
}

TEST(ZScore, ConstantIsDegenerate)
{
    Volume v(make_geom(3, 3, 3), 5.0);
    EXPECT_THROW(zscore_normalize(v), DegenerateInput);
}

TEST(Clip, PrescaleThenClip)
{
    Volume v(make_geom(3, 1, 1), std::vector<double>{-2000.0, 0.0, 500.0});
    const auto c = clip_intensities(v, -1.0, 1.0, 1024.0);
    EXPECT_DOUBLE_EQ(c.data[0], -1.0);
    EXPECT_DOUBLE_EQ(c.data[1], 0.0);
    EXPECT_NEAR(c.data[2], 0.4883, 1e-4);
    EXPECT_DOUBLE_EQ(c.data[2], 500.0 / 1024.0);
}

TEST(Clip, InsideRangeUnchangedAndIdempotent)
{
    Volume v(make_geom(3, 1, 1), std::vector<double>{-0.5, 0.1, 0.9});
    EXPECT_EQ(clip_intensities(v, -1.0, 1.0).data, v.data);
    std::mt19937_64 rng(2);
    const auto r = random_volume(rng, make_geom(4, 4, 4));
    const auto once = clip_intensities(r, -100.0, 250.0);
    EXPECT_EQ(clip_intensities(once, -100.0, 250.0).data, once.data);
    for (double x : once.data) {
        EXPECT_GE(x, -100.0);
        EXPECT_LE(x, 250.0);
    }
}

TEST(Clip, DegenerateRange)
{
    Volume v(make_geom(1, 1, 1));
    EXPECT_THROW(clip_intensities(v, 1.0, 1.0), InvalidArgument);
    EXPECT_THROW(clip_intensities(v, 0.0, 1.0, 0.0), InvalidArgument);
}

TEST(Crop, WholeSingleAndOutOfBounds)
{
    std::mt19937_64 rng(9);
    Geometry g = make_geom(5, 4, 3, {1.0, 2.0, 3.0});
    g.origin = {1.0, 2.0, 3.0};
    const auto v = random_volume(rng, g);
    EXPECT_EQ(crop_to_box(v, BoundingBox{{0, 0, 0}, g.dims}), v);

    const auto one = crop_to_box(v, BoundingBox{{2, 3, 1}, {1, 1, 1}});
    EXPECT_EQ(one.size(), 1u);
    EXPECT_EQ(one.data[0], v.at(2, 3, 1));
    EXPECT_DOUBLE_EQ(one.geom.origin[0], 3.0);
    EXPECT_DOUBLE_EQ(one.geom.origin[1], 8.0);
    EXPECT_DOUBLE_EQ(one.geom.origin[2], 6.0);

    EXPECT_THROW(crop_to_box(v, BoundingBox{{3, 0, 0}, {3, 1, 1}}), InvalidArgument);
}

TEST(Crop, NestedCropsCompose)
{
    std::mt19937_64 rng(4);
    const auto v = random_volume(rng, make_geom(8, 7, 6));
    const BoundingBox outer{{1, 2, 1}, {6, 4, 4}};
    const BoundingBox inner{{2, 1, 0}, {3, 2, 3}};
    const auto twice = crop_to_box(crop_to_box(v, outer), inner);
    const BoundingBox combined{{3, 3, 1}, {3, 2, 3}};
    EXPECT_EQ(twice, crop_to_box(v, combined));
}

TEST(Ensemble, MeanCases)
{
    const auto g = make_geom(2, 2, 1);
    std::vector<ProbMap> one{ProbMap(g, std::vector<double>{0.1, 0.2, 0.3, 0.9})};
    EXPECT_EQ(ensemble_mean(one).data, one[0].data);

    std::vector<ProbMap> two{ProbMap(g, 0.0), ProbMap(g, 1.0)};
    for (double x : ensemble_mean(two).data) EXPECT_EQ(x, 0.5);

    std::vector<ProbMap> five;
    for (double p : {0.1, 0.2, 0.3, 0.4, 0.5}) five.emplace_back(g, p);
    for (double x : ensemble_mean(five).data) EXPECT_NEAR(x, 0.3, 1e-15);
}

TEST(Ensemble, PermutationInvariantAndErrors)
{
    std::mt19937_64 rng(8);
    const auto g = make_geom(4, 3, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ProbMap> maps;
    for (int m = 0; m < 5; ++m) {
        ProbMap p(g);
        for (auto& x : p.data) x = u(rng);
        maps.push_back(p);
    }
    const auto ref = ensemble_mean(maps);
    std::shuffle(maps.begin(), maps.end(), rng);
    EXPECT_EQ(ensemble_mean(maps).data, ref.data);

    EXPECT_THROW(ensemble_mean(std::vector<ProbMap>{}), InvalidArgument);
    maps.emplace_back(make_geom(4, 3, 3));
    EXPECT_THROW(ensemble_mean(maps), ShapeMismatch);
}

TEST(Threshold, Cases)
{
    const auto g = make_geom(2, 1, 1);
    EXPECT_EQ(threshold_map(ProbMap(g, 0.0), 0.5).count(), 0u);
    EXPECT_EQ(threshold_map(ProbMap(g, 1.0), 0.5).count(), 2u);
    EXPECT_EQ(threshold_map(ProbMap(g, 0.5), 0.5).count(), 2u);
    EXPECT_THROW(threshold_map(ProbMap(g, 0.5), 1.5), InvalidArgument);
}
