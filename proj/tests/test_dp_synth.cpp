#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "dpdl/dp_synth.hpp"
#include "dpdl/errors.hpp"
#include "dpdl/losses.hpp"
#include "json.hpp"
#include "dp_oracles.hpp"
#include "test_util.hpp"

using namespace dpdl;
using namespace dpdl::synth;
using dpdl::testing::random_tensor;
using dpdl::testing::ScratchDir;
using namespace dpdl::oracle;

namespace {

Tensor<double> mirrored(const Tensor<double>& k) {
    const std::size_t n = k.dim(0);
    Tensor<double> m(k.shape());
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) m[y * n + x] = k[y * n + (n - 1 - x)];
    return m;
}

double channel_mean(const Tensor<float>& img, std::size_t c) {
    const std::size_t n = img.dim(1) * img.dim(2);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += img[c * n + i];
    return acc / n;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("split_psf construction") {
    const auto zero = split_psf(0, 5);
    CHECK(zero.left.shape() == Shape{1, 1});
    CHECK(zero.left[0] == 1.0);
    CHECK(zero.right[0] == 1.0);
    CHECK_THROWS_AS(split_psf(6, 5), PreconditionError);
    CHECK_THROWS_AS(split_psf(-6, 5), PreconditionError);

    for (int r = 1; r <= 5; ++r) {
        const auto p = split_psf(r, 5), n = split_psf(-r, 5);
        const auto disc = disc_kernel(r);
        CAPTURE(r);
        CHECK(p.left.storage() == mirrored(p.right).storage());
        CHECK(n.left.storage() == p.right.storage());
        CHECK(n.right.storage() == p.left.storage());
        double sl = 0, sr = 0, worst = 0;
        for (std::size_t i = 0; i < disc.size(); ++i) {
            sl += p.left[i];
            sr += p.right[i];
            worst = std::max(worst, std::abs(0.5 * (p.left[i] + p.right[i]) - disc[i]));
        }
        CHECK(sl == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(sr == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(worst <= 1e-15);
        // for r > 0 the left view only reaches left of the centre column
        const std::size_t n_ = 2 * r + 1;
        for (std::size_t y = 0; y < n_; ++y)
            for (std::size_t x = r + 1; x < n_; ++x) CHECK(p.left[y * n_ + x] == 0.0);
    }
}

TEST_CASE("disc_kernel") {
    CHECK(disc_kernel(0).size() == 1);
    const auto d1 = disc_kernel(1);
    int nonzero = 0;
    for (double v : d1.data()) nonzero += v > 0.0;
    CHECK(nonzero == 5);
    CHECK(d1[4] == doctest::Approx(0.2));
    CHECK(disc_kernel(-3).storage() == disc_kernel(3).storage());
}

TEST_CASE("blur_reflect") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int r = 1 + seed % 5;
        const std::size_t n = 2 * r + 1;
        auto k = random_tensor({n, n}, seed + 40, 0.0, 1.0);
        double s = 0;
        for (double v : k.data()) s += v;
        for (auto& v : k.data()) v /= s;
        CAPTURE(r);

        const auto plane = random_tensor({13, 17}, seed, 0.0, 1.0);
        const auto out = blur_reflect(plane, k);
        // direct gather with the mirror boundary
        double worst = 0.0;
        for (long y = 0; y < 13; ++y)
            for (long x = 0; x < 17; ++x) {
                double acc = 0.0;
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx)
                        acc += k[(dy + r) * n + (dx + r)] * plane[mirror_index(y - dy, 13) * 17 + mirror_index(x - dx, 17)];
                worst = std::max(worst, std::abs(acc - out[y * 17 + x]));
            }
        CHECK(worst <= 1e-14);

        // flat fields stay flat
        const auto flat = blur_reflect(Tensor<double>({13, 17}, 0.3), k);
        for (double v : flat.data()) CHECK(std::abs(v - 0.3) <= 1e-14);

        // mass: exact with flat borders, bounded otherwise
        auto mean = [](const Tensor<double>& t) {
            double a = 0;
            for (double v : t.data()) a += v;
            return a / t.size();
        };
        Tensor<double> framed({13, 17}, 0.6);
        for (long y = r; y < 13 - r; ++y)
            for (long x = r; x < 17 - r; ++x) framed[y * 17 + x] = plane[y * 17 + x];
        CHECK(std::abs(mean(blur_reflect(framed, k)) - mean(framed)) <= 1e-14);
        CHECK(std::abs(mean(out) - mean(plane)) <= r * (1.0 / 13 + 1.0 / 17));
    }
    CHECK_THROWS_AS(blur_reflect(Tensor<double>({4, 9}), disc_kernel(4)), PreconditionError);
    CHECK_THROWS_AS(blur_reflect(Tensor<double>({4, 9}), Tensor<double>({2, 2})), ShapeError);
}

TEST_CASE("render_dp: zero disparity is the identity") {
    const auto sharp = random_tensor<float>({3, 20, 24}, 3, 0.0, 1.0);
    const auto s = render_dp(uniform_scene(sharp, 0));
    CHECK(s.left.storage() == sharp.storage());
    CHECK(s.right.storage() == sharp.storage());
    CHECK(s.gt.storage() == sharp.storage());

    // in-focus pixels stay exact next to a blurred layer
    auto scene = uniform_scene(sharp, 0);
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 12; x < 24; ++x) scene.depth[y * 24 + x] = 1.75f;
    const auto m = render_dp(scene);
    std::size_t zero = 0;
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 0; x < 24; ++x) {
            if (m.disparity[y * 24 + x] != 0.0f) continue;
            ++zero;
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(m.left.at(c, y, x) == sharp.at(c, y, x));
                CHECK(m.right.at(c, y, x) == sharp.at(c, y, x));
            }
        }
    CHECK(zero == 20 * 12);
    CHECK(m.left.storage() != sharp.storage());
}

TEST_CASE("render_dp: disparity sign follows the focal side") {
    const auto point = point_scene(31);
    double prev = 0.0;
    for (int r = 1; r <= 5; ++r) {
        const auto behind = render_dp(uniform_scene(point, r));
        const auto front = render_dp(uniform_scene(point, -r));
        const double d_behind = centroid_x(behind.left) - centroid_x(behind.right);
        const double d_front = centroid_x(front.left) - centroid_x(front.right);
        CAPTURE(r);
        CHECK(d_behind < 0.0);
        CHECK(d_front > 0.0);
        CHECK(d_front == doctest::Approx(-d_behind).epsilon(1e-9));
        // displacement grows with the radius
        CHECK(std::abs(d_behind) > prev);
        prev = std::abs(d_behind);
    }
}

TEST_CASE("render_dp: mean of the views is the full-aperture render") {
    for (int r = -5; r <= 5; ++r) {
        const auto sharp = random_tensor<float>({3, 24, 28}, 10 + r + 5, 0.0, 1.0);
        const auto s = render_dp(uniform_scene(sharp, r));
        const auto oracle = full_disc_render(sharp, r);
        double worst = 0.0;
        for (std::size_t i = 0; i < oracle.size(); ++i)
            worst = std::max(worst, std::abs(0.5 * (double(s.left[i]) + double(s.right[i])) - oracle[i]));
        CAPTURE(r);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("render_dp: single-layer properties") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const int r = static_cast<int>(seed % 11) - 5;
        // content inside a flat frame as wide as the largest radius
        auto sharp = random_tensor<float>({3, 21, 26}, seed + 70, 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 21; ++y)
                for (std::size_t x = 0; x < 26; ++x)
                    if (y < 5 || y >= 16 || x < 5 || x >= 21) sharp.at(c, y, x) = 0.25f * (c + 1);
        const auto s = render_dp(uniform_scene(sharp, r));
        CAPTURE(r);
        // energy conservation
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(std::abs(channel_mean(s.left, c) - channel_mean(sharp, c)) <= 1e-5);
            CHECK(std::abs(channel_mean(s.right, c) - channel_mean(sharp, c)) <= 1e-5);
        }
        // sign covariance: negating the defocus swaps the views exactly
        const auto flipped = render_dp(uniform_scene(sharp, -r));
        CHECK(flipped.left.storage() == s.right.storage());
        CHECK(flipped.right.storage() == s.left.storage());
        for (float v : s.disparity.data()) CHECK(v == float(r));
    }
}

TEST_CASE("render_dp preconditions") {
    SceneSpec s = uniform_scene(Tensor<float>({3, 8, 8}), 1);
    s.depth = Tensor<float>({8, 9});
    CHECK_THROWS_AS(render_dp(s), ShapeError);
    s = uniform_scene(Tensor<float>({3, 8, 8}), 1, 8);
    CHECK_THROWS_AS(render_dp(s), PreconditionError);
    s = uniform_scene(Tensor<float>({1, 8, 8}), 1);
    CHECK_THROWS_AS(render_dp(s), ShapeError);
}

TEST_CASE("render_dp requantizes beyond max_layers") {
    SceneSpec s = uniform_scene(random_tensor<float>({3, 16, 16}, 5, 0.0, 1.0), 0);
    for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t y = 0; y < 16; ++y) s.depth[y * 16 + x] = static_cast<float>(0.0 + 2.0 * x / 15.0);
    s.max_layers = 3;
    const auto out = render_dp(s);
    std::set<float> radii(out.disparity.data().begin(), out.disparity.data().end());
    CHECK(radii.size() <= 3);
    CHECK(radii.size() >= 2);
}

TEST_CASE("make_dataset") {
    CHECK_THROWS_AS(make_dataset(1, 1, 8), PreconditionError);

    const auto a = make_dataset(7, 10, 32);
    const auto b = make_dataset(7, 10, 32);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].left.storage() == b[i].left.storage());
        CHECK(a[i].right.storage() == b[i].right.storage());
        CHECK(a[i].gt.storage() == b[i].gt.storage());
        const auto& s = a[i];
        CHECK(s.left.shape() == Shape{3, 32, 32});
        CHECK(s.right.shape() == s.left.shape());
        CHECK(s.gt.shape() == s.left.shape());
        CHECK(s.disparity.shape() == Shape{32, 32});
        for (const auto* t : {&s.left, &s.right, &s.gt})
            for (float v : t->data()) CHECK((v >= 0.0f && v <= 1.0f));
        std::set<float> radii(s.disparity.data().begin(), s.disparity.data().end());
        CHECK(radii.size() >= 2);
        CHECK(radii.size() <= 4);
        CHECK(*radii.begin() < 0.0f);
        CHECK(*radii.rbegin() > 0.0f);
        for (std::size_t p = 0; p < s.disparity.size(); ++p)
            if (s.disparity[p] == 0.0f)
                for (std::size_t c = 0; c < 3; ++c) {
                    CHECK(s.left[c * 1024 + p] == s.gt[c * 1024 + p]);
                    CHECK(s.right[c * 1024 + p] == s.gt[c * 1024 + p]);
                }
    }
    CHECK(make_dataset(8, 1, 32)[0].gt.storage() != a[0].gt.storage());
    // samples are independent of how many are requested
    CHECK(make_dataset(7, 3, 32)[2].left.storage() == a[2].left.storage());
}

TEST_CASE("synthetic blur is nontrivial") {
    const auto data = make_dataset(11, 20, 64);
    double psnr = 0.0;
    for (const auto& s : data) psnr += metrics::psnr(s.left, s.gt);
    psnr /= data.size();
    MESSAGE("mean PSNR(left, gt) = " << psnr << " dB");
    CHECK(psnr < 40.0);
}

TEST_CASE("dataset files round-trip and are byte-stable") {
    const auto data = make_dataset(3, 4, 24);
    ScratchDir d1("synth"), d2("synth");
    write_dataset(d1.path(), data, 3, {});
    write_dataset(d2.path(), make_dataset(3, 4, 24), 3, {});

    const auto back = load_dataset(d1.path());
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].left.storage() == data[i].left.storage());
        CHECK(back[i].right.storage() == data[i].right.storage());
        CHECK(back[i].gt.storage() == data[i].gt.storage());
        CHECK(back[i].disparity.storage() == data[i].disparity.storage());
    }

    std::size_t files = 0;
    for (const auto& e : std::filesystem::directory_iterator(d1.path())) {
        ++files;
        CHECK(slurp(e.path()) == slurp(d2.path() / e.path().filename()));
    }
    CHECK(files == 1 + 4 * 7);

    const auto m = nlohmann::json::parse(slurp(d1.path() / "manifest.json"));
    CHECK(m["seed"] == 3);
    CHECK(m["count"] == 4);
    CHECK(m["size"] == 24);
    CHECK(m["samples"].size() == 4);
    CHECK(m["samples"][0]["left_ppm"] == "sample_00000_left.ppm");
    CHECK(m["scene"]["max_radius"] == 4);

    CHECK_THROWS_AS(load_dataset(d1.path() / "missing"), IoError);
}
