#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "hymunet/data.hpp"

using namespace hym;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("hym_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

bool same_tensor(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (long i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i)) return false;
    return true;
}

bool same_mask(const Mask& a, const Mask& b) { return a.h == b.h && a.w == b.w && a.v == b.v; }

Image random_image(Rng& rng, long h, long w, long c, bool quantized) {
    Image img(h, w, c);
    for (auto& v : img.v) {
        v = rng.uniform();
        if (quantized) v = std::floor(v * 256.0 > 255.0 ? 255.0 : std::floor(v * 256.0)) / 255.0;
    }
    return img;
}

}  // namespace

TEST_CASE("png round-trips byte-quantized images losslessly", "[data]") {
    TempDir dir;
    Rng rng(11);
    for (long channels : {1L, 3L}) {
        Image img(13, 17, channels);
        for (std::size_t i = 0; i < img.v.size(); ++i)
            img.v[i] = static_cast<double>((i * 7 + 3) % 256) / 255.0;  // every byte level hit
        const std::string path = (dir.path / ("rt" + std::to_string(channels) + ".png")).string();
        write_png(path, img);
        const Image back = read_png(path);
        REQUIRE(back.h == img.h);
        REQUIRE(back.w == img.w);
        REQUIRE(back.channels == channels);
        for (std::size_t i = 0; i < img.v.size(); ++i) REQUIRE(back.v[i] == img.v[i]);
    }
}

TEST_CASE("png write quantizes to nearest byte", "[data]") {
    TempDir dir;
    Rng rng(12);
    const Image img = random_image(rng, 9, 9, 3, false);
    const std::string path = (dir.path / "q.png").string();
    write_png(path, img);
    const Image back = read_png(path);
    for (std::size_t i = 0; i < img.v.size(); ++i)
        REQUIRE(std::abs(back.v[i] - img.v[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("pnm round-trips both P5 and P6", "[data]") {
    TempDir dir;
    for (long channels : {1L, 3L}) {
        Image img(6, 5, channels);
        for (std::size_t i = 0; i < img.v.size(); ++i)
            img.v[i] = static_cast<double>((i * 31) % 256) / 255.0;
        const std::string ext = channels == 1 ? ".pgm" : ".ppm";
        const std::string path = (dir.path / ("rt" + ext)).string();
        write_image(path, img);
        const Image back = read_image(path);
        REQUIRE(back.channels == channels);
        REQUIRE(back.v == img.v);
    }
}

TEST_CASE("image io rejects unsupported or broken files", "[data]") {
    TempDir dir;
    Image img(4, 4, 1);
    REQUIRE_THROWS_WITH(write_image((dir.path / "x.bmp").string(), img),
                        ContainsSubstring("unsupported"));
    REQUIRE_THROWS(read_image((dir.path / "missing.png").string()));
    // not a png: signature check must reject
    std::ofstream((dir.path / "junk.png").string()) << "this is not a png";
    REQUIRE_THROWS(read_png((dir.path / "junk.png").string()));
    // pgm with maxval 65535 unsupported
    std::ofstream((dir.path / "deep.pgm").string()) << "P5\n2 2\n65535\nxxxxxxxx";
    REQUIRE_THROWS_WITH(read_pnm((dir.path / "deep.pgm").string()), ContainsSubstring("maxval"));
}

TEST_CASE("mask png round-trip is exact", "[data]") {
    TempDir dir;
    Rng rng(13);
    Mask m(16, 16);
    for (auto& b : m.v) b = rng.bernoulli(0.4) ? 1 : 0;
    const std::string path = (dir.path / "mask.png").string();
    write_png(path, mask_to_image(m));
    const Mask back = image_to_mask(read_png(path));
    REQUIRE(same_mask(back, m));
}

TEST_CASE("layout conversions invert each other", "[data]") {
    Rng rng(14);
    const Image img = random_image(rng, 7, 9, 3, false);
    const Tensor chw = image_to_chw(img);
    REQUIRE(chw.shape == Shape{3, 7, 9});
    // CHW(c,i,j) must equal HWC(i,j,c)
    REQUIRE(chw.at((2 * 7 + 4) * 9 + 5) == img.at(4, 5, 2));
    const Image back = chw_to_image(chw);
    REQUIRE(back.v == img.v);
}

TEST_CASE("bilinear resize matches hand-computed 2x upsample", "[data]") {
    Tensor src({1, 2, 2});
    src.at(0) = 0;
    src.at(1) = 1;
    src.at(2) = 2;
    src.at(3) = 3;
    const Tensor out = resize_bilinear_chw(src, 4, 4);
    // half-pixel sampling lands at effective coords {0, .25, .75, 1} per axis,
    // and the source plane is the linear map v = 2y + x
    const double ey[4] = {0.0, 0.25, 0.75, 1.0};
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j)
            REQUIRE_THAT(out.at(i * 4 + j),
                         Catch::Matchers::WithinAbs(2.0 * ey[i] + ey[j], 1e-12));
}

TEST_CASE("bilinear resize to the same size is an exact copy", "[data]") {
    Rng rng(15);
    Tensor src({3, 6, 11});
    for (long i = 0; i < src.numel(); ++i) src.at(i) = rng.uniform();
    REQUIRE(same_tensor(resize_bilinear_chw(src, 6, 11), src));
}

TEST_CASE("bilinear resize of a constant stays constant", "[data]") {
    const Tensor src = Tensor::full({2, 5, 7}, 0.37);
    const Tensor out = resize_bilinear_chw(src, 13, 3);
    for (long i = 0; i < out.numel(); ++i) REQUIRE(out.at(i) == 0.37);
}

TEST_CASE("nearest mask resize picks block centers", "[data]") {
    Mask m(2, 2);
    m.set(0, 1, true);
    m.set(1, 0, true);
    const Mask up = resize_nearest_mask(m, 4, 4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) REQUIRE(up.at(i, j) == m.at(i / 2, j / 2));

    Mask big(4, 4);
    big.set(1, 1, true);
    big.set(3, 3, true);
    const Mask down = resize_nearest_mask(big, 2, 2);
    // centers land on source rows/cols {1, 3}
    REQUIRE(down.at(0, 0) == true);
    REQUIRE(down.at(0, 1) == false);
    REQUIRE(down.at(1, 0) == false);
    REQUIRE(down.at(1, 1) == true);
}

TEST_CASE("synthetic samples are deterministic per seed and index", "[data]") {
    const Sample a = generate_sample(42, 7, 64);
    const Sample b = generate_sample(42, 7, 64);
    REQUIRE(same_tensor(a.image, b.image));
    REQUIRE(same_mask(a.mask, b.mask));
    REQUIRE(a.id == b.id);
    REQUIRE(a.id == "synth_000007");

    const Sample c = generate_sample(42, 8, 64);
    REQUIRE_FALSE(same_mask(a.mask, c.mask));
    const Sample d = generate_sample(43, 7, 64);
    REQUIRE_FALSE(same_mask(a.mask, d.mask));
}

TEST_CASE("synthetic foreground fraction stays in band", "[data]") {
    const Dataset data = generate_synthetic(1234, 60, 64);
    REQUIRE(data.size() == 60);
    for (const auto& s : data) {
        check_sample(s, "test");
        const double frac =
            static_cast<double>(s.mask.count()) / static_cast<double>(s.mask.h * s.mask.w);
        REQUIRE(frac >= 0.05);
        REQUIRE(frac <= 0.6);
        for (double v : *s.image.data) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("artifacts touch only the image, never the mask", "[data]") {
    const Sample with = generate_sample(5, 3, 64, {true, 1.0});
    const Sample without = generate_sample(5, 3, 64, {false, 1.0});
    REQUIRE(same_mask(with.mask, without.mask));
    REQUIRE_FALSE(same_tensor(with.image, without.image));
    // zero density draws nothing: image bitwise equal to the artifact-free one
    const Sample zero = generate_sample(5, 3, 64, {true, 0.0});
    REQUIRE(same_tensor(zero.image, without.image));
}

TEST_CASE("generator rejects bad sizes", "[data]") {
    REQUIRE_THROWS(generate_sample(1, 0, 48));
    REQUIRE_THROWS(generate_sample(1, 0, 0));
}

TEST_CASE("identity geo params leave the sample untouched", "[data]") {
    const Sample s = generate_sample(2, 0, 32);
    const Sample t = apply_geo(s, GeoParams{});
    REQUIRE(same_tensor(t.image, s.image));
    REQUIRE(same_mask(t.mask, s.mask));
}

TEST_CASE("flips are involutions and preserve counts", "[data]") {
    const Sample s = generate_sample(3, 1, 32);
    for (bool horizontal : {true, false}) {
        const Tensor once = flip_chw(s.image, horizontal);
        REQUIRE_FALSE(same_tensor(once, s.image));
        REQUIRE(same_tensor(flip_chw(once, horizontal), s.image));
        const Mask m1 = flip_mask(s.mask, horizontal);
        REQUIRE(m1.count() == s.mask.count());
        REQUIRE(same_mask(flip_mask(m1, horizontal), s.mask));
    }
    // spot-check the actual permutation
    const Tensor h = flip_chw(s.image, true);
    REQUIRE(h.at(5 * 32 + 0) == s.image.at(5 * 32 + 31));
}

TEST_CASE("90 degree rotation equals the exact index permutation", "[data]") {
    const Sample s = generate_sample(4, 2, 32);
    const long S = 32;

    const Mask r = rotate_nearest_mask(s.mask, 90.0);
    for (long i = 0; i < S; ++i)
        for (long j = 0; j < S; ++j) REQUIRE(r.at(i, j) == s.mask.at(S - 1 - j, i));

    const Tensor ri = rotate_bilinear_chw(s.image, 90.0);
    for (long c = 0; c < 3; ++c)
        for (long i = 0; i < S; ++i)
            for (long j = 0; j < S; ++j)
                REQUIRE_THAT(ri.at((c * S + i) * S + j),
                             Catch::Matchers::WithinAbs(
                                 s.image.at((c * S + (S - 1 - j)) * S + i), 1e-12));
}

TEST_CASE("rotation roughly preserves foreground area", "[data]") {
    const Sample s = generate_sample(6, 5, 64);
    const long before = s.mask.count();
    for (double angle : {23.0, -41.0, 77.5}) {
        const long after = rotate_nearest_mask(s.mask, angle).count();
        // blobs sit centrally, so loss is only resampling jitter at the boundary
        REQUIRE(std::abs(after - before) <= before / 4);
        REQUIRE(after > 0);
    }
}

TEST_CASE("zero angle skips resampling bitwise", "[data]") {
    const Sample s = generate_sample(7, 0, 32);
    GeoParams g;
    g.flip_h = true;
    g.angle_deg = 0.0;
    const Sample t = apply_geo(s, g);
    REQUIRE(same_tensor(t.image, flip_chw(s.image, true)));
}

TEST_CASE("augment is deterministic given the rng state", "[data]") {
    const Sample s = generate_sample(8, 0, 32);
    Rng r1(99), r2(99);
    const Sample a = augment(s, r1);
    const Sample b = augment(s, r2);
    REQUIRE(same_tensor(a.image, b.image));
    REQUIRE(same_mask(a.mask, b.mask));
    // different stream: almost surely a different angle
    Rng r3(100);
    const Sample c = augment(s, r3);
    REQUIRE_FALSE(same_tensor(c.image, a.image));
}

TEST_CASE("split uses floor allocation with remainder to test", "[data]") {
    const SplitIndices big = split_indices(2594, {0.8, 0.1, 0.1, 7});
    REQUIRE(big.train.size() == 2075);
    REQUIRE(big.val.size() == 259);
    REQUIRE(big.test.size() == 260);

    const SplitIndices small = split_indices(10, {0.8, 0.1, 0.1, 7});
    REQUIRE(small.train.size() == 8);
    REQUIRE(small.val.size() == 1);
    REQUIRE(small.test.size() == 1);

    // disjoint and covering
    std::vector<long> all = big.train;
    all.insert(all.end(), big.val.begin(), big.val.end());
    all.insert(all.end(), big.test.begin(), big.test.end());
    std::sort(all.begin(), all.end());
    REQUIRE(all.size() == 2594);
    for (long i = 0; i < 2594; ++i) REQUIRE(all[i] == i);
}

TEST_CASE("split shuffles deterministically by seed", "[data]") {
    const SplitIndices a = split_indices(100, {0.8, 0.1, 0.1, 5});
    const SplitIndices b = split_indices(100, {0.8, 0.1, 0.1, 5});
    REQUIRE(a.train == b.train);
    REQUIRE(a.val == b.val);
    REQUIRE(a.test == b.test);
    const SplitIndices c = split_indices(100, {0.8, 0.1, 0.1, 6});
    REQUIRE(a.train != c.train);
    REQUIRE(a.train != std::vector<long>(a.train.size(), 0));  // actually shuffled
}

TEST_CASE("split validates ratios", "[data]") {
    REQUIRE_THROWS_WITH(split_indices(10, {0.8, 0.3, 0.1, 0}), ContainsSubstring("sum to 1"));
    REQUIRE_THROWS_WITH(split_indices(10, {-0.1, 1.0, 0.1, 0}), ContainsSubstring("nonnegative"));
}

TEST_CASE("dataset save and load round-trip", "[data]") {
    TempDir dir;
    const Dataset data = generate_synthetic(21, 4, 32);
    const SplitIndices split = split_indices(4, {0.5, 0.25, 0.25, 3});
    save_dataset(dir.str(), data, &split);
    REQUIRE(fs::exists(dir.path / "manifest.txt"));
    REQUIRE(fs::exists(dir.path / "images" / "synth_000000.png"));
    REQUIRE(fs::exists(dir.path / "masks" / "synth_000003.png"));

    auto loaded = load_dataset(dir.str(), 32);
    REQUIRE(loaded["train"].size() == 2);
    REQUIRE(loaded["val"].size() == 1);
    REQUIRE(loaded["test"].size() == 1);

    // masks must survive exactly; images only up to byte quantization
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : data) by_id[s.id] = &s;
    for (const auto& [label, subset] : loaded)
        for (const auto& s : subset) {
            const Sample& orig = *by_id.at(s.id);
            REQUIRE(same_mask(s.mask, orig.mask));
            for (long i = 0; i < s.image.numel(); ++i)
                REQUIRE(std::abs(s.image.at(i) - orig.image.at(i)) <= 0.5 / 255.0 + 1e-12);
        }
}

TEST_CASE("save without split labels everything all", "[data]") {
    TempDir dir;
    const Dataset data = generate_synthetic(22, 2, 32);
    save_dataset(dir.str(), data);
    auto loaded = load_dataset(dir.str(), 32);
    REQUIRE(loaded.size() == 1);
    REQUIRE(loaded["all"].size() == 2);
}

TEST_CASE("ingest pairs images with masks by stem", "[data]") {
    TempDir dir;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    const Dataset data = generate_synthetic(23, 2, 32);
    // one mask under <id>.png, one under <id>_segmentation.png
    write_png((dir.path / "images" / "a.png").string(), chw_to_image(data[0].image));
    write_png((dir.path / "masks" / "a.png").string(), mask_to_image(data[0].mask));
    write_png((dir.path / "images" / "b.png").string(), chw_to_image(data[1].image));
    write_png((dir.path / "masks" / "b_segmentation.png").string(), mask_to_image(data[1].mask));

    const Dataset got = ingest_isic((dir.path / "images").string(),
                                    (dir.path / "masks").string(), 32);
    REQUIRE(got.size() == 2);
    REQUIRE(got[0].id == "a");
    REQUIRE(got[1].id == "b");
    REQUIRE(same_mask(got[0].mask, data[0].mask));
    REQUIRE(same_mask(got[1].mask, data[1].mask));

    // resizing path: target 64 gives 64x64 samples
    const Dataset big = ingest_isic((dir.path / "images").string(),
                                    (dir.path / "masks").string(), 64);
    REQUIRE(big[0].image.shape == Shape{3, 64, 64});
    REQUIRE(big[0].mask.h == 64);
}

TEST_CASE("ingest reports every missing mask by id", "[data]") {
    TempDir dir;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    const Dataset data = generate_synthetic(24, 3, 32);
    for (const char* id : {"p", "q", "r"})
        write_png((dir.path / "images" / (std::string(id) + ".png")).string(),
                  chw_to_image(data[0].image));
    write_png((dir.path / "masks" / "q.png").string(), mask_to_image(data[0].mask));
    try {
        ingest_isic((dir.path / "images").string(), (dir.path / "masks").string(), 32);
        FAIL("expected missing-mask error");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        REQUIRE_THAT(msg, ContainsSubstring(" p"));
        REQUIRE_THAT(msg, ContainsSubstring(" r"));
        REQUIRE_THAT(msg, !ContainsSubstring(" q"));
    }
}

TEST_CASE("ingest warns and returns empty for an empty directory", "[data]") {
    TempDir dir;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    REQUIRE(ingest_isic((dir.path / "images").string(), (dir.path / "masks").string(), 32)
                .empty());
    REQUIRE_THROWS_WITH(ingest_isic((dir.path / "nope").string(), (dir.path / "masks").string(), 32),
                        ContainsSubstring("not a directory"));
}

TEST_CASE("ingest rejects masks that are not binary", "[data]") {
    TempDir dir;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    const Dataset data = generate_synthetic(25, 1, 32);
    write_png((dir.path / "images" / "g.png").string(), chw_to_image(data[0].image));
    Image gray(32, 32, 1);
    Rng rng(77);
    for (auto& v : gray.v) v = rng.uniform(0.2, 0.8);  // nowhere near binary
    write_png((dir.path / "masks" / "g.png").string(), gray);
    REQUIRE_THROWS_WITH(
        ingest_isic((dir.path / "images").string(), (dir.path / "masks").string(), 32),
        ContainsSubstring("not binary"));
}

TEST_CASE("native-size loading keeps dimensions and names mismatches", "[data]") {
    TempDir dir;
    const Dataset data = generate_synthetic(28, 1, 32);
    const std::string ip = (dir.path / "img.png").string();
    const std::string mp = (dir.path / "mask.png").string();
    write_png(ip, chw_to_image(data[0].image));
    write_png(mp, mask_to_image(data[0].mask));
    const Sample s = load_pair(ip, mp, "img", 0);
    REQUIRE(s.image.shape == Shape{3, 32, 32});
    REQUIRE(same_mask(s.mask, data[0].mask));

    // a mask of a different size is an error at native resolution, by id
    write_png(mp, mask_to_image(resize_nearest_mask(data[0].mask, 16, 16)));
    REQUIRE_THROWS_WITH(load_pair(ip, mp, "img", 0), ContainsSubstring("img"));
}

TEST_CASE("ingest accepts gray images and rgb masks", "[data]") {
    TempDir dir;
    fs::create_directories(dir.path / "images");
    fs::create_directories(dir.path / "masks");
    const Dataset data = generate_synthetic(26, 1, 32);
    Image gray(32, 32, 1);
    for (long i = 0; i < 32; ++i)
        for (long j = 0; j < 32; ++j) gray.at(i, j, 0) = data[0].image.at(i * 32 + j);
    write_png((dir.path / "images" / "m.png").string(), gray);
    write_png((dir.path / "masks" / "m.png").string(),
              detail::to_rgb(mask_to_image(data[0].mask)));
    const Dataset got = ingest_isic((dir.path / "images").string(),
                                    (dir.path / "masks").string(), 32);
    REQUIRE(got.size() == 1);
    REQUIRE(got[0].image.shape == Shape{3, 32, 32});
    // gray input replicated across channels
    REQUIRE(got[0].image.at(0) == got[0].image.at(32 * 32));
    REQUIRE(same_mask(got[0].mask, data[0].mask));
}

TEST_CASE("batch stacking lays samples out contiguously", "[data]") {
    const Dataset data = generate_synthetic(27, 3, 32);
    const std::vector<long> idx = {2, 0};
    const Tensor xs = stack_images(data, idx);
    const Tensor ys = stack_masks(data, idx);
    REQUIRE(xs.shape == Shape{2, 3, 32, 32});
    REQUIRE(ys.shape == Shape{2, 1, 32, 32});
    REQUIRE(xs.at(0) == data[2].image.at(0));
    REQUIRE(xs.at(3 * 32 * 32) == data[0].image.at(0));
    REQUIRE(ys.at(5) == (data[2].mask.v[5] ? 1.0 : 0.0));
    REQUIRE_THROWS(stack_images(data, {}));
}
