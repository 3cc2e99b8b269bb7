#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "lclip/dataset.hpp"
#include "lclip/hashing.hpp"

using namespace lclip;
namespace fs = std::filesystem;

namespace {
std::string temp_dir(const std::string& tag) {
    const auto dir = fs::temp_directory_path() / ("lclip_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}
} // namespace

TEST_CASE("sample_scene: determinism and grammar restriction") {
    GrammarConfig g;
    const SceneSample a = sample_scene(123, g);
    const SceneSample b = sample_scene(123, g);
    CHECK(a.caption == b.caption);
    CHECK(a.spec.objects.size() == b.spec.objects.size());
    CHECK(a.spec.background == b.spec.background);

    GrammarConfig single;
    single.max_objects = 1;
    single.p_background_phrase = 0.0;
    for (uint64_t s = 0; s < 50; ++s) {
        const SceneSample smp = sample_scene(s, single);
        CHECK(smp.spec.objects.size() == 1);
        // caption matches "a <color> <shape>"
        std::istringstream ss(smp.caption);
        std::string w1, w2, w3, extra;
        ss >> w1 >> w2 >> w3;
        CHECK(w1 == "a");
        CHECK_NOTHROW(color_from_name(w2));
        CHECK_NOTHROW(shape_from_name(w3));
        CHECK_FALSE(static_cast<bool>(ss >> extra));
    }
}

TEST_CASE("sample_scene: all 24 classes appear over 10^4 draws") {
    GrammarConfig single;
    single.max_objects = 1;
    std::set<int> seen;
    for (uint64_t s = 0; s < 10000; ++s) seen.insert(sample_scene(s, single).class_id);
    CHECK(seen.size() == kClassCount);
}

TEST_CASE("render_scene: rasterization definition and determinism") {
    SceneSpec spec;
    spec.background = ColorName::Blue;
    spec.objects.push_back({ShapeKind::Circle, ColorName::Red, 32, 32, 10});
    const PixelImage img = render_scene(spec);
    const Rgb center = img.at(32, 32);
    const Rgb red = color_rgb(ColorName::Red);
    CHECK(center.r == red.r);
    CHECK(center.g == red.g);
    CHECK(center.b == red.b);
    const Rgb corner = img.at(0, 0);
    const Rgb blue = color_rgb(ColorName::Blue);
    CHECK(corner.r == blue.r);
    CHECK(corner.b == blue.b);

    const PixelImage again = render_scene(spec);
    CHECK(img.rgb == again.rgb);
}

TEST_CASE("oracle round trip: exact recovery on 1000 clean renders") {
    GrammarConfig g;
    int exact = 0;
    for (uint64_t s = 0; s < 1000; ++s) {
        const SceneSample smp = sample_scene(40000 + s, g);
        const SceneAnalysis an = analyze_scene(render_scene(smp.spec));
        bool ok = an.background == smp.spec.background &&
                  an.objects.size() == smp.spec.objects.size();
        for (const auto& o : smp.spec.objects) {
            int want = 0;
            for (const auto& p : smp.spec.objects)
                if (p.color == o.color && p.shape == o.shape) ++want;
            if (an.count_of(o.color, o.shape) != want) ok = false;
        }
        if (ok) ++exact;
        CHECK(caption_consistent(smp.caption, an));
    }
    CHECK(exact == 1000);
}

TEST_CASE("oracle: uniform image has zero objects") {
    SceneSpec spec;
    spec.background = ColorName::Green;
    spec.objects.push_back({ShapeKind::Square, ColorName::Red, 32, 32, 6});
    PixelImage img = render_scene(spec);
    // overwrite with a uniform color
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) img.set(y, x, color_rgb(ColorName::Purple));
    const SceneAnalysis an = analyze_scene(img);
    CHECK(an.objects.empty());
    CHECK(an.background == ColorName::Purple);
}

TEST_CASE("oracle robustness: >=99% exact under sigma=0.02 noise") {
    GrammarConfig g;
    Rng rng(5150);
    int exact = 0;
    const int n = 1000;
    for (int s = 0; s < n; ++s) {
        const SceneSample smp = sample_scene(70000 + static_cast<uint64_t>(s), g);
        const PixelImage noisy = add_pixel_noise(render_scene(smp.spec), rng, 0.02);
        const SceneAnalysis an = analyze_scene(noisy);
        bool ok = an.background == smp.spec.background &&
                  an.objects.size() == smp.spec.objects.size();
        for (const auto& o : smp.spec.objects)
            if (an.count_of(o.color, o.shape) == 0) ok = false;
        if (ok) ++exact;
    }
    CHECK(exact >= 990);
}

TEST_CASE("tokenizer: examples and round trip over the grammar") {
    const auto& tok = Tokenizer::instance();
    const TokenSequence seq = tok.tokenize("a red circle");
    CHECK(seq.ids[0] == Tokenizer::kBos);
    CHECK(seq.ids[4] == Tokenizer::kEos);
    for (int i = 5; i < kMaxTokens; ++i) CHECK(seq.ids[static_cast<size_t>(i)] == Tokenizer::kPad);
    CHECK(tok.detokenize(seq) == "a red circle");

    GrammarConfig g;
    for (uint64_t s = 0; s < 300; ++s) {
        const std::string caption = sample_scene(90000 + s, g).caption;
        CHECK(tok.detokenize(tok.tokenize(caption)) == caption);
    }
}

TEST_CASE("tokenizer: unknown words and length limits") {
    const auto& tok = Tokenizer::instance();
    CHECK_THROWS_AS(tok.tokenize("a crimson circle"), Error);
    const TokenSequence lax = tok.tokenize("a crimson circle", /*strict=*/false);
    CHECK(lax.ids[2] == Tokenizer::kUnk);
    CHECK_THROWS_AS(tok.tokenize("a a a a a a a a a a a a a a a"), Error); // 15 content tokens
    CHECK_THROWS_AS(tok.tokenize(""), Error);

    TokenSequence bad = tok.tokenize("a red circle");
    bad.ids[6] = 5; // non-PAD after EOS
    CHECK_THROWS_AS(tok.validate(bad), Error);
}

TEST_CASE("dataset: build, manifest identity, reload, hash check") {
    const std::string dir = temp_dir("ds");
    DatasetBuildConfig cfg;
    cfg.size = 10;
    cfg.seed_start = 500;
    const Dataset ds = Dataset::build(cfg, dir);
    CHECK(ds.manifest().record_count == 10);
    CHECK(fs::file_size(dir + "/records.bin") == 10u * (2 + 2 + 32 + 12288));

    const Dataset loaded = Dataset::load(dir);
    CHECK(loaded.size() == 10);
    for (int64_t i = 0; i < 10; ++i) {
        CHECK(loaded.record(i).class_id == ds.record(i).class_id);
        CHECK(loaded.record(i).image.rgb == ds.record(i).image.rgb);
        CHECK(loaded.record(i).tokens.ids == ds.record(i).tokens.ids);
    }

    // rebuilding with the same seed gives an identical content hash
    const std::string dir2 = temp_dir("ds2");
    const Dataset ds2 = Dataset::build(cfg, dir2);
    CHECK(ds.manifest().payload_sha256 == ds2.manifest().payload_sha256);

    // corrupting the payload breaks the load
    {
        std::fstream f(dir + "/records.bin",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        char byte = 0x7f;
        f.write(&byte, 1);
    }
    CHECK_THROWS_AS(Dataset::load(dir), Error);
}

TEST_CASE("dataset: disjoint seed ranges give disjoint record hashes") {
    const std::string da = temp_dir("dsa"), db = temp_dir("dsb");
    DatasetBuildConfig a, b;
    a.size = b.size = 40;
    a.seed_start = 0;
    b.seed_start = 1'000'000;
    const Dataset dsa = Dataset::build(a, da);
    const Dataset dsb = Dataset::build(b, db);
    std::set<std::string> ha, hb;
    for (int64_t i = 0; i < dsa.size(); ++i) ha.insert(sha256_hex(dsa.record(i).image.rgb));
    for (int64_t i = 0; i < dsb.size(); ++i) hb.insert(sha256_hex(dsb.record(i).image.rgb));
    for (const auto& h : ha) CHECK(hb.count(h) == 0);
}

TEST_CASE("dataset: biased grammar adds unmentioned companion objects") {
    GrammarConfig g;
    g.max_objects = 1;
    g.bias_prob = 0.8;
    g.bias_color = ColorName::Red;
    g.bias_shape = ShapeKind::Circle;
    int with_companion = 0, total = 0;
    for (uint64_t s = 0; s < 400; ++s) {
        const SceneSample smp = sample_scene(s, g);
        // caption still matches the single-object pattern
        CHECK(smp.caption.rfind("a ", 0) == 0);
        const SceneAnalysis an = analyze_scene(render_scene(smp.spec));
        CHECK(caption_consistent(smp.caption, an));
        if (smp.spec.objects.size() == 2) {
            CHECK(smp.spec.objects[1].color == ColorName::Red);
            CHECK(smp.spec.objects[1].shape == ShapeKind::Circle);
            ++with_companion;
        }
        ++total;
    }
    // roughly bias_prob of eligible scenes gain the companion
    CHECK(with_companion > total / 3);
}
