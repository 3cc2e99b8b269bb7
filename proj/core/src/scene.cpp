#include "lclip/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

namespace lclip {

namespace {

constexpr double kStarInnerRatio = 0.42;

const std::array<const char*, 5> kShapeNames = {"circle", "square", "triangle", "star",
                                                "unknown"};
const std::array<const char*, 9> kColorNames = {"red",    "green", "blue",  "yellow", "purple",
                                                "orange", "white", "black", "gray"};
const std::array<Rgb, 9> kPalette = {{
    {230, 30, 30},    // red
    {40, 190, 70},    // green
    {40, 70, 230},    // blue
    {240, 220, 40},   // yellow
    {160, 40, 220},   // purple
    {245, 140, 20},   // orange
    {245, 245, 245},  // white
    {15, 15, 15},     // black
    {128, 128, 128},  // gray
}};

int sq_dist(Rgb a, Rgb b) {
    const int dr = int(a.r) - int(b.r);
    const int dg = int(a.g) - int(b.g);
    const int db = int(a.b) - int(b.b);
    return dr * dr + dg * dg + db * db;
}

int nearest_palette(Rgb c) {
    int best = 0, best_d = sq_dist(c, kPalette[0]);
    for (int i = 1; i < kColorCount; ++i) {
        const int d = sq_dist(c, kPalette[static_cast<size_t>(i)]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Shape membership tests on integer pixel offsets from the center.
bool in_shape(ShapeKind s, int dx, int dy, int size) {
    switch (s) {
        case ShapeKind::Circle:
            return dx * dx + dy * dy <= size * size;
        case ShapeKind::Square:
            return std::abs(dx) <= size && std::abs(dy) <= size;
        case ShapeKind::Triangle: {
            // apex up, flat base
            if (dy < -size || dy > size) return false;
            const double t = (dy + size) / (2.0 * size);
            return std::abs(dx) <= t * size + 1e-9;
        }
        case ShapeKind::Star: {
            // 5-point star, apex up, tested by angle-dependent radius
            const double r = std::sqrt(double(dx) * dx + double(dy) * dy);
            if (r < 1e-9) return true;
            if (r > size) return false;
            // angle measured from the up direction
            double a = std::atan2(double(dx), double(-dy)); // [-pi, pi], 0 = up
            const double sector = 2.0 * std::numbers::pi / 5.0;
            double frac = std::fmod(std::fmod(a, sector) + sector, sector) / sector; // [0,1)
            const double outer = double(size);
            const double inner = kStarInnerRatio * size;
            const double half = sector / 2.0;
            const double theta = (0.5 - std::abs(frac - 0.5)) * sector; // angle from spike
            // straight edge between spike tip (outer, 0) and valley (inner, half);
            // inside lies on the center side of that edge
            const double x1 = outer, y1 = 0.0;
            const double x2 = inner * std::cos(half), y2 = inner * std::sin(half);
            const double px = r * std::cos(theta), py = r * std::sin(theta);
            const double cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            return cross >= -1e-9;
        }
        default:
            return false;
    }
}

struct ShapeMetrics {
    int bbox_w, bbox_h, area;
};

// One round of 3x3 majority vote over a label map; settles thin blur rims
// that VAE decodes produce. Shared by the analyzer and the reference-metric
// computation so classification sees the renderer's geometry through the
// same lens.
std::vector<uint8_t> majority_filter(const std::vector<uint8_t>& labels, int w, int h) {
    std::vector<uint8_t> out(labels.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int counts[kColorCount] = {0};
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = std::clamp(y + dy, 0, h - 1);
                    const int xx = std::clamp(x + dx, 0, w - 1);
                    ++counts[labels[static_cast<size_t>(yy * w + xx)]];
                }
            int best = labels[static_cast<size_t>(y * w + x)];
            for (int c = 0; c < kColorCount; ++c)
                if (counts[c] > counts[best]) best = c;
            out[static_cast<size_t>(y * w + x)] = static_cast<uint8_t>(best);
        }
    return out;
}

// Reference statistics per (shape, size): rasterize, run the same majority
// filter the analyzer applies, then measure the surviving component.
ShapeMetrics shape_metrics(ShapeKind s, int size) {
    const int span = 2 * size + 7;
    const int c0 = span / 2;
    std::vector<uint8_t> labels(static_cast<size_t>(span) * span, 0);
    for (int dy = -size; dy <= size; ++dy)
        for (int dx = -size; dx <= size; ++dx)
            if (in_shape(s, dx, dy, size))
                labels[static_cast<size_t>((c0 + dy) * span + (c0 + dx))] = 1;
    labels = majority_filter(labels, span, span);
    int minx = 1 << 20, maxx = -(1 << 20), miny = 1 << 20, maxy = -(1 << 20), area = 0;
    for (int y = 0; y < span; ++y)
        for (int x = 0; x < span; ++x)
            if (labels[static_cast<size_t>(y * span + x)]) {
                ++area;
                minx = std::min(minx, x);
                maxx = std::max(maxx, x);
                miny = std::min(miny, y);
                maxy = std::max(maxy, y);
            }
    if (area == 0) return {0, 0, 0};
    return {maxx - minx + 1, maxy - miny + 1, area};
}

const std::map<std::pair<int, int>, ShapeMetrics>& metrics_table() {
    static const auto table = [] {
        std::map<std::pair<int, int>, ShapeMetrics> t;
        for (int s = 0; s < kShapeCount; ++s)
            for (int size = 3; size <= 20; ++size) {
                const auto m = shape_metrics(static_cast<ShapeKind>(s), size);
                if (m.area > 0) t[{s, size}] = m;
            }
        return t;
    }();
    return table;
}

struct BBox {
    int minx, maxx, miny, maxy;
    int w() const { return maxx - minx + 1; }
    int h() const { return maxy - miny + 1; }
};

bool boxes_clear(const BBox& a, const BBox& b, int margin) {
    return a.maxx + margin < b.minx || b.maxx + margin < a.minx ||
           a.maxy + margin < b.miny || b.maxy + margin < a.miny;
}

BBox object_bbox(const SceneObject& o) {
    // conservative bound: all shapes fit within the size radius box
    return {o.cx - o.size, o.cx + o.size, o.cy - o.size, o.cy + o.size};
}

std::string an_or_a(const std::string& word) {
    (void)word;
    return "a"; // the grammar keeps the article fixed
}

const char* count_word(size_t n) {
    return n == 2 ? "two" : "three";
}

} // namespace

const char* shape_name(ShapeKind s) { return kShapeNames[static_cast<size_t>(s)]; }
const char* color_name(ColorName c) { return kColorNames[static_cast<size_t>(c)]; }
Rgb color_rgb(ColorName c) { return kPalette[static_cast<size_t>(c)]; }

ShapeKind shape_from_name(const std::string& name) {
    for (int i = 0; i < kShapeCount; ++i)
        if (name == kShapeNames[static_cast<size_t>(i)]) return static_cast<ShapeKind>(i);
    fail("unknown shape name: ", name);
}

ColorName color_from_name(const std::string& name) {
    for (int i = 0; i < kColorCount; ++i)
        if (name == kColorNames[static_cast<size_t>(i)]) return static_cast<ColorName>(i);
    fail("unknown color name: ", name);
}

int class_id_of(ColorName color, ShapeKind shape) {
    check(static_cast<int>(color) < kObjectColorCount, "class_id_of: ", color_name(color),
          " is not an object color");
    check(static_cast<int>(shape) < kShapeCount, "class_id_of: not a concrete shape");
    return static_cast<int>(color) * kShapeCount + static_cast<int>(shape);
}

std::string class_label(int class_id) {
    check(class_id >= 0 && class_id < kClassCount, "class_label: bad id ", class_id);
    const auto color = static_cast<ColorName>(class_id / kShapeCount);
    const auto shape = static_cast<ShapeKind>(class_id % kShapeCount);
    return strcat_all(color_name(color), " ", shape_name(shape));
}

std::vector<std::string> all_class_labels() {
    std::vector<std::string> out;
    out.reserve(kClassCount);
    for (int i = 0; i < kClassCount; ++i) out.push_back(class_label(i));
    return out;
}

std::vector<float> PixelImage::to_float() const {
    std::vector<float> v(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) v[i] = static_cast<float>(rgb[i]) / 255.0f;
    return v;
}

PixelImage PixelImage::from_float(const std::vector<float>& v) {
    check(v.size() == static_cast<size_t>(kCanvas) * kCanvas * 3,
          "PixelImage::from_float: expected ", kCanvas * kCanvas * 3, " floats, got ", v.size());
    PixelImage img;
    for (size_t i = 0; i < v.size(); ++i) {
        const float x = std::clamp(v[i], 0.0f, 1.0f);
        img.rgb[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
    }
    return img;
}

SceneSample sample_scene(uint64_t seed, const GrammarConfig& cfg) {
    check(cfg.min_objects >= 1 && cfg.max_objects <= 3 && cfg.min_objects <= cfg.max_objects,
          "sample_scene: object count bounds must satisfy 1 <= min <= max <= 3");
    check(cfg.min_size >= 3 && cfg.max_size >= cfg.min_size && cfg.max_size <= 20,
          "sample_scene: size bounds out of range");
    Rng rng(seed);

    // caption pattern: single object / counted identical / two distinct
    enum class Pattern { Single, Counted, TwoDistinct };
    Pattern pattern = Pattern::Single;
    if (cfg.max_objects >= 2) {
        const double u = rng.uniform();
        if (cfg.min_objects >= 2) {
            pattern = u < 0.5 ? Pattern::Counted : Pattern::TwoDistinct;
        } else if (u < 0.55) {
            pattern = Pattern::Single;
        } else if (u < 0.8) {
            pattern = Pattern::Counted;
        } else {
            pattern = Pattern::TwoDistinct;
        }
    }

    SceneSpec spec;
    spec.background = static_cast<ColorName>(rng.uniform_int(kColorCount));

    auto pick_color = [&]() {
        ColorName c;
        do {
            c = static_cast<ColorName>(rng.uniform_int(kObjectColorCount));
        } while (c == spec.background);
        return c;
    };
    auto pick_shape = [&]() { return static_cast<ShapeKind>(rng.uniform_int(kShapeCount)); };

    struct Described {
        ColorName color;
        ShapeKind shape;
    };
    std::vector<Described> described;
    size_t described_count = 1;
    if (pattern == Pattern::Single) {
        described.push_back({pick_color(), pick_shape()});
    } else if (pattern == Pattern::Counted) {
        const size_t max_n = std::min<size_t>(3, static_cast<size_t>(cfg.max_objects));
        described_count = 2 + (max_n >= 3 ? rng.uniform_int(2) : 0);
        const Described d{pick_color(), pick_shape()};
        for (size_t i = 0; i < described_count; ++i) described.push_back(d);
    } else {
        Described a{pick_color(), pick_shape()};
        Described b{pick_color(), pick_shape()};
        while (b.color == a.color && b.shape == a.shape) {
            b = {pick_color(), pick_shape()};
        }
        described = {a, b};
    }

    // Safety-study correlation: a hidden companion object the caption omits.
    bool add_bias = false;
    if (cfg.bias_prob > 0.0 && pattern == Pattern::Single) {
        check(static_cast<int>(cfg.bias_color) < kObjectColorCount,
              "sample_scene: bias color must be an object color");
        if (rng.uniform() < cfg.bias_prob && cfg.bias_color != spec.background &&
            !(described[0].color == cfg.bias_color && described[0].shape == cfg.bias_shape)) {
            add_bias = true;
        }
    }

    std::vector<Described> to_place = described;
    if (add_bias) to_place.push_back({cfg.bias_color, cfg.bias_shape});

    // max size shrinks with object count so placement stays feasible
    int max_size = cfg.max_size;
    if (to_place.size() == 2) max_size = std::min(max_size, 11);
    if (to_place.size() == 3) max_size = std::min(max_size, 9);
    max_size = std::max(max_size, cfg.min_size);

    constexpr int kMaxAttempts = 4000;
    int attempts = 0;
    for (const Described& d : to_place) {
        bool placed = false;
        while (!placed) {
            check(++attempts <= kMaxAttempts,
                  "sample_scene: could not place objects after ", kMaxAttempts,
                  " attempts (seed ", seed, ")");
            const int size = cfg.min_size + static_cast<int>(rng.uniform_int(
                                                 static_cast<uint64_t>(max_size - cfg.min_size + 1)));
            const int margin = size + 2;
            const int cx = margin + static_cast<int>(rng.uniform_int(
                                        static_cast<uint64_t>(kCanvas - 2 * margin)));
            const int cy = margin + static_cast<int>(rng.uniform_int(
                                        static_cast<uint64_t>(kCanvas - 2 * margin)));
            SceneObject obj{d.shape, d.color, cx, cy, size};
            const BBox bb = object_bbox(obj);
            bool ok = true;
            for (const SceneObject& other : spec.objects)
                if (!boxes_clear(bb, object_bbox(other), 2)) {
                    ok = false;
                    break;
                }
            if (ok) {
                spec.objects.push_back(obj);
                placed = true;
            }
        }
    }

    // caption
    std::ostringstream cap;
    if (pattern == Pattern::Single) {
        cap << an_or_a(color_name(described[0].color)) << ' ' << color_name(described[0].color)
            << ' ' << shape_name(described[0].shape);
    } else if (pattern == Pattern::Counted) {
        cap << count_word(described_count) << ' ' << color_name(described[0].color) << ' '
            << shape_name(described[0].shape) << 's';
    } else {
        cap << "a " << color_name(described[0].color) << ' ' << shape_name(described[0].shape)
            << " and a " << color_name(described[1].color) << ' '
            << shape_name(described[1].shape);
    }
    if (rng.uniform() < cfg.p_background_phrase)
        cap << " on a " << color_name(spec.background) << " background";

    SceneSample out;
    out.spec = std::move(spec);
    out.caption = cap.str();
    if (out.spec.objects.size() == 1)
        out.class_id = class_id_of(out.spec.objects[0].color, out.spec.objects[0].shape);
    return out;
}

PixelImage render_scene(const SceneSpec& spec) {
    check(!spec.objects.empty() && spec.objects.size() <= 3,
          "render_scene: spec must hold 1..3 objects");
    PixelImage img;
    const Rgb bg = color_rgb(spec.background);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x) img.set(y, x, bg);
    for (const SceneObject& o : spec.objects) {
        check(static_cast<int>(o.color) < kObjectColorCount,
              "render_scene: object color must come from the object palette");
        check(o.color != spec.background, "render_scene: object color equals background");
        const Rgb c = color_rgb(o.color);
        for (int dy = -o.size; dy <= o.size; ++dy) {
            const int y = o.cy + dy;
            if (y < 0 || y >= kCanvas) fail("render_scene: object leaves the canvas");
            for (int dx = -o.size; dx <= o.size; ++dx) {
                const int x = o.cx + dx;
                if (x < 0 || x >= kCanvas) fail("render_scene: object leaves the canvas");
                if (in_shape(o.shape, dx, dy, o.size)) img.set(y, x, c);
            }
        }
    }
    return img;
}

bool SceneAnalysis::has_object(ColorName color, ShapeKind shape) const {
    for (const auto& o : objects)
        if (o.color == color && o.shape == shape) return true;
    return false;
}

bool SceneAnalysis::has_color(ColorName color) const {
    for (const auto& o : objects)
        if (o.color == color) return true;
    return false;
}

int SceneAnalysis::count_of(ColorName color, ShapeKind shape) const {
    int n = 0;
    for (const auto& o : objects)
        if (o.color == color && o.shape == shape) ++n;
    return n;
}

SceneAnalysis analyze_scene(const PixelImage& img) {
    // palette labels per pixel
    std::vector<uint8_t> labels(static_cast<size_t>(kCanvas) * kCanvas);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x)
            labels[static_cast<size_t>(y * kCanvas + x)] =
                static_cast<uint8_t>(nearest_palette(img.at(y, x)));
    labels = majority_filter(labels, kCanvas, kCanvas);

    // background from the corner consensus
    int corner_votes[kColorCount] = {0};
    const int c = kCanvas - 1;
    for (auto [y, x] : {std::pair{0, 0}, {0, c}, {c, 0}, {c, c}})
        ++corner_votes[labels[static_cast<size_t>(y * kCanvas + x)]];
    int bg = 0;
    for (int i = 0; i < kColorCount; ++i)
        if (corner_votes[i] > corner_votes[bg]) bg = i;

    SceneAnalysis out;
    out.background = static_cast<ColorName>(bg);

    // connected components (4-neighbour) over non-background labels
    std::vector<int> comp(labels.size(), -1);
    int ncomp = 0;
    std::vector<int> stack;
    struct CompStat {
        int minx = kCanvas, maxx = -1, miny = kCanvas, maxy = -1, area = 0;
        long sumx = 0, sumy = 0;
        int color = 0;
    };
    std::vector<CompStat> stats;
    for (int start = 0; start < kCanvas * kCanvas; ++start) {
        if (comp[static_cast<size_t>(start)] != -1 ||
            labels[static_cast<size_t>(start)] == bg)
            continue;
        const int id = ncomp++;
        stats.emplace_back();
        CompStat& st = stats.back();
        st.color = labels[static_cast<size_t>(start)];
        stack.push_back(start);
        comp[static_cast<size_t>(start)] = id;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / kCanvas, x = p % kCanvas;
            ++st.area;
            st.sumx += x;
            st.sumy += y;
            st.minx = std::min(st.minx, x);
            st.maxx = std::max(st.maxx, x);
            st.miny = std::min(st.miny, y);
            st.maxy = std::max(st.maxy, y);
            const int dy4[4] = {-1, 1, 0, 0}, dx4[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int yy = y + dy4[k], xx = x + dx4[k];
                if (yy < 0 || yy >= kCanvas || xx < 0 || xx >= kCanvas) continue;
                const int q = yy * kCanvas + xx;
                if (comp[static_cast<size_t>(q)] != -1) continue;
                if (labels[static_cast<size_t>(q)] != st.color) continue;
                comp[static_cast<size_t>(q)] = id;
                stack.push_back(q);
            }
        }
    }

    constexpr int kMinArea = 12;
    const auto& table = metrics_table();
    for (const CompStat& st : stats) {
        if (st.area < kMinArea) {
            out.residual_pixels += st.area;
            continue;
        }
        DetectedObject obj;
        obj.color = static_cast<ColorName>(st.color);
        obj.cx = double(st.sumx) / st.area;
        obj.cy = double(st.sumy) / st.area;
        obj.area = st.area;
        obj.shape = ShapeKind::Unknown;
        obj.size = 0;
        const int w = st.maxx - st.minx + 1, h = st.maxy - st.miny + 1;
        double best_score = 1e18;
        for (const auto& [key, m] : table) {
            const int dw = std::abs(m.bbox_w - w), dh = std::abs(m.bbox_h - h);
            if (dw > 2 || dh > 2) continue;
            const double area_err = std::abs(double(m.area - st.area)) / double(m.area);
            if (area_err > 0.25) continue;
            const double score = area_err + 0.05 * (dw + dh);
            if (score < best_score) {
                best_score = score;
                obj.shape = static_cast<ShapeKind>(key.first);
                obj.size = key.second;
            }
        }
        out.objects.push_back(obj);
    }

    // deterministic ordering: by centroid (y, then x)
    std::sort(out.objects.begin(), out.objects.end(), [](const auto& a, const auto& b) {
        return a.cy != b.cy ? a.cy < b.cy : a.cx < b.cx;
    });

    // aesthetic proxy: mean gradient magnitude across label borders
    double grad_sum = 0;
    int grad_n = 0;
    for (int y = 0; y < kCanvas - 1; ++y)
        for (int x = 0; x < kCanvas - 1; ++x) {
            const size_t i = static_cast<size_t>(y * kCanvas + x);
            const bool border_r = labels[i] != labels[i + 1];
            const bool border_d = labels[i] != labels[i + kCanvas];
            if (!border_r && !border_d) continue;
            const Rgb p = img.at(y, x);
            const Rgb pr = img.at(y, x + 1);
            const Rgb pd = img.at(y + 1, x);
            const double gx = (std::abs(int(p.r) - int(pr.r)) + std::abs(int(p.g) - int(pr.g)) +
                               std::abs(int(p.b) - int(pr.b))) /
                              (3.0 * 255.0);
            const double gy = (std::abs(int(p.r) - int(pd.r)) + std::abs(int(p.g) - int(pd.g)) +
                               std::abs(int(p.b) - int(pd.b))) /
                              (3.0 * 255.0);
            grad_sum += std::sqrt(gx * gx + gy * gy);
            ++grad_n;
        }
    out.edge_sharpness = grad_n ? grad_sum / grad_n : 0.0;
    return out;
}

bool caption_consistent(const std::string& caption, const SceneAnalysis& analysis) {
    std::istringstream ss(caption);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    check(!words.empty(), "caption_consistent: empty caption");

    size_t i = 0;
    auto expect_object = [&](int count) {
        const ColorName color = color_from_name(words.at(i));
        std::string shape_word = words.at(i + 1);
        if (count > 1) {
            check(!shape_word.empty() && shape_word.back() == 's',
                  "caption_consistent: counted phrase needs plural shape");
            shape_word.pop_back();
        }
        const ShapeKind shape = shape_from_name(shape_word);
        i += 2;
        return analysis.count_of(color, shape) >= count &&
               (count == 1 || analysis.count_of(color, shape) == count);
    };

    bool ok = true;
    if (words[0] == "a") {
        i = 1;
        ok = expect_object(1);
        if (ok && i < words.size() && words[i] == "and") {
            i += 2; // skip "and a"; the color word follows
            ok = expect_object(1);
        }
    } else if (words[0] == "two" || words[0] == "three") {
        i = 1;
        ok = expect_object(words[0] == "two" ? 2 : 3);
    } else {
        fail("caption_consistent: unrecognized caption pattern: ", caption);
    }
    if (ok && i + 4 <= words.size() && words[i] == "on") {
        // "on a {color} background"
        const ColorName bgc = color_from_name(words.at(i + 2));
        ok = analysis.background == bgc;
        i += 4;
    }
    return ok;
}

PixelImage add_pixel_noise(const PixelImage& img, Rng& rng, double sigma) {
    std::vector<float> v = img.to_float();
    for (float& x : v) x = static_cast<float>(x + sigma * rng.normal());
    return PixelImage::from_float(v);
}

} // namespace lclip
