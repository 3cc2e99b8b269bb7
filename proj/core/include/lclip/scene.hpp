#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lclip/common.hpp"
#include "lclip/rng.hpp"

namespace lclip {

// Procedural captioned scenes: the training distribution, and a pixel-space
// oracle that recovers ground truth for evaluation.

enum class ShapeKind : uint8_t { Circle = 0, Square, Triangle, Star, Unknown };
enum class ColorName : uint8_t {
    Red = 0, Green, Blue, Yellow, Purple, Orange, // object palette
    White, Black, Gray                            // background-only palette
};

inline constexpr int kObjectColorCount = 6;
inline constexpr int kColorCount = 9;
inline constexpr int kShapeCount = 4;
inline constexpr int kClassCount = kObjectColorCount * kShapeCount; // 24
inline constexpr int kCanvas = 64;

struct Rgb {
    uint8_t r, g, b;
};

const char* shape_name(ShapeKind s);
const char* color_name(ColorName c);
Rgb color_rgb(ColorName c);
ShapeKind shape_from_name(const std::string& name);
ColorName color_from_name(const std::string& name);

// class id = color * kShapeCount + shape, label "{color} {shape}".
int class_id_of(ColorName color, ShapeKind shape);
std::string class_label(int class_id);
std::vector<std::string> all_class_labels();

struct SceneObject {
    ShapeKind shape;
    ColorName color;
    int cx, cy;  // center, pixels
    int size;    // half extent, pixels
};

struct SceneSpec {
    ColorName background;
    std::vector<SceneObject> objects; // 1..3, inside canvas, non-overlapping
};

struct PixelImage {
    std::vector<uint8_t> rgb; // kCanvas*kCanvas*3, row major, RGB interleaved

    PixelImage() : rgb(static_cast<size_t>(kCanvas) * kCanvas * 3, 0) {}
    Rgb at(int y, int x) const {
        const size_t i = (static_cast<size_t>(y) * kCanvas + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    void set(int y, int x, Rgb c) {
        const size_t i = (static_cast<size_t>(y) * kCanvas + x) * 3;
        rgb[i] = c.r;
        rgb[i + 1] = c.g;
        rgb[i + 2] = c.b;
    }
    // [0,1] floats in [H,W,C] order.
    std::vector<float> to_float() const;
    static PixelImage from_float(const std::vector<float>& v);
};

struct GrammarConfig {
    int min_objects = 1;
    int max_objects = 3;
    double p_background_phrase = 0.3; // chance the caption names the background
    int min_size = 7;
    int max_size = 13;
    // Correlation knob for the safety study: scenes whose caption names a
    // single object gain an unmentioned companion of the given class with
    // probability bias_prob.
    double bias_prob = 0.0;
    ColorName bias_color = ColorName::Red;
    ShapeKind bias_shape = ShapeKind::Circle;
};

struct SceneSample {
    SceneSpec spec;
    std::string caption;
    // class id when the scene holds exactly one object, else -1
    int class_id = -1;
};

// Deterministic in `seed`; rejection-samples object placement with bounded
// retries.
SceneSample sample_scene(uint64_t seed, const GrammarConfig& cfg);

// Hard-edged rasterization: background first, objects painted in list order.
PixelImage render_scene(const SceneSpec& spec);

struct DetectedObject {
    ShapeKind shape;   // Unknown when unclassifiable
    ColorName color;
    double cx, cy;     // centroid
    int size;          // best-fit half extent (0 for unknown)
    int area;          // pixel count
};

struct SceneAnalysis {
    ColorName background;
    std::vector<DetectedObject> objects;
    int residual_pixels = 0;    // non-background pixels in sub-threshold specks
    double edge_sharpness = 0;  // mean gradient magnitude across object borders, [0,1]

    bool has_object(ColorName color, ShapeKind shape) const;
    bool has_color(ColorName color) const;
    int count_of(ColorName color, ShapeKind shape) const;
};

// Connected-component + nearest-palette analysis. Exact on clean renders;
// tolerates bounded pixel noise and mild decoder blur.
SceneAnalysis analyze_scene(const PixelImage& img);

// True when every object the caption describes is present in the analysis
// (exact match of shape, color, count and, when named, background).
bool caption_consistent(const std::string& caption, const SceneAnalysis& analysis);

// Test helper: i.i.d. Gaussian pixel noise in [0,1] space, clamped.
PixelImage add_pixel_noise(const PixelImage& img, Rng& rng, double sigma);

} // namespace lclip
