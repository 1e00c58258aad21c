#pragma once

// Square boxes, continuous IoU, context windows and the affine maps between
// frame pixels and the network's square search region.
//
// Coordinates are continuous: pixel (i, j) covers [j, j+1) x [i, i+1), so its
// center sits at (j + 0.5, i + 0.5).

#include <aftn/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace aftn {

enum class Space { frame, search };

inline const char* to_string(Space s) { return s == Space::frame ? "frame" : "search"; }

struct SquareBox {
    double cx = 0.0;
    double cy = 0.0;
    double side = 1.0;
    Space space = Space::frame;

    double left() const { return cx - side / 2.0; }
    double top() const { return cy - side / 2.0; }
    double right() const { return cx + side / 2.0; }
    double bottom() const { return cy + side / 2.0; }

    bool operator==(const SquareBox&) const = default;
};

/// Intersection over union of two axis-aligned squares.
inline double region_overlap(const SquareBox& a, const SquareBox& b) {
    if (a.space != b.space)
        throw ConfigError(std::string("region_overlap: boxes in different spaces (") + to_string(a.space) + " vs " +
                          to_string(b.space) + ")");
    if (a == b) return 1.0;
    const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.side * a.side + b.side * b.side - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

struct CropWindow {
    double left = 0.0;
    double top = 0.0;
    double side = 1.0;
    int frame_width = 0;
    int frame_height = 0;
};

/// Square window twice the box side, centered on the box. It may extend
/// past the frame; crop_resize fills the outside with the mean color.
inline CropWindow context_window(const SquareBox& box, int frame_width, int frame_height) {
    const double side = 2.0 * box.side;
    return CropWindow{box.cx - side / 2.0, box.cy - side / 2.0, side, frame_width, frame_height};
}

inline SquareBox to_search_coords(const SquareBox& box, const CropWindow& window, int size) {
    const double scale = static_cast<double>(size) / window.side;
    return SquareBox{(box.cx - window.left) * scale, (box.cy - window.top) * scale, box.side * scale, Space::search};
}

inline SquareBox to_frame_coords(const SquareBox& box, const CropWindow& window, int size) {
    const double scale = window.side / static_cast<double>(size);
    return SquareBox{box.cx * scale + window.left, box.cy * scale + window.top, box.side * scale, Space::frame};
}

/// Regression target normalized by the search size.
inline std::array<double, 3> encode_target(const SquareBox& box, int size) {
    const double s = static_cast<double>(size);
    return {box.cx / s, box.cy / s, box.side / s};
}

/// Inverse of encode_target; the side is clamped to at least one pixel.
inline SquareBox decode_output(const std::array<double, 3>& encoded, int size) {
    const double s = static_cast<double>(size);
    return SquareBox{encoded[0] * s, encoded[1] * s, std::max(1.0, encoded[2] * s), Space::search};
}

// ------------------------------------------------------------------ images

/// 8-bit interleaved RGB frame.
struct FrameImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; // height * width * 3

    FrameImage() = default;
    FrameImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {
        if (w <= 0 || h <= 0) throw ConfigError("frame dimensions must be positive");
    }

    std::uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                      static_cast<std::size_t>(c)];
    }
    std::uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
                      static_cast<std::size_t>(c)];
    }

    bool operator==(const FrameImage&) const = default;
};

using MeanRgb = std::array<double, 3>;

/// Mean-subtracted S x S x 3 crop (channel-planar, ready for the network).
struct SearchPatch {
    int size = 0;
    std::vector<double> planes; // 3 * size * size, channel-major
    CropWindow window;

    double at(int c, int y, int x) const {
        return planes[(static_cast<std::size_t>(c) * static_cast<std::size_t>(size) + static_cast<std::size_t>(y)) *
                          static_cast<std::size_t>(size) +
                      static_cast<std::size_t>(x)];
    }
};

/// Bilinearly resamples the window to size x size. Samples whose neighbors
/// lie outside the frame read mean_rgb there, so they become zero after the
/// final mean subtraction.
inline SearchPatch crop_resize(const FrameImage& frame, const CropWindow& window, const MeanRgb& mean_rgb, int size) {
    if (!(window.side > 0.0)) throw ConfigError("crop_resize: window side must be positive");
    if (size <= 0) throw ConfigError("crop_resize: output size must be positive");
    SearchPatch patch;
    patch.size = size;
    patch.window = window;
    const auto n = static_cast<std::size_t>(size);
    patch.planes.assign(3 * n * n, 0.0);
    const double step = window.side / static_cast<double>(size);

    // Separable sampling positions: column/row index pairs plus weights.
    struct Tap {
        int i0, i1;
        double w1;
    };
    auto taps = [&](double origin) {
        std::vector<Tap> out(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double u = origin + (static_cast<double>(j) + 0.5) * step - 0.5;
            const double f = std::floor(u);
            out[j] = Tap{static_cast<int>(f), static_cast<int>(f) + 1, u - f};
        }
        return out;
    };
    const auto xs = taps(window.left);
    const auto ys = taps(window.top);

    for (std::size_t y = 0; y < n; ++y) {
        const Tap ty = ys[y];
        const bool row0 = ty.i0 >= 0 && ty.i0 < frame.height;
        const bool row1 = ty.i1 >= 0 && ty.i1 < frame.height;
        for (std::size_t x = 0; x < n; ++x) {
            const Tap tx = xs[x];
            const bool col0 = tx.i0 >= 0 && tx.i0 < frame.width;
            const bool col1 = tx.i1 >= 0 && tx.i1 < frame.width;
            for (int c = 0; c < 3; ++c) {
                const double m = mean_rgb[static_cast<std::size_t>(c)];
                const double v00 = row0 && col0 ? frame.at(tx.i0, ty.i0, c) : m;
                const double v01 = row0 && col1 ? frame.at(tx.i1, ty.i0, c) : m;
                const double v10 = row1 && col0 ? frame.at(tx.i0, ty.i1, c) : m;
                const double v11 = row1 && col1 ? frame.at(tx.i1, ty.i1, c) : m;
                const double top = v00 + (v01 - v00) * tx.w1;
                const double bottom = v10 + (v11 - v10) * tx.w1;
                patch.planes[(static_cast<std::size_t>(c) * n + y) * n + x] = top + (bottom - top) * ty.w1 - m;
            }
        }
    }
    return patch;
}

} // namespace aftn
