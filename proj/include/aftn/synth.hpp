#pragma once

// Seeded synthetic surveillance sequences: a static low-frequency
// background, a textured square "face" target with two dark eye blobs and
// shaded borders, look-alike distractors, brief occluders and global
// illumination drift. The ground-truth box is the target's true extent.

#include <aftn/data.hpp>
#include <aftn/error.hpp>
#include <aftn/geometry.hpp>
#include <aftn/parallel.hpp>
#include <aftn/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace aftn {

struct SynthConfig {
    int width = 320;
    int height = 240;
    double mean_length = 95.6;
    double length_spread = 0.3; // lengths uniform in mean * [1 - spread, 1 + spread]
    double side_min = 24.0;
    double side_max = 64.0;
    double velocity_std = 2.0;
    double damping = 0.9;
    double scale_std = 0.01;
    double gain_std = 0.02;
    int distractors = 2;
    double occluder_prob = 0.02;
    std::uint64_t seed = 0;

    void validate() const {
        if (width < 32 || height < 32) throw ConfigError("synth frame must be at least 32x32");
        if (!(mean_length >= 2.0)) throw ConfigError("synth.mean_length must be at least 2");
        if (!(length_spread >= 0.0 && length_spread < 1.0)) throw ConfigError("synth.length_spread must be in [0,1)");
        if (!(side_min > 0.0 && side_max >= side_min)) throw ConfigError("synth side range invalid");
        if (side_max > 0.45 * std::min(width, height)) throw ConfigError("synth.side_max too large for the frame");
        if (velocity_std < 0.0 || scale_std < 0.0 || gain_std < 0.0) throw ConfigError("synth stds must be >= 0");
        if (!(damping >= 0.0 && damping <= 1.0)) throw ConfigError("synth.damping must be in [0,1]");
        if (distractors < 0) throw ConfigError("synth.distractors must be >= 0");
        if (!(occluder_prob >= 0.0 && occluder_prob <= 1.0)) throw ConfigError("synth.occluder_prob must be in [0,1]");
    }
};

struct SynthSequence {
    std::string id;
    std::vector<FrameImage> frames;
    std::vector<SquareBox> boxes;
    /// Pixels painted by the target in each frame (row-major, width*height).
    std::vector<std::vector<std::uint8_t>> target_masks;
};

namespace detail {

struct Appearance {
    std::array<double, 3> base;
    std::array<double, 3> eye;
    double stripe_freq;
    double stripe_phase;
    double stripe_amp;
};

struct Mover {
    double cx, cy, side;
    double vx = 0.0, vy = 0.0;
    Appearance look;
};

inline Appearance random_appearance(Rng& rng) {
    Appearance a;
    a.base = {rng.uniform(150, 235), rng.uniform(110, 190), rng.uniform(80, 160)};
    a.eye = {rng.uniform(10, 40), rng.uniform(10, 40), rng.uniform(10, 50)};
    a.stripe_freq = rng.uniform(2.0, 5.0);
    a.stripe_phase = rng.uniform(0.0, 6.283185307179586);
    a.stripe_amp = rng.uniform(8.0, 20.0);
    return a;
}

/// Color of the face pattern at relative position (u, v) in [0,1)^2.
inline std::array<double, 3> face_color(const Appearance& a, double u, double v) {
    const double edge = std::min(std::min(u, 1.0 - u), std::min(v, 1.0 - v)); // 0 at border, 0.5 center
    const double shade = 0.65 + 0.35 * std::min(1.0, edge / 0.18);
    const double stripe = a.stripe_amp * std::sin(a.stripe_phase + 6.283185307179586 * a.stripe_freq * (u + 0.5 * v));
    auto blob = [&](double ex, double ey) {
        const double dx = (u - ex) / 0.11, dy = (v - ey) / 0.08;
        return std::exp(-(dx * dx + dy * dy));
    };
    const double eye = std::min(1.0, blob(0.3, 0.38) + blob(0.7, 0.38));
    std::array<double, 3> out{};
    for (std::size_t c = 0; c < 3; ++c) {
        const double skin = (a.base[c] + stripe) * shade;
        out[c] = skin + (a.eye[c] - skin) * eye;
    }
    return out;
}

inline void reflect(double& pos, double& vel, double lo, double hi) {
    for (int guard = 0; guard < 8 && (pos < lo || pos > hi); ++guard) {
        if (pos < lo) {
            pos = 2.0 * lo - pos;
            vel = -vel;
        } else if (pos > hi) {
            pos = 2.0 * hi - pos;
            vel = -vel;
        }
    }
    pos = std::clamp(pos, lo, hi);
}

/// Random-walk step that keeps the square fully inside the frame.
inline void step_mover(Mover& m, const SynthConfig& cfg, Rng& rng, double side_lo, double side_hi) {
    m.side = std::clamp(m.side * std::exp(rng.normal(0.0, cfg.scale_std)), side_lo, side_hi);
    m.vx = cfg.damping * m.vx + rng.normal(0.0, cfg.velocity_std);
    m.vy = cfg.damping * m.vy + rng.normal(0.0, cfg.velocity_std);
    m.cx += m.vx;
    m.cy += m.vy;
    reflect(m.cx, m.vx, m.side / 2.0, cfg.width - m.side / 2.0);
    reflect(m.cy, m.vy, m.side / 2.0, cfg.height - m.side / 2.0);
}

inline void paint_square(std::vector<double>& canvas, int w, int h, const Mover& m,
                         std::vector<std::uint8_t>* mask) {
    const int x0 = std::max(0, static_cast<int>(std::floor(m.cx - m.side / 2.0 - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(m.cx + m.side / 2.0)));
    const int y0 = std::max(0, static_cast<int>(std::floor(m.cy - m.side / 2.0 - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(m.cy + m.side / 2.0)));
    const double left = m.cx - m.side / 2.0, top = m.cy - m.side / 2.0;
    for (int y = y0; y <= y1; ++y) {
        const double v = (y + 0.5 - top) / m.side;
        if (v < 0.0 || v >= 1.0) continue;
        for (int x = x0; x <= x1; ++x) {
            const double u = (x + 0.5 - left) / m.side;
            if (u < 0.0 || u >= 1.0) continue;
            const auto color = face_color(m.look, u, v);
            const std::size_t idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
            for (std::size_t c = 0; c < 3; ++c) canvas[idx * 3 + c] = color[c];
            if (mask) (*mask)[idx] = 1;
        }
    }
}

} // namespace detail

/// Generates sequence `index`; seeded by config.seed xor index.
inline SynthSequence generate_sequence(const SynthConfig& cfg, std::size_t index, bool with_masks = false) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed ^ static_cast<std::uint64_t>(index), SeedPurpose::generation));
    const int w = cfg.width, h = cfg.height;
    const auto wn = static_cast<std::size_t>(w), hn = static_cast<std::size_t>(h);
    SynthSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "seq%04zu", index);
    seq.id = id;

    const double lo = cfg.mean_length * (1.0 - cfg.length_spread);
    const double hi = cfg.mean_length * (1.0 + cfg.length_spread);
    const auto length = static_cast<std::size_t>(std::max(2.0, std::round(rng.uniform(lo, hi))));

    // Static background: coarse random grid, bilinearly upsampled, plus fine grain.
    constexpr int grid_w = 9, grid_h = 7;
    std::vector<double> grid(grid_w * grid_h * 3);
    for (auto& g : grid) g = rng.uniform(40.0, 200.0);
    std::vector<double> background(wn * hn * 3);
    for (int y = 0; y < h; ++y) {
        const double gy = (y + 0.5) / h * (grid_h - 1);
        const int iy = std::min(grid_h - 2, static_cast<int>(gy));
        const double fy = gy - iy;
        for (int x = 0; x < w; ++x) {
            const double gx = (x + 0.5) / w * (grid_w - 1);
            const int ix = std::min(grid_w - 2, static_cast<int>(gx));
            const double fx = gx - ix;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int i, int j) { return grid[static_cast<std::size_t>((j * grid_w + i) * 3 + c)]; };
                const double top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * fx;
                const double bot = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * fx;
                background[(static_cast<std::size_t>(y) * wn + static_cast<std::size_t>(x)) * 3 +
                           static_cast<std::size_t>(c)] = top + (bot - top) * fy + rng.uniform(-6.0, 6.0);
            }
        }
    }

    const double side_lo = std::min(cfg.side_min, 16.0);
    const double side_hi = 0.45 * std::min(w, h);
    auto spawn = [&](double side) {
        detail::Mover m;
        m.side = side;
        m.cx = rng.uniform(side / 2.0, w - side / 2.0);
        m.cy = rng.uniform(side / 2.0, h - side / 2.0);
        m.look = detail::random_appearance(rng);
        return m;
    };
    detail::Mover target = spawn(rng.uniform(cfg.side_min, cfg.side_max));
    std::vector<detail::Mover> distractors;
    for (int i = 0; i < cfg.distractors; ++i) distractors.push_back(spawn(rng.uniform(cfg.side_min, cfg.side_max)));

    double log_gain = 0.0;
    int occluder_left = 0;
    double occluder_u = 0.0, occluder_width = 0.0, occluder_shade = 0.0;
    std::vector<double> canvas;
    for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) {
            detail::step_mover(target, cfg, rng, side_lo, side_hi);
            for (auto& d : distractors) detail::step_mover(d, cfg, rng, side_lo, side_hi);
            log_gain = std::clamp(0.95 * log_gain + rng.normal(0.0, cfg.gain_std), std::log(0.6), std::log(1.4));
        }
        if (occluder_left == 0 && rng.uniform() < cfg.occluder_prob) {
            occluder_left = 3 + static_cast<int>(rng.below(6));
            occluder_u = rng.uniform(0.0, 0.7);
            occluder_width = rng.uniform(0.15, 0.3);
            occluder_shade = rng.uniform(60.0, 200.0);
        }
        canvas = background;
        for (const auto& d : distractors) detail::paint_square(canvas, w, h, d, nullptr);
        std::vector<std::uint8_t> mask;
        if (with_masks) mask.assign(wn * hn, 0);
        detail::paint_square(canvas, w, h, target, with_masks ? &mask : nullptr);
        if (occluder_left > 0) {
            --occluder_left;
            const double x_begin = target.cx - target.side / 2.0 + occluder_u * target.side;
            const int xa = std::max(0, static_cast<int>(std::floor(x_begin)));
            const int xb = std::min(w, static_cast<int>(std::ceil(x_begin + occluder_width * target.side)));
            for (int y = 0; y < h; ++y)
                for (int x = xa; x < xb; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        canvas[(static_cast<std::size_t>(y) * wn + static_cast<std::size_t>(x)) * 3 + c] =
                            occluder_shade;
        }
        const double gain = std::exp(log_gain);
        FrameImage frame(w, h);
        for (std::size_t i = 0; i < canvas.size(); ++i) {
            const double v = canvas[i] * gain + rng.uniform(-3.0, 3.0);
            frame.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        seq.frames.push_back(std::move(frame));
        seq.boxes.push_back(SquareBox{target.cx, target.cy, target.side, Space::frame});
        if (with_masks) seq.target_masks.push_back(std::move(mask));
    }
    return seq;
}

inline void write_sequence(const SynthSequence& seq, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) write_ppm(seq.frames[i], frame_path(dir, i));
    write_annotations(seq.boxes, dir / "groundtruth.csv");
}

inline SequenceRecord to_record(SynthSequence seq) {
    SequenceRecord r;
    r.id = std::move(seq.id);
    r.frames = std::move(seq.frames);
    r.annotations = std::move(seq.boxes);
    return r;
}

/// Writes n sequences plus `manifest.txt` under out_dir; returns the ids.
inline std::vector<std::string> gen_synthetic(const SynthConfig& cfg, std::size_t n, const fs::path& out_dir) {
    cfg.validate();
    if (n < 1) throw ConfigError("gen_synthetic: need at least one sequence");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::string> ids(n);
    parallel_for(n, [&](std::size_t i) {
        const auto seq = generate_sequence(cfg, i);
        write_sequence(seq, out_dir / seq.id);
        ids[i] = seq.id;
    });
    write_manifest(ids, out_dir / "manifest.txt");
    return ids;
}

} // namespace aftn
