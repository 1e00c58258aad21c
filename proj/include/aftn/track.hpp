#pragma once

// Online tracking loop, reinitialization protocol and the accuracy /
// robustness / overall scores.

#include <aftn/data.hpp>
#include <aftn/geometry.hpp>
#include <aftn/network.hpp>
#include <aftn/parallel.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <tuple>
#include <vector>

namespace aftn {

/// Produces the box for frame t given the box carried over from frame t-1.
class BoxPredictor {
public:
    virtual ~BoxPredictor() = default;
    virtual SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox& prev_box) = 0;
    /// True when predict() may be called concurrently on distinct sequences.
    virtual bool thread_safe() const { return true; }
};

/// The network tracker: crop both frames around the previous box, regress,
/// map back to frame coordinates.
class ModelPredictor : public BoxPredictor {
public:
    explicit ModelPredictor(TrackerModel& model) : model_(model) {}

    /// Called with the attention weights of every prediction.
    void on_weights(std::function<void(const AttentionWeights&)> sink) { sink_ = std::move(sink); }

    SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox& prev_box) override {
        const int size = model_.input_size();
        const FrameImage& curr = seq.frames.at(t);
        const CropWindow window = context_window(prev_box, curr.width, curr.height);
        const SearchPatch curr_patch = crop_resize(curr, window, model_.mean_rgb(), size);
        PatchPair pair{nullptr, &curr_patch};
        SearchPatch prev_patch;
        if (stream_count(model_.variant()) == 2) {
            prev_patch = crop_resize(seq.frames.at(t - 1), window, model_.mean_rgb(), size);
            pair.prev = &prev_patch;
        }
        AttentionWeights weights;
        const auto encoded = model_.predict(pair, sink_ ? &weights : nullptr);
        if (sink_) sink_(weights);
        return to_frame_coords(decode_output(encoded, size), window, size);
    }

    bool thread_safe() const override { return !sink_; }

private:
    TrackerModel& model_;
    std::function<void(const AttentionWeights&)> sink_;
};

/// Outputs the ground truth.
class GroundTruthPredictor : public BoxPredictor {
public:
    SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox&) override {
        return seq.annotations.at(t);
    }
};

/// Outputs a box guaranteed not to overlap the ground truth.
class DisjointPredictor : public BoxPredictor {
public:
    SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox&) override {
        SquareBox b = seq.annotations.at(t);
        b.cx += 2.0 * b.side;
        return b;
    }
};

/// Repeats the previous box.
class StayPutPredictor : public BoxPredictor {
public:
    SquareBox predict(const SequenceRecord&, std::size_t, const SquareBox& prev_box) override { return prev_box; }
};

/// Caches predictions by (sequence, frame, previous box) for deterministic
/// predictors, so reruns at different reinitialization thresholds only pay
/// for trajectories that actually diverge.
class MemoizingPredictor : public BoxPredictor {
public:
    explicit MemoizingPredictor(BoxPredictor& inner) : inner_(inner) {}

    SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox& prev_box) override {
        const Key key{&seq, t, std::bit_cast<std::uint64_t>(prev_box.cx), std::bit_cast<std::uint64_t>(prev_box.cy),
                      std::bit_cast<std::uint64_t>(prev_box.side)};
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        const SquareBox out = inner_.predict(seq, t, prev_box);
        cache_.emplace(key, out);
        return out;
    }

    bool thread_safe() const override { return false; }
    std::size_t misses() const noexcept { return cache_.size(); }

private:
    using Key = std::tuple<const SequenceRecord*, std::size_t, std::uint64_t, std::uint64_t, std::uint64_t>;
    BoxPredictor& inner_;
    std::map<Key, SquareBox> cache_;
};

struct TrackRun {
    std::vector<SquareBox> boxes;   // one per frame; frame 0 is the initialization
    std::vector<double> overlaps;   // frames 1..n-1
    std::vector<std::size_t> failures;
    double threshold = 0.0;
};

/// Failure means overlap exactly 0 when r == 0, and overlap < r otherwise.
inline bool is_failure(double overlap, double r) { return r == 0.0 ? overlap == 0.0 : overlap < r; }

/// Runs the crop-regress loop over a sequence, reinitializing to the ground
/// truth of the failing frame and resuming at the next frame.
inline TrackRun track_sequence(BoxPredictor& predictor, const SequenceRecord& seq, double r) {
    if (seq.size() < 2) throw ConfigError("track_sequence: sequence '" + seq.id + "' has fewer than 2 frames");
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("track_sequence: reinit threshold must be in [0,1]");
    TrackRun run;
    run.threshold = r;
    run.boxes.reserve(seq.size());
    run.overlaps.reserve(seq.size() - 1);
    SquareBox prev = seq.annotations.front();
    run.boxes.push_back(prev);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        SquareBox box = predictor.predict(seq, t, prev);
        box.space = Space::frame;
        const double overlap = region_overlap(box, seq.annotations[t]);
        run.boxes.push_back(box);
        run.overlaps.push_back(overlap);
        if (is_failure(overlap, r)) {
            run.failures.push_back(t);
            prev = seq.annotations[t];
        } else {
            prev = box;
        }
    }
    return run;
}

// ---------------------------------------------------------------- metrics

struct Curve {
    std::vector<double> thresholds;
    std::vector<double> values;
};

/// Thresholds 0, step, ..., 1 (101 points for step 0.01).
inline std::vector<double> threshold_grid(double step = 0.01) {
    if (!(step > 0.0 && step <= 1.0)) throw ConfigError("threshold grid step must be in (0,1]");
    const auto intervals = static_cast<std::size_t>(std::llround(1.0 / step));
    if (std::abs(static_cast<double>(intervals) * step - 1.0) > 1e-9)
        throw ConfigError("threshold grid step must divide 1");
    std::vector<double> grid(intervals + 1);
    for (std::size_t i = 0; i <= intervals; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(intervals);
    return grid;
}

inline std::vector<double> pooled_overlaps(std::span<const TrackRun> runs) {
    std::vector<double> all;
    for (const auto& run : runs) all.insert(all.end(), run.overlaps.begin(), run.overlaps.end());
    return all;
}

/// Exact area under the TP-vs-ROT step function, which is the mean overlap.
inline double accuracy_score(std::span<const double> overlaps) {
    if (overlaps.empty()) throw ConfigError("accuracy_score: empty run");
    double sum = 0.0;
    for (double o : overlaps) sum += o;
    return sum / static_cast<double>(overlaps.size());
}

inline double accuracy_score(const TrackRun& run) { return accuracy_score(run.overlaps); }

/// Fraction of frames with overlap strictly above each threshold.
inline Curve tp_rot_curve(std::span<const double> overlaps, std::span<const double> grid) {
    if (overlaps.empty()) throw ConfigError("tp_rot_curve: empty run");
    Curve c{std::vector<double>(grid.begin(), grid.end()), {}};
    for (double tau : grid) {
        const auto above = std::count_if(overlaps.begin(), overlaps.end(), [&](double o) { return o > tau; });
        c.values.push_back(static_cast<double>(above) / static_cast<double>(overlaps.size()));
    }
    return c;
}

inline Curve tp_rot_curve(const TrackRun& run, double step = 0.01) {
    const auto grid = threshold_grid(step);
    return tp_rot_curve(run.overlaps, grid);
}

struct Scores {
    double accuracy = 0.0;
    double robustness = 0.0;
    double overall = 0.0;
    double fps = 0.0;
};

inline double overall_score(double accuracy, double robustness) { return (accuracy + robustness) / 2.0; }

struct Evaluation {
    Scores scores;
    Curve tp_rot;
    Curve fr_rt;
    std::vector<TrackRun> runs; // r = 0 run per sequence
    std::size_t scored_frames = 0;
    double tracking_seconds = 0.0;
};

/// Robustness is 1 minus the grid average of the pooled failure rate.
inline double robustness_from_curve(const Curve& fr) {
    if (fr.values.empty()) throw ConfigError("robustness: empty curve");
    double sum = 0.0;
    for (double v : fr.values) sum += v;
    return 1.0 - sum / static_cast<double>(fr.values.size());
}

/// Tracks every sequence at every reinitialization threshold and pools the
/// results by frame count. Only the r = 0 passes are timed for FPS.
inline Evaluation evaluate(BoxPredictor& predictor, std::span<const SequenceRecord> set, double step = 0.01,
                           bool memoize = true) {
    if (set.empty()) throw ConfigError("evaluate: empty sequence set");
    const auto grid = threshold_grid(step);
    struct PerSequence {
        TrackRun run0;
        std::vector<std::size_t> failures; // per threshold
        double seconds = 0.0;
    };
    std::vector<PerSequence> per(set.size());
    auto work = [&](std::size_t i) {
        std::unique_ptr<MemoizingPredictor> memo;
        if (memoize) memo = std::make_unique<MemoizingPredictor>(predictor);
        BoxPredictor& p = memo ? static_cast<BoxPredictor&>(*memo) : predictor;
        auto& out = per[i];
        out.failures.resize(grid.size());
        const auto start = std::chrono::steady_clock::now();
        out.run0 = track_sequence(p, set[i], 0.0);
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.failures[0] = out.run0.failures.size();
        for (std::size_t k = 1; k < grid.size(); ++k) out.failures[k] = track_sequence(p, set[i], grid[k]).failures.size();
    };
    parallel_for(set.size(), work, predictor.thread_safe() ? worker_count() : 1);

    Evaluation ev;
    for (auto& s : per) {
        ev.scored_frames += s.run0.overlaps.size();
        ev.tracking_seconds += s.seconds;
        ev.runs.push_back(std::move(s.run0));
    }
    const auto overlaps = pooled_overlaps(ev.runs);
    ev.tp_rot = tp_rot_curve(overlaps, grid);
    ev.fr_rt.thresholds = grid;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        std::size_t failures = 0;
        for (const auto& s : per) failures += s.failures[k];
        ev.fr_rt.values.push_back(static_cast<double>(failures) / static_cast<double>(ev.scored_frames));
    }
    ev.scores.accuracy = accuracy_score(overlaps);
    ev.scores.robustness = robustness_from_curve(ev.fr_rt);
    ev.scores.overall = overall_score(ev.scores.accuracy, ev.scores.robustness);
    ev.scores.fps = ev.tracking_seconds > 0.0 ? static_cast<double>(ev.scored_frames) / ev.tracking_seconds : 0.0;
    return ev;
}

/// Failure-rate curve alone.
inline Curve fr_rt_curve(BoxPredictor& predictor, std::span<const SequenceRecord> set, double step = 0.01) {
    return evaluate(predictor, set, step).fr_rt;
}

inline double robustness_score(BoxPredictor& predictor, std::span<const SequenceRecord> set, double step = 0.01) {
    return evaluate(predictor, set, step).scores.robustness;
}

/// FPS of the r = 0 passes alone (no threshold sweep).
inline double measure_fps(BoxPredictor& predictor, std::span<const SequenceRecord> set) {
    std::size_t frames = 0;
    double seconds = 0.0;
    for (const auto& seq : set) {
        const auto start = std::chrono::steady_clock::now();
        frames += track_sequence(predictor, seq, 0.0).overlaps.size();
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return seconds > 0.0 ? static_cast<double>(frames) / seconds : 0.0;
}

// ---------------------------------------------------------- weight report

struct WeightStats {
    std::size_t stream = 0;
    std::size_t level = 0; // 0-based
    std::size_t count = 0;
    double mean = 0.0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

struct WeightReport {
    std::vector<WeightStats> rows; // level-major within each stream
};

inline double quantile_sorted(std::span<const double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

/// Distribution of recorded channel weights per level and stream over an
/// r = 0 tracking pass of `seq`.
inline WeightReport weight_report(TrackerModel& model, const SequenceRecord& seq) {
    if (!uses_attention(model.variant()))
        throw ConfigError("weight_report: variant " + std::string(variant_name(model.variant())) +
                          " has no channel attention");
    const std::size_t streams = stream_count(model.variant());
    std::vector<std::array<std::vector<double>, kLevels>> collected(streams);
    ModelPredictor predictor(model);
    predictor.on_weights([&](const AttentionWeights& w) {
        for (std::size_t s = 0; s < streams; ++s)
            for (std::size_t l = 0; l < kLevels; ++l)
                collected[s][l].insert(collected[s][l].end(), w.streams[s][l].begin(), w.streams[s][l].end());
    });
    track_sequence(predictor, seq, 0.0);
    WeightReport report;
    for (std::size_t s = 0; s < streams; ++s) {
        for (std::size_t l = 0; l < kLevels; ++l) {
            auto& v = collected[s][l];
            std::sort(v.begin(), v.end());
            WeightStats row;
            row.stream = s;
            row.level = l;
            row.count = v.size();
            double sum = 0.0;
            for (double x : v) sum += x;
            row.mean = sum / static_cast<double>(v.size());
            row.min = v.front();
            row.q1 = quantile_sorted(v, 0.25);
            row.median = quantile_sorted(v, 0.5);
            row.q3 = quantile_sorted(v, 0.75);
            row.max = v.back();
            report.rows.push_back(row);
        }
    }
    return report;
}

} // namespace aftn
