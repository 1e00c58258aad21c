// Acceptance run: one PASS/FAIL line per criterion, exit 0 only if all pass.
//
//   acceptance --workdir DIR [--seeds N] [--skip-toy]

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <aftn/aftn.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace aftn;
using Clock = std::chrono::steady_clock;

namespace {

// gates
constexpr double kOpTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;
constexpr double kGradientSeconds = 120.0;
constexpr double kCoordTolerance = 1e-9;
constexpr double kAccuracyTolerance = 1e-12;
constexpr int kAttentionForwards = 10000;
constexpr int kOverfitSteps = 50;
constexpr int kOverfitMonotoneFrom = 5;
constexpr double kOverfitRatio = 0.10;
constexpr double kOverfitSeconds = 60.0;
constexpr double kToyMinOverall = 0.50;
constexpr double kToyMinGain = 0.10;
constexpr double kToySeconds = 30.0 * 60.0;
constexpr double kRoundTripTolerance = 1e-5;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

// ------------------------------------------------------------- gradients

Outcome gradient_suite(int seeds) {
    const auto start = Clock::now();
    std::ostringstream worst;
    bool pass = true;
    for (const auto& check : aftn::testing::op_checks()) {
        double max_rel = 0.0;
        for (int s = 1; s <= seeds; ++s) max_rel = std::max(max_rel, check.run(static_cast<std::uint64_t>(s)).max_rel);
        pass &= max_rel < kOpTolerance;
        worst << check.name << '=' << fmt(max_rel, 2) << ' ';
    }
    double e2e = 0.0;
    for (int s = 1; s <= seeds; ++s)
        e2e = std::max(e2e, aftn::testing::gradcheck_model(static_cast<std::uint64_t>(s), Variant::aftn, 1).max_rel);
    pass &= e2e < kEndToEndTolerance;
    const double secs = seconds_since(start);
    pass &= secs < kGradientSeconds;
    return {pass, std::to_string(seeds) + " seeds, end_to_end=" + fmt(e2e, 2) + ", " + worst.str() + "in " +
                      fmt(secs, 3) + " s"};
}

// -------------------------------------------------------------- geometry

Outcome geometry_suite() {
    bool pass = true;
    // pooling cascade
    FeatureExtractor fen(FenConfig{});
    Rng rng(201);
    fen.initialize(rng);
    const auto patch = aftn::testing::random_patch(rng, 224);
    FenTrace trace;
    fen.forward(patch, trace);
    const std::size_t sides[kLevels] = {54, 13, 13, 13, 6};
    for (std::size_t l = 0; l < kLevels; ++l)
        pass &= trace.features[l].dim(1) == sides[l] && trace.features[l].dim(2) == sides[l];
    const auto pooled = pool_to_common(trace.features);
    for (std::size_t l = 0; l < kLevels; ++l) pass &= pooled[l].shape() == Shape{fen.config().channels[l], 6, 6};
    const bool cascade = pass;

    double coord_err = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const SquareBox b{rng.uniform(-100, 900), rng.uniform(-100, 700), rng.uniform(1, 300)};
        const SquareBox prev{b.cx + rng.uniform(-30, 30), b.cy + rng.uniform(-30, 30), rng.uniform(5, 300)};
        const auto w = context_window(prev, 800, 600);
        const SquareBox back = to_frame_coords(to_search_coords(b, w, 224), w, 224);
        const SquareBox dec = decode_output(encode_target(to_search_coords(b, w, 224), 224), 224);
        const SquareBox dec_frame = to_frame_coords(dec, w, 224);
        for (double e : {back.cx - b.cx, back.cy - b.cy, back.side - b.side, dec_frame.cx - b.cx,
                         dec_frame.cy - b.cy, dec_frame.side - b.side})
            coord_err = std::max(coord_err, std::abs(e));
    }
    pass &= coord_err <= kCoordTolerance;

    double iou_err = 0.0;
    Rng pairs(202);
    for (int i = 0; i < 1000; ++i) {
        const auto [a, b] = aftn::testing::random_box_pair(pairs);
        iou_err = std::max(iou_err, std::abs(region_overlap(a, b) - aftn::testing::raster_overlap(a, b)));
    }
    pass &= iou_err <= aftn::testing::kRasterTolerance;
    return {pass, std::string("cascade ") + (cascade ? "exact" : "WRONG") + ", round trip max err " +
                      fmt(coord_err, 2) + ", IoU vs raster max diff " + fmt(iou_err, 2) + " over 1000 pairs"};
}

// ----------------------------------------------------------- metric oracle

SequenceRecord oracle_sequence(std::size_t n) {
    SequenceRecord r;
    r.id = "oracle";
    r.annotations.assign(n, SquareBox{50, 50, 12});
    r.frames.assign(n, FrameImage(4, 4));
    return r;
}

class ShiftPredictor : public BoxPredictor {
public:
    explicit ShiftPredictor(std::vector<double> shifts) : shifts_(std::move(shifts)) {}
    SquareBox predict(const SequenceRecord& seq, std::size_t t, const SquareBox&) override {
        SquareBox b = seq.annotations.at(t);
        b.cx += shifts_.at(t - 1);
        return b;
    }

private:
    std::vector<double> shifts_;
};

Outcome metric_oracle() {
    bool pass = true;
    Rng rng(301);
    double acc_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> o(1 + rng.below(200));
        for (auto& v : o) v = rng.uniform(0.0, 1.0);
        std::vector<double> s = o;
        std::sort(s.begin(), s.end());
        double area = 0.0, prev = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            area += (s[k] - prev) * static_cast<double>(s.size() - k) / static_cast<double>(s.size());
            prev = s[k];
        }
        acc_err = std::max(acc_err, std::abs(accuracy_score(o) - area));
    }
    pass &= acc_err <= kAccuracyTolerance;

    SynthConfig cfg;
    cfg.seed = 302;
    cfg.mean_length = 10;
    const std::vector<SequenceRecord> set{to_record(generate_sequence(cfg, 0)), to_record(generate_sequence(cfg, 1))};
    GroundTruthPredictor gt;
    const auto g = evaluate(gt, set).scores;
    const bool gt_ok = g.accuracy == 1.0 && g.robustness == 1.0 && g.overall == 1.0;
    DisjointPredictor dj;
    const auto d = evaluate(dj, set).scores;
    const bool dj_ok = d.accuracy == 0.0 && d.robustness == 0.0 && d.overall == 0.0;
    pass &= gt_ok && dj_ok;

    // overlaps 1, 0, 1/2, 1/3, 5/7, 1/2
    ShiftPredictor scripted({0, 12, 4, 6, 2, 4});
    const std::vector<SequenceRecord> one{oracle_sequence(7)};
    const auto fr = evaluate(scripted, one).fr_rt.values;
    bool fr_ok = fr.size() == 101;
    for (std::size_t k = 0; fr_ok && k <= 100; ++k) {
        const std::size_t expected = k <= 33 ? 1 : k <= 50 ? 2 : k <= 71 ? 4 : 5;
        fr_ok = fr[k] == static_cast<double>(expected) / 6.0;
    }
    pass &= fr_ok;
    return {pass, "AUC-mean max diff " + fmt(acc_err, 2) + ", ground truth (" + fmt(g.accuracy) + "," +
                      fmt(g.robustness) + "," + fmt(g.overall) + "), disjoint (" + fmt(d.accuracy) + "," +
                      fmt(d.robustness) + "," + fmt(d.overall) + "), hand-enumerated FR " +
                      (fr_ok ? "exact" : "MISMATCH")};
}

// ------------------------------------------------------ attention checks

Outcome attention_invariants() {
    Rng rng(401);
    double lo = 1.5, hi = 0.5;
    Can can;
    for (int trial = 0; trial < kAttentionForwards; ++trial) {
        if (trial % 100 == 0) {
            const double scale = trial % 200 == 0 ? 0.3 : 30.0;
            for (Param* p : {&can.fc1_weight, &can.fc1_bias, &can.fc2_weight, &can.fc2_bias})
                aftn::testing::fill_normal(p->value, rng, scale);
        }
        Tensor ch({6, 6});
        aftn::testing::fill_normal(ch, rng, 50.0);
        const double w = can_weight(ch, can);
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    bool pass = lo > 0.5 && hi < 1.5;

    std::size_t matched = 0, compared = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrackerModel att(Variant::aftn, FenConfig{}, HeadConfig{}, seed);
        TrackerModel plain(Variant::aftn_no_att, FenConfig{}, HeadConfig{}, seed);
        Rng in(seed + 400);
        const auto a = aftn::testing::random_patch(in, 224), b = aftn::testing::random_patch(in, 224);
        const auto oa = att.predict({&a, &b}), op = plain.predict({&a, &b});
        for (auto& c : att.cans()) c.zero();
        const auto oz = att.predict({&a, &b});
        for (int k = 0; k < 3; ++k) {
            compared += 2;
            matched += (oa[k] == op[k]) + (oz[k] == op[k]);
        }
    }
    pass &= matched == compared;
    return {pass, "omega in [" + fmt(lo, 17) + ", " + fmt(hi, 17) + "] over " + std::to_string(kAttentionForwards) +
                      " forwards; AFTN vs AFTN_NO_ATT bitwise " + std::to_string(matched) + "/" +
                      std::to_string(compared)};
}

// ----------------------------------------------------------- overfit

SearchPatch mirrored(const SearchPatch& p) {
    SearchPatch m = p;
    const auto n = static_cast<std::size_t>(p.size);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) m.planes[(c * n + y) * n + x] = p.planes[(c * n + y) * n + (n - 1 - x)];
    return m;
}

/// One training pair, presented with its left-right mirror image so batch
/// normalization sees two distinct samples; dropout off so the loss is a
/// deterministic function of the weights.
Outcome overfit_sanity(const fs::path& workdir) {
    const auto start = Clock::now();
    SynthConfig cfg;
    cfg.seed = 7;
    cfg.mean_length = 12;
    const auto seq = to_record(generate_sequence(cfg, 0));
    const std::vector<SequenceRecord> split{seq};
    FenConfig fen;
    fen.frozen = false;
    HeadConfig head;
    head.dropout = 0.0;
    TrackerModel model(Variant::aftn, fen, head, 7);
    model.set_mean_rgb(dataset_mean(split));
    const TrainingPair pair = make_pair(seq, 5, model.mean_rgb(), model.input_size());
    TrainingPair flip{mirrored(pair.prev_patch), mirrored(pair.curr_patch), pair.target};
    flip.target[0] = 1.0 - pair.target[0];
    const std::vector<TrainingPair> batch{pair, flip};
    OptimConfig optim;
    optim.learning_rate = 1e-3;
    Rng dropout_rng(0);
    std::vector<double> losses;
    for (int s = 0; s < kOverfitSteps; ++s) losses.push_back(train_step(model, batch, optim, dropout_rng));
    // loss after the last update
    {
        std::vector<PatchPair> in{{&batch[0].prev_patch, &batch[0].curr_patch}, {&batch[1].prev_patch, &batch[1].curr_patch}};
        Tensor target({2, 3});
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 3; ++k) target[i * 3 + k] = batch[i].target[k];
        ForwardState state;
        Rng unused(0);
        TrackerModel probe = model; // train-mode BN would touch the running stats
        probe.forward(in, Mode::train, unused, state);
        losses.push_back(l1_loss(state.output, target));
    }
    const double secs = seconds_since(start);
    std::size_t violations = 0;
    for (std::size_t i = kOverfitMonotoneFrom + 1; i < losses.size(); ++i) violations += losses[i] > losses[i - 1];
    const double ratio = losses.back() / losses.front();
    std::ofstream log(workdir / "overfit_losses.txt");
    for (double l : losses) log << format_real(l) << '\n';
    const bool pass = violations == 0 && ratio < kOverfitRatio && secs < kOverfitSeconds;
    return {pass, "loss " + fmt(losses.front()) + " -> " + fmt(losses.back()) + " (" + fmt(100 * ratio, 3) +
                      "% of initial), " + std::to_string(violations) + " increases after step " +
                      std::to_string(kOverfitMonotoneFrom) + ", " + fmt(secs, 3) + " s"};
}

// ------------------------------------------------------- toy experiment

struct ToyResult {
    TrainReport train;
    Evaluation eval;
    double seconds = 0.0;
    fs::path model_path;
};

ToyResult run_toy(const RunConfig& cfg, const std::vector<SequenceRecord>& train_split,
                  const std::vector<SequenceRecord>& eval_split, const fs::path& out_dir) {
    const auto start = Clock::now();
    fs::create_directories(out_dir);
    TrackerModel model(cfg.variant, cfg.fen, cfg.head, cfg.train.seed);
    ToyResult r;
    r.train = train(model, train_split, cfg.optim, cfg.train, [&](std::size_t e, double loss) {
        std::cerr << "  [" << variant_name(cfg.variant) << "] epoch " << e + 1 << " loss " << loss << '\n';
    });
    r.model_path = out_dir / "model.aftn";
    save_model(model, r.model_path);
    ModelPredictor predictor(model);
    r.eval = evaluate(predictor, eval_split, cfg.grid_step);
    r.seconds = seconds_since(start);
    export_curves(r.eval.tp_rot, r.eval.fr_rt, r.eval.scores, out_dir);
    std::ofstream losses(out_dir / "step_loss.txt");
    for (double l : r.train.step_loss) losses << format_real(l) << '\n';
    return r;
}

std::string scores_text(const Scores& s) {
    return "acc=" + fmt(s.accuracy) + " rob=" + fmt(s.robustness) + " overall=" + fmt(s.overall);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string workdir_arg;
    int seeds = 20;
    bool skip_toy = false;
    app.add_option("--workdir", workdir_arg, "scratch directory")->required();
    app.add_option("--seeds", seeds, "gradient check seeds")->check(CLI::PositiveNumber);
    app.add_flag("--skip-toy", skip_toy, "skip the toy experiment and the checks that need its model");
    CLI11_PARSE(app, argc, argv);
    const fs::path workdir(workdir_arg);
    fs::create_directories(workdir);

    int failures = 0;
    auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    };
    auto skipped = [&](const std::string& name) { std::cout << "SKIP  " << name << ": --skip-toy" << std::endl; };

    report("gradient suite", [&] { return gradient_suite(seeds); });
    report("geometry suite", geometry_suite);
    report("metric oracle", metric_oracle);
    report("attention invariants", attention_invariants);
    report("overfit sanity", [&] { return overfit_sanity(workdir); });

    std::optional<ToyResult> toy;
    RunConfig cfg;
    std::vector<SequenceRecord> train_split, eval_split;
    if (skip_toy) {
        for (const char* n : {"toy experiment", "determinism", "throughput harness"}) skipped(n);
    } else {
        report("toy experiment", [&]() -> Outcome {
            cfg = load_run_config(AFTN_TOY_CONFIG);
            const fs::path data = workdir / "toy_data";
            const auto gen_start = Clock::now();
            fs::remove_all(data);
            const auto ids = gen_synthetic(cfg.synth, 60, data);
            for (std::size_t i = 0; i < ids.size(); ++i)
                (i < 40 ? train_split : eval_split).push_back(load_sequence(data / ids[i]));
            const double gen_secs = seconds_since(gen_start);
            toy = run_toy(cfg, train_split, eval_split, workdir / "aftn");
            StayPutPredictor stay;
            const auto stay_scores = evaluate(stay, eval_split, cfg.grid_step).scores;
            const double total = gen_secs + toy->seconds;
            const auto& s = toy->eval.scores;

            RunConfig plain_cfg = cfg;
            plain_cfg.variant = Variant::aftn_no_att;
            const auto plain = run_toy(plain_cfg, train_split, eval_split, workdir / "aftn_no_att");
            const double gap = s.overall - plain.eval.scores.overall;
            std::ofstream(workdir / "toy_report.txt")
                << "aftn " << scores_text(s) << " fps=" << fmt(s.fps) << "\nstay_put " << scores_text(stay_scores)
                << "\naftn_no_att " << scores_text(plain.eval.scores) << "\nablation_gap " << format_real(gap)
                << "\nseconds " << fmt(total) << '\n';

            const bool pass = s.overall >= kToyMinOverall && s.overall - stay_scores.overall >= kToyMinGain &&
                              total < kToySeconds;
            return {pass, "AFTN " + scores_text(s) + "; stay-put overall=" + fmt(stay_scores.overall) + " (gain " +
                              fmt(s.overall - stay_scores.overall, 3) + "); " + fmt(total / 60.0, 3) +
                              " min; recorded AFTN - AFTN_NO_ATT overall gap " + fmt(gap, 3) + " (NO_ATT " +
                              fmt(plain.eval.scores.overall) + ")"};
        });
        report("determinism", [&]() -> Outcome {
            if (!toy) return {false, "toy experiment did not complete"};
            const auto again = run_toy(cfg, train_split, eval_split, workdir / "aftn_rerun");
            const bool losses = again.train.step_loss == toy->train.step_loss;
            const auto &a = toy->eval.scores, &b = again.eval.scores;
            const bool scores = a.accuracy == b.accuracy && a.robustness == b.robustness && a.overall == b.overall;
            std::ifstream f1(toy->model_path, std::ios::binary), f2(again.model_path, std::ios::binary);
            const bool files = std::string(std::istreambuf_iterator<char>(f1), {}) ==
                               std::string(std::istreambuf_iterator<char>(f2), {});
            return {losses && scores, std::to_string(again.train.step_loss.size()) + " step losses " +
                                          (losses ? "bitwise equal" : "DIFFER") + ", scores " +
                                          (scores ? "identical" : "DIFFER") + ", model files " +
                                          (files ? "identical" : "differ")};
        });
        report("throughput harness", [&]() -> Outcome {
            if (!toy) return {false, "toy experiment did not complete"};
            auto model = load_model(toy->model_path);
            ModelPredictor predictor(model);
            const double fps = measure_fps(predictor, eval_split);
            write_key_values({{"fps", format_real(fps)},
                              {"realtime_reference_fps", format_real(kRealTimeFps)},
                              {"realtime", fps >= kRealTimeFps ? "true" : "false"}},
                             workdir / "bench.txt");
            write_text(render_fps_svg(fps, kRealTimeFps), workdir / "bench.svg");
            return {fps > 0.0, fmt(fps) + " FPS (" + (fps >= kRealTimeFps ? "at or above" : "below") +
                                   " the 25 FPS real-time reference line; not gated)"};
        });
    }

    report("serialization", [&]() -> Outcome {
        const fs::path path = workdir / "roundtrip.aftn";
        double max_diff = 0.0;
        std::size_t rejected = 0, corrupted = 0;
        Rng rng(901);
        for (Variant v : {Variant::aftn, Variant::aftn_no_att, Variant::aftn_c, Variant::baseline_goturn}) {
            TrackerModel m = toy && v == Variant::aftn ? load_model(toy->model_path)
                                                       : TrackerModel(v, FenConfig{}, HeadConfig{}, 902);
            if (!toy || v != Variant::aftn)
                for (auto& c : m.cans()) aftn::testing::randomize_can(c, rng);
            save_model(m, path);
            TrackerModel back = load_model(path);
            for (int i = 0; i < 3; ++i) {
                const auto a = aftn::testing::random_patch(rng, 224), b = aftn::testing::random_patch(rng, 224);
                const auto oa = m.predict({&a, &b}), ob = back.predict({&a, &b});
                for (int k = 0; k < 3; ++k) max_diff = std::max(max_diff, std::abs(oa[k] - ob[k]));
            }
            const auto bytes = serialize_model(m);
            for (int i = 0; i < 8; ++i) {
                auto bad = bytes;
                bad[rng.below(bad.size())] ^= static_cast<unsigned char>(1u << rng.below(8));
                ++corrupted;
                try {
                    deserialize_model(bad);
                } catch (const ChecksumError&) {
                    ++rejected;
                } catch (const FormatError&) {
                    ++rejected;
                }
            }
            auto truncated = bytes;
            truncated.resize(truncated.size() - 9);
            ++corrupted;
            try {
                deserialize_model(truncated);
            } catch (const ChecksumError&) {
                ++rejected;
            } catch (const FormatError&) {
                ++rejected;
            }
        }
        const bool pass = max_diff <= kRoundTripTolerance && rejected == corrupted;
        return {pass, "max output diff " + fmt(max_diff, 2) + ", corrupted files rejected " + std::to_string(rejected) +
                          "/" + std::to_string(corrupted)};
    });

    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
