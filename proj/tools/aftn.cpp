// aftn: generate synthetic sequences, train, track, evaluate, benchmark, plot.
//
// Exit codes: 0 success, 2 usage/config error, 3 numeric failure, 4 I/O error.

#include <aftn/aftn.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

void log(const std::string& msg) { std::cerr << "[aftn] " << msg << '\n'; }

struct Common {
    std::string config_path;
    std::optional<std::string> variant;
    std::optional<std::uint64_t> seed;
};

aftn::RunConfig load_config(const Common& common) {
    aftn::RunConfig cfg = common.config_path.empty() ? aftn::parse_run_config(nlohmann::json::object())
                                                      : aftn::load_run_config(common.config_path);
    if (common.variant) cfg.variant = aftn::parse_variant(*common.variant);
    if (common.seed) {
        cfg.train.seed = *common.seed;
        cfg.synth.seed = *common.seed;
    }
    return cfg;
}

void echo_config(const aftn::RunConfig& cfg, const fs::path& path) {
    aftn::write_text(aftn::to_json(cfg).dump(2) + "\n", path);
}

/// Replays stored boxes, e.g. annotation files written by `track`.
class ReplayPredictor : public aftn::BoxPredictor {
public:
    explicit ReplayPredictor(std::map<std::string, std::vector<aftn::SquareBox>> boxes) : boxes_(std::move(boxes)) {}

    aftn::SquareBox predict(const aftn::SequenceRecord& seq, std::size_t t, const aftn::SquareBox&) override {
        auto it = boxes_.find(seq.id);
        if (it == boxes_.end()) throw aftn::IoError("no stored predictions for sequence '" + seq.id + "'");
        if (t >= it->second.size())
            throw aftn::FormatError("stored predictions for '" + seq.id + "' end before frame " + std::to_string(t));
        return it->second[t];
    }

private:
    std::map<std::string, std::vector<aftn::SquareBox>> boxes_;
};

// ------------------------------------------------------------------ gen

int run_gen(const Common& common, const std::string& out_dir, std::size_t n, std::optional<std::size_t> train_count,
            std::optional<double> mean_length) {
    auto cfg = load_config(common);
    if (mean_length) cfg.synth.mean_length = *mean_length;
    cfg.validate();
    if (train_count && *train_count > n) throw aftn::ConfigError("--train-count exceeds --n");
    log("generating " + std::to_string(n) + " sequences into " + out_dir);
    const auto ids = aftn::gen_synthetic(cfg.synth, n, out_dir);
    if (train_count) {
        const std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(*train_count));
        const std::vector<std::string> eval(ids.begin() + static_cast<std::ptrdiff_t>(*train_count), ids.end());
        aftn::write_manifest(train, fs::path(out_dir) / "train.txt");
        aftn::write_manifest(eval, fs::path(out_dir) / "eval.txt");
    }
    echo_config(cfg, fs::path(out_dir) / "config.json");
    std::size_t frames = 0;
    for (const auto& id : ids) frames += aftn::read_annotations(fs::path(out_dir) / id / "groundtruth.csv").size();
    std::cout << "sequences=" << ids.size() << "\nframes=" << frames << "\nmanifest="
              << (fs::path(out_dir) / "manifest.txt").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
    std::string manifest;
    std::string out;
    std::optional<std::size_t> epochs, batch;
    std::optional<double> lr;
    bool unfrozen = false;
};

int run_train(const Common& common, const TrainFlags& flags) {
    auto cfg = load_config(common);
    if (flags.epochs) cfg.train.epochs = *flags.epochs;
    if (flags.batch) cfg.train.batch = *flags.batch;
    if (flags.lr) cfg.optim.learning_rate = *flags.lr;
    if (flags.unfrozen) cfg.fen.frozen = false;
    const std::string manifest = flags.manifest.empty() ? cfg.train_manifest : flags.manifest;
    if (manifest.empty()) throw aftn::ConfigError("no training manifest (use --manifest or data.train_manifest)");
    cfg.train_manifest = manifest;
    cfg.validate();

    const auto split = aftn::load_split(manifest);
    log("loaded " + std::to_string(split.size()) + " training sequences");
    aftn::TrackerModel model(cfg.variant, cfg.fen, cfg.head, cfg.train.seed);
    const auto report = aftn::train(model, split, cfg.optim, cfg.train, [](std::size_t epoch, double loss) {
        log("epoch " + std::to_string(epoch + 1) + " loss " + aftn::format_real(loss));
    });
    aftn::save_model(model, flags.out);
    echo_config(cfg, flags.out + ".config.json");

    std::cout << "variant=" << aftn::variant_name(cfg.variant) << "\nseed=" << report.seed
              << "\nepochs=" << report.epoch_loss.size() << "\nsteps_per_epoch=" << report.steps_per_epoch << '\n';
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        std::cout << "epoch" << e + 1 << ".loss=" << aftn::format_real(report.epoch_loss[e]) << "\nepoch" << e + 1
                  << ".seconds=" << aftn::format_real(report.epoch_seconds[e]) << '\n';
    std::cout << "model=" << flags.out << '\n';
    return 0;
}

// ----------------------------------------------------------------- eval

struct EvalFlags {
    std::string model;
    std::string manifest;
    std::string out;
    std::string predictions;
    bool oracle = false;
    bool stay_put = false;
    std::optional<double> grid_step;
};

int run_eval(const Common& common, const EvalFlags& flags) {
    auto cfg = load_config(common);
    if (flags.grid_step) cfg.grid_step = *flags.grid_step;
    const std::string manifest = flags.manifest.empty() ? cfg.eval_manifest : flags.manifest;
    if (manifest.empty()) throw aftn::ConfigError("no evaluation manifest (use --manifest or data.eval_manifest)");
    cfg.eval_manifest = manifest;
    const int baselines = int(flags.oracle) + int(flags.stay_put) + int(!flags.predictions.empty());
    if (baselines > 1) throw aftn::ConfigError("--oracle, --stay-put and --predictions are exclusive");
    if (baselines == 0 && flags.model.empty()) throw aftn::ConfigError("--model is required");
    cfg.validate();

    std::optional<aftn::TrackerModel> model;
    std::unique_ptr<aftn::BoxPredictor> predictor;
    if (flags.oracle) {
        predictor = std::make_unique<aftn::GroundTruthPredictor>();
    } else if (flags.stay_put) {
        predictor = std::make_unique<aftn::StayPutPredictor>();
    } else if (!flags.predictions.empty()) {
        std::map<std::string, std::vector<aftn::SquareBox>> stored;
        for (const auto& entry : fs::directory_iterator(flags.predictions))
            if (entry.path().extension() == ".csv")
                stored[entry.path().stem().string()] = aftn::read_annotations(entry.path());
        predictor = std::make_unique<ReplayPredictor>(std::move(stored));
    } else {
        model = aftn::load_model(flags.model);
        if (common.variant && aftn::parse_variant(*common.variant) != model->variant())
            throw aftn::ConfigError("--variant " + *common.variant + " does not match model file variant " +
                                    std::string(aftn::variant_name(model->variant())));
        cfg.variant = model->variant();
        predictor = std::make_unique<aftn::ModelPredictor>(*model);
    }
    const auto set = aftn::load_split(manifest);
    log("evaluating on " + std::to_string(set.size()) + " sequences");
    const auto ev = aftn::evaluate(*predictor, set, cfg.grid_step);
    if (!flags.out.empty()) {
        aftn::export_curves(ev.tp_rot, ev.fr_rt, ev.scores, flags.out);
        echo_config(cfg, fs::path(flags.out) / "config.json");
    }
    for (const auto& [k, v] : aftn::score_entries(ev.scores)) std::cout << k << '=' << v << '\n';
    return 0;
}

// ---------------------------------------------------------------- track

int run_track(const Common& common, const std::string& model_path, const std::string& sequence,
              const std::string& out, std::optional<double> reinit) {
    auto model = aftn::load_model(model_path);
    if (common.variant && aftn::parse_variant(*common.variant) != model.variant())
        throw aftn::ConfigError("--variant does not match model file");
    const auto seq = aftn::load_sequence(sequence);
    aftn::ModelPredictor predictor(model);
    std::vector<aftn::SquareBox> boxes;
    if (reinit) {
        boxes = aftn::track_sequence(predictor, seq, *reinit).boxes;
    } else {
        boxes.push_back(seq.annotations.front());
        for (std::size_t t = 1; t < seq.size(); ++t) boxes.push_back(predictor.predict(seq, t, boxes.back()));
    }
    aftn::write_annotations(boxes, out);
    std::vector<double> overlaps;
    for (std::size_t t = 1; t < boxes.size(); ++t) overlaps.push_back(aftn::region_overlap(boxes[t], seq.annotations[t]));
    std::cout << "frames=" << boxes.size() << "\nmean_overlap=" << aftn::format_real(aftn::accuracy_score(overlaps))
              << "\nout=" << out << '\n';
    return 0;
}

// ---------------------------------------------------------------- bench

int run_bench(const std::string& model_path, const std::string& manifest, const std::string& out) {
    auto model = aftn::load_model(model_path);
    const auto set = aftn::load_split(manifest);
    aftn::ModelPredictor predictor(model);
    const double fps = aftn::measure_fps(predictor, set);
    std::cout << aftn::format_real(fps) << '\n';
    log(std::string("real-time reference: ") + aftn::format_real(aftn::kRealTimeFps) + " FPS; measured " +
        (fps >= aftn::kRealTimeFps ? "meets" : "is below") + " it");
    if (!out.empty()) {
        fs::create_directories(out);
        aftn::write_key_values({{"fps", aftn::format_real(fps)},
                                {"realtime_reference_fps", aftn::format_real(aftn::kRealTimeFps)},
                                {"realtime", fps >= aftn::kRealTimeFps ? "true" : "false"}},
                               fs::path(out) / "bench.txt");
        aftn::write_text(aftn::render_fps_svg(fps, aftn::kRealTimeFps), fs::path(out) / "bench.svg");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attentive deep regression tracker laboratory"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON run configuration");
        sub->add_option("--variant", common.variant, "aftn | aftn-no-att | aftn-c | baseline");
        sub->add_option("--seed", common.seed, "run seed");
    };

    auto* gen = app.add_subcommand("gen", "generate synthetic sequences");
    std::string gen_out;
    std::size_t gen_n = 1;
    std::optional<std::size_t> gen_train;
    std::optional<double> gen_length;
    add_common(gen);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n", gen_n, "number of sequences")->check(CLI::PositiveNumber);
    gen->add_option("--train-count", gen_train, "also write train.txt/eval.txt splitting after this many");
    gen->add_option("--mean-length", gen_length, "mean sequence length in frames");

    auto* train = app.add_subcommand("train", "train a model");
    TrainFlags tf;
    add_common(train);
    train->add_option("--manifest", tf.manifest, "training split manifest");
    train->add_option("--out", tf.out, "model file to write")->required();
    train->add_option("--epochs", tf.epochs);
    train->add_option("--batch", tf.batch);
    train->add_option("--lr", tf.lr);
    train->add_flag("--unfrozen", tf.unfrozen, "train the feature extractor too");

    auto* eval = app.add_subcommand("eval", "score a tracker on a split");
    EvalFlags ef;
    add_common(eval);
    eval->add_option("--model", ef.model, "model file");
    eval->add_option("--manifest", ef.manifest, "evaluation split manifest");
    eval->add_option("--out", ef.out, "directory for curves and scores");
    eval->add_option("--predictions", ef.predictions, "directory of <sequence-id>.csv annotation files to score");
    eval->add_option("--grid-step", ef.grid_step);
    eval->add_flag("--oracle", ef.oracle, "score the ground-truth tracker");
    eval->add_flag("--stay-put", ef.stay_put, "score the tracker that repeats its previous box");

    auto* track = app.add_subcommand("track", "track one sequence");
    std::string track_model, track_seq, track_out;
    std::optional<double> track_reinit;
    add_common(track);
    track->add_option("--model", track_model)->required();
    track->add_option("--sequence", track_seq, "sequence directory")->required();
    track->add_option("--out", track_out, "annotation file to write")->required();
    track->add_option("--reinit", track_reinit, "reinitialize on failure at this threshold");

    auto* bench = app.add_subcommand("bench", "measure tracking FPS");
    std::string bench_model, bench_manifest, bench_out;
    bench->add_option("--model", bench_model)->required();
    bench->add_option("--manifest", bench_manifest)->required();
    bench->add_option("--out", bench_out, "directory for bench.txt");

    auto* plot = app.add_subcommand("plot", "regenerate SVG plots from curve CSVs");
    std::string plot_dir;
    plot->add_option("--run", plot_dir, "evaluation output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen(common, gen_out, gen_n, gen_train, gen_length);
        if (train->parsed()) return run_train(common, tf);
        if (eval->parsed()) return run_eval(common, ef);
        if (track->parsed()) return run_track(common, track_model, track_seq, track_out, track_reinit);
        if (bench->parsed()) return run_bench(bench_model, bench_manifest, bench_out);
        if (plot->parsed()) {
            aftn::render_plots(plot_dir);
            std::cout << "plots=" << plot_dir << '\n';
            return 0;
        }
    } catch (const aftn::ConfigError& e) {
        log(std::string("error: ") + e.what());
        return kExitUsage;
    } catch (const aftn::DimensionError& e) {
        log(std::string("error: ") + e.what());
        return kExitUsage;
    } catch (const aftn::NumericError& e) {
        log(std::string("numeric failure: ") + e.what());
        return kExitNumeric;
    } catch (const aftn::Error& e) {
        log(std::string("error: ") + e.what());
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        log(std::string("error: ") + e.what());
        return kExitIo;
    }
    return kExitUsage;
}
