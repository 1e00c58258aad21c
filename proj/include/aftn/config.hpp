#pragma once

// Run configuration: a JSON object with optional sections
//   fen   { channels[5], input_size, frozen, input_scale }
//   head  { fusion_kernels, fc_units, dropout }
//   optim { lr, beta1, beta2, epsilon, weight_decay }
//   train { epochs, batch, seed }
//   data  { train_manifest, eval_manifest, synth { ... } }
//   eval  { grid_step }
//   variant
// Missing keys keep their defaults; unknown keys are rejected.

#include <aftn/error.hpp>
#include <aftn/network.hpp>
#include <aftn/optim.hpp>
#include <aftn/synth.hpp>
#include <aftn/track.hpp>
#include <aftn/train.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace aftn {

struct RunConfig {
    Variant variant = Variant::aftn;
    FenConfig fen;
    HeadConfig head;
    OptimConfig optim;
    TrainConfig train;
    SynthConfig synth;
    std::string train_manifest;
    std::string eval_manifest;
    double grid_step = 0.01;

    void validate() const {
        fen.validate();
        head.validate();
        optim.validate();
        train.validate();
        synth.validate();
        threshold_grid(grid_step);
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& section) {
    if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key '" + (section.empty() ? "" : section + ".") + it.key() + "'");
}

template <typename T>
void read_opt(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig c;
    try {
        detail::check_keys(j, {"variant", "fen", "head", "optim", "train", "data", "eval"}, "");
        if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
        if (j.contains("fen")) {
            const auto& s = j.at("fen");
            detail::check_keys(s, {"channels", "input_size", "frozen", "input_scale"}, "fen");
            detail::read_opt(s, "channels", c.fen.channels);
            detail::read_opt(s, "input_size", c.fen.input_size);
            detail::read_opt(s, "frozen", c.fen.frozen);
            detail::read_opt(s, "input_scale", c.fen.input_scale);
        }
        if (j.contains("head")) {
            const auto& s = j.at("head");
            detail::check_keys(s, {"fusion_kernels", "fc_units", "dropout"}, "head");
            detail::read_opt(s, "fusion_kernels", c.head.fusion_kernels);
            detail::read_opt(s, "fc_units", c.head.fc_units);
            detail::read_opt(s, "dropout", c.head.dropout);
        }
        if (j.contains("optim")) {
            const auto& s = j.at("optim");
            detail::check_keys(s, {"lr", "beta1", "beta2", "epsilon", "weight_decay"}, "optim");
            detail::read_opt(s, "lr", c.optim.learning_rate);
            detail::read_opt(s, "beta1", c.optim.beta1);
            detail::read_opt(s, "beta2", c.optim.beta2);
            detail::read_opt(s, "epsilon", c.optim.epsilon);
            detail::read_opt(s, "weight_decay", c.optim.weight_decay);
        }
        if (j.contains("train")) {
            const auto& s = j.at("train");
            detail::check_keys(s, {"epochs", "batch", "seed"}, "train");
            detail::read_opt(s, "epochs", c.train.epochs);
            detail::read_opt(s, "batch", c.train.batch);
            detail::read_opt(s, "seed", c.train.seed);
        }
        if (j.contains("data")) {
            const auto& s = j.at("data");
            detail::check_keys(s, {"train_manifest", "eval_manifest", "synth"}, "data");
            detail::read_opt(s, "train_manifest", c.train_manifest);
            detail::read_opt(s, "eval_manifest", c.eval_manifest);
            if (s.contains("synth")) {
                const auto& g = s.at("synth");
                detail::check_keys(g,
                                   {"width", "height", "mean_length", "length_spread", "side_min", "side_max",
                                    "velocity_std", "damping", "scale_std", "gain_std", "distractors",
                                    "occluder_prob", "seed"},
                                   "data.synth");
                detail::read_opt(g, "width", c.synth.width);
                detail::read_opt(g, "height", c.synth.height);
                detail::read_opt(g, "mean_length", c.synth.mean_length);
                detail::read_opt(g, "length_spread", c.synth.length_spread);
                detail::read_opt(g, "side_min", c.synth.side_min);
                detail::read_opt(g, "side_max", c.synth.side_max);
                detail::read_opt(g, "velocity_std", c.synth.velocity_std);
                detail::read_opt(g, "damping", c.synth.damping);
                detail::read_opt(g, "scale_std", c.synth.scale_std);
                detail::read_opt(g, "gain_std", c.synth.gain_std);
                detail::read_opt(g, "distractors", c.synth.distractors);
                detail::read_opt(g, "occluder_prob", c.synth.occluder_prob);
                detail::read_opt(g, "seed", c.synth.seed);
            }
        }
        if (j.contains("eval")) {
            const auto& s = j.at("eval");
            detail::check_keys(s, {"grid_step"}, "eval");
            detail::read_opt(s, "grid_step", c.grid_step);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

/// The effective configuration, every key spelled out.
inline nlohmann::json to_json(const RunConfig& c) {
    const auto& s = c.synth;
    return nlohmann::json{
        {"variant", std::string(variant_name(c.variant))},
        {"fen",
         {{"channels", c.fen.channels},
          {"input_size", c.fen.input_size},
          {"frozen", c.fen.frozen},
          {"input_scale", c.fen.input_scale}}},
        {"head",
         {{"fusion_kernels", c.head.fusion_kernels}, {"fc_units", c.head.fc_units}, {"dropout", c.head.dropout}}},
        {"optim",
         {{"lr", c.optim.learning_rate},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"epsilon", c.optim.epsilon},
          {"weight_decay", c.optim.weight_decay}}},
        {"train", {{"epochs", c.train.epochs}, {"batch", c.train.batch}, {"seed", c.train.seed}}},
        {"data",
         {{"train_manifest", c.train_manifest},
          {"eval_manifest", c.eval_manifest},
          {"synth",
           {{"width", s.width},
            {"height", s.height},
            {"mean_length", s.mean_length},
            {"length_spread", s.length_spread},
            {"side_min", s.side_min},
            {"side_max", s.side_max},
            {"velocity_std", s.velocity_std},
            {"damping", s.damping},
            {"scale_std", s.scale_std},
            {"gain_std", s.gain_std},
            {"distractors", s.distractors},
            {"occluder_prob", s.occluder_prob},
            {"seed", s.seed}}}}},
        {"eval", {{"grid_step", c.grid_step}}},
    };
}

} // namespace aftn
