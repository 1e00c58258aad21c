#pragma once

// Sequence directories, annotation files, dataset statistics and
// training-pair sampling.
//
//   <id>/frames/000000.ppm ...   binary PPM (P6) frames
//   <id>/groundtruth.csv         "#aftn-bb v1" then "frame_index,cx,cy,side"

#include <aftn/error.hpp>
#include <aftn/geometry.hpp>
#include <aftn/rng.hpp>

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace aftn {

namespace fs = std::filesystem;

inline constexpr std::string_view kAnnotationHeader = "#aftn-bb v1";

// ------------------------------------------------------------------- PPM

inline void write_ppm(const FrameImage& image, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline FrameImage read_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open frame " + path.string());
    auto token = [&]() {
        std::string t;
        char c = 0;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                t.push_back(c);
                break;
            }
        }
        while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
        return t;
    };
    if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PPM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PPM dimensions/depth");
    FrameImage image(w, h);
    in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size()))
        throw FormatError(path.string() + ": truncated pixel data");
    return image;
}

// ----------------------------------------------------------- annotations

struct SequenceRecord {
    std::string id;
    std::vector<FrameImage> frames;
    std::vector<SquareBox> annotations;
    double fps = 30.0;

    std::size_t size() const noexcept { return annotations.size(); }
};

inline std::string format_real(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline void write_annotations(std::span<const SquareBox> boxes, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << kAnnotationHeader << '\n';
    for (std::size_t i = 0; i < boxes.size(); ++i)
        out << i << ',' << format_real(boxes[i].cx) << ',' << format_real(boxes[i].cy) << ','
            << format_real(boxes[i].side) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline void write_annotations(const SequenceRecord& record, const fs::path& path) {
    write_annotations(record.annotations, path);
}

inline std::vector<SquareBox> parse_annotations(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) break;
    }
    if (line != kAnnotationHeader) throw ParseError(source, line_no, "missing '#aftn-bb v1' header");
    std::vector<SquareBox> boxes;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<double, 4> fields{};
        std::size_t n = 0;
        std::string_view rest(line);
        while (n < 4) {
            const auto comma = rest.find(',');
            std::string_view field = rest.substr(0, comma);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
                throw ParseError(source, line_no, "malformed field '" + std::string(field) + "'");
            fields[n++] = v;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
            if (n == 4) throw ParseError(source, line_no, "expected 4 fields");
        }
        if (n != 4) throw ParseError(source, line_no, "expected 4 fields");
        if (fields[0] != static_cast<double>(boxes.size()))
            throw ParseError(source, line_no, "frame_index must increase by one from 0");
        if (!std::isfinite(fields[1]) || !std::isfinite(fields[2]) || !(fields[3] > 0.0) || !std::isfinite(fields[3]))
            throw ParseError(source, line_no, "box must have finite center and positive side");
        boxes.push_back(SquareBox{fields[1], fields[2], fields[3], Space::frame});
    }
    return boxes;
}

inline std::vector<SquareBox> read_annotations(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open annotation file " + path.string());
    return parse_annotations(in, path.string());
}

inline fs::path frame_path(const fs::path& seq_dir, std::size_t index) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.ppm", index);
    return seq_dir / "frames" / name;
}

/// Loads frames and ground truth; every annotated frame must exist.
inline SequenceRecord load_sequence(const fs::path& dir) {
    SequenceRecord record;
    record.id = dir.filename().string();
    if (record.id.empty()) record.id = dir.parent_path().filename().string();
    record.annotations = read_annotations(dir / "groundtruth.csv");
    record.frames.reserve(record.annotations.size());
    for (std::size_t i = 0; i < record.annotations.size(); ++i) {
        const auto path = frame_path(dir, i);
        if (!fs::exists(path))
            throw FormatError(dir.string() + ": annotation for frame " + std::to_string(i) + " but " + path.string() +
                              " is missing");
        record.frames.push_back(read_ppm(path));
        if (record.frames.back().width != record.frames.front().width ||
            record.frames.back().height != record.frames.front().height)
            throw FormatError(dir.string() + ": frame " + std::to_string(i) + " changes size");
    }
    if (fs::exists(frame_path(dir, record.annotations.size())))
        throw FormatError(dir.string() + ": frame " + std::to_string(record.annotations.size()) +
                          " has no annotation");
    return record;
}

// -------------------------------------------------------------- manifests

/// Sequence directories listed one per line; relative entries resolve
/// against the manifest's directory.
inline std::vector<fs::path> read_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open manifest " + manifest.string());
    std::vector<fs::path> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        fs::path p(line);
        out.push_back(p.is_absolute() ? p : manifest.parent_path() / p);
    }
    return out;
}

inline void write_manifest(std::span<const std::string> entries, const fs::path& manifest) {
    std::ofstream out(manifest, std::ios::trunc);
    if (!out) throw IoError("cannot open " + manifest.string() + " for writing");
    for (const auto& e : entries) out << e << '\n';
}

inline std::vector<SequenceRecord> load_split(const fs::path& manifest) {
    std::vector<SequenceRecord> split;
    for (const auto& dir : read_manifest(manifest)) split.push_back(load_sequence(dir));
    return split;
}

// ------------------------------------------------------------- statistics

/// Per-channel mean over every pixel of every frame.
inline MeanRgb dataset_mean(std::span<const SequenceRecord> split) {
    std::array<std::uint64_t, 3> sums{};
    std::uint64_t pixels = 0;
    for (const auto& seq : split) {
        for (const auto& frame : seq.frames) {
            const std::size_t n = frame.pixels.size() / 3;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < 3; ++c) sums[c] += frame.pixels[i * 3 + c];
            pixels += n;
        }
    }
    if (pixels == 0) throw ConfigError("dataset_mean: empty split");
    return {static_cast<double>(sums[0]) / static_cast<double>(pixels),
            static_cast<double>(sums[1]) / static_cast<double>(pixels),
            static_cast<double>(sums[2]) / static_cast<double>(pixels)};
}

// --------------------------------------------------------------- sampling

struct TrainingPair {
    SearchPatch prev_patch;
    SearchPatch curr_patch;
    std::array<double, 3> target{};
    std::size_t sequence = 0;
    std::size_t frame = 0; // index of the current frame
};

/// Crops frames t-1 and t with the window around the ground truth at t-1.
inline TrainingPair make_pair(const SequenceRecord& seq, std::size_t t, const MeanRgb& mean, int size) {
    const FrameImage& prev = seq.frames.at(t - 1);
    const FrameImage& curr = seq.frames.at(t);
    const CropWindow window = context_window(seq.annotations.at(t - 1), prev.width, prev.height);
    TrainingPair pair;
    pair.prev_patch = crop_resize(prev, window, mean, size);
    pair.curr_patch = crop_resize(curr, window, mean, size);
    pair.target = encode_target(to_search_coords(seq.annotations.at(t), window, size), size);
    pair.frame = t;
    return pair;
}

/// Index over every (sequence, t >= 1) pair, for uniform sampling.
class PairIndex {
public:
    explicit PairIndex(std::span<const SequenceRecord> split) {
        for (std::size_t s = 0; s < split.size(); ++s) {
            if (split[s].size() < 2)
                throw ConfigError("sample_pairs: sequence '" + split[s].id + "' has fewer than 2 frames");
            if (split[s].frames.size() != split[s].size())
                throw ConfigError("sample_pairs: sequence '" + split[s].id + "' frames/annotations mismatch");
            for (std::size_t t = 1; t < split[s].size(); ++t) entries_.push_back({s, t});
        }
        if (entries_.empty()) throw ConfigError("sample_pairs: empty split");
    }

    std::size_t size() const noexcept { return entries_.size(); }
    std::pair<std::size_t, std::size_t> operator[](std::size_t i) const { return entries_[i]; }

private:
    std::vector<std::pair<std::size_t, std::size_t>> entries_;
};

inline constexpr std::size_t kDefaultBatchSize = 50;

/// Uniformly draws batch_size successive-frame pairs (with replacement).
inline std::vector<TrainingPair> sample_pairs(std::span<const SequenceRecord> split, const PairIndex& index,
                                              std::size_t batch_size, Rng& rng, const MeanRgb& mean, int size) {
    if (batch_size < 1) throw ConfigError("sample_pairs: batch_size must be at least 1");
    std::vector<TrainingPair> batch;
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const auto [s, t] = index[rng.below(index.size())];
        batch.push_back(make_pair(split[s], t, mean, size));
        batch.back().sequence = s;
    }
    return batch;
}

inline std::vector<TrainingPair> sample_pairs(std::span<const SequenceRecord> split, std::size_t batch_size, Rng& rng,
                                              const MeanRgb& mean, int size) {
    return sample_pairs(split, PairIndex(split), batch_size, rng, mean, size);
}

} // namespace aftn
