#pragma once

// Binary model file:
//
//   "AFTN1"                      magic, 5 bytes
//   u32 header_len, header       JSON: variant, fen, head, seed, mean_rgb
//   u32 tensor_count
//   per tensor: u16 name_len, name, u32 rank, u32 dims[rank], f32 data[]
//   u32 crc32                    CRC-32 of every byte between magic and trailer
//
// All integers and floats are little-endian.

#include <aftn/error.hpp>
#include <aftn/network.hpp>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace aftn {

inline constexpr char kModelMagic[] = "AFTN1";
inline constexpr std::size_t kModelMagicLen = 5;

namespace detail {

class ByteWriter {
public:
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    const std::vector<unsigned char>& buffer() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
    }
    std::vector<unsigned char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& buf, std::size_t begin, std::size_t end)
        : buf_(buf), pos_(begin), end_(end) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (end_ - pos_ < n) throw FormatError("model file truncated");
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
        return v;
    }
    const std::vector<unsigned char>& buf_;
    std::size_t pos_, end_;
};

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    boost::crc_32_type crc;
    crc.process_bytes(data, n);
    return crc.checksum();
}

/// Named views over every tensor that a model file stores.
inline std::vector<std::pair<std::string, Tensor*>> named_tensors(TrackerModel& model) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t l = 0; l < kLevels; ++l) {
        const std::string p = "fen.conv" + std::to_string(l + 1);
        out.emplace_back(p + ".weight", &model.fen().kernel(l).value);
        out.emplace_back(p + ".bias", &model.fen().bias(l).value);
    }
    for (std::size_t l = 0; l < kLevels; ++l) {
        auto& can = model.cans()[l];
        const std::string p = "can" + std::to_string(l + 1);
        out.emplace_back(p + ".fc1.weight", &can.fc1_weight.value);
        out.emplace_back(p + ".fc1.bias", &can.fc1_bias.value);
        out.emplace_back(p + ".fc2.weight", &can.fc2_weight.value);
        out.emplace_back(p + ".fc2.bias", &can.fc2_bias.value);
    }
    std::vector<Param*> head;
    model.head().collect(head);
    const char* names[] = {"head.fuse.weight", "head.fuse.bias", "head.bn.gamma", "head.bn.beta",
                           "head.fc1.weight",  "head.fc1.bias",  "head.fc2.weight", "head.fc2.bias",
                           "head.out.weight",  "head.out.bias"};
    for (std::size_t i = 0; i < head.size(); ++i) out.emplace_back(names[i], &head[i]->value);
    out.emplace_back("head.bn.running_mean", &model.head().bn_state().running_mean);
    out.emplace_back("head.bn.running_var", &model.head().bn_state().running_var);
    return out;
}

} // namespace detail

inline nlohmann::json model_header(const TrackerModel& model) {
    const auto& fen = model.fen_config();
    const auto& head = model.head_config();
    return nlohmann::json{
        {"variant", std::string(variant_name(model.variant()))},
        {"fen",
         {{"channels", fen.channels},
          {"input_size", fen.input_size},
          {"frozen", fen.frozen},
          {"input_scale", fen.input_scale}}},
        {"head", {{"fusion_kernels", head.fusion_kernels}, {"fc_units", head.fc_units}, {"dropout", head.dropout}}},
        {"seed", model.seed()},
        {"mean_rgb", model.mean_rgb()},
    };
}

inline std::vector<unsigned char> serialize_model(const TrackerModel& model) {
    auto& m = const_cast<TrackerModel&>(model); // named_tensors only reads through these pointers here
    detail::ByteWriter w;
    const std::string header = model_header(model).dump();
    w.u32(static_cast<std::uint32_t>(header.size()));
    w.bytes(header);
    const auto tensors = detail::named_tensors(m);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(t->rank()));
        for (auto d : t->shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t->data()) w.f32(static_cast<float>(v));
    }
    std::vector<unsigned char> out;
    out.reserve(kModelMagicLen + w.buffer().size() + 4);
    for (std::size_t i = 0; i < kModelMagicLen; ++i) out.push_back(static_cast<unsigned char>(kModelMagic[i]));
    out.insert(out.end(), w.buffer().begin(), w.buffer().end());
    const std::uint32_t crc = detail::crc32(w.buffer().data(), w.buffer().size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((crc >> (8 * i)) & 0xFF));
    return out;
}

inline TrackerModel deserialize_model(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kModelMagicLen || std::memcmp(bytes.data(), kModelMagic, kModelMagicLen) != 0)
        throw FormatError("not a model file (bad magic)");
    if (bytes.size() < kModelMagicLen + 4) throw FormatError("model file truncated");
    const std::size_t payload_end = bytes.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[payload_end + static_cast<std::size_t>(i)]) << (8 * i);
    const std::uint32_t actual = detail::crc32(bytes.data() + kModelMagicLen, payload_end - kModelMagicLen);
    if (stored != actual) throw ChecksumError("model file checksum mismatch");

    detail::ByteReader r(bytes, kModelMagicLen, payload_end);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(r.u32()));
        FenConfig fen;
        fen.channels = header.at("fen").at("channels").get<std::array<std::size_t, kLevels>>();
        fen.input_size = header.at("fen").at("input_size").get<int>();
        fen.frozen = header.at("fen").at("frozen").get<bool>();
        fen.input_scale = header.at("fen").at("input_scale").get<double>();
        HeadConfig head;
        head.fusion_kernels = header.at("head").at("fusion_kernels").get<std::size_t>();
        head.fc_units = header.at("head").at("fc_units").get<std::size_t>();
        head.dropout = header.at("head").at("dropout").get<double>();
        TrackerModel model(parse_variant(header.at("variant").get<std::string>()), fen, head,
                           header.at("seed").get<std::uint64_t>());
        model.set_mean_rgb(header.at("mean_rgb").get<MeanRgb>());

        std::map<std::string, Tensor*> slots;
        for (auto& [name, t] : detail::named_tensors(model)) slots.emplace(name, t);
        const std::uint32_t count = r.u32();
        if (count != slots.size()) throw FormatError("model file holds " + std::to_string(count) + " tensors, expected " +
                                                     std::to_string(slots.size()));
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::string name = r.bytes(r.u16());
            auto it = slots.find(name);
            if (it == slots.end()) throw FormatError("unexpected tensor '" + name + "' in model file");
            Shape shape(r.u32());
            for (auto& d : shape) d = r.u32();
            if (shape != it->second->shape())
                throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                  shape_str(it->second->shape()));
            for (auto& v : it->second->data()) v = static_cast<double>(r.f32());
        }
        if (!r.done()) throw FormatError("trailing bytes in model file");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model header: ") + e.what());
    }
}

inline void save_model(const TrackerModel& model, const std::filesystem::path& path) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline TrackerModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

} // namespace aftn
