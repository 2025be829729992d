#include "priormoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace priormoe {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian native writes");

namespace {

constexpr char kMagic[4] = {'P', 'M', 'C', 'K'};

enum Dtype : uint8_t { kF64 = 0, kF32 = 1 };

struct Entry {
    std::string name;
    uint8_t dtype = kF64;
    std::vector<int64_t> shape;
    uint64_t offset = 0;

    int64_t numel() const { return Tensor::numel_of(shape); }
    uint64_t byte_size() const {
        return static_cast<uint64_t>(numel()) * (dtype == kF64 ? 8 : 4);
    }
};

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
    const uint64_t n = get<uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

void append_payload(std::vector<char>& payload, const Tensor& t, uint8_t dtype) {
    if (dtype == kF64) {
        const size_t bytes = static_cast<size_t>(t.numel()) * 8;
        const size_t at = payload.size();
        payload.resize(at + bytes);
        std::memcpy(payload.data() + at, t.data(), bytes);
    } else {
        const size_t at = payload.size();
        payload.resize(at + static_cast<size_t>(t.numel()) * 4);
        float* out = reinterpret_cast<float*>(payload.data() + at);
        for (int64_t i = 0; i < t.numel(); ++i) out[i] = static_cast<float>(t[i]);
    }
}

Tensor read_payload(const std::vector<char>& payload, const Entry& e) {
    if (e.offset + e.byte_size() > payload.size()) {
        throw std::runtime_error("checkpoint: payload overrun for '" + e.name + "'");
    }
    Tensor t(e.shape);
    if (e.dtype == kF64) {
        std::memcpy(t.data(), payload.data() + e.offset, static_cast<size_t>(t.numel()) * 8);
    } else {
        const float* in = reinterpret_cast<const float*>(payload.data() + e.offset);
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(in[i]);
    }
    return t;
}

struct FileImage {
    CheckpointMeta meta;
    std::vector<Entry> entries;
    std::vector<char> payload;
};

FileImage read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
    }
    const uint32_t version = get<uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: version mismatch: file has version " +
                                 std::to_string(version) + ", this build reads version " +
                                 std::to_string(kCheckpointVersion));
    }
    FileImage img;
    img.meta.iteration = get<uint64_t>(in);
    img.meta.optimizer_step = get<int64_t>(in);
    for (auto& w : img.meta.rng_state) w = get<uint64_t>(in);
    img.meta.config_text = get_string(in);
    const uint64_t count = get<uint64_t>(in);
    img.entries.resize(count);
    for (auto& e : img.entries) {
        e.name = get_string(in);
        e.dtype = get<uint8_t>(in);
        const uint32_t ndim = get<uint32_t>(in);
        e.shape.resize(ndim);
        for (auto& d : e.shape) d = get<int64_t>(in);
        e.offset = get<uint64_t>(in);
    }
    const uint64_t payload_size = get<uint64_t>(in);
    img.payload.resize(payload_size);
    in.read(img.payload.data(), static_cast<std::streamsize>(payload_size));
    if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path);
    return img;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, const AdamW* optim,
                     const CheckpointMeta& meta, bool fp32) {
    const uint8_t param_dtype = fp32 ? kF32 : kF64;
    std::vector<Entry> entries;
    std::vector<char> payload;
    auto push = [&](const std::string& name, const Tensor& t, uint8_t dtype) {
        Entry e;
        e.name = name;
        e.dtype = dtype;
        e.shape = t.shape();
        e.offset = payload.size();
        entries.push_back(e);
        append_payload(payload, t, dtype);
    };
    for (const auto& p : store.all()) push(p->name, p->value(), param_dtype);
    if (optim) {
        for (const auto& [name, slot] : optim->state()) {
            push("optim.m." + name, slot.m, kF64);
            push("optim.v." + name, slot.v, kF64);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    put<uint32_t>(out, kCheckpointVersion);
    put<uint64_t>(out, meta.iteration);
    put<int64_t>(out, meta.optimizer_step);
    for (uint64_t w : meta.rng_state) put<uint64_t>(out, w);
    put_string(out, meta.config_text);
    put<uint64_t>(out, entries.size());
    for (const auto& e : entries) {
        put_string(out, e.name);
        put<uint8_t>(out, e.dtype);
        put<uint32_t>(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) put<int64_t>(out, d);
        put<uint64_t>(out, e.offset);
    }
    put<uint64_t>(out, payload.size());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store, AdamW* optim) {
    FileImage img = read_file(path);
    std::map<std::string, const Entry*> by_name;
    for (const auto& e : img.entries) by_name[e.name] = &e;

    for (auto& p : store.all()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) {
            throw std::runtime_error("checkpoint: missing tensor '" + p->name + "' in " + path);
        }
        if (it->second->shape != p->value().shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "': file " +
                                     Tensor::shape_str_of(it->second->shape) + " vs model " +
                                     p->value().shape_str());
        }
        p->value() = read_payload(img.payload, *it->second);
        by_name.erase(it);
    }
    if (optim) {
        optim->state().clear();
        optim->set_step_count(img.meta.optimizer_step);
        for (auto it = by_name.begin(); it != by_name.end();) {
            const std::string& name = it->first;
            if (name.rfind("optim.m.", 0) == 0) {
                const std::string pname = name.substr(8);
                auto vit = by_name.find("optim.v." + pname);
                if (vit == by_name.end()) {
                    throw std::runtime_error("checkpoint: dangling optimizer moment for '" + pname + "'");
                }
                AdamW::Slot slot;
                slot.m = read_payload(img.payload, *it->second);
                slot.v = read_payload(img.payload, *vit->second);
                optim->state().emplace(pname, std::move(slot));
                by_name.erase(vit);
                it = by_name.erase(it);
            } else if (name.rfind("optim.v.", 0) == 0) {
                // Its .m twin sorts first and would have consumed it.
                throw std::runtime_error("checkpoint: dangling optimizer moment '" + name + "'");
            } else {
                ++it;
            }
        }
    } else {
        for (auto it = by_name.begin(); it != by_name.end();) {
            if (it->first.rfind("optim.", 0) == 0) {
                it = by_name.erase(it);
            } else {
                ++it;
            }
        }
    }
    if (!by_name.empty()) {
        std::string extra;
        for (const auto& [name, e] : by_name) extra += " " + name;
        throw std::runtime_error("checkpoint: tensors not present in the model:" + extra);
    }
    return img.meta;
}

std::string peek_checkpoint_config(const std::string& path) {
    return read_file(path).meta.config_text;
}

}  // namespace priormoe
