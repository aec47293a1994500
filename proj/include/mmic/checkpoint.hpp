#pragma once

// Checkpoint container: "MMIC" magic, format version, the resolved config
// text verbatim, an ordered named-tensor table, optional optimizer state, and
// the best-validation record. Tensors round-trip bit-exactly; loading into a
// store whose shapes disagree reports every offending name at once.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mmic/core.hpp"
#include "mmic/params.hpp"
#include "mmic/tensor_io.hpp"
#include "mmic/trainer.hpp"

namespace mmic {

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, TensorData<T>>> tensors;  // store order
    bool has_optimizer = false;
    OptimState<T> optim;
    int32_t best_epoch = -1;
    double best_val_oa = 0.0;
};

namespace detail {

inline void ckpt_write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t ckpt_read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated field in " + what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline void ckpt_write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t ckpt_read_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw FormatError("checkpoint: truncated field in " + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void ckpt_write_f64(std::ostream& os, double v) {
    uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof bits);
    ckpt_write_u64(os, bits);
}

inline double ckpt_read_f64(std::istream& is, const std::string& what) {
    const uint64_t bits = ckpt_read_u64(is, what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

inline void ckpt_write_str(std::ostream& os, const std::string& s) {
    ckpt_write_u64(os, s.size());
    os.write(s.data(), static_cast<int64_t>(s.size()));
}

inline std::string ckpt_read_str(std::istream& is, const std::string& what) {
    const uint64_t n = ckpt_read_u64(is, what);
    if (n > (uint64_t(1) << 32)) throw FormatError("checkpoint: oversized string in " + what);
    std::string s(static_cast<size_t>(n), '\0');
    is.read(s.data(), static_cast<int64_t>(n));
    if (!is) throw FormatError("checkpoint: truncated string in " + what);
    return s;
}

template <typename T>
void ckpt_write_vec(std::ostream& os, const std::vector<T>& v) {
    ckpt_write_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<int64_t>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> ckpt_read_vec(std::istream& is, const std::string& what) {
    const uint64_t n = ckpt_read_u64(is, what);
    if (n > (uint64_t(1) << 33)) throw FormatError("checkpoint: oversized buffer in " + what);
    std::vector<T> v(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(v.data()), static_cast<int64_t>(n * sizeof(T)));
    if (!is) throw FormatError("checkpoint: truncated buffer in " + what);
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(std::ostream& os, const Checkpoint<T>& c) {
    os.write("MMIC", 4);
    detail::ckpt_write_u32(os, kCheckpointVersion);
    detail::ckpt_write_str(os, c.config_text);
    detail::ckpt_write_u32(os, static_cast<uint32_t>(c.tensors.size()));
    for (const auto& [name, tensor] : c.tensors) {
        detail::ckpt_write_str(os, name);
        write_mmt(os, tensor);
    }
    os.put(c.has_optimizer ? '\1' : '\0');
    if (c.has_optimizer) {
        detail::ckpt_write_u64(os, static_cast<uint64_t>(c.optim.step));
        detail::ckpt_write_f64(os, c.optim.beta1);
        detail::ckpt_write_f64(os, c.optim.beta2);
        detail::ckpt_write_f64(os, c.optim.eps);
        detail::ckpt_write_f64(os, c.optim.base_lr);
        detail::ckpt_write_f64(os, c.optim.weight_decay);
        // moments follow the tensor table's order so loading is stable
        detail::ckpt_write_u32(os, static_cast<uint32_t>(c.tensors.size()));
        for (const auto& [name, tensor] : c.tensors) {
            (void)tensor;
            detail::ckpt_write_str(os, name);
            const auto mit = c.optim.m.find(name);
            const auto vit = c.optim.v.find(name);
            detail::ckpt_write_vec(os, mit == c.optim.m.end() ? std::vector<T>{} : mit->second);
            detail::ckpt_write_vec(os, vit == c.optim.v.end() ? std::vector<T>{} : vit->second);
        }
    }
    detail::ckpt_write_u32(os, static_cast<uint32_t>(c.best_epoch));
    detail::ckpt_write_f64(os, c.best_val_oa);
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(os, c);
    if (!os) throw FormatError("checkpoint: write failed for " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(std::istream& is, const std::string& what = "<stream>") {
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "MMIC")
        throw FormatError("checkpoint: bad magic in " + what);
    const uint32_t version = detail::ckpt_read_u32(is, what);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: version " + std::to_string(version) + " in " + what +
                          ", expected " + std::to_string(kCheckpointVersion));
    Checkpoint<T> c;
    c.config_text = detail::ckpt_read_str(is, what);
    const uint32_t count = detail::ckpt_read_u32(is, what);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = detail::ckpt_read_str(is, what);
        TensorData<T> tensor = read_mmt<T>(is, what + ":" + name);
        c.tensors.emplace_back(std::move(name), std::move(tensor));
    }
    const int flag = is.get();
    if (flag == EOF) throw FormatError("checkpoint: truncated optimizer flag in " + what);
    c.has_optimizer = flag != 0;
    if (c.has_optimizer) {
        c.optim.step = static_cast<int64_t>(detail::ckpt_read_u64(is, what));
        c.optim.beta1 = detail::ckpt_read_f64(is, what);
        c.optim.beta2 = detail::ckpt_read_f64(is, what);
        c.optim.eps = detail::ckpt_read_f64(is, what);
        c.optim.base_lr = detail::ckpt_read_f64(is, what);
        c.optim.weight_decay = detail::ckpt_read_f64(is, what);
        const uint32_t mcount = detail::ckpt_read_u32(is, what);
        for (uint32_t i = 0; i < mcount; ++i) {
            const std::string name = detail::ckpt_read_str(is, what);
            auto m = detail::ckpt_read_vec<T>(is, what);
            auto v = detail::ckpt_read_vec<T>(is, what);
            if (!m.empty()) c.optim.m[name] = std::move(m);
            if (!v.empty()) c.optim.v[name] = std::move(v);
        }
    }
    c.best_epoch = static_cast<int32_t>(detail::ckpt_read_u32(is, what));
    c.best_val_oa = detail::ckpt_read_f64(is, what);
    return c;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path);
    return load_checkpoint<T>(is, path);
}

// Snapshot of a live parameter store in registration order.
template <typename T>
Checkpoint<T> checkpoint_from_store(const ParamStore<T>& store, std::string config_text) {
    Checkpoint<T> c;
    c.config_text = std::move(config_text);
    for (const auto& name : store.names()) c.tensors.emplace_back(name, store.entry(name));
    return c;
}

// Writes checkpoint tensors into an existing store. Shape conflicts, tensors
// the store lacks, and store parameters the checkpoint lacks are all
// collected first so the error names every offender.
template <typename T>
void apply_checkpoint(const Checkpoint<T>& c, ParamStore<T>& store) {
    std::string trouble;
    auto complain = [&](const std::string& what) {
        if (!trouble.empty()) trouble += ", ";
        trouble += what;
    };
    for (const auto& [name, tensor] : c.tensors) {
        if (!store.has(name)) {
            complain("unexpected '" + name + "'");
        } else if (store.entry(name).shape != tensor.shape) {
            complain("'" + name + "' " + shape_str(tensor.shape) + " vs stored " +
                     shape_str(store.entry(name).shape));
        }
    }
    for (const auto& name : store.names()) {
        bool found = false;
        for (const auto& [cname, tensor] : c.tensors) {
            (void)tensor;
            found = found || cname == name;
        }
        if (!found) complain("missing '" + name + "'");
    }
    if (!trouble.empty())
        throw ShapeError("checkpoint: parameter mismatch against model: " + trouble);
    for (const auto& [name, tensor] : c.tensors) store.assign(name, tensor);
}

}  // namespace mmic
