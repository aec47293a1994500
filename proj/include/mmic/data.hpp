#pragma once

// Dataset ingestion (binary PPM directories, .mmt container pairs, synthetic
// generators), deterministic stratified splitting, and epoch-seeded batching
// with fixed normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "mmic/core.hpp"
#include "mmic/tensor_io.hpp"

namespace mmic {

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

struct DatasetIndex {
    std::vector<int> labels;              // class index per record
    std::vector<Split> split;             // empty until split_dataset runs
    int num_classes = 0;
    int height = 0, width = 0, channels = 0;
    std::vector<std::string> warnings;    // e.g. classes too small to stratify

    int size() const { return static_cast<int>(labels.size()); }
};

// Pixels stay in [0, 1]; normalization happens at batch assembly.
struct Dataset {
    TensorData<float> images;  // N x H x W x ch
    DatasetIndex index;
};

template <typename T>
struct Batch {
    TensorData<T> images;  // B x H x W x ch, normalized to [-1, 1]
    std::vector<int> labels;
};

// ---- PPM ------------------------------------------------------------------

namespace detail {

// Next whitespace-delimited token, with '#'-to-end-of-line comments allowed
// anywhere whitespace is.
inline std::string ppm_token(std::istream& is, const std::string& what) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("load_ppm: truncated header in " + what);
    return tok;
}

inline int ppm_int(std::istream& is, const std::string& what) {
    const std::string tok = ppm_token(is, what);
    for (char ch : tok)
        if (!std::isdigit(static_cast<unsigned char>(ch)))
            throw FormatError("load_ppm: bad header field '" + tok + "' in " + what);
    return std::stoi(tok);
}

}  // namespace detail

// Binary PPM ("P6", maxval 255) to H x W x 3 in [0, 1].
inline TensorData<float> load_ppm(std::istream& is, const std::string& what) {
    const std::string magic = detail::ppm_token(is, what);
    if (magic != "P6")
        throw FormatError("load_ppm: unsupported format '" + magic + "' in " + what +
                          " (binary P6 required)");
    const int w = detail::ppm_int(is, what);
    const int h = detail::ppm_int(is, what);
    const int maxval = detail::ppm_int(is, what);
    if (w < 1 || h < 1) throw FormatError("load_ppm: bad dimensions in " + what);
    if (maxval != 255)
        throw FormatError("load_ppm: unsupported maxval " + std::to_string(maxval) + " in " +
                          what);
    // the whitespace that terminated the maxval token is the payload separator
    const int64_t count = static_cast<int64_t>(h) * w * 3;
    std::vector<unsigned char> raw(static_cast<size_t>(count));
    is.read(reinterpret_cast<char*>(raw.data()), count);
    if (is.gcount() != count) throw FormatError("load_ppm: truncated payload in " + what);
    TensorData<float> t(Shape{h, w, 3});
    for (int64_t i = 0; i < count; ++i) t.values[static_cast<size_t>(i)] = raw[i] / 255.0f;
    return t;
}

inline TensorData<float> load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("load_ppm: cannot open " + path);
    return load_ppm(is, path);
}

// Quantizes [0, 1] to bytes with round-to-nearest. Test and export helper.
inline void write_ppm(const std::string& path, const TensorData<float>& t) {
    if (t.shape.size() != 3 || t.shape[2] != 3)
        throw ShapeError("write_ppm: image must be HxWx3, got " + shape_str(t.shape));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("write_ppm: cannot open " + path);
    os << "P6\n" << t.shape[1] << " " << t.shape[0] << "\n255\n";
    for (float v : t.values) {
        const float c = std::min(1.0f, std::max(0.0f, v));
        const unsigned char b = static_cast<unsigned char>(std::lround(c * 255.0f));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw FormatError("write_ppm: write failed for " + path);
}

// ---- manifests and containers ---------------------------------------------

// Lines of "relative/path,label_index". Images are loaded relative to dir and
// must agree on geometry.
inline Dataset load_ppm_dataset(const std::string& dir, const std::string& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw FormatError("manifest: cannot open " + manifest_path);
    std::vector<std::string> paths;
    std::vector<int> labels;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 == line.size())
            throw FormatError("manifest: line " + std::to_string(lineno) +
                              " is not 'path,label': " + line);
        int label = 0;
        try {
            size_t used = 0;
            label = std::stoi(line.substr(comma + 1), &used);
            if (used != line.size() - comma - 1) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw FormatError("manifest: line " + std::to_string(lineno) + " has a bad label: " +
                              line);
        }
        if (label < 0)
            throw FormatError("manifest: line " + std::to_string(lineno) + " has negative label");
        paths.push_back(line.substr(0, comma));
        labels.push_back(label);
    }
    if (paths.empty()) throw FormatError("manifest: empty dataset in " + manifest_path);

    Dataset ds;
    for (size_t i = 0; i < paths.size(); ++i) {
        auto img = load_ppm(dir + "/" + paths[i]);
        if (i == 0) {
            ds.index.height = img.shape[0];
            ds.index.width = img.shape[1];
            ds.index.channels = img.shape[2];
            ds.images = TensorData<float>(
                Shape{static_cast<int>(paths.size()), img.shape[0], img.shape[1], img.shape[2]});
        } else if (img.shape[0] != ds.index.height || img.shape[1] != ds.index.width) {
            throw FormatError("manifest: " + paths[i] + " geometry " + shape_str(img.shape) +
                              " differs from first image");
        }
        std::copy(img.values.begin(), img.values.end(),
                  ds.images.values.begin() + static_cast<int64_t>(i) * img.size());
    }
    ds.index.labels = std::move(labels);
    ds.index.num_classes = *std::max_element(ds.index.labels.begin(), ds.index.labels.end()) + 1;
    return ds;
}

// Container pair <base>.images.mmt (N x S x S x ch, [0, 1]) and
// <base>.labels.mmt (N, integral class indices).
inline Dataset load_raw_dataset(const std::string& base) {
    auto images = read_mmt<float>(base + ".images.mmt");
    auto labels_t = read_mmt<float>(base + ".labels.mmt");
    if (images.shape.size() != 4)
        throw FormatError("dataset: images must be N x H x W x ch, got " +
                          shape_str(images.shape));
    if (labels_t.shape.size() != 1)
        throw FormatError("dataset: labels must be rank 1, got " + shape_str(labels_t.shape));
    const int n = images.shape[0];
    if (n == 0) throw FormatError("dataset: empty dataset in " + base);
    if (labels_t.shape[0] != n)
        throw FormatError("dataset: " + std::to_string(n) + " images vs " +
                          std::to_string(labels_t.shape[0]) + " labels in " + base);
    Dataset ds;
    ds.index.height = images.shape[1];
    ds.index.width = images.shape[2];
    ds.index.channels = images.shape[3];
    ds.index.labels.resize(static_cast<size_t>(n));
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        const float v = labels_t.values[static_cast<size_t>(i)];
        const int lab = static_cast<int>(std::lround(v));
        if (std::abs(v - lab) > 1e-6f || lab < 0)
            throw FormatError("dataset: label " + std::to_string(v) + " at record " +
                              std::to_string(i) + " is not a class index");
        ds.index.labels[static_cast<size_t>(i)] = lab;
        max_label = std::max(max_label, lab);
    }
    ds.index.num_classes = max_label + 1;
    ds.images = std::move(images);
    return ds;
}

inline void save_raw_dataset(const std::string& base, const Dataset& ds) {
    write_mmt(base + ".images.mmt", ds.images);
    TensorData<float> labels(Shape{ds.index.size()});
    for (int i = 0; i < ds.index.size(); ++i)
        labels.values[static_cast<size_t>(i)] = static_cast<float>(ds.index.labels[i]);
    write_mmt(base + ".labels.mmt", labels);
}

// ---- splitting ------------------------------------------------------------

// Stratified split: per class, shuffle then allocate by largest remainder so
// every bucket is within one record of the exact ratio. Ties in remainder go
// to the earlier split (train, then val, then test).
inline DatasetIndex split_dataset(const DatasetIndex& index, std::array<int, 3> ratio,
                                  uint64_t seed) {
    for (int r : ratio)
        if (r <= 0) throw ConfigError("split: ratio components must be positive");
    DatasetIndex out = index;
    out.split.assign(static_cast<size_t>(index.size()), Split::train);
    const int R = ratio[0] + ratio[1] + ratio[2];
    Rng root(seed);
    for (int c = 0; c < index.num_classes; ++c) {
        std::vector<int> ids;
        for (int i = 0; i < index.size(); ++i)
            if (index.labels[static_cast<size_t>(i)] == c) ids.push_back(i);
        if (ids.empty()) continue;
        if (ids.size() < 3)
            out.warnings.push_back("class " + std::to_string(c) + " has only " +
                                   std::to_string(ids.size()) +
                                   " records; split is best-effort");
        Rng rng = root.fork(static_cast<uint64_t>(c));
        rng.shuffle(ids);

        const int n = static_cast<int>(ids.size());
        std::array<int, 3> take{};
        std::array<double, 3> frac{};
        int assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double quota = static_cast<double>(n) * ratio[static_cast<size_t>(s)] / R;
            take[static_cast<size_t>(s)] = static_cast<int>(quota);
            frac[static_cast<size_t>(s)] = quota - take[static_cast<size_t>(s)];
            assigned += take[static_cast<size_t>(s)];
        }
        while (assigned < n) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[static_cast<size_t>(s)] > frac[static_cast<size_t>(best)]) best = s;
            frac[static_cast<size_t>(best)] = -1.0;
            ++take[static_cast<size_t>(best)];
            ++assigned;
        }
        int pos = 0;
        for (int s = 0; s < 3; ++s)
            for (int k = 0; k < take[static_cast<size_t>(s)]; ++k)
                out.split[static_cast<size_t>(ids[static_cast<size_t>(pos++)])] =
                    static_cast<Split>(s);
    }
    return out;
}

inline std::array<int, 3> split_counts(const DatasetIndex& index) {
    std::array<int, 3> c{};
    for (Split s : index.split) ++c[static_cast<size_t>(s)];
    return c;
}

// ---- batching and normalization -------------------------------------------

inline std::vector<int> split_members(const DatasetIndex& index, Split split) {
    std::vector<int> ids;
    for (int i = 0; i < index.size(); ++i)
        if (index.split[static_cast<size_t>(i)] == split) ids.push_back(i);
    return ids;
}

// Record ids per batch. Train order reshuffles per epoch off a forked stream;
// val and test stay in record order.
inline std::vector<std::vector<int>> make_batches(const DatasetIndex& index, Split split,
                                                  int batch_size, uint64_t seed, int epoch) {
    if (batch_size < 1) throw ConfigError("batching: batch_size must be >= 1");
    std::vector<int> ids = split_members(index, split);
    check(!ids.empty(), std::string("batching: ") + split_name(split) + " split is empty");
    if (split == Split::train) {
        Rng rng = Rng(seed).fork(static_cast<uint64_t>(epoch));
        rng.shuffle(ids);
    }
    std::vector<std::vector<int>> batches;
    for (size_t at = 0; at < ids.size(); at += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(ids.size(), at + static_cast<size_t>(batch_size));
        batches.emplace_back(ids.begin() + static_cast<int64_t>(at),
                             ids.begin() + static_cast<int64_t>(end));
    }
    return batches;
}

// (x - 0.5) / 0.5, the fixed input normalization.
template <typename T>
inline T normalize_value(T v) {
    return (v - T(0.5)) / T(0.5);
}

template <typename T>
TensorData<T> normalize(const TensorData<T>& x) {
    TensorData<T> out(x.shape);
    for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = normalize_value(x.values[i]);
    return out;
}

template <typename T>
Batch<T> materialize_batch(const Dataset& ds, const std::vector<int>& ids) {
    const int64_t per = static_cast<int64_t>(ds.index.height) * ds.index.width *
                        ds.index.channels;
    Batch<T> b;
    b.images = TensorData<T>(Shape{static_cast<int>(ids.size()), ds.index.height,
                                   ds.index.width, ds.index.channels});
    for (size_t k = 0; k < ids.size(); ++k) {
        const float* src = ds.images.values.data() + per * ids[k];
        T* dst = b.images.values.data() + per * static_cast<int64_t>(k);
        for (int64_t i = 0; i < per; ++i)
            dst[i] = normalize_value(static_cast<T>(src[i]));
        b.labels.push_back(ds.index.labels[static_cast<size_t>(ids[k])]);
    }
    return b;
}

// Gathers a single record as H x W x ch in [-1, 1].
template <typename T>
TensorData<T> record_image(const Dataset& ds, int id) {
    const int64_t per = static_cast<int64_t>(ds.index.height) * ds.index.width *
                        ds.index.channels;
    TensorData<T> t(Shape{ds.index.height, ds.index.width, ds.index.channels});
    const float* src = ds.images.values.data() + per * id;
    for (int64_t i = 0; i < per; ++i) t.values[static_cast<size_t>(i)] =
        normalize_value(static_cast<T>(src[i]));
    return t;
}

// ---- synthetic data -------------------------------------------------------

// Two-class oriented-texture set: sinusoidal stripes running horizontally
// (class 0) or vertically (class 1), with random frequency, phase, and pixel
// noise. Grayscale, balanced, deterministic per seed.
inline Dataset make_synthetic_stripes(int n, int size, uint64_t seed) {
    check(n >= 2 && n % 2 == 0, "synthetic: need an even record count >= 2");
    check(size >= 4, "synthetic: size must be >= 4");
    Dataset ds;
    ds.index.height = size;
    ds.index.width = size;
    ds.index.channels = 1;
    ds.index.num_classes = 2;
    ds.images = TensorData<float>(Shape{n, size, size, 1});
    Rng rng(seed);
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < n; ++i) {
        const int label = i % 2;
        ds.index.labels.push_back(label);
        const double freq = rng.uniform(2.0, 5.0);
        const double phase = rng.uniform(0.0, 2.0 * pi);
        float* img = ds.images.values.data() +
                     static_cast<int64_t>(i) * size * size;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const int along = label == 0 ? y : x;
                double v = 0.5 + 0.35 * std::sin(2.0 * pi * freq * along / size + phase);
                v += rng.uniform(-0.05, 0.05);
                img[y * size + x] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        }
    }
    return ds;
}

}  // namespace mmic
