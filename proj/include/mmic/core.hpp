#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmic {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Thrown when tensor shapes or extents do not line up.
struct ShapeError : Error {
    using Error::Error;
};
// Thrown on malformed files (.mmt, .ppm, checkpoints, manifests).
struct FormatError : Error {
    using Error::Error;
};
// Thrown on invalid configuration (rejected before any compute starts).
struct ConfigError : Error {
    using Error::Error;
};

// Row-major extents. Rank 0 means scalar (one element).
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

inline uint64_t splitmix64(uint64_t& s) {
    s += 0x9E3779B97F4A7C15ull;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Deterministic RNG. The raw stream is splitmix64 and every distribution
// transform is written out here, so identical seeds give identical values on
// any platform (std::normal_distribution and friends are not pinned down by
// the standard and may differ between library versions).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0xA5A5A5A55A5A5A5Aull) {
        // burn a few values so nearby seeds decorrelate quickly
        for (int i = 0; i < 4; ++i) splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller; no state carried between calls.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = next_double(), u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    // unbiased integer in [0, n)
    uint64_t next_below(uint64_t n) {
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t v = next_u64();
            if (v >= threshold) return v % n;
        }
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Fisher-Yates, fixed visit order for reproducibility.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream derived from this seed, e.g. one per epoch.
    Rng fork(uint64_t stream) const {
        uint64_t s = state_;
        uint64_t a = splitmix64(s);
        return Rng(a ^ (stream * 0xD6E8FEB86659FD93ull + 0x2545F4914F6CDD1Dull));
    }

private:
    uint64_t state_;
};

// Plain host-side tensor value: shape plus row-major storage. Graph leaves are
// created from these; datasets and checkpoints move them around.
template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> values;

    TensorData() = default;
    TensorData(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<int64_t>(values.size()) != numel(shape))
            throw ShapeError("TensorData: " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    explicit TensorData(Shape s) : shape(std::move(s)), values(numel(shape), T(0)) {}

    int64_t size() const { return static_cast<int64_t>(values.size()); }
};

// Worker cap for batch-level parallelism. MMIC_THREADS unset or 1 keeps
// everything on the calling thread.
inline int worker_threads() {
    const char* e = std::getenv("MMIC_THREADS");
    if (!e || !*e) return 1;
    char* end = nullptr;
    long v = std::strtol(e, &end, 10);
    if (end == e || v < 1) return 1;
    if (v > 256) v = 256;
    return static_cast<int>(v);
}

}  // namespace mmic
