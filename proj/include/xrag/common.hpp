#pragma once

#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace xrag {

// Error taxonomy: the CLI maps these onto distinct exit codes.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct prereq_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// splitmix64, used to derive per-purpose sub-seeds from the master seed so
// that adding a consumer never shifts another consumer's stream.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, const std::string& purpose) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(master ^ h);
}

inline std::mt19937_64 make_rng(uint64_t master, const std::string& purpose) {
    return std::mt19937_64(derive_seed(master, purpose));
}

// FNV-1a over raw bytes; checkpoint checksums and corpus hashes use this.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

// Thread cap from XRAG_LAB_THREADS; 0 or unset means hardware concurrency.
inline int max_threads() {
    if (const char* env = std::getenv("XRAG_LAB_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Deterministic parallel map over [0, n): work is partitioned into contiguous
// index blocks, one per worker, so results never depend on the thread count.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
    int nt = max_threads();
    if (n <= 0) return;
    if (nt <= 1 || n == 1) {
        fn(int64_t{0}, n);
        return;
    }
    nt = static_cast<int>(std::min<int64_t>(nt, n));
    int64_t chunk = (n + nt - 1) / nt;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        int64_t lo = t * chunk;
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace xrag
