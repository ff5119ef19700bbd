#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "xrag/common.hpp"

namespace xrag {

// Dense row-major tensor. The scalar type is a template parameter: float is
// the training default, double is the verification mode used by the gradient
// checks and the --f64 pipeline flag.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape), T{}) {}
    Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == static_cast<size_t>(count(shape)), "tensor: shape/data size mismatch");
    }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            require(d >= 0, "tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int64_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    template <typename Rng>
    static Tensor randn(std::vector<int64_t> s, Rng& rng, double stddev) {
        Tensor t(std::move(s));
        std::normal_distribution<double> d(0.0, stddev);
        for (auto& x : t.data) x = static_cast<T>(d(rng));
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    int64_t rows() const {
        require(ndim() == 2, "tensor: rows() needs 2-d");
        return shape[0];
    }
    int64_t cols() const {
        require(ndim() == 2, "tensor: cols() needs 2-d");
        return shape[1];
    }

    T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    T* row_ptr(int64_t i) { return data.data() + i * shape[1]; }
    const T* row_ptr(int64_t i) const { return data.data() + i * shape[1]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

// C += A * B with A [m x k], B [k x n]. i-k-j loop order keeps the inner loop
// contiguous over both B and C; accumulation order over k is fixed, which is
// what makes reruns and the incremental decode path bit-identical.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = a[kk];
            const T* b = B + kk * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A * B^T with A [m x k], B [n x k].
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* b = B + j * k;
            T acc{};
            for (int64_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
            c[j] += acc;
        }
    }
}

// C += A^T * B with A [k x m], B [k x n].
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t kk = 0; kk < k; ++kk) {
        const T* a = A + kk * m;
        const T* b = B + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            const T av = a[i];
            T* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be 2-d");
    require(a.cols() == b.rows(),
            "matmul: inner dimensions differ, " + a.shape_str() + " vs " + b.shape_str());
    Tensor<T> c({a.rows(), b.cols()});
    gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.rows(), a.cols(), b.cols());
    return c;
}

// Checksum of the float32 image of a tensor list; used for the frozen-weights
// contract, so it must not depend on the working precision.
template <typename T>
uint64_t checksum_f32(const std::vector<const Tensor<T>*>& tensors) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor<T>* t : tensors) {
        for (int64_t d : t->shape) h = fnv1a(&d, sizeof(d), h);
        for (T v : t->data) {
            float f = static_cast<float>(v);
            h = fnv1a(&f, sizeof(f), h);
        }
    }
    return h;
}

}  // namespace xrag
