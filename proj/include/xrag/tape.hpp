#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xrag/tensor.hpp"

namespace xrag {

// Reverse-mode tape. Every op records its output tensor plus a closure that
// scatters the output gradient back to its inputs. Node creation order is a
// topological order of the forward graph, so backward() is a single reverse
// sweep. A tape is single-use: build forward, call backward once, read grads.
template <typename T>
class Tape {
  public:
    using Id = int32_t;

    explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

    Id leaf(Tensor<T> value, bool requires_grad, std::string name = {}) {
        value.requires_grad = requires_grad;
        return push(std::move(value), requires_grad, nullptr, std::move(name));
    }

    Id constant(Tensor<T> value) { return leaf(std::move(value), false); }

    const Tensor<T>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of backward()'s loss w.r.t. node `id`; zeros if untouched.
    const Tensor<T>& grad(Id id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        require(n.requires_grad, "tape: node does not track gradients");
        return n.grad;
    }

    bool tracks_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // ---- arithmetic ----

    Id matmul(Id a, Id b) {
        Tensor<T> out = matmul_value(value(a), value(b));
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            const Tensor<T>& A = value_of(a);
            const Tensor<T>& B = value_of(b);
            if (needs(a))
                gemm_nt(n.grad.data.data(), B.data.data(), grad_of(a).data.data(), A.rows(), B.cols(),
                        A.cols());
            if (needs(b))
                gemm_tn(A.data.data(), n.grad.data.data(), grad_of(b).data.data(), B.rows(), A.rows(),
                        B.cols());
        });
    }

    Id transpose(Id a) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2, "transpose: 2-d only");
        Tensor<T> out({A.cols(), A.rows()});
        for (int64_t i = 0; i < A.rows(); ++i)
            for (int64_t j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < da.rows(); ++i)
                for (int64_t j = 0; j < da.cols(); ++j) da.at(i, j) += n.grad.at(j, i);
        });
    }

    Id add(Id a, Id b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        require(A.same_shape(B), "add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        Tensor<T> out = A;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            if (needs(a)) axpy(grad_of(a), n.grad, T{1});
            if (needs(b)) axpy(grad_of(b), n.grad, T{1});
        });
    }

    // x [m x n] + bias [n], broadcast over rows.
    Id add_bias(Id a, Id bias) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(bias);
        require(A.ndim() == 2 && B.ndim() == 1 && B.shape[0] == A.cols(), "add_bias: want [m x n] + [n]");
        Tensor<T> out = A;
        for (int64_t i = 0; i < A.rows(); ++i)
            for (int64_t j = 0; j < A.cols(); ++j) out.at(i, j) += B.data[static_cast<size_t>(j)];
        return push(std::move(out), needs(a) || needs(bias), [this, a, bias](const Node& n) {
            if (needs(a)) axpy(grad_of(a), n.grad, T{1});
            if (needs(bias)) {
                Tensor<T>& db = grad_of(bias);
                for (int64_t i = 0; i < n.grad.rows(); ++i)
                    for (int64_t j = 0; j < n.grad.cols(); ++j)
                        db.data[static_cast<size_t>(j)] += n.grad.at(i, j);
            }
        });
    }

    Id mul(Id a, Id b) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& B = value(b);
        require(A.same_shape(B), "mul: shape mismatch");
        Tensor<T> out = A;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Node& n) {
            const Tensor<T>& A2 = value_of(a);
            const Tensor<T>& B2 = value_of(b);
            if (needs(a)) {
                Tensor<T>& da = grad_of(a);
                for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += n.grad.data[i] * B2.data[i];
            }
            if (needs(b)) {
                Tensor<T>& db = grad_of(b);
                for (size_t i = 0; i < db.data.size(); ++i) db.data[i] += n.grad.data[i] * A2.data[i];
            }
        });
    }

    Id scale(Id a, T c) {
        Tensor<T> out = value(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), needs(a), [this, a, c](const Node& n) {
            if (needs(a)) axpy(grad_of(a), n.grad, c);
        });
    }

    Id sum(Id a) {
        T acc{};
        for (T v : value(a).data) acc += v;
        return push(Tensor<T>::scalar(acc), needs(a), [this, a](const Node& n) {
            if (needs(a)) {
                Tensor<T>& da = grad_of(a);
                for (auto& v : da.data) v += n.grad.data[0];
            }
        });
    }

    Id mean_rows(Id a) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2 && A.rows() > 0, "mean_rows: non-empty 2-d");
        Tensor<T> out({1, A.cols()});
        for (int64_t i = 0; i < A.rows(); ++i)
            for (int64_t j = 0; j < A.cols(); ++j) out.at(0, j) += A.at(i, j);
        const T inv = T{1} / static_cast<T>(A.rows());
        for (auto& v : out.data) v *= inv;
        return push(std::move(out), needs(a), [this, a, inv](const Node& n) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < da.rows(); ++i)
                for (int64_t j = 0; j < da.cols(); ++j) da.at(i, j) += n.grad.at(0, j) * inv;
        });
    }

    // ---- nonlinearities / normalization ----

    Id gelu(Id a) {
        const Tensor<T>& A = value(a);
        Tensor<T> out = A;
        for (auto& v : out.data) {
            double x = static_cast<double>(v);
            v = static_cast<T>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
        }
        return push(std::move(out), needs(a), [this, a](const Node& n) {
            if (!needs(a)) return;
            const Tensor<T>& A2 = value_of(a);
            Tensor<T>& da = grad_of(a);
            for (size_t i = 0; i < da.data.size(); ++i) {
                double x = static_cast<double>(A2.data[i]);
                double d = 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
                           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
                da.data[i] += n.grad.data[i] * static_cast<T>(d);
            }
        });
    }

    Id layer_norm(Id a, Id gain, Id bias, T eps = static_cast<T>(1e-5)) {
        const Tensor<T>& A = value(a);
        const Tensor<T>& G = value(gain);
        const Tensor<T>& B = value(bias);
        require(A.ndim() == 2, "layer_norm: 2-d input");
        require(G.ndim() == 1 && G.shape[0] == A.cols() && B.ndim() == 1 && B.shape[0] == A.cols(),
                "layer_norm: gain/bias must be [n]");
        const int64_t m = A.rows(), n = A.cols();
        Tensor<T> out({m, n});
        Tensor<T> xhat({m, n});
        std::vector<T> inv_std(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            const T* x = A.row_ptr(i);
            T mu{};
            for (int64_t j = 0; j < n; ++j) mu += x[j];
            mu /= static_cast<T>(n);
            T var{};
            for (int64_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
            var /= static_cast<T>(n);
            const T is = T{1} / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(i)] = is;
            for (int64_t j = 0; j < n; ++j) {
                T xh = (x[j] - mu) * is;
                xhat.at(i, j) = xh;
                out.at(i, j) = xh * G.data[static_cast<size_t>(j)] + B.data[static_cast<size_t>(j)];
            }
        }
        auto xhat_s = std::make_shared<Tensor<T>>(std::move(xhat));
        auto istd_s = std::make_shared<std::vector<T>>(std::move(inv_std));
        return push(std::move(out), needs(a) || needs(gain) || needs(bias),
                    [this, a, gain, bias, xhat_s, istd_s](const Node& nd) {
                        const int64_t m = nd.grad.rows(), n = nd.grad.cols();
                        const Tensor<T>& G2 = value_of(gain);
                        if (needs(gain)) {
                            Tensor<T>& dg = grad_of(gain);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                    dg.data[static_cast<size_t>(j)] += nd.grad.at(i, j) * xhat_s->at(i, j);
                        }
                        if (needs(bias)) {
                            Tensor<T>& db = grad_of(bias);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                    db.data[static_cast<size_t>(j)] += nd.grad.at(i, j);
                        }
                        if (needs(a)) {
                            Tensor<T>& da = grad_of(a);
                            for (int64_t i = 0; i < m; ++i) {
                                T sum_g{}, sum_gx{};
                                for (int64_t j = 0; j < n; ++j) {
                                    T gy = nd.grad.at(i, j) * G2.data[static_cast<size_t>(j)];
                                    sum_g += gy;
                                    sum_gx += gy * xhat_s->at(i, j);
                                }
                                const T inv_n = T{1} / static_cast<T>(n);
                                const T is = (*istd_s)[static_cast<size_t>(i)];
                                for (int64_t j = 0; j < n; ++j) {
                                    T gy = nd.grad.at(i, j) * G2.data[static_cast<size_t>(j)];
                                    da.at(i, j) +=
                                        is * (gy - inv_n * sum_g - xhat_s->at(i, j) * inv_n * sum_gx);
                                }
                            }
                        }
                    });
    }

    Id l2_normalize_rows(Id a, T eps = static_cast<T>(1e-12)) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2, "l2_normalize_rows: 2-d input");
        const int64_t m = A.rows(), n = A.cols();
        Tensor<T> out({m, n});
        std::vector<T> inv_norm(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            T sq{};
            for (int64_t j = 0; j < n; ++j) sq += A.at(i, j) * A.at(i, j);
            const T inv = T{1} / std::sqrt(sq + eps);
            inv_norm[static_cast<size_t>(i)] = inv;
            for (int64_t j = 0; j < n; ++j) out.at(i, j) = A.at(i, j) * inv;
        }
        auto inv_s = std::make_shared<std::vector<T>>(std::move(inv_norm));
        return push(std::move(out), needs(a), [this, a, inv_s](const Node& nd) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            const Tensor<T>& Y = nd.value;
            for (int64_t i = 0; i < Y.rows(); ++i) {
                T dot{};
                for (int64_t j = 0; j < Y.cols(); ++j) dot += nd.grad.at(i, j) * Y.at(i, j);
                const T inv = (*inv_s)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < Y.cols(); ++j)
                    da.at(i, j) += (nd.grad.at(i, j) - Y.at(i, j) * dot) * inv;
            }
        });
    }

    // Row-wise tempered softmax with max-subtraction.
    Id softmax_rows(Id a, T temperature = T{1}) {
        require(temperature > T{0}, "softmax_rows: temperature must be positive");
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2, "softmax_rows: 2-d input");
        Tensor<T> out({A.rows(), A.cols()});
        for (int64_t i = 0; i < A.rows(); ++i)
            softmax_fill(A.row_ptr(i), out.row_ptr(i), A.cols(), temperature);
        return push(std::move(out), needs(a), [this, a, temperature](const Node& nd) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < nd.value.rows(); ++i) {
                T dot{};
                for (int64_t j = 0; j < nd.value.cols(); ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
                for (int64_t j = 0; j < nd.value.cols(); ++j)
                    da.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot) / temperature;
            }
        });
    }

    // Softmax of a square score matrix restricted to j <= i; entries above the
    // diagonal come out exactly zero, which is what makes causality exact
    // rather than approximate-by-large-negative-mask.
    Id causal_softmax(Id a) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2 && A.rows() == A.cols(), "causal_softmax: square matrix");
        const int64_t n = A.rows();
        Tensor<T> out({n, n});
        for (int64_t i = 0; i < n; ++i) softmax_fill(A.row_ptr(i), out.row_ptr(i), i + 1, T{1});
        return push(std::move(out), needs(a), [this, a](const Node& nd) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < nd.value.rows(); ++i) {
                T dot{};
                for (int64_t j = 0; j <= i; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
                for (int64_t j = 0; j <= i; ++j)
                    da.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot);
            }
        });
    }

    // ---- losses ----

    // Mean negative log-likelihood over masked positions.
    Id cross_entropy(Id logits, const std::vector<int>& targets, const std::vector<bool>& mask) {
        const Tensor<T>& L = value(logits);
        require(L.ndim() == 2, "cross_entropy: logits must be [T x V]");
        require(static_cast<int64_t>(targets.size()) == L.rows() &&
                    static_cast<int64_t>(mask.size()) == L.rows(),
                "cross_entropy: targets/mask length mismatch");
        int64_t n_masked = 0;
        for (size_t i = 0; i < mask.size(); ++i) {
            if (!mask[i]) continue;
            ++n_masked;
            require(targets[i] >= 0 && targets[i] < L.cols(), "cross_entropy: target id out of range");
        }
        require(n_masked > 0, "cross_entropy: empty mask");
        double loss = 0.0;
        for (int64_t i = 0; i < L.rows(); ++i) {
            if (!mask[static_cast<size_t>(i)]) continue;
            loss -= log_softmax_at(L.row_ptr(i), L.cols(), targets[static_cast<size_t>(i)]);
        }
        loss /= static_cast<double>(n_masked);
        auto targets_s = std::make_shared<std::vector<int>>(targets);
        auto mask_s = std::make_shared<std::vector<bool>>(mask);
        return push(Tensor<T>::scalar(static_cast<T>(loss)), needs(logits),
                    [this, logits, targets_s, mask_s, n_masked](const Node& nd) {
                        if (!needs(logits)) return;
                        const Tensor<T>& L2 = value_of(logits);
                        Tensor<T>& dl = grad_of(logits);
                        const T g = nd.grad.data[0] / static_cast<T>(n_masked);
                        std::vector<T> p(static_cast<size_t>(L2.cols()));
                        for (int64_t i = 0; i < L2.rows(); ++i) {
                            if (!(*mask_s)[static_cast<size_t>(i)]) continue;
                            softmax_fill(L2.row_ptr(i), p.data(), L2.cols(), T{1});
                            T* d = dl.row_ptr(i);
                            for (int64_t j = 0; j < L2.cols(); ++j) d[j] += g * p[static_cast<size_t>(j)];
                            d[(*targets_s)[static_cast<size_t>(i)]] -= g;
                        }
                    });
    }

    // Forward KL(P || Q) with P = softmax(teacher/temp), Q = softmax(student/temp),
    // averaged over masked rows. The teacher branch is detached: no gradient
    // flows to it regardless of its requires_grad flag.
    Id kl_divergence(Id teacher, Id student, const std::vector<bool>& mask, T temperature = T{1}) {
        require(temperature > T{0}, "kl_divergence: temperature must be positive");
        const Tensor<T>& P = value(teacher);
        const Tensor<T>& Q = value(student);
        require(P.same_shape(Q), "kl_divergence: shape mismatch");
        require(P.ndim() == 2 && static_cast<int64_t>(mask.size()) == P.rows(),
                "kl_divergence: mask length mismatch");
        int64_t n_masked = 0;
        for (bool b : mask) n_masked += b ? 1 : 0;
        require(n_masked > 0, "kl_divergence: empty mask");
        const int64_t V = P.cols();
        double loss = 0.0;
        std::vector<double> lp(static_cast<size_t>(V)), lq(static_cast<size_t>(V));
        for (int64_t i = 0; i < P.rows(); ++i) {
            if (!mask[static_cast<size_t>(i)]) continue;
            log_softmax_fill(P.row_ptr(i), lp.data(), V, temperature);
            log_softmax_fill(Q.row_ptr(i), lq.data(), V, temperature);
            double row = 0.0;
            for (int64_t j = 0; j < V; ++j) {
                double pj = std::exp(lp[static_cast<size_t>(j)]);
                row += pj * (lp[static_cast<size_t>(j)] - lq[static_cast<size_t>(j)]);
            }
            loss += row;
        }
        loss /= static_cast<double>(n_masked);
        // D_KL is non-negative up to rounding; clamp the rounding dust.
        if (loss < 0.0 && loss > -1e-12) loss = 0.0;
        auto mask_s = std::make_shared<std::vector<bool>>(mask);
        return push(Tensor<T>::scalar(static_cast<T>(loss)), needs(student),
                    [this, teacher, student, mask_s, n_masked, temperature](const Node& nd) {
                        if (!needs(student)) return;
                        const Tensor<T>& P2 = value_of(teacher);
                        const Tensor<T>& Q2 = value_of(student);
                        Tensor<T>& ds = grad_of(student);
                        const int64_t V = P2.cols();
                        const T g = nd.grad.data[0] / (static_cast<T>(n_masked) * temperature);
                        std::vector<T> p(static_cast<size_t>(V)), q(static_cast<size_t>(V));
                        for (int64_t i = 0; i < P2.rows(); ++i) {
                            if (!(*mask_s)[static_cast<size_t>(i)]) continue;
                            softmax_fill(P2.row_ptr(i), p.data(), V, temperature);
                            softmax_fill(Q2.row_ptr(i), q.data(), V, temperature);
                            T* d = ds.row_ptr(i);
                            for (int64_t j = 0; j < V; ++j)
                                d[j] += g * (q[static_cast<size_t>(j)] - p[static_cast<size_t>(j)]);
                        }
                    });
    }

    // ---- gather / scatter / layout ----

    // Embedding lookup: out row r = table row ids[r].
    Id embedding(Id table, const std::vector<int>& ids) {
        const Tensor<T>& W = value(table);
        require(W.ndim() == 2, "embedding: table must be 2-d");
        for (int id : ids) require(id >= 0 && id < W.rows(), "embedding: id out of range");
        Tensor<T> out({static_cast<int64_t>(ids.size()), W.cols()});
        for (size_t r = 0; r < ids.size(); ++r)
            std::copy(W.row_ptr(ids[r]), W.row_ptr(ids[r]) + W.cols(), out.row_ptr(static_cast<int64_t>(r)));
        auto ids_s = std::make_shared<std::vector<int>>(ids);
        return push(std::move(out), needs(table), [this, table, ids_s](const Node& nd) {
            if (!needs(table)) return;
            Tensor<T>& dw = grad_of(table);
            for (size_t r = 0; r < ids_s->size(); ++r) {
                T* dst = dw.row_ptr((*ids_s)[r]);
                const T* src = nd.grad.row_ptr(static_cast<int64_t>(r));
                for (int64_t j = 0; j < nd.grad.cols(); ++j) dst[j] += src[j];
            }
        });
    }

    // Copy of x with row r replaced by the 1-row tensor v.
    Id set_row(Id x, int64_t r, Id v) {
        const Tensor<T>& X = value(x);
        const Tensor<T>& V = value(v);
        require(X.ndim() == 2 && r >= 0 && r < X.rows(), "set_row: row out of range");
        require(V.numel() == X.cols(), "set_row: width mismatch");
        Tensor<T> out = X;
        std::copy(V.data.begin(), V.data.end(), out.row_ptr(r));
        return push(std::move(out), needs(x) || needs(v), [this, x, v, r](const Node& nd) {
            if (needs(x)) {
                Tensor<T>& dx = grad_of(x);
                for (int64_t i = 0; i < nd.grad.rows(); ++i) {
                    if (i == r) continue;
                    const T* src = nd.grad.row_ptr(i);
                    T* dst = dx.row_ptr(i);
                    for (int64_t j = 0; j < nd.grad.cols(); ++j) dst[j] += src[j];
                }
            }
            if (needs(v)) {
                Tensor<T>& dv = grad_of(v);
                const T* src = nd.grad.row_ptr(r);
                for (int64_t j = 0; j < nd.grad.cols(); ++j) dv.data[static_cast<size_t>(j)] += src[j];
            }
        });
    }

    Id slice_rows(Id a, int64_t r0, int64_t r1) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= A.rows(), "slice_rows: bad range");
        Tensor<T> out({r1 - r0, A.cols()});
        std::copy(A.row_ptr(r0), A.row_ptr(r0) + (r1 - r0) * A.cols(), out.data.data());
        return push(std::move(out), needs(a), [this, a, r0](const Node& nd) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < nd.grad.rows(); ++i) {
                T* dst = da.row_ptr(r0 + i);
                const T* src = nd.grad.row_ptr(i);
                for (int64_t j = 0; j < nd.grad.cols(); ++j) dst[j] += src[j];
            }
        });
    }

    Id slice_cols(Id a, int64_t c0, int64_t c1) {
        const Tensor<T>& A = value(a);
        require(A.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= A.cols(), "slice_cols: bad range");
        Tensor<T> out({A.rows(), c1 - c0});
        for (int64_t i = 0; i < A.rows(); ++i)
            std::copy(A.row_ptr(i) + c0, A.row_ptr(i) + c1, out.row_ptr(i));
        return push(std::move(out), needs(a), [this, a, c0](const Node& nd) {
            if (!needs(a)) return;
            Tensor<T>& da = grad_of(a);
            for (int64_t i = 0; i < nd.grad.rows(); ++i)
                for (int64_t j = 0; j < nd.grad.cols(); ++j) da.at(i, c0 + j) += nd.grad.at(i, j);
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        require(!parts.empty(), "concat_cols: empty");
        const int64_t m = value(parts[0]).rows();
        int64_t n = 0;
        bool any = false;
        for (Id p : parts) {
            require(value(p).ndim() == 2 && value(p).rows() == m, "concat_cols: row mismatch");
            n += value(p).cols();
            any = any || needs(p);
        }
        Tensor<T> out({m, n});
        int64_t off = 0;
        for (Id p : parts) {
            const Tensor<T>& P = value(p);
            for (int64_t i = 0; i < m; ++i)
                std::copy(P.row_ptr(i), P.row_ptr(i) + P.cols(), out.row_ptr(i) + off);
            off += P.cols();
        }
        auto parts_s = std::make_shared<std::vector<Id>>(parts);
        return push(std::move(out), any, [this, parts_s](const Node& nd) {
            int64_t off2 = 0;
            for (Id p : *parts_s) {
                const int64_t w = value_of(p).cols();
                if (needs(p)) {
                    Tensor<T>& dp = grad_of(p);
                    for (int64_t i = 0; i < nd.grad.rows(); ++i)
                        for (int64_t j = 0; j < w; ++j) dp.at(i, j) += nd.grad.at(i, off2 + j);
                }
                off2 += w;
            }
        });
    }

    Id concat_rows(const std::vector<Id>& parts) {
        require(!parts.empty(), "concat_rows: empty");
        const int64_t n = value(parts[0]).cols();
        int64_t m = 0;
        bool any = false;
        for (Id p : parts) {
            require(value(p).ndim() == 2 && value(p).cols() == n, "concat_rows: col mismatch");
            m += value(p).rows();
            any = any || needs(p);
        }
        Tensor<T> out({m, n});
        int64_t off = 0;
        for (Id p : parts) {
            const Tensor<T>& P = value(p);
            std::copy(P.data.begin(), P.data.end(), out.row_ptr(off));
            off += P.rows();
        }
        auto parts_s = std::make_shared<std::vector<Id>>(parts);
        return push(std::move(out), any, [this, parts_s](const Node& nd) {
            int64_t off2 = 0;
            for (Id p : *parts_s) {
                const int64_t h = value_of(p).rows();
                if (needs(p)) {
                    Tensor<T>& dp = grad_of(p);
                    for (int64_t i = 0; i < h; ++i)
                        for (int64_t j = 0; j < nd.grad.cols(); ++j)
                            dp.at(i, j) += nd.grad.at(off2 + i, j);
                }
                off2 += h;
            }
        });
    }

    // ---- backward ----

    // Reverse sweep from a scalar loss. Populates gradients for every
    // grad-tracking node reachable from the loss; frozen leaves (created with
    // requires_grad = false) are structurally excluded.
    void backward(Id loss) {
        require(!consumed_, "tape: backward called twice on a consumed graph");
        consumed_ = true;
        Node& ln = nodes_[static_cast<size_t>(loss)];
        require(ln.value.numel() == 1, "tape: backward needs a scalar loss");
        require(ln.requires_grad, "tape: loss does not depend on any trainable input");
        ln.grad.data[0] = T{1};
        for (int32_t id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.requires_grad && n.backprop) n.backprop(n);
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void(const Node&)> backprop;
        std::string name;
    };

    bool needs(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    const Tensor<T>& value_of(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<T>& grad_of(Id id) { return nodes_[static_cast<size_t>(id)].grad; }

    static void axpy(Tensor<T>& dst, const Tensor<T>& src, T c) {
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += c * src.data[i];
    }

    static void softmax_fill(const T* x, T* out, int64_t n, T temperature) {
        T mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        T denom{};
        for (int64_t j = 0; j < n; ++j) {
            out[j] = std::exp((x[j] - mx) / temperature);
            denom += out[j];
        }
        for (int64_t j = 0; j < n; ++j) out[j] /= denom;
    }

    static void log_softmax_fill(const T* x, double* out, int64_t n, T temperature) {
        double mx = static_cast<double>(x[0]) / temperature;
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]) / temperature);
        double denom = 0.0;
        for (int64_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(x[j]) / temperature - mx);
        const double lse = mx + std::log(denom);
        for (int64_t j = 0; j < n; ++j) out[j] = static_cast<double>(x[j]) / temperature - lse;
    }

    static double log_softmax_at(const T* x, int64_t n, int64_t idx) {
        double mx = static_cast<double>(x[0]);
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]));
        double denom = 0.0;
        for (int64_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(x[j]) - mx);
        return static_cast<double>(x[idx]) - mx - std::log(denom);
    }

    Id push(Tensor<T> value, bool requires_grad, std::function<void(const Node&)> backprop,
            std::string name = {}) {
        if (check_finite_ && !value.all_finite())
            throw numeric_error("non-finite value produced in forward pass (node " +
                                std::to_string(nodes_.size()) + (name.empty() ? "" : ", " + name) + ")");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad = Tensor<T>::zeros(n.value.shape);
        n.backprop = std::move(backprop);
        n.name = std::move(name);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool check_finite_;
    bool consumed_ = false;
};

}  // namespace xrag
