#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "xrag/tensor.hpp"

namespace xrag {

// Named, ordered collection of parameter tensors. Order of registration is the
// canonical order for checkpoints, checksums, and optimizer state.
template <typename T>
struct ParameterSet {
    struct Entry {
        std::string name;
        std::shared_ptr<Tensor<T>> tensor;
        bool frozen = false;
    };

    std::vector<Entry> entries;

    std::shared_ptr<Tensor<T>> add(const std::string& name, Tensor<T> t, bool frozen = false) {
        for (const auto& e : entries) require(e.name != name, "parameter registered twice: " + name);
        auto p = std::make_shared<Tensor<T>>(std::move(t));
        p->requires_grad = !frozen;
        entries.push_back({name, p, frozen});
        return p;
    }

    void adopt(const ParameterSet<T>& other, bool frozen) {
        for (const auto& e : other.entries) {
            for (const auto& mine : entries)
                require(mine.name != e.name, "parameter registered twice: " + e.name);
            e.tensor->requires_grad = !frozen;
            entries.push_back({e.name, e.tensor, frozen});
        }
    }

    Entry* find(const std::string& name) {
        for (auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }

    int64_t count(bool trainable_only = false) const {
        int64_t n = 0;
        for (const auto& e : entries)
            if (!trainable_only || !e.frozen) n += e.tensor->numel();
        return n;
    }

    // Order-sensitive f32 digest over all tensors; used to prove frozen
    // weights never move during training.
    uint64_t checksum() const {
        std::vector<const Tensor<T>*> ptrs;
        for (const auto& e : entries) ptrs.push_back(e.tensor.get());
        return checksum_f32(ptrs);
    }

    uint64_t checksum_frozen() const {
        std::vector<const Tensor<T>*> ptrs;
        for (const auto& e : entries)
            if (e.frozen) ptrs.push_back(e.tensor.get());
        return checksum_f32(ptrs);
    }
};

// Per-parameter gradient accumulator for microbatched training. Slots align
// with the ParameterSet's entries; frozen entries stay null.
template <typename T>
class GradBuffer {
  public:
    explicit GradBuffer(const ParameterSet<T>& params) {
        for (const auto& e : params.entries)
            bufs_.push_back(e.frozen ? Tensor<T>{} : Tensor<T>::zeros(e.tensor->shape));
    }

    void zero() {
        for (auto& b : bufs_)
            std::fill(b.data.begin(), b.data.end(), T{});
    }

    // Adds `scale` x the tape gradient of each bound entry. `by_entry` must be
    // aligned with the ParameterSet the buffer was built from.
    template <typename TapeT>
    void accumulate_from_tape(const TapeT& tape, const std::vector<typename TapeT::Id>& by_entry,
                              T scale) {
        require(by_entry.size() == bufs_.size(), "grad buffer: binding length mismatch");
        for (size_t i = 0; i < bufs_.size(); ++i) {
            if (bufs_[i].data.empty()) continue;
            if (!tape.tracks_grad(by_entry[i])) continue;
            const auto& g = tape.grad(by_entry[i]);
            require(g.data.size() == bufs_[i].data.size(), "grad buffer: shape mismatch");
            for (size_t k = 0; k < g.data.size(); ++k) bufs_[i].data[k] += scale * g.data[k];
        }
    }

    std::vector<const Tensor<T>*> pointers() const {
        std::vector<const Tensor<T>*> out;
        for (const auto& b : bufs_) out.push_back(b.data.empty() ? nullptr : &b);
        return out;
    }

  private:
    std::vector<Tensor<T>> bufs_;
};

// Linear warmup to peak_lr over warmup_steps, then linear decay to zero at
// total_steps. step is 1-based: the first update uses step = 1.
template <typename T>
T lr_at_step(int64_t step, int64_t total_steps, T peak_lr, double warmup_ratio) {
    require(step >= 1 && total_steps >= 1, "lr schedule: bad step");
    const int64_t warmup_steps =
        std::max<int64_t>(1, static_cast<int64_t>(std::floor(warmup_ratio * static_cast<double>(total_steps))));
    if (step <= warmup_steps)
        return peak_lr * static_cast<T>(step) / static_cast<T>(warmup_steps);
    if (step >= total_steps) return T{0};
    return peak_lr * static_cast<T>(total_steps - step) / static_cast<T>(total_steps - warmup_steps);
}

// AdamW: Adam moments with bias correction, weight decay applied directly to
// weights (decoupled from the gradient path). Frozen entries are skipped; a
// nonzero gradient arriving for one is reported once and dropped.
template <typename T>
class AdamW {
  public:
    struct Config {
        T lr = static_cast<T>(1e-3);
        T beta1 = static_cast<T>(0.9);
        T beta2 = static_cast<T>(0.999);
        T eps = static_cast<T>(1e-8);
        T weight_decay = static_cast<T>(0.0);
    };

    AdamW(ParameterSet<T>& params, Config cfg) : params_(params), cfg_(cfg) {
        for (const auto& e : params_.entries) {
            m_.push_back(Tensor<T>::zeros(e.tensor->shape));
            v_.push_back(Tensor<T>::zeros(e.tensor->shape));
        }
    }

    int64_t step_count() const { return t_; }

    // grads[i] pairs with params_.entries[i]; null slot = parameter untouched
    // by this loss (an error for trainable entries, normal for frozen ones).
    void step(const std::vector<const Tensor<T>*>& grads, T lr_override = T{-1}) {
        require(grads.size() == params_.entries.size(), "optimizer: gradient list length mismatch");
        const T lr = lr_override >= T{0} ? lr_override : cfg_.lr;
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
        for (size_t i = 0; i < params_.entries.size(); ++i) {
            auto& e = params_.entries[i];
            if (e.frozen) {
                if (grads[i] != nullptr && !frozen_grad_warned_) {
                    bool nonzero = false;
                    for (T g : grads[i]->data)
                        if (g != T{0}) { nonzero = true; break; }
                    if (nonzero) {
                        std::fprintf(stderr, "warn: gradient for frozen parameter '%s' ignored\n",
                                     e.name.c_str());
                        frozen_grad_warned_ = true;
                    }
                }
                continue;
            }
            require(grads[i] != nullptr, "optimizer: missing gradient for trainable parameter " + e.name);
            const Tensor<T>& g = *grads[i];
            require(g.same_shape(*e.tensor), "optimizer: gradient shape mismatch for " + e.name);
            Tensor<T>& w = *e.tensor;
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (size_t k = 0; k < w.data.size(); ++k) {
                const T gk = g.data[k];
                require(std::isfinite(static_cast<double>(gk)),
                        "optimizer: non-finite gradient for " + e.name);
                m.data[k] = cfg_.beta1 * m.data[k] + (T{1} - cfg_.beta1) * gk;
                v.data[k] = cfg_.beta2 * v.data[k] + (T{1} - cfg_.beta2) * gk * gk;
                const T mhat = m.data[k] / static_cast<T>(bc1);
                const T vhat = v.data[k] / static_cast<T>(bc2);
                w.data[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w.data[k]);
            }
        }
    }

  private:
    ParameterSet<T>& params_;
    Config cfg_;
    std::vector<Tensor<T>> m_, v_;
    int64_t t_ = 0;
    bool frozen_grad_warned_ = false;
};

}  // namespace xrag
