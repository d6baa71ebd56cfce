#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "core/autodiff.hpp"

namespace spanforge::numcore {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam. Moment slots are keyed by parameter address;
// parameters must outlive the optimizer.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update from the gradients currently held in each parameter,
    // skipping non-trainable parameters. Throws PipelineError naming the
    // parameter if its gradient contains NaN.
    void step(std::span<Parameter* const> params);

    void zero_grad(std::span<Parameter* const> params) {
        for (Parameter* p : params) p->zero_grad();
    }

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t t() const { return t_; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::unordered_map<Parameter*, Slot> slots_;
};

// Central-difference gradient check. build_loss must rebuild the loss from the
// parameters' current values on a fresh graph each call. Returns the maximum
// relative error over all trainable parameter elements, with the error scaled
// by max(1, |analytic|, |numeric|).
double fd_check(const std::function<double(bool accumulate_grads)>& build_loss,
                std::span<Parameter* const> params, double h = 1e-5);

}  // namespace spanforge::numcore
