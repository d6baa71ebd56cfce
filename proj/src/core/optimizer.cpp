#include "core/optimizer.hpp"

#include <cmath>

namespace spanforge::numcore {

void AdamW::step(std::span<Parameter* const> params) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        Slot& s = slots_[p];
        auto& theta = p->value.data();
        const auto& g = p->grad.data();
        if (s.m.empty()) {
            s.m.assign(theta.size(), 0.0);
            s.v.assign(theta.size(), 0.0);
        }
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (std::isnan(g[i]))
                throw PipelineError("NaN gradient in parameter '" + p->name + "'");
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double m_hat = s.m[i] / bc1;
            double v_hat = s.v[i] / bc2;
            theta[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
            theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
        }
    }
}

double fd_check(const std::function<double(bool)>& build_loss,
                std::span<Parameter* const> params, double h) {
    for (Parameter* p : params) p->zero_grad();
    build_loss(/*accumulate_grads=*/true);
    double worst = 0.0;
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        auto& theta = p->value.data();
        const auto& g = p->grad.data();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double keep = theta[i];
            theta[i] = keep + h;
            double up = build_loss(false);
            theta[i] = keep - h;
            double dn = build_loss(false);
            theta[i] = keep;
            double fd = (up - dn) / (2.0 * h);
            double ad = g[i];
            double scale = std::max({1.0, std::fabs(ad), std::fabs(fd)});
            worst = std::max(worst, std::fabs(ad - fd) / scale);
        }
    }
    return worst;
}

}  // namespace spanforge::numcore
