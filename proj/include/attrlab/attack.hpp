#pragma once

#include <cstdint>
#include <functional>

#include "attrlab/attribution.hpp"
#include "attrlab/models.hpp"

namespace attrlab {

struct AttackConfig {
    int steps = 10;
    double step_size = 0.01;
    double eps = 1.0;
    double gamma = 1e-4;
    int ig_steps = 32;
    int restarts = 1;  // independent ascent runs from fresh seeded inits
    std::uint64_t seed = 0;

    static AttackConfig gradient_defaults() { return AttackConfig{}; }
    static AttackConfig attention_defaults() {
        AttackConfig c;
        c.steps = 50;
        c.step_size = 0.05;
        return c;
    }
    void validate() const;
};

struct AttackTarget {
    enum class Kind { gradient, attention };
    Kind kind = Kind::gradient;
    GradientMethod method = GradientMethod::vanilla;
    std::size_t layer = 0;

    static AttackTarget gradient(GradientMethod m) { return {Kind::gradient, m, 0}; }
    static AttackTarget attention(std::size_t layer) {
        return {Kind::attention, GradientMethod::vanilla, layer};
    }
};

struct SensitivityRecord {
    double notR = 0.0;
    double alpha = 0.0;        // radians; ||u - u'|| = 2|sin(alpha/2)|
    double logit_drift = 0.0;  // ||l - l'||_2 at the best iterate
    Tensor x_adv;
    bool converged = true;
    int steps_used = 0;
    std::uint64_t seed = 0;
    double max_norm_dev = 0.0;  // worst |:|x'|-|x|:| over iterates (fixed-norm policy)
};

// Projected gradient ascent on ||unit(e(x)) - unit(e(x'))|| - gamma*||l - l'||
// (gradient targets) or ||A' - A_init||_F - gamma*||l - l'|| (attention targets),
// with the per-iterate epsilon-ball clip and fixed-input-norm rescale.
SensitivityRecord run_attack(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                             const AttackTarget& target);

SensitivityRecord notR_gradient(const Model& model, const Tensor& x, GradientMethod method,
                                const AttackConfig& cfg);
SensitivityRecord notR_attention(const Model& model, std::size_t layer, const Tensor& x,
                                 const AttackConfig& cfg);

// Same objective at random delta uniform on the eps-sphere, no ascent.
double average_sensitivity(const ForwardFn& fwd, const Tensor& x, const AttackConfig& cfg,
                           const AttackTarget& target, int trials);
double average_sensitivity(const Model& model, const Tensor& x, GradientMethod method,
                           const AttackConfig& cfg, int trials);

}  // namespace attrlab
