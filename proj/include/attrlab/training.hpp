#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attrlab/data.hpp"
#include "attrlab/models.hpp"

namespace attrlab {

enum class Strategy { base, aar, par, ecr, atr, sam, icr, icr_dagger };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& s);

struct TrainConfig {
    double base_lr = 0.1;
    double decay_factor = 1.0 - 1e-3;  // exponential decay, applied per epoch
    double lr_ratio = 10.0;            // icr_dagger: classifier lr = base / ratio
    Strategy strategy = Strategy::base;

    // strategy hyperparameters
    double swap_beta = 1.0;                       // aar/par softplus beta
    Activation swap_target = Activation::softplus;  // aar/par replacement
    double lambda = 0.0;                          // ecr penalty weight
    double eps_adv = 0.01;                        // atr perturbation radius
    int atr_steps = 1;                            // atr inner PGD steps
    double rho = 0.05;                            // sam ascent radius

    double stop_loss_threshold = 0.05;
    std::size_t stop_check_batches = 5;  // exact-loss stop checks per this many batches
    std::size_t warmup_epochs = std::size_t(-1);  // default: 10% of max_epochs
    std::size_t max_epochs = 100;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;

    // optional curvature probes along the trajectory
    std::size_t probe_samples = 0;  // 0 disables
    std::size_t probe_every = 10;

    std::size_t effective_warmup() const {
        return warmup_epochs == std::size_t(-1) ? max_epochs / 10 : warmup_epochs;
    }
    void validate() const;
};

enum class StopReason { loss_threshold, max_epochs, diverged };
std::string stop_reason_name(StopReason r);

struct TrainTrace {
    struct EpochRow {
        std::size_t epoch = 0;
        double train_loss = 0.0;  // plain cross-entropy, regularizers excluded
        double val_accuracy = 0.0;
        double lr = 0.0;
    };
    struct ProbeRow {
        std::size_t epoch = 0;
        double mean_lambda_max = 0.0;
        double gn_trace = 0.0;
        double mean_entropy = 0.0;  // vit only; 0 otherwise
    };
    struct StepLog {
        double backbone_lr = 0.0;
        double classifier_lr = 0.0;
    };
    std::vector<EpochRow> epochs;
    std::vector<ProbeRow> probes;
    std::vector<StepLog> step_log;  // first few optimizer steps
    StopReason stop = StopReason::max_epochs;
};

struct TrainResult {
    Model model;
    TrainTrace trace;
};

// Minibatch SGD on cross-entropy with the configured strategy attached.
TrainResult sgd_train(Model model, const DataSplit& data, const TrainConfig& cfg);

double accuracy(const Model& model, const Dataset& ds);

// lambda * ||grad_x l_y||^2, the double-backprop input-Jacobian penalty.
double ecr_penalty(const Model& model, const Tensor& x, std::size_t label, double lambda);

// Inner maximization of the training loss over an L2 ball (FGSM-like for
// steps == 1).
Tensor atr_perturb(const Model& model, const Tensor& x, std::size_t label, double eps_adv,
                   int steps = 1);

// One SAM update (ascend to theta + rho g/||g||, descend with the gradient
// from there). rho == 0 or a zero gradient reduces to the plain SGD step.
void sam_step(Model& model, const Dataset& batch, double rho, double lr);
void sgd_step(Model& model, const Dataset& batch, double lr);

enum class SwapMode { ante, post };

struct SwapResult {
    Model model;
    bool swapped = false;  // false when there were no ReLU sites (no-op)
};
SwapResult activation_swap(const Model& model, Activation target, double beta, SwapMode mode);

// checkpoint container: versioned, little-endian, length-prefixed names
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

}  // namespace attrlab
