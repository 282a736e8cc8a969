#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attrlab/attack.hpp"
#include "attrlab/models.hpp"

namespace attrlab {

struct PowerResult {
    double value = 0.0;  // |lambda| of the dominant eigenpair
    Tensor vector;
    bool converged = true;
    int iterations = 0;
};

// Power iteration on v -> H v for the Hessian of an arbitrary scalar field.
PowerResult hessian_lambda_max(const ScalarFn& f, const Tensor& x, int max_iters = 200,
                               double tol = 1e-7);

// Power iteration on v -> H_x(-l_i) v. Class defaults to the clean argmax.
PowerResult input_hessian_lambda_max(const ForwardFn& fwd, const Tensor& x,
                                     std::optional<std::size_t> cls = std::nullopt,
                                     int max_iters = 200, double tol = 1e-7);
PowerResult input_hessian_lambda_max(const Model& model, const Tensor& x,
                                     std::optional<std::size_t> cls = std::nullopt,
                                     int max_iters = 200, double tol = 1e-7);

// Power iteration for ||A||_2 on a plain matrix.
double spectral_norm(const Tensor& a, int iters = 100, double tol = 1e-7);

enum class WrtSpace { input, params };

struct GnDecomposition {
    Tensor H, G, F;          // dense, n x n over the chosen space
    double max_abs_err = 0;  // ||H - (G + F)||_inf
    double g_min_eig = 0;    // smallest eigenvalue of G (PSD check)
};

// Dense Hessian of -l_i with its Gauss-Newton split H = G + F, over the input
// or the flattened parameters. Dimension capped; throws above the cap.
GnDecomposition gn_decomposition_dense(const Model& model, const Tensor& x,
                                       std::optional<std::size_t> cls, WrtSpace space,
                                       std::size_t dense_cap = 64, double assert_tol = 1e-8);

enum class TraceMode { automatic, exact, hutchinson };

// Batch-averaged tr(G_theta) of the cross-entropy loss: the class-Jacobian
// Gram against the impurity matrix, or a Rademacher estimate above the cap.
double param_gn_trace(const Model& model, const std::vector<Tensor>& batch,
                      TraceMode mode = TraceMode::automatic, int probes = 256,
                      std::size_t exact_cap = 100000, std::uint64_t seed = 0);

// tr(J^T J) for an L2-loss scalar head: mean ||grad_theta f(theta, x)||^2.
using ScalarParamFn = std::function<Var(DiffGraph&, Var theta, const Tensor& x)>;
double gn_trace_l2(const ScalarParamFn& f, const Tensor& theta, const std::vector<Tensor>& xs);

struct SnrReport {
    double value = 0.0;                 // c(x)
    std::vector<double> terms;          // per layer, skipped layers absent
    std::vector<std::string> warnings;  // dead-layer exclusions
};

// Aggregate layerwise scaled signal-to-noise ratio for MLP models:
// sum_l ||h_{l-1}||^2 / (||W_l||_2^2 ||d h_{l-1}/dx||_2^2).
SnrReport snr_c(const Model& model, const Tensor& x);

struct CurvatureReport {
    double lambda_max = 0.0;
    double gn_trace_param = 0.0;
    double snr = 0.0;
    bool power_converged = true;
};

struct EntropyStats {
    std::vector<double> mean_entropy;         // per layer, natural log
    std::vector<double> distance_to_uniform;  // ln T - Ent
    std::vector<double> sigma;                // ||W_K W_Q^T||_2 per layer (when model given)
    std::size_t tokens = 0;
};

// Shannon row entropies averaged over rows and heads per layer. Kernelized
// stacks are row-softmaxed first. Negative entries in a stack that claims to
// be normalized are a contract violation.
EntropyStats attention_entropy(const AttentionStack& stack, const Model* model = nullptr);

struct EntropyBoundResult {
    std::vector<double> ent_min;
    std::vector<double> max_deviation;  // M(S(ent_min))
    std::size_t tokens = 0;
};

// Brute-force oracle: enumerate the T-simplex lattice (plus the exact uniform
// point), filter by minimum entropy, take the max pairwise L2 distance.
EntropyBoundResult entropy_bound_oracle(std::size_t T, const std::vector<double>& ent_min_grid,
                                        double grid_step);

// kappa_i = lambda_i / sqrt(1 + g^2)
std::vector<double> principal_curvatures(const std::vector<double>& eigenvalues,
                                         double grad_norm);

}  // namespace attrlab
