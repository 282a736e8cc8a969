#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attrlab/autodiff.hpp"
#include "attrlab/tensor.hpp"

namespace attrlab {

enum class Activation { relu, softplus, gelu, elu_plus_one, cosine_sim };
enum class AttentionKind { softmax, kernelized };
enum class ModelKind { mlp, vit };
enum class ParamGroup { backbone, classifier };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::size_t input_dim = 2;  // mlp: feature count; vit: image_side^2
    std::size_t num_classes = 2;
    std::vector<std::size_t> hidden;  // mlp hidden widths
    bool mlp_bias = true;
    Activation activation = Activation::relu;
    double softplus_beta = 1.0;

    // vit
    std::size_t image_side = 8;
    std::size_t patch = 4;
    std::size_t embed_dim = 12;
    std::size_t depth = 1;
    std::size_t heads = 3;  // paper leaves ViT-Tiny head count open; 3 is our default
    std::size_t mlp_ratio = 2;
    AttentionKind attention = AttentionKind::softmax;
    Activation attn_phi = Activation::gelu;
    double attn_phi_beta = 3.0;

    std::size_t patches_per_side() const { return image_side / patch; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t tokens() const { return num_patches() + 1; }  // +1 CLS
    bool use_pos_embed() const { return depth > 1; }
    void validate() const;
};

struct Param {
    Tensor value;
    ParamGroup group = ParamGroup::backbone;
    double lr_multiplier = 1.0;
};

struct ParamSet {
    std::vector<std::pair<std::string, Param>> items;  // fixed, deterministic order

    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::size_t total_size() const;
    Tensor flatten() const;
    void unflatten(const Tensor& flat);
};

struct Model {
    ModelSpec spec;
    ParamSet params;
};

// Deterministic init for a given seed; parameter order is part of the contract.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

// Backbone keeps multiplier 1, classifier head gets 1/ratio (ratio 10 = the
// differential-learning-rate configuration; ratio 1 = uniform).
void set_group_multipliers(ParamSet& params, double ratio);

// Parameters bound as graph inputs (one Var per tensor).
struct BoundParams {
    std::vector<std::pair<std::string, Var>> vars;
    Var at(const std::string& name) const;
    std::vector<Var> all() const;
};
BoundParams bind_params(DiffGraph& g, const ParamSet& params);
// One flat input for whole-parameter-space differentiation; named views slice it.
std::pair<Var, BoundParams> bind_params_flat(DiffGraph& g, const ParamSet& params);

struct Forward {
    Var logits;      // {d}
    Var log_probs;   // {d}: z - LSE(z)
    std::vector<Var> layer_inputs;          // mlp: h_0 .. h_{L-1} (input to layer l+1)
    std::vector<std::vector<Var>> attn;     // vit: [layer][head] T x T score nodes
};

Forward mlp_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x);
Forward vit_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var image);
Forward model_forward(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x);

// Batched logits for training loops; X is {B, n}.
Var mlp_logits_batch(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var X);

// Forward pass closure: binds whatever parameters it needs and maps an input
// node to logits/log-probs (plus attention scores for ViTs). Lets the attack
// and the test oracles run on hand-built models, not just ModelSpec ones.
using ForwardFn = std::function<Forward(DiffGraph&, Var)>;
ForwardFn make_forward_fn(const Model& model);

struct LogitBundle {
    Tensor z, p, l;
    double lse = 0.0;
};
LogitBundle eval_logits(const Model& model, const Tensor& x);
std::size_t argmax_class(const Tensor& log_probs);  // ties -> lowest index

// Per-layer, per-head attention score matrices captured from a forward pass.
struct AttentionStack {
    std::vector<std::vector<Tensor>> layers;  // [layer][head], each T x T
    bool normalized = true;                   // row-stochastic (softmax kind)
    std::size_t tokens = 0;
    std::vector<Tensor> head_mean() const;
};
AttentionStack extract_stack(const DiffGraph& g, const Forward& f, const ModelSpec& spec);
AttentionStack eval_stack(const Model& model, const Tensor& x);

// Attention primitives; also exposed on plain tensors for the oracles.
std::pair<Var, Var> softmax_attention_nodes(DiffGraph& g, Var Q, Var K, Var V);
std::pair<Var, Var> kernelized_attention_nodes(DiffGraph& g, Var Q, Var K, Var V, Activation phi,
                                               double beta);
std::pair<Tensor, Tensor> softmax_attention(const Tensor& Q, const Tensor& K, const Tensor& V);
std::pair<Tensor, Tensor> kernelized_attention(const Tensor& Q, const Tensor& K, const Tensor& V,
                                               Activation phi, double beta = 3.0);

// Pointwise activation on a graph node (cosine_sim is row-wise L2 normalize and
// only meaningful for attention feature maps).
Var apply_activation(DiffGraph& g, Var x, Activation act, double beta);

Var layer_norm(DiffGraph& g, Var x, Var gamma, Var beta_v);

}  // namespace attrlab
