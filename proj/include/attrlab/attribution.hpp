#pragma once

#include <optional>
#include <string>

#include "attrlab/models.hpp"

namespace attrlab {

enum class GradientMethod { vanilla, input_x_grad, integrated_gradients, guided_backprop };
enum class AttentionMethod { raw, mean, rollout, flow, attgrad };

std::string method_name(GradientMethod m);
std::string method_name(AttentionMethod m);
GradientMethod gradient_method_from_name(const std::string& s);

struct AttributionMap {
    Tensor raw;      // native resolution (token vector for attention methods)
    Tensor resized;  // input resolution
    Tensor unit;     // resized / ||resized||, defined only when not degenerate
    std::string method;
    bool degenerate = false;
};

// Raw attribution at input resolution as graph nodes; this is the surface the
// adversarial objective differentiates through. The pair variant also returns
// the forward pass at x so callers can reuse its log-probs.
std::pair<Var, Forward> gradient_attribution_with_forward(DiffGraph& g, const ForwardFn& fwd,
                                                          Var x, GradientMethod method,
                                                          std::size_t cls, int ig_steps = 32);
Var gradient_attribution_nodes_fn(DiffGraph& g, const ForwardFn& fwd, Var x,
                                  GradientMethod method, std::size_t cls, int ig_steps = 32);
Var gradient_attribution_nodes(DiffGraph& g, const ModelSpec& spec, const BoundParams& p, Var x,
                               GradientMethod method, std::size_t cls, int ig_steps = 32);

AttributionMap attribute_gradient(const Model& model, const Tensor& x, GradientMethod method,
                                  std::optional<std::size_t> cls = std::nullopt,
                                  int ig_steps = 32);

// Token-space map from a stack alone (raw/mean/rollout/flow). Kernelized stacks
// are row-softmaxed first so rollout/entropy semantics stay well defined.
Tensor attention_token_map(AttentionMethod method, const AttentionStack& stack);

AttributionMap attribute_attention(const Model& model, const Tensor& x, AttentionMethod method,
                                   std::optional<std::size_t> cls = std::nullopt);

// Nearest-neighbor upsampling of token maps (CLS dropped) to the input grid,
// then unit normalization. Inputs already at target shape skip the resize.
AttributionMap normalize_map(const Tensor& raw, const std::vector<std::size_t>& target_shape,
                             const std::string& method);

// Maximum flow from the CLS node at the top layer to each input token through
// the layered attention graph (per-layer head-averaged capacities).
Tensor attention_flow_map(const std::vector<Tensor>& layer_capacities);

void write_map_csv(const std::string& path, const AttributionMap& map, std::size_t side);
void write_map_pgm(const std::string& path, const AttributionMap& map, std::size_t side);

}  // namespace attrlab
