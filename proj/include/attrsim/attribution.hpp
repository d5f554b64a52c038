#pragma once

#include <map>
#include <string>
#include <vector>

#include "attrsim/model.hpp"

namespace attrsim {

// Token-level scores s_i or pairwise scores s_ij over the encoded sequence.
// PAD positions always carry exact zeros.
struct AttributionMap {
    enum class Kind { Token, Pairwise };
    Kind kind = Kind::Token;
    std::string method;
    std::string instance_id;
    std::string target;  // description of the explained logit
    int steps = 0;       // integration steps, when applicable
    uint64_t seed = 0;
    std::vector<double> token_scores;  // length = encoded length (Kind::Token)
    Tensor pair_scores;                // {n, n} (Kind::Pairwise)
    bool ridge_fallback = false;       // surrogate regression fell back to ridge
    std::string note;
};

struct IntegrationConfig {
    int steps = 32;  // midpoint Riemann rule
};

struct SurrogateConfig {
    int samples = 1000;
    double kernel_width = 0.25;  // on normalized hamming distance
    int mask_token = Vocabulary::kMask;
    uint64_t seed = 0;
    double ridge = 1e-6;
};

// ---------------------------------------------------------------------------
// Generic targets. The core algorithms run against these, so closed-form
// oracles in tests exercise the identical code paths as the model adapters.

// Scalar function of an embedding matrix with a path baseline.
class EmbeddingTarget {
public:
    virtual ~EmbeddingTarget() = default;
    virtual int seq_len() const = 0;
    virtual Tensor natural() = 0;
    virtual Tensor baseline() = 0;
    virtual double value_and_grad(const Tensor& embeddings, Tensor* grad) = 0;
};

// Scalar function of a keep/mask coalition over a fixed feature set.
class MaskOracle {
public:
    virtual ~MaskOracle() = default;
    virtual int num_features() const = 0;
    virtual double value(const std::vector<bool>& kept) = 0;
};

// Scalar function of per-layer attention overrides.
class AttentionTarget {
public:
    virtual ~AttentionTarget() = default;
    virtual int num_layers() const = 0;
    virtual const AttentionStack& natural() const = 0;
    virtual double value_and_grads(const std::map<int, Tensor>& overrides,
                                   const std::vector<int>& grad_layers,
                                   std::vector<Tensor>* grads) = 0;
};

// ---------------------------------------------------------------------------
// Core algorithms.

// Integrated gradients along the straight path baseline -> natural with the
// midpoint rule; returns one score per position (summed over dimensions).
std::vector<double> intgrad_core(EmbeddingTarget& target, int steps);

struct SurrogateFit {
    std::vector<double> coefficients;  // per feature
    double intercept = 0.0;
    bool ridge_fallback = false;
};
SurrogateFit lime_core(MaskOracle& oracle, const SurrogateConfig& cfg);
// Shapley-kernel weighted regression with the efficiency constraint;
// enumerates every coalition exactly when num_features <= 12.
SurrogateFit kernelshap_core(MaskOracle& oracle, const SurrogateConfig& cfg);
constexpr int kShapExactLimit = 12;

struct PathAttribution {
    std::vector<Tensor> attr;       // per layer, {heads, n, n}
    double f_natural = 0.0;         // target at the natural attention
    std::vector<double> f_zero;     // target with the integrated layer(s) zeroed
};
// Eq.-style path attribution scaling every layer at once.
PathAttribution atattr_core(AttentionTarget& target, int steps);
// Layer-by-layer variant: one layer intervened at a time, the rest natural.
PathAttribution latattr_core(AttentionTarget& target, int steps);

// ---------------------------------------------------------------------------
// Spec-level operations on the micro-transformer.

AttributionMap intgrad_tokens(const Model& model, const Instance& inst,
                              const IntegrationConfig& cfg);
AttributionMap lime_tokens(const Model& model, const Instance& inst, const SurrogateConfig& cfg);
AttributionMap kernelshap_tokens(const Model& model, const Instance& inst,
                                 const SurrogateConfig& cfg);
AttributionMap diffmask_per_example(const Model& model, const Instance& inst, double sparsity,
                                    int opt_steps);
// Candidate pairs in encoded coordinates; empty list is an error. By default
// callers pass salient_q x salient_c from the instance metadata.
AttributionMap occlusion_pairs(const Model& model, const Instance& inst,
                               const std::vector<std::pair<int, int>>& candidates);
std::vector<std::pair<int, int>> default_occlusion_candidates(const Instance& inst);
AttributionMap atattr_pairs(const Model& model, const Instance& inst,
                            const IntegrationConfig& cfg);
AttributionMap latattr_pairs(const Model& model, const Instance& inst,
                             const IntegrationConfig& cfg);

// One JSON object per line: {method, instance_id, kind, scores, m, seed}.
// Pairwise scores are stored as sparse [i, j, value] triplets.
std::string attribution_to_json(const AttributionMap& attr);
AttributionMap attribution_from_json(const std::string& line);

}  // namespace attrsim
