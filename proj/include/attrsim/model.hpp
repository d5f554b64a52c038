#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "attrsim/instance.hpp"
#include "attrsim/tape.hpp"
#include "attrsim/vocab.hpp"

namespace attrsim {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int hidden = 64;
    int max_seq = 64;

    int head_dim() const { return hidden / heads; }
    int ffn_dim() const { return 4 * hidden; }
    void validate() const {
        if (layers < 1 || heads < 1 || hidden < 1 || max_seq < 4)
            throw Error("ModelConfig: nonpositive dimension");
        if (hidden % heads != 0) throw Error("ModelConfig: hidden must be divisible by heads");
    }
};

struct Prediction {
    TaskType type = TaskType::YesNo;
    bool yes = false;
    int start = 0, end = 0;  // encoded coordinates, [start,end)
    double confidence = 0.0;
    std::vector<double> yn_logits;                  // 2 entries
    std::vector<double> start_logits, end_logits;   // seq_len entries (masked outside context)

    bool same_answer(const Prediction& o) const {
        if (type != o.type) return false;
        return type == TaskType::YesNo ? yes == o.yes : (start == o.start && end == o.end);
    }
};

// Post-softmax attention per layer, each tensor shaped {heads, n, n}.
struct AttentionStack {
    std::vector<Tensor> layers;
};

// Encoder with a yes/no head on CLS and start/end span heads over context
// positions. Weights are plain tensors; all forward/backward work goes
// through tapes built by QaRuntime / the trainer.
class Model {
public:
    Model(ModelConfig cfg, const Vocabulary& vocab, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return *vocab_; }

    const std::vector<std::string>& param_names() const { return names_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    // Convenience single-call entry points (each builds a fresh runtime;
    // loops should construct a QaRuntime once instead).
    Prediction forward_qa(const Instance& inst, AttentionStack* attn = nullptr) const;
    Prediction forward_with_override(const Instance& inst,
                                     const std::map<int, Tensor>& overrides,
                                     AttentionStack* effective = nullptr) const;
    double predict_confidence(const Instance& inst) const;

private:
    Tensor& add_param(const std::string& name, Tensor t);

    ModelConfig cfg_;
    const Vocabulary* vocab_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> params_;
};

// The output logit an attribution explains: the predicted class for yes/no,
// or the sum of start and end logits of the predicted span.
struct ExplainTarget {
    TaskType type = TaskType::YesNo;
    int yn_class = 0;
    int start = 0, end = 0;  // encoded coordinates (end inclusive index of the end logit)

    static ExplainTarget of(const Prediction& p) {
        ExplainTarget t;
        t.type = p.type;
        t.yn_class = p.yes ? 1 : 0;
        t.start = p.start;
        t.end = p.end - 1;
        return t;
    }
};

// Reusable evaluation context over an immutable model: one tape, rebound per
// call. Not thread-safe; create one per thread.
class QaRuntime {
public:
    explicit QaRuntime(const Model& model, int seq_len = 0);

    int seq_len() const { return n_; }
    const Model& model() const { return *model_; }

    Prediction predict(const Instance& inst, AttentionStack* attn = nullptr);
    // Replace the post-softmax attention of the given layers (tensors shaped
    // {heads, n, n}); remaining layers compute naturally downstream. The
    // effective stack (overridden layers included verbatim) is optionally
    // returned; overridden rows are not renormalized.
    Prediction predict_override(const Instance& inst, const std::map<int, Tensor>& overrides,
                                AttentionStack* effective = nullptr);
    // Same encoder run on explicit token ids (surrogate/occlusion inputs);
    // masks still come from `inst`'s encoding structure.
    Prediction predict_ids(const Instance& inst, const std::vector<int>& ids);

    // logit value of the target under the current natural input
    double target_value(const Instance& inst, const ExplainTarget& t);
    // probability of the target answer given a prediction's logits
    double target_probability(const Prediction& p, const ExplainTarget& t) const;

    // Forward with token embeddings overridden (shape {n, hidden}) and
    // gradient of the target logit with respect to them.
    double embedding_grad(const Instance& inst, const ExplainTarget& t,
                          const Tensor* embedding_override, Tensor* grad_out);
    Tensor natural_embeddings(const Instance& inst);
    Tensor baseline_embeddings() const;  // PAD embedding at every position

    // Forward with embeddings overridden (for DiffMask-style gating the
    // caller supplies the gated embedding matrix) returning full prediction.
    Prediction predict_embeddings(const Instance& inst, const Tensor& embeddings);

    // Gradient of the target logit with respect to the (possibly overridden)
    // attention of `grad_layers`. Returns the target value; fills one tensor
    // {heads, n, n} per requested layer.
    double attention_grad(const Instance& inst, const ExplainTarget& t,
                          const std::map<int, Tensor>& overrides,
                          const std::vector<int>& grad_layers, std::vector<Tensor>* grads);

    Encoding encode_instance(const Instance& inst) const;

private:
    friend class DiffMaskProgram;

    void bind_instance(const Instance& inst);
    void bind_ids(const std::vector<int>& ids);
    Prediction read_prediction(const Encoding& enc, TaskType type) const;
    Tensor target_seed(const ExplainTarget& t) const;
    double read_target(const ExplainTarget& t) const;

    const Model* model_;
    int n_;
    Tape tape_;
    NodeId ids_in_ = -1, attn_mask_ = -1, ctx_mask_ = -1;
    NodeId emb_inject_ = -1;
    std::vector<NodeId> attn_inject_;  // per layer
    NodeId yn_ = -1, st_ = -1, en_ = -1, out_ = -1;

    Tensor ids_t_, attn_mask_t_, ctx_mask_t_;
    Encoding enc_;
    bool have_enc_ = false;
    std::string enc_instance_id_;
};

// Shared encoder graph builder (used by QaRuntime, the trainer, and the
// DiffMask gate program). When emb_source >= 0 the encoder consumes that node
// as its token embeddings and no ids input is created (ids_in stays -1).
struct EncoderNodes {
    NodeId ids_in = -1, attn_mask = -1, ctx_mask = -1;
    NodeId emb_inject = -1;
    std::vector<NodeId> attn_inject;
    NodeId yn = -1, st = -1, en = -1;
    std::map<std::string, NodeId> weights;
};
EncoderNodes build_encoder(Tape& tape, const Model& model, int seq_len, NodeId emb_source = -1);

}  // namespace attrsim
