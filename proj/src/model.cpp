#include "attrsim/model.hpp"

#include <cmath>

#include "attrsim/rng.hpp"

namespace attrsim {

namespace {
constexpr int kSpanMaxLen = 3;  // synthetic gold spans are short

double softmax_prob(const std::vector<double>& logits, int idx) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - mx);
    return std::exp(logits[static_cast<size_t>(idx)] - mx) / s;
}
}  // namespace

Model::Model(ModelConfig cfg, const Vocabulary& vocab, uint64_t init_seed)
    : cfg_(cfg), vocab_(&vocab) {
    cfg_.validate();
    Rng rng(init_seed);
    const int d = cfg_.hidden, f = cfg_.ffn_dim();
    const double sd = 0.02;
    auto w = [&](std::vector<int> shape) { return rng.normal_tensor(std::move(shape), sd); };

    add_param("tok_emb", w({vocab.size(), d}));
    add_param("pos_emb", w({cfg_.max_seq, d}));
    for (int l = 0; l < cfg_.layers; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        add_param(p + "ln1.g", Tensor({1, d}, 1.0));
        add_param(p + "ln1.b", Tensor({1, d}, 0.0));
        add_param(p + "wq", w({d, d}));
        add_param(p + "bq", Tensor({1, d}, 0.0));
        add_param(p + "wk", w({d, d}));
        add_param(p + "bk", Tensor({1, d}, 0.0));
        add_param(p + "wv", w({d, d}));
        add_param(p + "bv", Tensor({1, d}, 0.0));
        add_param(p + "wo", w({d, d}));
        add_param(p + "bo", Tensor({1, d}, 0.0));
        add_param(p + "ln2.g", Tensor({1, d}, 1.0));
        add_param(p + "ln2.b", Tensor({1, d}, 0.0));
        add_param(p + "w1", w({d, f}));
        add_param(p + "b1", Tensor({1, f}, 0.0));
        add_param(p + "w2", w({f, d}));
        add_param(p + "b2", Tensor({1, d}, 0.0));
    }
    add_param("lnf.g", Tensor({1, d}, 1.0));
    add_param("lnf.b", Tensor({1, d}, 0.0));
    add_param("yn.w", w({d, 2}));
    add_param("yn.b", Tensor({1, 2}, 0.0));
    add_param("start.w", w({1, d}));
    add_param("start.b", Tensor({1, 1}, 0.0));
    add_param("end.w", w({1, d}));
    add_param("end.b", Tensor({1, 1}, 0.0));
}

Tensor& Model::add_param(const std::string& name, Tensor t) {
    names_.push_back(name);
    return params_[name] = std::move(t);
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("Model: unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("Model: unknown parameter '" + name + "'");
    return it->second;
}

Prediction Model::forward_qa(const Instance& inst, AttentionStack* attn) const {
    QaRuntime rt(*this);
    return rt.predict(inst, attn);
}

Prediction Model::forward_with_override(const Instance& inst,
                                        const std::map<int, Tensor>& overrides,
                                        AttentionStack* effective) const {
    QaRuntime rt(*this);
    return rt.predict_override(inst, overrides, effective);
}

double Model::predict_confidence(const Instance& inst) const {
    return forward_qa(inst).confidence;
}

EncoderNodes build_encoder(Tape& tape, const Model& model, int seq_len, NodeId emb_source) {
    const ModelConfig& cfg = model.config();
    const int n = seq_len, d = cfg.hidden, h = cfg.heads, dh = cfg.head_dim();
    if (n < 4 || n > cfg.max_seq) throw Error("build_encoder: seq_len out of range");
    EncoderNodes e;

    auto weight = [&](const std::string& name) {
        NodeId id = tape.input(model.param(name).shape(), name);
        tape.bind(id, &model.param(name));
        e.weights[name] = id;
        return id;
    };

    e.attn_mask = tape.input({1, n}, "attn_mask");
    e.ctx_mask = tape.input({1, n}, "ctx_mask");

    NodeId pos = weight("pos_emb");
    if (emb_source >= 0) {
        e.emb_inject = tape.inject(emb_source);
    } else {
        e.ids_in = tape.input({n}, "ids");
        NodeId tok = weight("tok_emb");
        e.emb_inject = tape.inject(tape.gather(tok, e.ids_in));
    }
    tape.mark(e.emb_inject);
    NodeId pos_used = n == cfg.max_seq ? pos : tape.slice(pos, 0, n, 0, d);
    NodeId x = tape.add(e.emb_inject, pos_used);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "l" + std::to_string(l) + ".";
        NodeId hn = tape.layer_norm(x, weight(p + "ln1.g"), weight(p + "ln1.b"));
        NodeId q = tape.add(tape.matmul(hn, weight(p + "wq")), weight(p + "bq"));
        NodeId k = tape.add(tape.matmul(hn, weight(p + "wk")), weight(p + "bk"));
        NodeId v = tape.add(tape.matmul(hn, weight(p + "wv")), weight(p + "bv"));

        std::vector<NodeId> scores;
        for (int i = 0; i < h; ++i) {
            NodeId qi = tape.slice(q, 0, n, i * dh, (i + 1) * dh);
            NodeId ki = tape.slice(k, 0, n, i * dh, (i + 1) * dh);
            NodeId s = tape.scale(tape.matmul(qi, ki, false, true), inv_sqrt_dh);
            scores.push_back(tape.add(s, e.attn_mask));
        }
        NodeId stack = tape.concat_rows(scores, {h, n, n});
        NodeId a = tape.inject(tape.softmax(stack));
        tape.mark(a);
        e.attn_inject.push_back(a);

        std::vector<NodeId> heads;
        for (int i = 0; i < h; ++i) {
            NodeId ai = tape.slice(a, i * n, (i + 1) * n, 0, n);
            NodeId vi = tape.slice(v, 0, n, i * dh, (i + 1) * dh);
            heads.push_back(tape.matmul(ai, vi));
        }
        NodeId att = tape.add(tape.matmul(tape.concat_cols(heads), weight(p + "wo")),
                              weight(p + "bo"));
        x = tape.add(x, att);

        NodeId h2 = tape.layer_norm(x, weight(p + "ln2.g"), weight(p + "ln2.b"));
        NodeId f1 = tape.gelu(tape.add(tape.matmul(h2, weight(p + "w1")), weight(p + "b1")));
        NodeId f2 = tape.add(tape.matmul(f1, weight(p + "w2")), weight(p + "b2"));
        x = tape.add(x, f2);
    }

    NodeId xf = tape.layer_norm(x, weight("lnf.g"), weight("lnf.b"));
    NodeId cls = tape.slice(xf, 0, 1, 0, d);
    e.yn = tape.add(tape.matmul(cls, weight("yn.w")), weight("yn.b"));
    NodeId st_raw = tape.add(tape.matmul(weight("start.w"), xf, false, true), weight("start.b"));
    NodeId en_raw = tape.add(tape.matmul(weight("end.w"), xf, false, true), weight("end.b"));
    e.st = tape.add(st_raw, e.ctx_mask);
    e.en = tape.add(en_raw, e.ctx_mask);
    return e;
}

QaRuntime::QaRuntime(const Model& model, int seq_len)
    : model_(&model), n_(seq_len > 0 ? seq_len : model.config().max_seq) {
    EncoderNodes e = build_encoder(tape_, model, n_);
    ids_in_ = e.ids_in;
    attn_mask_ = e.attn_mask;
    ctx_mask_ = e.ctx_mask;
    emb_inject_ = e.emb_inject;
    attn_inject_ = e.attn_inject;
    yn_ = e.yn;
    st_ = e.st;
    en_ = e.en;
    out_ = tape_.concat_cols({yn_, st_, en_});
    tape_.set_output(out_);

    ids_t_ = Tensor({n_});
    attn_mask_t_ = Tensor({1, n_});
    ctx_mask_t_ = Tensor({1, n_});
    tape_.bind(ids_in_, &ids_t_);
    tape_.bind(attn_mask_, &attn_mask_t_);
    tape_.bind(ctx_mask_, &ctx_mask_t_);
}

Encoding QaRuntime::encode_instance(const Instance& inst) const {
    return encode(inst, model_->vocab(), n_);
}

void QaRuntime::bind_instance(const Instance& inst) {
    enc_ = encode_instance(inst);
    for (int i = 0; i < n_; ++i) {
        ids_t_[i] = enc_.ids[static_cast<size_t>(i)];
        attn_mask_t_[i] =
            enc_.ids[static_cast<size_t>(i)] == Vocabulary::kPad ? Tape::kMaskNegative : 0.0;
        ctx_mask_t_[i] = (i >= enc_.c_begin && i < enc_.c_end) ? 0.0 : Tape::kMaskNegative;
    }
    have_enc_ = true;
    enc_instance_id_ = inst.id;
}

void QaRuntime::bind_ids(const std::vector<int>& ids) {
    if (static_cast<int>(ids.size()) != n_) throw Error("bind_ids: length mismatch");
    for (int i = 0; i < n_; ++i) ids_t_[i] = ids[static_cast<size_t>(i)];
}

Prediction QaRuntime::read_prediction(const Encoding& enc, TaskType type) const {
    Prediction p;
    p.type = type;
    const Tensor& yn = tape_.value(yn_);
    const Tensor& st = tape_.value(st_);
    const Tensor& en = tape_.value(en_);
    p.yn_logits = {yn[0], yn[1]};
    p.start_logits.assign(st.data(), st.data() + n_);
    p.end_logits.assign(en.data(), en.data() + n_);

    if (type == TaskType::YesNo) {
        p.yes = yn[1] > yn[0];
        p.confidence = softmax_prob(p.yn_logits, p.yes ? 1 : 0);
    } else {
        double best = -1e300;
        int bs = enc.c_begin, be = enc.c_begin;
        for (int s = enc.c_begin; s < enc.c_end; ++s) {
            for (int t = s; t < std::min(s + kSpanMaxLen, enc.c_end); ++t) {
                double v = p.start_logits[static_cast<size_t>(s)] +
                           p.end_logits[static_cast<size_t>(t)];
                if (v > best) {
                    best = v;
                    bs = s;
                    be = t;
                }
            }
        }
        p.start = bs;
        p.end = be + 1;
        p.confidence = softmax_prob(p.start_logits, bs) * softmax_prob(p.end_logits, be);
    }
    return p;
}

Prediction QaRuntime::predict(const Instance& inst, AttentionStack* attn) {
    bind_instance(inst);
    tape_.forward();
    if (attn) {
        attn->layers.clear();
        for (NodeId id : attn_inject_) {
            const Tensor& a = tape_.value(id);
            attn->layers.push_back(Tensor::from(
                {model_->config().heads, n_, n_},
                std::vector<double>(a.data(), a.data() + a.size())));
        }
    }
    return read_prediction(enc_, inst.answer.type);
}

Prediction QaRuntime::predict_override(const Instance& inst,
                                       const std::map<int, Tensor>& overrides,
                                       AttentionStack* effective) {
    for (const auto& [layer, t] : overrides) {
        if (layer < 0 || layer >= static_cast<int>(attn_inject_.size()))
            throw Error("predict_override: layer " + std::to_string(layer) + " out of range");
        tape_.bind(attn_inject_[static_cast<size_t>(layer)], &t);
    }
    bind_instance(inst);
    Prediction p;
    try {
        tape_.forward();
        if (effective) {
            effective->layers.clear();
            for (NodeId id : attn_inject_) {
                const Tensor& a = tape_.value(id);
                effective->layers.push_back(Tensor::from(
                    {model_->config().heads, n_, n_},
                    std::vector<double>(a.data(), a.data() + a.size())));
            }
        }
        p = read_prediction(enc_, inst.answer.type);
    } catch (...) {
        for (const auto& [layer, t] : overrides)
            tape_.clear_override(attn_inject_[static_cast<size_t>(layer)]);
        throw;
    }
    for (const auto& [layer, t] : overrides)
        tape_.clear_override(attn_inject_[static_cast<size_t>(layer)]);
    return p;
}

Prediction QaRuntime::predict_ids(const Instance& inst, const std::vector<int>& ids) {
    if (!have_enc_ || enc_instance_id_ != inst.id) bind_instance(inst);
    bind_ids(ids);
    tape_.forward();
    return read_prediction(enc_, inst.answer.type);
}

double QaRuntime::target_probability(const Prediction& p, const ExplainTarget& t) const {
    if (t.type == TaskType::YesNo) return softmax_prob(p.yn_logits, t.yn_class);
    return softmax_prob(p.start_logits, t.start) * softmax_prob(p.end_logits, t.end);
}

Tensor QaRuntime::target_seed(const ExplainTarget& t) const {
    Tensor seed({1, 2 + 2 * n_}, 0.0);
    if (t.type == TaskType::YesNo) {
        seed[t.yn_class] = 1.0;
    } else {
        seed[2 + t.start] = 1.0;
        seed[2 + n_ + t.end] = 1.0;
    }
    return seed;
}

double QaRuntime::read_target(const ExplainTarget& t) const {
    const Tensor& yn = tape_.value(yn_);
    const Tensor& st = tape_.value(st_);
    const Tensor& en = tape_.value(en_);
    if (t.type == TaskType::YesNo) return yn[t.yn_class];
    return st[t.start] + en[t.end];
}

double QaRuntime::target_value(const Instance& inst, const ExplainTarget& t) {
    bind_instance(inst);
    tape_.forward();
    return read_target(t);
}

double QaRuntime::embedding_grad(const Instance& inst, const ExplainTarget& t,
                                 const Tensor* embedding_override, Tensor* grad_out) {
    bind_instance(inst);
    if (embedding_override) tape_.bind(emb_inject_, embedding_override);
    double v = 0.0;
    try {
        tape_.forward();
        v = read_target(t);
        tape_.backward(target_seed(t));
        if (grad_out) *grad_out = tape_.grad(emb_inject_);
    } catch (...) {
        if (embedding_override) tape_.clear_override(emb_inject_);
        throw;
    }
    if (embedding_override) tape_.clear_override(emb_inject_);
    return v;
}

Tensor QaRuntime::natural_embeddings(const Instance& inst) {
    bind_instance(inst);
    const Tensor& table = model_->param("tok_emb");
    Tensor e({n_, model_->config().hidden});
    for (int i = 0; i < n_; ++i) {
        int id = enc_.ids[static_cast<size_t>(i)];
        for (int c = 0; c < e.cols(); ++c) e.at(i, c) = table.at(id, c);
    }
    return e;
}

Tensor QaRuntime::baseline_embeddings() const {
    const Tensor& table = model_->param("tok_emb");
    Tensor e({n_, model_->config().hidden});
    for (int i = 0; i < n_; ++i)
        for (int c = 0; c < e.cols(); ++c) e.at(i, c) = table.at(Vocabulary::kPad, c);
    return e;
}

Prediction QaRuntime::predict_embeddings(const Instance& inst, const Tensor& embeddings) {
    bind_instance(inst);
    tape_.bind(emb_inject_, &embeddings);
    Prediction p;
    try {
        tape_.forward();
        p = read_prediction(enc_, inst.answer.type);
    } catch (...) {
        tape_.clear_override(emb_inject_);
        throw;
    }
    tape_.clear_override(emb_inject_);
    return p;
}

double QaRuntime::attention_grad(const Instance& inst, const ExplainTarget& t,
                                 const std::map<int, Tensor>& overrides,
                                 const std::vector<int>& grad_layers,
                                 std::vector<Tensor>* grads) {
    for (const auto& [layer, ov] : overrides) {
        if (layer < 0 || layer >= static_cast<int>(attn_inject_.size()))
            throw Error("attention_grad: layer " + std::to_string(layer) + " out of range");
        tape_.bind(attn_inject_[static_cast<size_t>(layer)], &ov);
    }
    bind_instance(inst);
    double v = 0.0;
    try {
        tape_.forward();
        v = read_target(t);
        tape_.backward(target_seed(t));
        if (grads) {
            grads->clear();
            for (int layer : grad_layers) {
                const Tensor& g = tape_.grad(attn_inject_[static_cast<size_t>(layer)]);
                grads->push_back(Tensor::from(
                    {model_->config().heads, n_, n_},
                    std::vector<double>(g.data(), g.data() + g.size())));
            }
        }
    } catch (...) {
        for (const auto& [layer, ov] : overrides)
            tape_.clear_override(attn_inject_[static_cast<size_t>(layer)]);
        throw;
    }
    for (const auto& [layer, ov] : overrides)
        tape_.clear_override(attn_inject_[static_cast<size_t>(layer)]);
    return v;
}

}  // namespace attrsim
