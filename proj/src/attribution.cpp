#include "attrsim/attribution.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "attrsim/rng.hpp"

namespace attrsim {

namespace {

// target logit read from a prediction's logit vectors
double logit_of(const Prediction& p, const ExplainTarget& t) {
    if (t.type == TaskType::YesNo) return p.yn_logits[static_cast<size_t>(t.yn_class)];
    return p.start_logits[static_cast<size_t>(t.start)] +
           p.end_logits[static_cast<size_t>(t.end)];
}

std::string target_string(const ExplainTarget& t) {
    if (t.type == TaskType::YesNo) return t.yn_class == 1 ? "logit(yes)" : "logit(no)";
    return "logit(start=" + std::to_string(t.start) + ")+logit(end=" + std::to_string(t.end) +
           ")";
}

std::vector<int> maskable_positions(const Encoding& enc) {
    std::vector<int> pos;
    for (int i = 0; i < enc.length; ++i) {
        int id = enc.ids[static_cast<size_t>(i)];
        if (id != Vocabulary::kCls && id != Vocabulary::kSep && id != Vocabulary::kPad &&
            id != Vocabulary::kMask)
            pos.push_back(i);
    }
    return pos;
}

// ---- weighted least squares with a ridge fallback --------------------------

struct WlsResult {
    Eigen::VectorXd beta;
    bool ridge_fallback = false;
};

WlsResult solve_wls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double ridge) {
    WlsResult r;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    r.beta = ldlt.solve(b);
    double residual = (A * r.beta - b).norm();
    bool ok = ldlt.info() == Eigen::Success && r.beta.allFinite() &&
              residual <= 1e-8 * std::max(1.0, b.norm());
    if (!ok) {
        Eigen::MatrixXd Ar = A;
        Ar.diagonal().array() += ridge;
        r.beta = Ar.ldlt().solve(b);
        r.ridge_fallback = true;
        if (!r.beta.allFinite()) throw Error("surrogate regression failed even with ridge");
    }
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Core algorithms over the generic targets.

std::vector<double> intgrad_core(EmbeddingTarget& target, int steps) {
    if (steps < 1) throw Error("intgrad: steps must be >= 1");
    Tensor e = target.natural();
    Tensor b = target.baseline();
    if (!e.same_shape(b)) throw Error("intgrad: baseline shape mismatch");

    Tensor acc(e.shape(), 0.0);
    Tensor point(e.shape());
    Tensor grad;
    for (int k = 1; k <= steps; ++k) {
        double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
        for (int64_t i = 0; i < e.size(); ++i) point[i] = b[i] + alpha * (e[i] - b[i]);
        target.value_and_grad(point, &grad);
        for (int64_t i = 0; i < e.size(); ++i) acc[i] += grad[i];
    }
    int n = target.seq_len();
    int d = static_cast<int>(e.size()) / n;
    std::vector<double> scores(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            int64_t idx = static_cast<int64_t>(i) * d + c;
            s += (e[idx] - b[idx]) * acc[idx] / static_cast<double>(steps);
        }
        scores[static_cast<size_t>(i)] = s;
    }
    return scores;
}

SurrogateFit lime_core(MaskOracle& oracle, const SurrogateConfig& cfg) {
    const int k = oracle.num_features();
    if (k < 1) throw Error("lime: no maskable tokens");
    if (cfg.samples < k + 1)
        throw Error("lime: " + std::to_string(cfg.samples) + " samples cannot fit " +
                    std::to_string(k) + " features");
    Rng rng(cfg.seed);

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd bvec = Eigen::VectorXd::Zero(k + 1);
    Eigen::VectorXd x(k + 1);
    std::vector<bool> kept(static_cast<size_t>(k));
    for (int s = 0; s < cfg.samples; ++s) {
        int masked = 0;
        for (int i = 0; i < k; ++i) {
            bool keep = rng.coin();
            kept[static_cast<size_t>(i)] = keep;
            masked += keep ? 0 : 1;
        }
        double dist = static_cast<double>(masked) / static_cast<double>(k);
        double w = std::exp(-(dist * dist) / (cfg.kernel_width * cfg.kernel_width));
        double y = oracle.value(kept);
        x(0) = 1.0;
        for (int i = 0; i < k; ++i) x(i + 1) = kept[static_cast<size_t>(i)] ? 1.0 : 0.0;
        A.noalias() += w * x * x.transpose();
        bvec.noalias() += w * y * x;
    }

    WlsResult wls = solve_wls(A, bvec, cfg.ridge);
    SurrogateFit fit;
    fit.intercept = wls.beta(0);
    fit.coefficients.resize(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) fit.coefficients[static_cast<size_t>(i)] = wls.beta(i + 1);
    fit.ridge_fallback = wls.ridge_fallback;
    return fit;
}

SurrogateFit kernelshap_core(MaskOracle& oracle, const SurrogateConfig& cfg) {
    const int k = oracle.num_features();
    if (k < 1) throw Error("kernelshap: no maskable tokens");
    std::vector<bool> none(static_cast<size_t>(k), false), all(static_cast<size_t>(k), true);
    double v0 = oracle.value(none);
    double v1 = oracle.value(all);
    double delta = v1 - v0;

    SurrogateFit fit;
    fit.intercept = v0;
    fit.coefficients.assign(static_cast<size_t>(k), 0.0);
    if (k == 1) {  // efficiency pins the single value
        fit.coefficients[0] = delta;
        return fit;
    }

    // substitution form: the last feature is eliminated through the
    // efficiency constraint, leaving a (k-1)-dim weighted regression
    const int last = k - 1;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(k - 1, k - 1);
    Eigen::VectorXd bvec = Eigen::VectorXd::Zero(k - 1);
    Eigen::VectorXd x(k - 1);
    std::vector<bool> kept(static_cast<size_t>(k));

    auto accumulate = [&](double weight) {
        double y = oracle.value(kept);
        double zlast = kept[static_cast<size_t>(last)] ? 1.0 : 0.0;
        double yp = y - v0 - zlast * delta;
        for (int i = 0; i < k - 1; ++i)
            x(i) = (kept[static_cast<size_t>(i)] ? 1.0 : 0.0) - zlast;
        A.noalias() += weight * x * x.transpose();
        bvec.noalias() += weight * yp * x;
    };

    if (k <= kShapExactLimit) {
        // all proper coalitions with the Shapley kernel weight
        for (uint32_t mask = 1; mask + 1 < (1u << k); ++mask) {
            int size = 0;
            for (int i = 0; i < k; ++i) {
                bool in = (mask >> i) & 1u;
                kept[static_cast<size_t>(i)] = in;
                size += in;
            }
            double comb = 1.0;  // C(k, size)
            for (int i = 0; i < size; ++i) comb = comb * (k - i) / (i + 1);
            double w = (k - 1.0) / (comb * size * (k - size));
            accumulate(w);
        }
    } else {
        if (cfg.samples < k + 1)
            throw Error("kernelshap: " + std::to_string(cfg.samples) +
                        " samples cannot fit " + std::to_string(k) + " features");
        // sample coalition sizes from the kernel mass, subsets uniformly
        Rng rng(cfg.seed);
        std::vector<double> cum;
        double total = 0.0;
        for (int s = 1; s < k; ++s) {
            total += 1.0 / (static_cast<double>(s) * (k - s));
            cum.push_back(total);
        }
        std::vector<int> idx(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
        for (int s = 0; s < cfg.samples; ++s) {
            double u = rng.uniform() * total;
            int size = 1;
            while (size < k - 1 && u > cum[static_cast<size_t>(size - 1)]) size++;
            for (int i = 0; i < size; ++i) {
                int j = rng.uniform_int(i, k - 1);
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
            }
            std::fill(kept.begin(), kept.end(), false);
            for (int i = 0; i < size; ++i) kept[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;
            accumulate(1.0);
        }
    }

    WlsResult wls = solve_wls(A, bvec, cfg.ridge);
    double sum = 0.0;
    for (int i = 0; i < k - 1; ++i) {
        fit.coefficients[static_cast<size_t>(i)] = wls.beta(i);
        sum += wls.beta(i);
    }
    fit.coefficients[static_cast<size_t>(last)] = delta - sum;
    fit.ridge_fallback = wls.ridge_fallback;
    return fit;
}

namespace {

PathAttribution path_attr(AttentionTarget& target, int steps, bool layerwise) {
    if (steps < 1) throw Error("attention attribution: steps must be >= 1");
    const AttentionStack& nat = target.natural();
    const int L = target.num_layers();
    PathAttribution out;
    out.f_natural = target.value_and_grads({}, {}, nullptr);

    std::vector<int> all_layers(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) all_layers[static_cast<size_t>(l)] = l;

    auto scaled = [&](int layer, double alpha) {
        Tensor t = nat.layers[static_cast<size_t>(layer)];
        for (int64_t i = 0; i < t.size(); ++i) t[i] *= alpha;
        return t;
    };

    if (!layerwise) {
        std::vector<Tensor> sums;
        for (int l = 0; l < L; ++l) sums.emplace_back(nat.layers[static_cast<size_t>(l)].shape(), 0.0);
        std::vector<Tensor> grads;
        for (int k = 1; k <= steps; ++k) {
            double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
            std::map<int, Tensor> ov;
            for (int l = 0; l < L; ++l) ov[l] = scaled(l, alpha);
            target.value_and_grads(ov, all_layers, &grads);
            for (int l = 0; l < L; ++l)
                for (int64_t i = 0; i < sums[static_cast<size_t>(l)].size(); ++i)
                    sums[static_cast<size_t>(l)][i] += grads[static_cast<size_t>(l)][i];
        }
        std::map<int, Tensor> zero;
        for (int l = 0; l < L; ++l) zero[l] = scaled(l, 0.0);
        out.f_zero.push_back(target.value_and_grads(zero, {}, nullptr));
        for (int l = 0; l < L; ++l) {
            Tensor attr(nat.layers[static_cast<size_t>(l)].shape());
            for (int64_t i = 0; i < attr.size(); ++i)
                attr[i] = nat.layers[static_cast<size_t>(l)][i] *
                          sums[static_cast<size_t>(l)][i] / static_cast<double>(steps);
            out.attr.push_back(std::move(attr));
        }
    } else {
        std::vector<Tensor> grads;
        for (int l = 0; l < L; ++l) {
            Tensor sum(nat.layers[static_cast<size_t>(l)].shape(), 0.0);
            for (int k = 1; k <= steps; ++k) {
                double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
                std::map<int, Tensor> ov;
                ov[l] = scaled(l, alpha);
                target.value_and_grads(ov, {l}, &grads);
                for (int64_t i = 0; i < sum.size(); ++i) sum[i] += grads[0][i];
            }
            std::map<int, Tensor> zero;
            zero[l] = scaled(l, 0.0);
            out.f_zero.push_back(target.value_and_grads(zero, {}, nullptr));
            Tensor attr(sum.shape());
            for (int64_t i = 0; i < attr.size(); ++i)
                attr[i] = nat.layers[static_cast<size_t>(l)][i] * sum[i] /
                          static_cast<double>(steps);
            out.attr.push_back(std::move(attr));
        }
    }
    return out;
}

}  // namespace

PathAttribution atattr_core(AttentionTarget& target, int steps) {
    return path_attr(target, steps, false);
}

PathAttribution latattr_core(AttentionTarget& target, int steps) {
    return path_attr(target, steps, true);
}

// ---------------------------------------------------------------------------
// Model adapters.

namespace {

class ModelEmbeddingTarget : public EmbeddingTarget {
public:
    ModelEmbeddingTarget(const Model& m, const Instance& inst) : rt_(m), inst_(&inst) {
        t_ = ExplainTarget::of(rt_.predict(inst));
    }
    int seq_len() const override { return rt_.seq_len(); }
    Tensor natural() override { return rt_.natural_embeddings(*inst_); }
    Tensor baseline() override { return rt_.baseline_embeddings(); }
    double value_and_grad(const Tensor& e, Tensor* g) override {
        return rt_.embedding_grad(*inst_, t_, &e, g);
    }
    const ExplainTarget& target() const { return t_; }

private:
    QaRuntime rt_;
    const Instance* inst_;
    ExplainTarget t_;
};

class ModelMaskOracle : public MaskOracle {
public:
    ModelMaskOracle(const Model& m, const Instance& inst, int mask_token, bool probability)
        : rt_(m), inst_(&inst), mask_token_(mask_token), probability_(probability) {
        t_ = ExplainTarget::of(rt_.predict(inst));
        enc_ = rt_.encode_instance(inst);
        features_ = maskable_positions(enc_);
    }
    int num_features() const override { return static_cast<int>(features_.size()); }
    double value(const std::vector<bool>& kept) override {
        std::vector<int> ids = enc_.ids;
        for (size_t f = 0; f < features_.size(); ++f)
            if (!kept[f]) ids[static_cast<size_t>(features_[f])] = mask_token_;
        Prediction p = rt_.predict_ids(*inst_, ids);
        return probability_ ? rt_.target_probability(p, t_) : logit_of(p, t_);
    }
    const std::vector<int>& features() const { return features_; }
    const ExplainTarget& target() const { return t_; }

private:
    QaRuntime rt_;
    const Instance* inst_;
    ExplainTarget t_;
    Encoding enc_;
    std::vector<int> features_;
    int mask_token_;
    bool probability_;
};

class ModelAttentionTarget : public AttentionTarget {
public:
    ModelAttentionTarget(const Model& m, const Instance& inst) : rt_(m), inst_(&inst) {
        t_ = ExplainTarget::of(rt_.predict(inst, &nat_));
    }
    int num_layers() const override { return static_cast<int>(nat_.layers.size()); }
    const AttentionStack& natural() const override { return nat_; }
    double value_and_grads(const std::map<int, Tensor>& overrides,
                           const std::vector<int>& grad_layers,
                           std::vector<Tensor>* grads) override {
        if (grad_layers.empty() || grads == nullptr) {
            Prediction p = overrides.empty() ? rt_.predict(*inst_)
                                             : rt_.predict_override(*inst_, overrides);
            return logit_of(p, t_);
        }
        return rt_.attention_grad(*inst_, t_, overrides, grad_layers, grads);
    }
    const ExplainTarget& target() const { return t_; }

private:
    QaRuntime rt_;
    const Instance* inst_;
    ExplainTarget t_;
    AttentionStack nat_;
};

AttributionMap make_token_map(const Model& model, const Instance& inst, const char* method) {
    AttributionMap a;
    a.kind = AttributionMap::Kind::Token;
    a.method = method;
    a.instance_id = inst.id;
    a.token_scores.assign(static_cast<size_t>(model.config().max_seq), 0.0);
    return a;
}

Tensor pool_pairwise(const PathAttribution& pa, int heads, int n) {
    Tensor s({n, n}, 0.0);
    for (const Tensor& layer : pa.attr)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    s.at(i, j) += layer[(static_cast<int64_t>(h) * n + i) * n + j];
    return s;
}

void zero_pad_positions_token(std::vector<double>& scores, const Encoding& enc) {
    for (size_t i = static_cast<size_t>(enc.length); i < scores.size(); ++i) scores[i] = 0.0;
}

void zero_pad_positions_pair(Tensor& s, const Encoding& enc) {
    int n = s.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i >= enc.length || j >= enc.length) s.at(i, j) = 0.0;
}

}  // namespace

AttributionMap intgrad_tokens(const Model& model, const Instance& inst,
                              const IntegrationConfig& cfg) {
    ModelEmbeddingTarget target(model, inst);
    AttributionMap a = make_token_map(model, inst, "intgrad");
    a.steps = cfg.steps;
    a.target = target_string(target.target());
    a.token_scores = intgrad_core(target, cfg.steps);
    zero_pad_positions_token(a.token_scores, encode(inst, model.vocab(), model.config().max_seq));
    return a;
}

AttributionMap lime_tokens(const Model& model, const Instance& inst, const SurrogateConfig& cfg) {
    ModelMaskOracle oracle(model, inst, cfg.mask_token, /*probability=*/true);
    SurrogateFit fit = lime_core(oracle, cfg);
    AttributionMap a = make_token_map(model, inst, "lime");
    a.seed = cfg.seed;
    a.target = target_string(oracle.target());
    a.ridge_fallback = fit.ridge_fallback;
    if (fit.ridge_fallback) a.note = "ridge fallback";
    for (size_t f = 0; f < oracle.features().size(); ++f)
        a.token_scores[static_cast<size_t>(oracle.features()[f])] = fit.coefficients[f];
    return a;
}

AttributionMap kernelshap_tokens(const Model& model, const Instance& inst,
                                 const SurrogateConfig& cfg) {
    ModelMaskOracle oracle(model, inst, cfg.mask_token, /*probability=*/true);
    SurrogateFit fit = kernelshap_core(oracle, cfg);
    AttributionMap a = make_token_map(model, inst, "shap");
    a.seed = cfg.seed;
    a.target = target_string(oracle.target());
    a.ridge_fallback = fit.ridge_fallback;
    if (fit.ridge_fallback) a.note = "ridge fallback";
    for (size_t f = 0; f < oracle.features().size(); ++f)
        a.token_scores[static_cast<size_t>(oracle.features()[f])] = fit.coefficients[f];
    return a;
}

AttributionMap diffmask_per_example(const Model& model, const Instance& inst, double sparsity,
                                    int opt_steps) {
    if (sparsity < 0.0) throw Error("diffmask: sparsity must be >= 0");
    if (opt_steps < 1) throw Error("diffmask: opt_steps must be >= 1");
    const int n = model.config().max_seq;
    const int d = model.config().hidden;

    QaRuntime probe(model);
    Prediction base = probe.predict(inst);
    Encoding enc = probe.encode_instance(inst);
    std::vector<int> gated = maskable_positions(enc);
    const int L = static_cast<int>(gated.size());
    if (L < 1) throw Error("diffmask: no maskable tokens");

    // natural and mask-token embedding rows
    Tensor nat = probe.natural_embeddings(inst);
    Tensor mask_rows({n, d});
    const Tensor& table = model.param("tok_emb");
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) mask_rows.at(i, c) = table.at(Vocabulary::kMask, c);

    // gate program: sigmoid gates via a two-column softmax, gated embeddings
    // feeding the shared encoder, KL-to-original plus the sparsity penalty
    Tape tape;
    NodeId theta = tape.input({L, 2}, "theta");
    NodeId gates = tape.slice(tape.softmax(theta), 0, L, 0, 1);
    Tensor sel({n, L}, 0.0);
    Tensor keep({n, 1}, 0.0);
    for (int i = 0; i < enc.length; ++i) keep.at(i, 0) = 1.0;
    for (int f = 0; f < L; ++f) {
        sel.at(gated[static_cast<size_t>(f)], f) = 1.0;
        keep.at(gated[static_cast<size_t>(f)], 0) = 0.0;
    }
    NodeId gfull = tape.add(tape.matmul(tape.constant(std::move(sel)), gates),
                            tape.constant(std::move(keep)));
    NodeId nat_node = tape.constant(std::move(nat));
    NodeId mask_node = tape.constant(std::move(mask_rows));
    NodeId diff = tape.add(nat_node, tape.scale(mask_node, -1.0));
    NodeId gated_emb = tape.add(mask_node, tape.mul(diff, gfull));

    EncoderNodes encn = build_encoder(tape, model, n, gated_emb);
    Tensor attn_mask({1, n}), ctx_mask({1, n});
    for (int i = 0; i < n; ++i) {
        attn_mask[i] = enc.ids[static_cast<size_t>(i)] == Vocabulary::kPad
                           ? Tape::kMaskNegative : 0.0;
        ctx_mask[i] = (i >= enc.c_begin && i < enc.c_end) ? 0.0 : Tape::kMaskNegative;
    }
    tape.bind(encn.attn_mask, &attn_mask);
    tape.bind(encn.ctx_mask, &ctx_mask);

    NodeId kl;
    Tensor p_yn({1, 2}), p_st({1, n}), p_en({1, n});
    if (inst.answer.type == TaskType::YesNo) {
        double mx = std::max(base.yn_logits[0], base.yn_logits[1]);
        double z = std::exp(base.yn_logits[0] - mx) + std::exp(base.yn_logits[1] - mx);
        p_yn[0] = std::exp(base.yn_logits[0] - mx) / z;
        p_yn[1] = std::exp(base.yn_logits[1] - mx) / z;
        kl = tape.cross_entropy(encn.yn, tape.constant(p_yn));
    } else {
        auto softmax_row = [](const std::vector<double>& v, Tensor& out) {
            double mx = *std::max_element(v.begin(), v.end());
            double z = 0.0;
            for (double x : v) z += std::exp(x - mx);
            for (size_t i = 0; i < v.size(); ++i) out[static_cast<int64_t>(i)] =
                std::exp(v[i] - mx) / z;
        };
        softmax_row(base.start_logits, p_st);
        softmax_row(base.end_logits, p_en);
        kl = tape.add(tape.cross_entropy(encn.st, tape.constant(p_st)),
                      tape.cross_entropy(encn.en, tape.constant(p_en)));
    }
    NodeId sumg = tape.matmul(tape.constant(Tensor({1, L}, 1.0)), gates);
    NodeId total = tape.add(kl, tape.scale(sumg, sparsity));
    tape.set_output(total);
    tape.mark(theta);

    // gates start open: the objective prunes from full retention, where the
    // penalty works against KL resistance (a half-open start sits in a flat
    // KL plateau and the optimizer stalls)
    Tensor theta_t({L, 2}, 0.0);
    for (int f = 0; f < L; ++f) {
        theta_t.at(f, 0) = 2.0;
        theta_t.at(f, 1) = -2.0;
    }
    tape.bind(theta, &theta_t);

    // Adam on the gate parameters
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Tensor m({L, 2}, 0.0), v({L, 2}, 0.0);
    for (int step = 1; step <= opt_steps; ++step) {
        double loss = tape.forward()[0];
        if (!std::isfinite(loss))
            throw Error("diffmask: objective diverged at step " + std::to_string(step));
        tape.backward(Tensor::scalar(1.0));
        const Tensor& g = tape.grad(theta);
        double bc1 = 1.0 - std::pow(b1, step), bc2 = 1.0 - std::pow(b2, step);
        for (int64_t i = 0; i < theta_t.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            theta_t[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    tape.forward();
    const Tensor& g_final = tape.value(gates);

    AttributionMap a = make_token_map(model, inst, "diffmask");
    a.target = target_string(ExplainTarget::of(base));
    a.note = "scores are final gates; ungated positions report 0";
    for (int f = 0; f < L; ++f)
        a.token_scores[static_cast<size_t>(gated[static_cast<size_t>(f)])] = g_final[f];
    return a;
}

std::vector<std::pair<int, int>> default_occlusion_candidates(const Instance& inst) {
    std::vector<std::pair<int, int>> out;
    for (int q : inst.salient_q)
        for (int c : inst.salient_c) out.emplace_back(q, c);
    return out;
}

AttributionMap occlusion_pairs(const Model& model, const Instance& inst,
                               const std::vector<std::pair<int, int>>& candidates) {
    if (candidates.empty()) throw Error("occlusion: empty candidate pair list");
    QaRuntime rt(model);
    ExplainTarget t = ExplainTarget::of(rt.predict(inst));
    Encoding enc = rt.encode_instance(inst);
    const int n = rt.seq_len();

    AttributionMap a;
    a.kind = AttributionMap::Kind::Pairwise;
    a.method = "occlusion";
    a.instance_id = inst.id;
    a.target = target_string(t);
    a.pair_scores = Tensor({n, n}, 0.0);

    auto is_special = [&](int pos) {
        int id = enc.ids[static_cast<size_t>(pos)];
        return id == Vocabulary::kCls || id == Vocabulary::kSep || id == Vocabulary::kPad;
    };

    for (auto [i, j] : candidates) {
        if (i < 0 || j < 0 || i >= enc.length || j >= enc.length)
            throw Error("occlusion: candidate pair outside the encoded sequence");
        std::vector<int> ids = enc.ids;
        for (int pos = 0; pos < enc.length; ++pos) {
            if (pos == i || pos == j || is_special(pos)) continue;
            ids[static_cast<size_t>(pos)] = Vocabulary::kMask;
        }
        double v = logit_of(rt.predict_ids(inst, ids), t);
        a.pair_scores.at(i, j) = v;
        a.pair_scores.at(j, i) = v;
    }
    return a;
}

AttributionMap atattr_pairs(const Model& model, const Instance& inst,
                            const IntegrationConfig& cfg) {
    ModelAttentionTarget target(model, inst);
    PathAttribution pa = atattr_core(target, cfg.steps);
    AttributionMap a;
    a.kind = AttributionMap::Kind::Pairwise;
    a.method = "atattr";
    a.instance_id = inst.id;
    a.steps = cfg.steps;
    a.target = target_string(target.target());
    a.pair_scores =
        pool_pairwise(pa, model.config().heads, model.config().max_seq);
    zero_pad_positions_pair(a.pair_scores, encode(inst, model.vocab(), model.config().max_seq));
    return a;
}

AttributionMap latattr_pairs(const Model& model, const Instance& inst,
                             const IntegrationConfig& cfg) {
    ModelAttentionTarget target(model, inst);
    PathAttribution pa = latattr_core(target, cfg.steps);
    AttributionMap a;
    a.kind = AttributionMap::Kind::Pairwise;
    a.method = "latattr";
    a.instance_id = inst.id;
    a.steps = cfg.steps;
    a.target = target_string(target.target());
    a.pair_scores =
        pool_pairwise(pa, model.config().heads, model.config().max_seq);
    zero_pad_positions_pair(a.pair_scores, encode(inst, model.vocab(), model.config().max_seq));
    return a;
}

// ---------------------------------------------------------------------------

std::string attribution_to_json(const AttributionMap& attr) {
    nlohmann::json j;
    j["method"] = attr.method;
    j["instance_id"] = attr.instance_id;
    j["kind"] = attr.kind == AttributionMap::Kind::Token ? "token" : "pairwise";
    j["m"] = attr.steps;
    j["seed"] = attr.seed;
    j["target"] = attr.target;
    if (attr.ridge_fallback) j["ridge_fallback"] = true;
    if (!attr.note.empty()) j["note"] = attr.note;
    if (attr.kind == AttributionMap::Kind::Token) {
        j["scores"] = attr.token_scores;
    } else {
        nlohmann::json triplets = nlohmann::json::array();
        int n = attr.pair_scores.cols();
        for (int i = 0; i < n; ++i)
            for (int jj = 0; jj < n; ++jj)
                if (attr.pair_scores.at(i, jj) != 0.0)
                    triplets.push_back({i, jj, attr.pair_scores.at(i, jj)});
        j["n"] = n;
        j["scores"] = std::move(triplets);
    }
    return j.dump();
}

AttributionMap attribution_from_json(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    AttributionMap a;
    a.method = j.at("method").get<std::string>();
    a.instance_id = j.at("instance_id").get<std::string>();
    a.steps = j.value("m", 0);
    a.seed = j.value("seed", 0ull);
    a.target = j.value("target", "");
    a.ridge_fallback = j.value("ridge_fallback", false);
    a.note = j.value("note", "");
    if (j.at("kind") == "token") {
        a.kind = AttributionMap::Kind::Token;
        a.token_scores = j.at("scores").get<std::vector<double>>();
    } else {
        a.kind = AttributionMap::Kind::Pairwise;
        int n = j.at("n").get<int>();
        a.pair_scores = Tensor({n, n}, 0.0);
        for (const auto& t : j.at("scores")) {
            int i = t.at(0).get<int>(), jj = t.at(1).get<int>();
            a.pair_scores.at(i, jj) = t.at(2).get<double>();
        }
    }
    return a;
}

}  // namespace attrsim
