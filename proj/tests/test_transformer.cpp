#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "attrsim/checkpoint.hpp"
#include "attrsim/counterfactuals.hpp"
#include "attrsim/model.hpp"
#include "attrsim/rng.hpp"
#include "attrsim/train.hpp"

using namespace attrsim;

namespace {

Instance yesno_instance() {
    Instance inst;
    inst.id = "t0";
    inst.question = {"are", "alice", "and", "bob", "both", "red", "?"};
    inst.context = {"alice", "is", "red", ".", "bob", "is", "red", "."};
    inst.answer.type = TaskType::YesNo;
    inst.answer.yes = true;
    return inst;
}

Instance span_instance() {
    Instance inst;
    inst.id = "t1";
    inst.question = {"what", "does", "alice", "sell", "?"};
    inst.context = {"alice", "sells", "the", "lamp", ".", "bob", "sells", "the", "rope", "."};
    inst.answer.type = TaskType::Span;
    inst.answer.start = 3;
    inst.answer.end = 4;
    return inst;
}

// Independent straight-line reimplementation of the encoder forward pass.
// Plain loops only; no tape calls.
struct OracleOut {
    std::vector<double> yn;          // 2
    std::vector<double> st, en;      // n
};

OracleOut oracle_forward(const Model& m, const Instance& inst, int n) {
    const ModelConfig& cfg = m.config();
    const int d = cfg.hidden, h = cfg.heads, dh = cfg.head_dim(), f = cfg.ffn_dim();
    Encoding enc = encode(inst, m.vocab(), n);

    auto P = [&](const std::string& name) -> const Tensor& { return m.param(name); };
    auto gelu = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };
    auto layer_norm = [&](std::vector<double>& x, const Tensor& g, const Tensor& b) {
        for (int r = 0; r < n; ++r) {
            double mean = 0.0;
            for (int c = 0; c < d; ++c) mean += x[r * d + c];
            mean /= d;
            double var = 0.0;
            for (int c = 0; c < d; ++c) {
                double dv = x[r * d + c] - mean;
                var += dv * dv;
            }
            var /= d;
            double inv = 1.0 / std::sqrt(var + 1e-5);
            for (int c = 0; c < d; ++c) x[r * d + c] = (x[r * d + c] - mean) * inv * g[c] + b[c];
        }
    };

    std::vector<double> x(n * d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
            x[i * d + c] = P("tok_emb").at(enc.ids[i], c) + P("pos_emb").at(i, c);

    std::vector<double> mask(n, 0.0);
    for (int i = 0; i < n; ++i)
        if (enc.ids[i] == Vocabulary::kPad) mask[i] = -1e30;

    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "l" + std::to_string(l) + ".";
        std::vector<double> hx = x;
        layer_norm(hx, P(pre + "ln1.g"), P(pre + "ln1.b"));

        auto affine = [&](const char* wn, const char* bn, int cols) {
            const Tensor& W = P(pre + wn);
            const Tensor& B = P(pre + bn);
            std::vector<double> out(n * cols);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < cols; ++c) {
                    double s = B[c];
                    for (int k = 0; k < d; ++k) s += hx[r * d + k] * W.at(k, c);
                    out[r * cols + c] = s;
                }
            return out;
        };
        std::vector<double> Q = affine("wq", "bq", d), K = affine("wk", "bk", d),
                            V = affine("wv", "bv", d);

        std::vector<double> O(n * d, 0.0);
        for (int head = 0; head < h; ++head) {
            int off = head * dh;
            for (int r = 0; r < n; ++r) {
                std::vector<double> row(n);
                double mx = -1e300;
                for (int c = 0; c < n; ++c) {
                    double s = 0.0;
                    for (int k = 0; k < dh; ++k) s += Q[r * d + off + k] * K[c * d + off + k];
                    row[c] = s / std::sqrt(static_cast<double>(dh)) + mask[c];
                    mx = std::max(mx, row[c]);
                }
                double z = 0.0;
                for (int c = 0; c < n; ++c) {
                    row[c] = std::exp(row[c] - mx);
                    z += row[c];
                }
                for (int c = 0; c < n; ++c) row[c] /= z;
                for (int k = 0; k < dh; ++k) {
                    double s = 0.0;
                    for (int c = 0; c < n; ++c) s += row[c] * V[c * d + off + k];
                    O[r * d + off + k] = s;
                }
            }
        }
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) {
                double s = P(pre + "bo")[c];
                for (int k = 0; k < d; ++k) s += O[r * d + k] * P(pre + "wo").at(k, c);
                x[r * d + c] += s;
            }

        std::vector<double> h2 = x;
        layer_norm(h2, P(pre + "ln2.g"), P(pre + "ln2.b"));
        for (int r = 0; r < n; ++r) {
            std::vector<double> mid(f);
            for (int c = 0; c < f; ++c) {
                double s = P(pre + "b1")[c];
                for (int k = 0; k < d; ++k) s += h2[r * d + k] * P(pre + "w1").at(k, c);
                mid[c] = gelu(s);
            }
            for (int c = 0; c < d; ++c) {
                double s = P(pre + "b2")[c];
                for (int k = 0; k < f; ++k) s += mid[k] * P(pre + "w2").at(k, c);
                x[r * d + c] += s;
            }
        }
    }

    layer_norm(x, P("lnf.g"), P("lnf.b"));
    OracleOut out;
    out.yn.resize(2);
    for (int c = 0; c < 2; ++c) {
        double s = P("yn.b")[c];
        for (int k = 0; k < d; ++k) s += x[k] * P("yn.w").at(k, c);
        out.yn[c] = s;
    }
    out.st.resize(n);
    out.en.resize(n);
    for (int i = 0; i < n; ++i) {
        double ctx = (i >= enc.c_begin && i < enc.c_end) ? 0.0 : -1e30;
        double s = P("start.b")[0], e = P("end.b")[0];
        for (int k = 0; k < d; ++k) {
            s += P("start.w")[k] * x[i * d + k];
            e += P("end.w")[k] * x[i * d + k];
        }
        out.st[i] = s + ctx;
        out.en[i] = e + ctx;
    }
    return out;
}

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 16;
    cfg.max_seq = 20;
    return cfg;
}

}  // namespace

TEST_CASE("encode lays out CLS q SEP c SEP with PAD fill") {
    const Vocabulary& v = Vocabulary::builtin();
    Instance inst = yesno_instance();
    Encoding enc = encode(inst, v, 24);
    REQUIRE(enc.ids.size() == 24);
    CHECK(enc.ids[0] == Vocabulary::kCls);
    CHECK(enc.ids[1] == v.id("are"));
    CHECK(enc.ids[enc.q_end] == Vocabulary::kSep);
    CHECK(enc.c_begin == enc.q_end + 1);
    CHECK(enc.ids[enc.c_end] == Vocabulary::kSep);
    CHECK(enc.length == 1 + 7 + 1 + 8 + 1);
    for (int i = enc.length; i < 24; ++i) CHECK(enc.ids[i] == Vocabulary::kPad);

    auto words = decode(enc, v);
    CHECK(words[0] == "<cls>");
    CHECK(words[1] == "are");
    CHECK(words[5] == "both");
}

TEST_CASE("encode errors: empty context, unknown word, overflow") {
    const Vocabulary& v = Vocabulary::builtin();
    Instance inst = yesno_instance();
    inst.context.clear();
    CHECK_THROWS_AS(encode(inst, v, 24), Error);

    Instance unk = yesno_instance();
    unk.question[1] = "zzz";
    CHECK_THROWS_AS(encode(unk, v, 24), Error);

    Instance big = yesno_instance();
    CHECK_THROWS_AS(encode(big, v, 10), Error);
}

TEST_CASE("decode(encode(x)) round-trips the token sequence") {
    const Vocabulary& v = Vocabulary::builtin();
    Instance inst = span_instance();
    Encoding enc = encode(inst, v, 32);
    auto words = decode(enc, v);
    std::vector<std::string> expect = {"<cls>"};
    expect.insert(expect.end(), inst.question.begin(), inst.question.end());
    expect.push_back("<sep>");
    expect.insert(expect.end(), inst.context.begin(), inst.context.end());
    expect.push_back("<sep>");
    CHECK(words == expect);
}

TEST_CASE("untrained forward matches the straight-line oracle to 1e-10") {
    Model m(small_cfg(), Vocabulary::builtin(), 0);
    for (const Instance& inst : {yesno_instance(), span_instance()}) {
        Instance local = inst;
        // keep within max_seq 20
        if (local.answer.type == TaskType::Span) local.context.resize(5);
        OracleOut want = oracle_forward(m, local, m.config().max_seq);
        Prediction got = m.forward_qa(local);
        for (int c = 0; c < 2; ++c) CHECK(std::fabs(got.yn_logits[c] - want.yn[c]) < 1e-10);
        for (int i = 0; i < m.config().max_seq; ++i) {
            CHECK(std::fabs(got.start_logits[i] - want.st[i]) < 1e-10);
            CHECK(std::fabs(got.end_logits[i] - want.en[i]) < 1e-10);
        }
    }
}

TEST_CASE("prediction is invariant to pad length") {
    ModelConfig cfg = small_cfg();
    cfg.max_seq = 40;
    Model m(cfg, Vocabulary::builtin(), 3);
    Instance inst = yesno_instance();
    QaRuntime shorter(m, 20);
    QaRuntime longer(m, 40);
    Prediction a = shorter.predict(inst);
    Prediction b = longer.predict(inst);
    CHECK(a.yes == b.yes);
    CHECK(std::fabs(a.yn_logits[0] - b.yn_logits[0]) < 1e-9);
    CHECK(std::fabs(a.yn_logits[1] - b.yn_logits[1]) < 1e-9);
    CHECK(a.confidence == doctest::Approx(b.confidence).epsilon(1e-9));
}

TEST_CASE("identity intervention reproduces forward_qa") {
    Model m(small_cfg(), Vocabulary::builtin(), 4);
    Instance inst = yesno_instance();
    AttentionStack attn;
    Prediction base = m.forward_qa(inst, &attn);
    REQUIRE(attn.layers.size() == 2);
    for (const Tensor& a : attn.layers) {
        // natural rows sum to 1 over non-PAD columns
        for (int r = 0; r < a.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < a.cols(); ++c) s += a.at(r, c);
            CHECK(std::fabs(s - 1.0) <= 1e-9);
        }
    }
    std::map<int, Tensor> overrides;
    for (size_t l = 0; l < attn.layers.size(); ++l)
        overrides[static_cast<int>(l)] = attn.layers[l];
    Prediction same = m.forward_with_override(inst, overrides);
    CHECK(same.yes == base.yes);
    for (int c = 0; c < 2; ++c)
        CHECK(std::fabs(same.yn_logits[c] - base.yn_logits[c]) < 1e-9);
}

TEST_CASE("scaled override keeps rows at alpha; zero override is input-independent") {
    Model m(small_cfg(), Vocabulary::builtin(), 5);
    Instance inst = yesno_instance();
    AttentionStack attn;
    m.forward_qa(inst, &attn);

    const double alpha = 0.37;
    std::map<int, Tensor> overrides;
    for (size_t l = 0; l < attn.layers.size(); ++l) {
        Tensor scaled = attn.layers[l];
        for (int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= alpha;
        overrides[static_cast<int>(l)] = scaled;
    }
    AttentionStack effective;
    m.forward_with_override(inst, overrides, &effective);
    for (const Tensor& a : effective.layers)
        for (int r = 0; r < a.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < a.cols(); ++c) s += a.at(r, c);
            CHECK(std::fabs(s - alpha) <= 1e-9);  // no renormalization
        }

    // all-zero attention: yes/no logits equal the attention-ablated constant,
    // identical across instances with this padding pattern
    std::map<int, Tensor> zeros;
    for (size_t l = 0; l < attn.layers.size(); ++l)
        zeros[static_cast<int>(l)] = Tensor(attn.layers[l].shape(), 0.0);
    Prediction za = m.forward_with_override(inst, zeros);

    Instance other = yesno_instance();
    other.id = "t0b";
    other.question[5] = "blue";
    other.context[2] = "green";
    other.context[6] = "teal";
    Prediction zb = m.forward_with_override(other, zeros);
    CHECK(std::fabs(za.yn_logits[0] - zb.yn_logits[0]) < 1e-9);
    CHECK(std::fabs(za.yn_logits[1] - zb.yn_logits[1]) < 1e-9);
}

TEST_CASE("single-layer model: overriding layer 0 is overriding all layers") {
    ModelConfig cfg = small_cfg();
    cfg.layers = 1;
    Model m(cfg, Vocabulary::builtin(), 6);
    Instance inst = yesno_instance();
    AttentionStack attn;
    m.forward_qa(inst, &attn);
    Tensor half = attn.layers[0];
    for (int64_t i = 0; i < half.size(); ++i) half[i] *= 0.5;
    Prediction a = m.forward_with_override(inst, {{0, half}});
    Prediction b = m.forward_with_override(inst, {{0, half}});  // the full set is {0}
    CHECK(a.yn_logits[0] == b.yn_logits[0]);
    CHECK(a.yn_logits[1] == b.yn_logits[1]);
}

TEST_CASE("override with wrong shape is an error") {
    Model m(small_cfg(), Vocabulary::builtin(), 7);
    Instance inst = yesno_instance();
    std::map<int, Tensor> bad;
    bad[0] = Tensor({3, 3}, 0.0);
    CHECK_THROWS_AS(m.forward_with_override(inst, bad), Error);
}

TEST_CASE("qa loss gradient matches central finite differences") {
    Model m(small_cfg(), Vocabulary::builtin(), 8);
    Instance inst = yesno_instance();
    std::vector<std::pair<std::string, Tensor>> grads;
    double base_loss = qa_loss(m, inst, &grads);
    CHECK(std::isfinite(base_loss));

    // Sampled coordinates per parameter. Central differences at step 1e-5
    // resolve derivatives down to about 1e-11 of the loss scale, so pairs
    // agreeing within 1e-8 absolutely are counted as exact (this covers
    // coordinates whose true gradient is zero, e.g. the span bias).
    Rng rng(7);
    const double step = 1e-5;
    auto rel_err = [](double numeric, double analytic) {
        double diff = std::fabs(numeric - analytic);
        if (diff <= 1e-8) return 0.0;
        return diff / std::max({std::fabs(numeric), std::fabs(analytic), 1e-8});
    };
    auto fd_worst = [&](const Instance& ex,
                        std::vector<std::pair<std::string, Tensor>>& gs) {
        double worst = 0.0;
        for (auto& [name, g] : gs) {
            Tensor& w = m.param(name);
            for (int probe = 0; probe < 3; ++probe) {
                int64_t idx = rng.uniform_int(0, static_cast<int>(w.size()) - 1);
                double keep = w[idx];
                w[idx] = keep + step;
                double fp = qa_loss(m, ex);
                w[idx] = keep - step;
                double fm = qa_loss(m, ex);
                w[idx] = keep;
                worst = std::max(worst, rel_err((fp - fm) / (2.0 * step), g[idx]));
            }
        }
        return worst;
    };

    double worst = fd_worst(inst, grads);
    CHECK_MESSAGE(worst < 1e-4, "max rel err " << worst);

    Instance sp = span_instance();
    sp.context.resize(5);
    std::vector<std::pair<std::string, Tensor>> sgrads;
    qa_loss(m, sp, &sgrads);
    double worst_sp = fd_worst(sp, sgrads);
    CHECK_MESSAGE(worst_sp < 1e-4, "span max rel err " << worst_sp);
}

TEST_CASE("zero-epoch training leaves weights unchanged") {
    Model m(small_cfg(), Vocabulary::builtin(), 9);
    Tensor before = m.param("l0.wq");
    TrainConfig tc;
    tc.max_epochs = 0;
    auto metrics = train(m, {yesno_instance()}, tc);
    CHECK(metrics.epochs == 0);
    const Tensor& after = m.param("l0.wq");
    for (int64_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

// Convergence to the 0.99 target at the 2000-example fixture scale is
// exercised by the acceptance suite; here training must make progress and be
// bit-exactly repeatable.
TEST_CASE("training is deterministic and reduces the loss") {
    auto dataset = gen_comparison(41, 160);
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.hidden = 32;
    cfg.max_seq = 24;

    TrainConfig tc;
    tc.seed = 1;
    tc.max_epochs = 6;
    tc.lr = 1e-3;
    tc.target_acc = 1.1;  // never reached; run all epochs

    Model a(cfg, Vocabulary::builtin(), 10);
    TrainMetrics ma = train(a, dataset, tc);
    CHECK(ma.epochs == 6);
    CHECK(ma.epoch_loss.front() > ma.epoch_loss.back());

    Model b(cfg, Vocabulary::builtin(), 10);
    TrainMetrics mb = train(b, dataset, tc);
    CHECK(ma.final_loss == mb.final_loss);
    for (const auto& name : a.param_names()) {
        const Tensor& wa = a.param(name);
        const Tensor& wb = b.param(name);
        bool same = true;
        for (int64_t i = 0; i < wa.size(); ++i)
            if (wa[i] != wb[i]) same = false;
        CHECK_MESSAGE(same, name << " differs between identical runs");
    }
}

TEST_CASE("predict_confidence: range, determinism, untrained spread") {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.hidden = 16;
    cfg.max_seq = 20;
    Instance inst = yesno_instance();
    double mean = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        Model m(cfg, Vocabulary::builtin(), static_cast<uint64_t>(seed));
        double c = m.predict_confidence(inst);
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
        CHECK(c >= 0.5);  // confidence of the argmax of 2 classes
        mean += c;
    }
    mean /= 100.0;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.4));  // ~0.5 +- 0.2

    Model m(cfg, Vocabulary::builtin(), 424242);
    CHECK(m.predict_confidence(inst) == m.predict_confidence(inst));
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Model m(small_cfg(), Vocabulary::builtin(), 12);
    // perturb away from init to make the test meaningful
    m.param("l0.wq")[3] = 0.1234567890123456789;

    auto path = std::filesystem::temp_directory_path() / "attrsim_ckpt_test.json";
    save_checkpoint(m, path.string());
    Model r = load_checkpoint(path.string());
    CHECK(r.config().layers == m.config().layers);
    for (const auto& name : m.param_names()) {
        const Tensor& wa = m.param(name);
        const Tensor& wb = r.param(name);
        REQUIRE(wa.shape() == wb.shape());
        for (int64_t i = 0; i < wa.size(); ++i) {
            if (wa[i] != wb[i]) {
                CHECK_MESSAGE(false, name << "[" << i << "] not bit-exact");
                break;
            }
        }
    }
    // save(load(x)) is byte-identical to save(x)
    auto path2 = std::filesystem::temp_directory_path() / "attrsim_ckpt_test2.json";
    save_checkpoint(r, path2.string());
    std::ifstream f1(path), f2(path2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}
