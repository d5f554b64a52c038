#include "attrsim/train.hpp"

#include <cmath>
#include <thread>

#include "attrsim/rng.hpp"

namespace attrsim {

namespace {

// Loss graph over the shared encoder: cross entropy against bound target
// distributions, weights marked for gradients.
struct LossProgram {
    Tape tape;
    EncoderNodes enc;
    Tensor ids_t, attn_mask_t, ctx_mask_t;
    Tensor yn_target, st_target, en_target;
    int n;

    LossProgram(const Model& model, TaskType task, int seq_len)
        : n(seq_len) {
        enc = build_encoder(tape, model, seq_len);
        NodeId loss;
        if (task == TaskType::YesNo) {
            NodeId t = tape.input({1, 2}, "yn_target");
            yn_target = Tensor({1, 2});
            tape.bind(t, &yn_target);
            loss = tape.cross_entropy(enc.yn, t);
        } else {
            NodeId ts = tape.input({1, seq_len}, "start_target");
            NodeId te = tape.input({1, seq_len}, "end_target");
            st_target = Tensor({1, seq_len});
            en_target = Tensor({1, seq_len});
            tape.bind(ts, &st_target);
            tape.bind(te, &en_target);
            loss = tape.add(tape.cross_entropy(enc.st, ts), tape.cross_entropy(enc.en, te));
        }
        tape.set_output(loss);
        for (const auto& [name, id] : enc.weights) tape.mark(id);

        ids_t = Tensor({seq_len});
        attn_mask_t = Tensor({1, seq_len});
        ctx_mask_t = Tensor({1, seq_len});
        tape.bind(enc.ids_in, &ids_t);
        tape.bind(enc.attn_mask, &attn_mask_t);
        tape.bind(enc.ctx_mask, &ctx_mask_t);
    }

    void bind_example(const Instance& inst, const Vocabulary& vocab) {
        Encoding e = encode(inst, vocab, n);
        for (int i = 0; i < n; ++i) {
            ids_t[i] = e.ids[static_cast<size_t>(i)];
            attn_mask_t[i] =
                e.ids[static_cast<size_t>(i)] == Vocabulary::kPad ? Tape::kMaskNegative : 0.0;
            ctx_mask_t[i] = (i >= e.c_begin && i < e.c_end) ? 0.0 : Tape::kMaskNegative;
        }
        if (inst.answer.type == TaskType::YesNo) {
            yn_target.fill(0.0);
            yn_target[inst.answer.yes ? 1 : 0] = 1.0;
        } else {
            st_target.fill(0.0);
            en_target.fill(0.0);
            st_target[encoded_span_start(inst, e)] = 1.0;
            en_target[encoded_span_end(inst, e) - 1] = 1.0;
        }
    }

    // loss value; gradients accumulated into `grads` (parallel to names)
    double accumulate(const Instance& inst, const Vocabulary& vocab,
                      const std::vector<std::string>& names, std::vector<Tensor>& grads) {
        bind_example(inst, vocab);
        double loss = tape.forward()[0];
        tape.backward(Tensor::scalar(1.0));
        for (size_t i = 0; i < names.size(); ++i) {
            const Tensor& g = tape.grad(enc.weights.at(names[i]));
            for (int64_t j = 0; j < g.size(); ++j) grads[i][j] += g[j];
        }
        return loss;
    }
};

}  // namespace

double qa_loss(const Model& model, const Instance& inst,
               std::vector<std::pair<std::string, Tensor>>* grads) {
    LossProgram prog(model, inst.answer.type, model.config().max_seq);
    prog.bind_example(inst, model.vocab());
    double loss = prog.tape.forward()[0];
    if (grads) {
        prog.tape.backward(Tensor::scalar(1.0));
        grads->clear();
        for (const auto& name : model.param_names())
            grads->emplace_back(name, prog.tape.grad(prog.enc.weights.at(name)));
    }
    return loss;
}

double evaluate_accuracy(const Model& model, const std::vector<Instance>& dataset) {
    if (dataset.empty()) return 0.0;
    QaRuntime rt(model);
    int correct = 0;
    for (const Instance& inst : dataset) {
        Prediction p = rt.predict(inst);
        if (inst.answer.type == TaskType::YesNo) {
            correct += p.yes == inst.answer.yes;
        } else {
            Encoding e = rt.encode_instance(inst);
            correct += p.start == encoded_span_start(inst, e) &&
                       p.end == encoded_span_end(inst, e);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

TrainMetrics train(Model& model, const std::vector<Instance>& dataset, const TrainConfig& cfg) {
    if (dataset.empty()) throw Error("train: empty dataset");
    TrainMetrics metrics;
    if (cfg.max_epochs <= 0) return metrics;

    const TaskType task = dataset[0].answer.type;
    for (const Instance& inst : dataset)
        if (inst.answer.type != task) throw Error("train: mixed task types in dataset");

    const int n = model.config().max_seq;
    const auto& names = model.param_names();
    const Vocabulary& vocab = model.vocab();

    int nthreads = std::max(1, std::min(cfg.threads, cfg.batch_size));
    std::vector<std::unique_ptr<LossProgram>> programs;
    for (int t = 0; t < nthreads; ++t)
        programs.push_back(std::make_unique<LossProgram>(model, task, n));

    // per-thread gradient buffers plus Adam state
    std::vector<std::vector<Tensor>> grads(static_cast<size_t>(nthreads));
    for (auto& g : grads)
        for (const auto& name : names) g.emplace_back(model.param(name).shape());
    std::vector<Tensor> m_state, v_state;
    for (const auto& name : names) {
        m_state.emplace_back(model.param(name).shape());
        v_state.emplace_back(model.param(name).shape());
    }

    Rng shuffle_rng(cfg.seed);
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    int64_t steps_per_epoch =
        (static_cast<int64_t>(dataset.size()) + cfg.batch_size - 1) / cfg.batch_size;
    int64_t warmup_steps = static_cast<int64_t>(
        cfg.warmup_ratio * static_cast<double>(steps_per_epoch * cfg.max_epochs));

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;

        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
            size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
            int count = static_cast<int>(b1 - b0);

            std::vector<double> losses(static_cast<size_t>(nthreads), 0.0);
            auto worker = [&](int tid) {
                for (auto& g : grads[static_cast<size_t>(tid)]) g.fill(0.0);
                for (size_t i = b0 + static_cast<size_t>(tid); i < b1;
                     i += static_cast<size_t>(nthreads)) {
                    losses[static_cast<size_t>(tid)] += programs[static_cast<size_t>(tid)]->accumulate(
                        dataset[static_cast<size_t>(order[i])], vocab, names,
                        grads[static_cast<size_t>(tid)]);
                }
            };
            if (nthreads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
                for (auto& th : pool) th.join();
            }

            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            epoch_loss += batch_loss;
            if (!std::isfinite(batch_loss))
                throw Error("train: loss diverged (non-finite) at epoch " +
                            std::to_string(epoch));

            // merge thread buffers in fixed order, then one Adam step
            ++step;
            double lr = step <= warmup_steps
                            ? cfg.lr * static_cast<double>(step) /
                                  static_cast<double>(warmup_steps)
                            : cfg.lr;
            double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (size_t pi = 0; pi < names.size(); ++pi) {
                Tensor& w = model.param(names[pi]);
                Tensor& m = m_state[pi];
                Tensor& v = v_state[pi];
                for (int64_t j = 0; j < w.size(); ++j) {
                    double g = 0.0;
                    for (int t = 0; t < nthreads; ++t)
                        g += grads[static_cast<size_t>(t)][pi][j];
                    g /= count;
                    m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                    v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                    w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
                }
            }
        }

        metrics.epochs = epoch + 1;
        double acc = evaluate_accuracy(model, dataset);
        metrics.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
        metrics.epoch_acc.push_back(acc);
        metrics.final_loss = metrics.epoch_loss.back();
        metrics.final_acc = acc;
        if (acc >= cfg.target_acc) {
            metrics.reached_target = true;
            break;
        }
    }
    return metrics;
}

}  // namespace attrsim
