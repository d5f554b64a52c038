#pragma once

#include <vector>

#include "attrsim/model.hpp"

namespace attrsim {

struct TrainConfig {
    double lr = 3e-4;
    int batch_size = 32;
    int max_epochs = 50;
    double target_acc = 0.99;
    uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double warmup_ratio = 0.06;  // linear lr warmup over this share of steps
    int threads = 2;
};

struct TrainMetrics {
    int epochs = 0;
    double final_loss = 0.0;
    double final_acc = 0.0;
    bool reached_target = false;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_acc;
};

// Adam on minibatches until train accuracy reaches the target or max_epochs
// runs out. Deterministic for a fixed seed (fixed-order gradient reduction).
// Throws on divergence (non-finite loss), naming the epoch.
TrainMetrics train(Model& model, const std::vector<Instance>& dataset, const TrainConfig& cfg);

// Accuracy of the model's argmax answers over a dataset.
double evaluate_accuracy(const Model& model, const std::vector<Instance>& dataset);

// Cross-entropy loss of one example, optionally with gradients per parameter
// (ordered like model.param_names()). Exposed for gradient checking.
double qa_loss(const Model& model, const Instance& inst,
               std::vector<std::pair<std::string, Tensor>>* grads = nullptr);

}  // namespace attrsim
