#pragma once

#include <functional>
#include <string>
#include <vector>

#include "attrsim/instance.hpp"
#include "attrsim/model.hpp"

namespace attrsim {

enum class SettingKind { YesNo, Bridge, Distractor };

const char* setting_name(SettingKind k);
SettingKind setting_from_name(const std::string& name);

struct Setting {
    SettingKind kind;
    std::string hypothesis;  // descriptive text of the hypothesis being tested
    std::string label_rule;  // id of the z-labeling rule

    static Setting of(SettingKind kind);
};

// Base instance plus its counterfactual perturbations and the behavioral
// label z once a model has been profiled on it.
struct Neighborhood {
    Instance base;
    std::vector<Instance> perturbations;
    SettingKind setting = SettingKind::YesNo;
    int z = -1;  // unlabeled until label_neighborhood runs
    std::vector<Prediction> predictions;  // base first, then perturbations (audit record)
};

// Synthetic generators; deterministic functions of (seed, count).
// Comparison: "are E1 and E2 both VALUE ?" / "are E1 and E2 of the same
// CLASS ?" with two context sentences assigning property values.
std::vector<Instance> gen_comparison(uint64_t seed, int count);
// Two-hop questions resolved via a workplace link, with a per-instance pool
// of attack sentences that answer only the primary question.
std::vector<Instance> gen_bridge(uint64_t seed, int count);
// Single-hop span questions with 3-5 decoy attack sentences per base.
std::vector<Instance> gen_distractor(uint64_t seed, int count);

// Degenerate-label variants for constructing known-shortcut models:
// comparison labels depend on the question template only; bridge answers are
// the object of the last owns-sentence, ignoring the workplace link.
std::vector<Instance> gen_comparison_shortcut(uint64_t seed, int count);
std::vector<Instance> gen_bridge_shortcut(uint64_t seed, int count);

// YES-NO: the 2x2 substitution square (base + 3). BRIDGE: base + 2 attack
// insertions (appended to the context). DISTRACTOR: base + every attack
// variant (>= 3), each inserted at a seeded sentence boundary.
Neighborhood build_neighborhood(const Instance& base, SettingKind setting, uint64_t seed);

// z per the setting's rule; "prediction changes" means the argmax answer
// differs from the base prediction on at least one perturbation.
int label_neighborhood(const std::function<Prediction(const Instance&)>& predict,
                       Neighborhood& nb);
int label_neighborhood(const Model& model, Neighborhood& nb);

// JSONL row referencing instances by id (the instances themselves are stored
// in the dataset file).
std::string neighborhood_to_json(const Neighborhood& nb);

}  // namespace attrsim
