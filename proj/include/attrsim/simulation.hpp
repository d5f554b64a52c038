#pragma once

#include <string>
#include <vector>

#include "attrsim/attribution.hpp"
#include "attrsim/counterfactuals.hpp"

namespace attrsim {

enum class FactorMode { Sum, PairPool, Normalized };

struct Factor {
    double value = 0.0;
    FactorMode mode = FactorMode::Sum;
    std::string method;
    bool degenerate = false;  // normalizing importance was zero
};

// Pool a scalar factor out of a base-example attribution per the setting's
// rule: sum over P (token), single-counted pool over {(i,j): i in P or
// j in P} (pairwise), or the P/Q importance ratio for bridge.
Factor extract_factor(const AttributionMap& attr, const Neighborhood& nb);

struct SimulateResult {
    double s_acc = 0.0;
    double best_threshold = 0.0;  // +-infinity allowed
    double s_auc = 0.0;
    bool auc_defined = false;
};

// Threshold sweep over midpoints of sorted unique factors plus +-infinity
// (predict z=1 when f > t; accuracy ties resolved toward the largest
// threshold) and the Mann-Whitney rank AUC with ties counted 0.5.
SimulateResult simulate(const std::vector<std::pair<double, int>>& pairs);

struct FactorRecord {
    std::string neighborhood_id;
    double f = 0.0;
    int z = 0;
    bool degenerate = false;
};

struct MethodRow {
    std::string method;
    std::string orientation;  // e.g. "+f", "-f", "-confidence"
    std::vector<FactorRecord> factors;
    SimulateResult result;
};

struct SimulationReport {
    std::string setting;
    double majority_acc = 0.0;  // max class prior
    int count = 0;
    std::vector<MethodRow> rows;
    std::string tie_note = "accuracy ties keep the largest threshold; rank ties count 0.5";
};

// Per-method attribution configuration for run_setting / the CLI.
struct MethodSpec {
    std::string name;  // conf | lime | shap | intgrad | diffmask | occlusion | atattr | latattr
    IntegrationConfig integration;
    SurrogateConfig surrogate;
    double sparsity = 0.5;  // diffmask
    int opt_steps = 300;    // diffmask
};

bool is_pairwise_method(const std::string& name);
bool is_known_method(const std::string& name);

// Attribute every base example (never the perturbations), extract factors,
// and simulate, for each requested method plus the Majority row. Factors are
// oriented so that higher f predicts z=1 uniformly (bridge attribution
// factors are negated; Conf uses -confidence except in the distractor
// setting).
SimulationReport run_setting(const Model& model, const std::vector<Neighborhood>& neighborhoods,
                             const std::vector<MethodSpec>& methods, int threads = 2);

std::string report_to_json(const SimulationReport& report);

}  // namespace attrsim
