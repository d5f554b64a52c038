#include "attrsim/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <json.hpp>

namespace attrsim {

namespace {

// membership bitmap over encoded positions
std::vector<char> membership(const std::vector<int>& positions, int n) {
    std::vector<char> in(static_cast<size_t>(n), 0);
    for (int p : positions) {
        if (p < 0 || p >= n) throw Error("extract_factor: position " + std::to_string(p) +
                                         " outside the encoded sequence");
        in[static_cast<size_t>(p)] = 1;
    }
    return in;
}

double token_importance(const std::vector<double>& s, const std::vector<char>& in) {
    double f = 0.0;
    for (size_t i = 0; i < s.size(); ++i)
        if (in[i]) f += s[i];
    return f;
}

// each matrix cell counted once: sum over {(i,j) : i in P or j in P}
double pair_importance(const Tensor& s, const std::vector<char>& in) {
    double f = 0.0;
    int n = s.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (in[static_cast<size_t>(i)] || in[static_cast<size_t>(j)]) f += s.at(i, j);
    return f;
}

}  // namespace

Factor extract_factor(const AttributionMap& attr, const Neighborhood& nb) {
    Factor out;
    out.method = attr.method;
    const Instance& base = nb.base;
    const bool pairwise = attr.kind == AttributionMap::Kind::Pairwise;
    const int n = pairwise ? attr.pair_scores.cols()
                           : static_cast<int>(attr.token_scores.size());
    out.mode = pairwise ? FactorMode::PairPool : FactorMode::Sum;

    auto importance = [&](const std::vector<int>& positions) {
        auto in = membership(positions, n);
        return pairwise ? pair_importance(attr.pair_scores, in)
                        : token_importance(attr.token_scores, in);
    };

    switch (nb.setting) {
        case SettingKind::YesNo: {
            if (base.property_positions.empty())
                throw Error("extract_factor: missing property positions on '" + base.id + "'");
            out.value = importance(base.property_positions);
            break;
        }
        case SettingKind::Distractor: {
            if (base.keyword_positions.empty())
                throw Error("extract_factor: missing keyword positions on '" + base.id + "'");
            out.value = importance(base.keyword_positions);
            break;
        }
        case SettingKind::Bridge: {
            if (base.primary_positions.empty() || base.question_positions.empty())
                throw Error("extract_factor: missing primary/question positions on '" +
                            base.id + "'");
            out.mode = FactorMode::Normalized;
            double p = importance(base.primary_positions);
            double q = importance(base.question_positions);
            if (q == 0.0) {
                out.value = 0.0;
                out.degenerate = true;
            } else {
                out.value = p / q;
            }
            break;
        }
    }
    if (!out.degenerate && !std::isfinite(out.value))
        throw Error("extract_factor: non-finite factor for '" + base.id + "'");
    return out;
}

SimulateResult simulate(const std::vector<std::pair<double, int>>& pairs) {
    if (pairs.empty()) throw Error("simulate: no (f, z) pairs");
    SimulateResult res;

    // threshold sweep: midpoints of sorted unique factors plus +-infinity;
    // predict z=1 iff f > t
    std::vector<double> uniq;
    uniq.reserve(pairs.size());
    for (const auto& [f, z] : pairs) uniq.push_back(f);
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<double> thresholds;
    thresholds.push_back(-std::numeric_limits<double>::infinity());
    for (size_t i = 0; i + 1 < uniq.size(); ++i)
        thresholds.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    thresholds.push_back(std::numeric_limits<double>::infinity());

    double best_acc = -1.0, best_t = 0.0;
    for (double t : thresholds) {
        int correct = 0;
        for (const auto& [f, z] : pairs) {
            int pred = f > t ? 1 : 0;
            correct += pred == z;
        }
        double acc = static_cast<double>(correct) / static_cast<double>(pairs.size());
        if (acc > best_acc || (acc == best_acc && t > best_t)) {
            best_acc = acc;
            best_t = t;
        }
    }
    res.s_acc = best_acc;
    res.best_threshold = best_t;

    // Mann-Whitney rank statistic, ties counted 0.5
    int64_t pos = 0, neg = 0;
    for (const auto& [f, z] : pairs) (z == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) {
        res.auc_defined = false;
        res.s_auc = 0.0;
        return res;
    }
    double win = 0.0;
    for (const auto& [fp, zp] : pairs) {
        if (zp != 1) continue;
        for (const auto& [fn, zn] : pairs) {
            if (zn != 0) continue;
            if (fp > fn) win += 1.0;
            else if (fp == fn) win += 0.5;
        }
    }
    res.s_auc = win / (static_cast<double>(pos) * static_cast<double>(neg));
    res.auc_defined = true;
    return res;
}

bool is_pairwise_method(const std::string& name) {
    return name == "occlusion" || name == "atattr" || name == "latattr";
}

bool is_known_method(const std::string& name) {
    return name == "conf" || name == "lime" || name == "shap" || name == "intgrad" ||
           name == "diffmask" || is_pairwise_method(name);
}

namespace {

AttributionMap attribute_with(const Model& model, const Instance& inst, const MethodSpec& spec) {
    if (spec.name == "lime") return lime_tokens(model, inst, spec.surrogate);
    if (spec.name == "shap") return kernelshap_tokens(model, inst, spec.surrogate);
    if (spec.name == "intgrad") return intgrad_tokens(model, inst, spec.integration);
    if (spec.name == "diffmask")
        return diffmask_per_example(model, inst, spec.sparsity, spec.opt_steps);
    if (spec.name == "occlusion")
        return occlusion_pairs(model, inst, default_occlusion_candidates(inst));
    if (spec.name == "atattr") return atattr_pairs(model, inst, spec.integration);
    if (spec.name == "latattr") return latattr_pairs(model, inst, spec.integration);
    throw Error("run_setting: method '" + spec.name + "' does not produce attributions");
}

}  // namespace

SimulationReport run_setting(const Model& model, const std::vector<Neighborhood>& neighborhoods,
                             const std::vector<MethodSpec>& methods, int threads) {
    if (neighborhoods.empty()) throw Error("run_setting: no neighborhoods");
    const SettingKind setting = neighborhoods[0].setting;
    for (const auto& nb : neighborhoods) {
        if (nb.setting != setting) throw Error("run_setting: mixed settings");
        if (nb.z < 0) throw Error("run_setting: neighborhood '" + nb.base.id + "' is unlabeled");
    }
    for (const auto& m : methods)
        if (!is_known_method(m.name)) throw Error("run_setting: unknown method '" + m.name + "'");

    SimulationReport report;
    report.setting = setting_name(setting);
    report.count = static_cast<int>(neighborhoods.size());
    int64_t pos = 0;
    for (const auto& nb : neighborhoods) pos += nb.z == 1;
    double prior1 = static_cast<double>(pos) / static_cast<double>(neighborhoods.size());
    report.majority_acc = std::max(prior1, 1.0 - prior1);

    for (const auto& spec : methods) {
        MethodRow row;
        row.method = spec.name;
        row.factors.resize(neighborhoods.size());

        if (spec.name == "conf") {
            // oriented so that higher f predicts z=1
            row.orientation = setting == SettingKind::Distractor ? "+confidence" : "-confidence";
            QaRuntime rt(model);
            for (size_t i = 0; i < neighborhoods.size(); ++i) {
                double c = rt.predict(neighborhoods[i].base).confidence;
                row.factors[i] = {neighborhoods[i].base.id,
                                  setting == SettingKind::Distractor ? c : -c,
                                  neighborhoods[i].z, false};
            }
        } else {
            // bridge: a high primary-question share predicts a successful
            // attack (z=0), so the oriented factor is negated there
            const double orient = setting == SettingKind::Bridge ? -1.0 : 1.0;
            row.orientation = orient > 0 ? "+f" : "-f";
            int nthreads =
                std::max(1, std::min<int>(threads, static_cast<int>(neighborhoods.size())));
            auto worker = [&](int tid) {
                for (size_t i = static_cast<size_t>(tid); i < neighborhoods.size();
                     i += static_cast<size_t>(nthreads)) {
                    AttributionMap attr = attribute_with(model, neighborhoods[i].base, spec);
                    Factor f = extract_factor(attr, neighborhoods[i]);
                    row.factors[i] = {neighborhoods[i].base.id, orient * f.value,
                                      neighborhoods[i].z, f.degenerate};
                }
            };
            if (nthreads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
                for (auto& th : pool) th.join();
            }
        }

        std::vector<std::pair<double, int>> pairs;
        pairs.reserve(row.factors.size());
        for (const auto& fr : row.factors) pairs.emplace_back(fr.f, fr.z);
        row.result = simulate(pairs);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string report_to_json(const SimulationReport& report) {
    nlohmann::json j;
    j["setting"] = report.setting;
    j["neighborhoods"] = report.count;
    j["tie_note"] = report.tie_note;
    j["majority"] = {{"s_acc", report.majority_acc}, {"s_auc", nullptr}};
    nlohmann::json rows = nlohmann::json::object();
    for (const auto& row : report.rows) {
        nlohmann::json r;
        r["s_acc"] = row.result.s_acc;
        if (row.result.auc_defined)
            r["s_auc"] = row.result.s_auc;
        else
            r["s_auc"] = nullptr;
        r["auc_defined"] = row.result.auc_defined;
        if (std::isinf(row.result.best_threshold))
            r["best_threshold"] = row.result.best_threshold > 0 ? "+inf" : "-inf";
        else
            r["best_threshold"] = row.result.best_threshold;
        r["orientation"] = row.orientation;
        nlohmann::json factors = nlohmann::json::array();
        for (const auto& fr : row.factors) {
            nlohmann::json e = {{"neighborhood", fr.neighborhood_id},
                                {"f", fr.f},
                                {"z", fr.z}};
            if (fr.degenerate) e["degenerate"] = true;
            factors.push_back(std::move(e));
        }
        r["factors"] = std::move(factors);
        rows[row.method] = std::move(r);
    }
    j["methods"] = std::move(rows);
    return j.dump(2);
}

}  // namespace attrsim
