#include "attrsim/counterfactuals.hpp"

#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "attrsim/rng.hpp"

namespace attrsim {

namespace {

const std::vector<std::string> kPeople = {
    "alice", "bob",  "cara",  "dane",  "elio", "fern", "gus",  "hana", "ivan", "jade",
    "kira",  "liam", "mira",  "nolan", "opal", "pavel", "quinn", "rosa", "sten", "tilda",
    "umar",  "vera", "wren",  "yuri",  "zora", "amos", "brit", "cole", "dora", "emil"};

const std::vector<std::string> kPlaces = {
    "mill",   "bakery",  "harbor",  "library", "forge", "vineyard", "dairy",  "quarry",
    "studio", "garage",  "orchard", "brewery", "foundry", "cannery", "depot", "arcade"};

const std::vector<std::string> kPets = {
    "ferret", "crow", "iguana", "lemur", "badger", "otter", "parrot", "gecko",
    "hound",  "mole", "lynx",   "toad",  "heron",  "stoat", "shrew",  "finch"};

struct PropClass {
    std::string name;
    std::vector<std::string> values;
};
const std::vector<PropClass> kPropClasses = {
    {"color", {"red", "blue", "green", "amber", "violet", "teal", "crimson", "ivory"}},
    {"genre",
     {"documentary", "romance", "comedy", "thriller", "western", "musical", "noir", "satire"}},
    {"nationality",
     {"danish", "french", "german", "polish", "swedish", "dutch", "finnish", "czech"}},
    {"material", {"wood", "steel", "glass", "copper", "marble", "denim", "granite", "velvet"}}};

const std::vector<std::pair<std::string, std::string>> kVerbs = {
    {"sell", "sells"}, {"keep", "keeps"}, {"build", "builds"},
    {"paint", "paints"}, {"carry", "carries"}};

const std::vector<std::string> kObjects = {
    "lamp",   "rope",   "kettle", "ladder", "barrel", "mirror", "wagon", "candle",
    "bucket", "banner", "crate",  "easel",  "stool",  "basket", "anvil", "loom"};

const std::vector<std::string> kNumbers = {"10", "15", "20", "25", "30", "35", "40", "45",
                                           "50", "55", "60", "65", "70", "75", "80", "90"};

void check_pools_in_vocab() {
    static const bool ok = [] {
        const Vocabulary& v = Vocabulary::builtin();
        auto require = [&](const std::string& w) { (void)v.id(w); };
        for (const auto& w : kPeople) require(w);
        for (const auto& w : kPlaces) require(w);
        for (const auto& w : kPets) require(w);
        for (const auto& c : kPropClasses) {
            require(c.name);
            for (const auto& w : c.values) require(w);
        }
        for (const auto& [a, b] : kVerbs) {
            require(a);
            require(b);
        }
        for (const auto& w : kObjects) require(w);
        for (const auto& w : kNumbers) require(w);
        return true;
    }();
    (void)ok;
}

std::string index_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%04d", prefix, i);
    return buf;
}

template <class T>
T pick_distinct(Rng& rng, const std::vector<T>& pool, const std::vector<T>& taken) {
    for (;;) {
        const T& cand = rng.pick(pool);
        if (std::find(taken.begin(), taken.end(), cand) == taken.end()) return cand;
    }
}

const PropClass& class_of_value(const std::string& value) {
    for (const auto& c : kPropClasses)
        for (const auto& v : c.values)
            if (v == value) return c;
    throw Error("class_of_value: '" + value + "' is not a property value");
}

int context_offset(const Instance& inst) {
    // encoded layout: CLS q SEP c SEP
    return 1 + static_cast<int>(inst.question.size()) + 1;
}

// Sentence boundaries (token offsets) of a context made of '.'-terminated
// sentences; returns offsets where a new sentence may start, including both
// ends.
std::vector<int> sentence_boundaries(const std::vector<std::string>& context) {
    std::vector<int> b = {0};
    for (size_t i = 0; i < context.size(); ++i)
        if (context[i] == ".") b.push_back(static_cast<int>(i) + 1);
    return b;
}

}  // namespace

const char* setting_name(SettingKind k) {
    switch (k) {
        case SettingKind::YesNo: return "yesno";
        case SettingKind::Bridge: return "bridge";
        case SettingKind::Distractor: return "distractor";
    }
    return "?";
}

SettingKind setting_from_name(const std::string& name) {
    if (name == "yesno") return SettingKind::YesNo;
    if (name == "bridge") return SettingKind::Bridge;
    if (name == "distractor") return SettingKind::Distractor;
    throw Error("unknown setting '" + name + "'");
}

Setting Setting::of(SettingKind kind) {
    switch (kind) {
        case SettingKind::YesNo:
            return {kind, "the model compares the two property values named by the question",
                    "z=1 when any perturbation changes the prediction"};
        case SettingKind::Bridge:
            return {kind, "the model resolves the full two-hop question rather than the "
                          "primary span alone",
                    "z=0 when any perturbation changes the prediction"};
        case SettingKind::Distractor:
            return {kind, "the model keys on the question's entity and number keywords",
                    "z=1 when the prediction survives every attack"};
    }
    throw Error("Setting::of: bad kind");
}

std::vector<Instance> gen_comparison(uint64_t seed, int count) {
    check_pools_in_vocab();
    if (count < 1) throw Error("gen_comparison: count must be >= 1");
    Rng rng(seed);
    std::vector<Instance> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Instance inst;
        inst.id = index_id("cmp", i);
        const PropClass& cls = rng.pick(kPropClasses);
        std::string e1 = rng.pick(kPeople);
        std::string e2 = pick_distinct(rng, kPeople, {e1});
        bool both_template = rng.coin();
        bool yes = rng.coin();
        std::string v1, v2;
        if (both_template) {
            std::string v = rng.pick(cls.values);
            if (yes) {
                v1 = v2 = v;
            } else {
                std::string w = pick_distinct(rng, cls.values, {v});
                if (rng.coin()) {
                    v1 = v;
                    v2 = w;
                } else {
                    v1 = w;
                    v2 = v;
                }
            }
            inst.question = {"are", e1, "and", e2, "both", v, "?"};
        } else {
            if (yes) {
                v1 = v2 = rng.pick(cls.values);
            } else {
                v1 = rng.pick(cls.values);
                v2 = pick_distinct(rng, cls.values, {v1});
            }
            inst.question = {"are", e1, "and", e2, "of", "the", "same", cls.name, "?"};
        }

        std::vector<std::string> s1 = {e1, "is", v1, "."};
        std::vector<std::string> s2 = {e2, "is", v2, "."};
        bool swap = rng.coin();
        inst.context = swap ? s2 : s1;
        const auto& second = swap ? s1 : s2;
        inst.context.insert(inst.context.end(), second.begin(), second.end());

        inst.answer.type = TaskType::YesNo;
        inst.answer.yes = yes;

        int c0 = context_offset(inst);
        inst.property_positions = {c0 + 2, c0 + 6};  // value slots of the two sentences
        inst.salient_q = {both_template ? 1 + 5 : 1 + 7};
        inst.salient_c = inst.property_positions;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<Instance> gen_comparison_shortcut(uint64_t seed, int count) {
    auto data = gen_comparison(seed, count);
    // label from the question template alone; property tokens never matter
    for (auto& inst : data) inst.answer.yes = inst.question[4] == "both";
    return data;
}

namespace {

struct BridgeParts {
    std::string p1, p2, l1, l2, a1, a2;
    std::vector<int> order;  // permutation of {work1, own1, work2, own2}
};

Instance make_bridge_instance(Rng& rng, int idx, bool shortcut_labels) {
    Instance inst;
    inst.id = index_id(shortcut_labels ? "brs" : "brg", idx);
    BridgeParts bp;
    bp.p1 = rng.pick(kPeople);
    bp.p2 = pick_distinct(rng, kPeople, {bp.p1});
    bp.l1 = rng.pick(kPlaces);
    bp.l2 = pick_distinct(rng, kPlaces, {bp.l1});
    bp.a1 = rng.pick(kPets);
    bp.a2 = pick_distinct(rng, kPets, {bp.a1});

    inst.question = {"what", "pet", "does", "the", "person", "who",
                     "works", "at", "the", bp.l1, "own", "?"};
    std::vector<std::vector<std::string>> sentences = {
        {bp.p1, "works", "at", "the", bp.l1, "."},
        {bp.p1, "owns", "a", bp.a1, "."},
        {bp.p2, "works", "at", "the", bp.l2, "."},
        {bp.p2, "owns", "a", bp.a2, "."}};
    std::vector<int> order = {0, 1, 2, 3};
    rng.shuffle(order);

    int pos_a1 = -1, pos_a2 = -1;
    for (int s : order) {
        int base = static_cast<int>(inst.context.size());
        inst.context.insert(inst.context.end(), sentences[static_cast<size_t>(s)].begin(),
                            sentences[static_cast<size_t>(s)].end());
        if (s == 1) pos_a1 = base + 3;
        if (s == 3) pos_a2 = base + 3;
    }

    inst.answer.type = TaskType::Span;
    if (shortcut_labels) {
        // object of the last owns-sentence, ignoring the workplace link
        bool own1_last = false;
        for (int s : order)
            if (s == 1 || s == 3) own1_last = (s == 1);
        int pos = own1_last ? pos_a1 : pos_a2;
        inst.answer.start = pos;
        inst.answer.end = pos + 1;
    } else {
        inst.answer.start = pos_a1;
        inst.answer.end = pos_a1 + 1;
    }

    int c0 = context_offset(inst);
    // primary question: "what pet does the person ... own ?" (the workplace
    // clause dropped)
    for (int qi : {0, 1, 2, 3, 4, 10, 11}) inst.primary_positions.push_back(1 + qi);
    for (int qi = 0; qi < static_cast<int>(inst.question.size()); ++qi)
        inst.question_positions.push_back(1 + qi);
    inst.salient_q = {1 + 1, 1 + 9};  // "pet", the workplace
    inst.salient_c = {c0 + pos_a1, c0 + pos_a2};

    // attack pool: answers to the primary question with decoy entities
    std::vector<std::string> used_people = {bp.p1, bp.p2};
    std::vector<std::string> used_pets = {bp.a1, bp.a2};
    for (int k = 0; k < 3; ++k) {
        std::string pd = pick_distinct(rng, kPeople, used_people);
        std::string ad = pick_distinct(rng, kPets, used_pets);
        used_people.push_back(pd);
        used_pets.push_back(ad);
        inst.attack_sentences.push_back({pd, "owns", "a", ad, "."});
    }
    return inst;
}

}  // namespace

std::vector<Instance> gen_bridge(uint64_t seed, int count) {
    check_pools_in_vocab();
    if (count < 1) throw Error("gen_bridge: count must be >= 1");
    Rng rng(seed);
    std::vector<Instance> out;
    for (int i = 0; i < count; ++i) out.push_back(make_bridge_instance(rng, i, false));
    return out;
}

std::vector<Instance> gen_bridge_shortcut(uint64_t seed, int count) {
    check_pools_in_vocab();
    if (count < 1) throw Error("gen_bridge_shortcut: count must be >= 1");
    Rng rng(seed);
    std::vector<Instance> out;
    for (int i = 0; i < count; ++i) out.push_back(make_bridge_instance(rng, i, true));
    return out;
}

std::vector<Instance> gen_distractor(uint64_t seed, int count) {
    check_pools_in_vocab();
    if (count < 1) throw Error("gen_distractor: count must be >= 1");
    Rng rng(seed);
    std::vector<Instance> out;
    for (int i = 0; i < count; ++i) {
        Instance inst;
        inst.id = index_id("dis", i);
        bool trade_template = rng.coin();
        std::string name = rng.pick(kPeople);
        std::string n2 = pick_distinct(rng, kPeople, {name});
        std::string n3 = pick_distinct(rng, kPeople, {name, n2});
        std::string obj = rng.pick(kObjects);
        std::string o2 = pick_distinct(rng, kObjects, {obj});
        std::string o3 = pick_distinct(rng, kObjects, {obj, o2});

        std::vector<std::string> target;
        std::vector<std::string> number_kw;
        auto verb = rng.pick(kVerbs);
        if (trade_template) {
            std::string num = rng.pick(kNumbers);
            inst.question = {"what", "did", name, "trade", "for", num, "coins", "?"};
            target = {name, "traded", "the", obj, "for", num, "coins", "."};
            inst.keyword_positions = {1 + 2, 1 + 5};  // name, number
            number_kw.push_back(num);
        } else {
            inst.question = {"what", "does", name, verb.first, "?"};
            target = {name, verb.second, "the", obj, "."};
            inst.keyword_positions = {1 + 2};  // name
        }

        auto verb2 = pick_distinct(rng, kVerbs, {verb});
        auto verb3 = pick_distinct(rng, kVerbs, {verb, verb2});
        std::vector<std::vector<std::string>> sentences = {
            target,
            {n2, verb2.second, "the", o2, "."},
            {n3, verb3.second, "the", o3, "."}};
        std::vector<int> order = {0, 1, 2};
        rng.shuffle(order);
        int obj_pos = -1;
        const int obj_in_target = 3;
        for (int s : order) {
            int base = static_cast<int>(inst.context.size());
            inst.context.insert(inst.context.end(), sentences[static_cast<size_t>(s)].begin(),
                                sentences[static_cast<size_t>(s)].end());
            if (s == 0) obj_pos = base + obj_in_target;
        }
        inst.answer.type = TaskType::Span;
        inst.answer.start = obj_pos;
        inst.answer.end = obj_pos + 1;

        inst.salient_q = inst.keyword_positions;
        inst.salient_c = {context_offset(inst) + obj_pos};

        int variants = 3 + rng.uniform_int(0, 2);
        std::vector<std::string> used_people = {name, n2, n3};
        std::vector<std::string> used_objs = {obj, o2, o3};
        for (int k = 0; k < variants; ++k) {
            std::string nd = pick_distinct(rng, kPeople, used_people);
            std::string od = pick_distinct(rng, kObjects, used_objs);
            used_people.push_back(nd);
            used_objs.push_back(od);
            if (trade_template) {
                inst.attack_sentences.push_back(
                    {nd, "traded", "the", od, "for", number_kw[0], "coins", "."});
            } else {
                inst.attack_sentences.push_back({nd, verb.second, "the", od, "."});
            }
        }
        out.push_back(std::move(inst));
    }
    return out;
}

namespace {

Instance substitute_values(const Instance& base, const std::string& a, const std::string& b,
                           int tag) {
    Instance p = base;
    p.id = base.id + "-p" + std::to_string(tag);
    int c0 = context_offset(base);
    int slot0 = base.property_positions[0] - c0;
    int slot1 = base.property_positions[1] - c0;
    p.context[static_cast<size_t>(slot0)] = a;
    p.context[static_cast<size_t>(slot1)] = b;
    p.attack_sentences.clear();
    if (base.question[4] == "both") {
        const std::string& v = base.question[5];
        p.answer.yes = (a == v && b == v);
    } else {
        p.answer.yes = (a == b);
    }
    return p;
}

}  // namespace

Neighborhood build_neighborhood(const Instance& base, SettingKind setting, uint64_t seed) {
    Neighborhood nb;
    nb.base = base;
    nb.setting = setting;
    Rng rng(seed);

    switch (setting) {
        case SettingKind::YesNo: {
            if (base.property_positions.size() != 2)
                throw Error("build_neighborhood: instance '" + base.id +
                            "' lacks property-token metadata");
            int c0 = context_offset(base);
            std::string v1 = base.context[static_cast<size_t>(base.property_positions[0] - c0)];
            std::string v2 = base.context[static_cast<size_t>(base.property_positions[1] - c0)];
            std::string sub_a = v1, sub_b = v2;
            if (v1 == v2) {
                const PropClass& cls = class_of_value(v1);
                sub_b = pick_distinct(rng, cls.values, {v1});
            }
            int yes_count = base.answer.yes ? 1 : 0, no_count = base.answer.yes ? 0 : 1;
            int tag = 1;
            for (const std::string& a : {sub_a, sub_b}) {
                for (const std::string& b : {sub_a, sub_b}) {
                    if (a == v1 && b == v2) continue;  // base combination
                    Instance p = substitute_values(base, a, b, tag++);
                    (p.answer.yes ? yes_count : no_count)++;
                    nb.perturbations.push_back(std::move(p));
                }
            }
            if (yes_count == 0 || no_count == 0)
                throw Error("build_neighborhood: substitution square of '" + base.id +
                            "' has identical ground truths");
            break;
        }
        case SettingKind::Bridge: {
            if (base.attack_sentences.size() < 2 || base.primary_positions.empty())
                throw Error("build_neighborhood: instance '" + base.id +
                            "' lacks bridge attack metadata");
            std::vector<int> idx(base.attack_sentences.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
            rng.shuffle(idx);
            for (int k = 0; k < 2; ++k) {
                Instance p = base;
                p.id = base.id + "-p" + std::to_string(k + 1);
                const auto& adv = base.attack_sentences[static_cast<size_t>(idx[static_cast<size_t>(k)])];
                p.context.insert(p.context.end(), adv.begin(), adv.end());
                p.attack_sentences.clear();
                nb.perturbations.push_back(std::move(p));
            }
            break;
        }
        case SettingKind::Distractor: {
            if (base.attack_sentences.size() < 3)
                throw Error("build_neighborhood: instance '" + base.id + "' has " +
                            std::to_string(base.attack_sentences.size()) +
                            " attack variants; at least 3 are required");
            auto bounds = sentence_boundaries(base.context);
            int c0 = context_offset(base);
            int tag = 1;
            for (const auto& adv : base.attack_sentences) {
                Instance p = base;
                p.id = base.id + "-p" + std::to_string(tag++);
                int at = bounds[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int>(bounds.size()) - 1))];
                p.context.insert(p.context.begin() + at, adv.begin(), adv.end());
                int shift = static_cast<int>(adv.size());
                if (base.answer.start >= at) {
                    p.answer.start += shift;
                    p.answer.end += shift;
                }
                for (int& pos : p.salient_c)
                    if (pos - c0 >= at) pos += shift;
                p.attack_sentences.clear();
                // the gold answer must remain extractable after insertion
                for (int t = p.answer.start; t < p.answer.end; ++t)
                    if (p.context[static_cast<size_t>(t)] !=
                        base.context[static_cast<size_t>(t - (p.answer.start - base.answer.start))])
                        throw Error("build_neighborhood: gold span lost in '" + p.id + "'");
                nb.perturbations.push_back(std::move(p));
            }
            break;
        }
    }
    return nb;
}

int label_neighborhood(const std::function<Prediction(const Instance&)>& predict,
                       Neighborhood& nb) {
    nb.predictions.clear();
    Prediction base = predict(nb.base);
    nb.predictions.push_back(base);
    bool changed = false;
    for (const Instance& p : nb.perturbations) {
        Prediction pp = predict(p);
        nb.predictions.push_back(pp);
        if (!pp.same_answer(base)) changed = true;
    }
    switch (nb.setting) {
        case SettingKind::YesNo: nb.z = changed ? 1 : 0; break;
        case SettingKind::Bridge: nb.z = changed ? 0 : 1; break;
        case SettingKind::Distractor: nb.z = changed ? 0 : 1; break;
    }
    return nb.z;
}

int label_neighborhood(const Model& model, Neighborhood& nb) {
    QaRuntime rt(model);
    return label_neighborhood(
        [&](const Instance& inst) { return rt.predict(inst); }, nb);
}

std::string neighborhood_to_json(const Neighborhood& nb) {
    nlohmann::json j;
    j["base_id"] = nb.base.id;
    j["setting"] = setting_name(nb.setting);
    j["z"] = nb.z;
    std::vector<std::string> pids;
    for (const auto& p : nb.perturbations) pids.push_back(p.id);
    j["perturbation_ids"] = pids;
    if (!nb.predictions.empty()) {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& p : nb.predictions) {
            if (p.type == TaskType::YesNo)
                preds.push_back(p.yes ? "yes" : "no");
            else
                preds.push_back(std::to_string(p.start) + ":" + std::to_string(p.end));
        }
        j["predictions"] = preds;
    }
    return j.dump();
}

}  // namespace attrsim
