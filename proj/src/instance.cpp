#include "attrsim/instance.hpp"

#include <json.hpp>

namespace attrsim {

using nlohmann::json;

Encoding encode(const Instance& inst, const Vocabulary& vocab, int max_seq) {
    if (inst.question.empty()) throw Error("encode: empty question");
    if (inst.context.empty()) throw Error("encode: empty context");
    Encoding enc;
    enc.ids.reserve(static_cast<size_t>(max_seq));
    enc.ids.push_back(Vocabulary::kCls);
    enc.q_begin = 1;
    for (const auto& w : inst.question) enc.ids.push_back(vocab.id(w));
    enc.q_end = static_cast<int>(enc.ids.size());
    enc.ids.push_back(Vocabulary::kSep);
    enc.c_begin = static_cast<int>(enc.ids.size());
    for (const auto& w : inst.context) enc.ids.push_back(vocab.id(w));
    enc.c_end = static_cast<int>(enc.ids.size());
    enc.ids.push_back(Vocabulary::kSep);
    enc.length = static_cast<int>(enc.ids.size());
    if (enc.length > max_seq)
        throw Error("encode: instance '" + inst.id + "' needs " + std::to_string(enc.length) +
                    " tokens but max_seq is " + std::to_string(max_seq));
    enc.ids.resize(static_cast<size_t>(max_seq), Vocabulary::kPad);
    return enc;
}

std::vector<std::string> decode(const Encoding& enc, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(enc.length));
    for (int i = 0; i < enc.length; ++i) out.push_back(vocab.word(enc.ids[static_cast<size_t>(i)]));
    return out;
}

std::string instance_to_json(const Instance& inst) {
    json j;
    j["id"] = inst.id;
    j["question"] = inst.question;
    j["context"] = inst.context;
    if (inst.answer.type == TaskType::YesNo) {
        j["answer"] = {{"type", "yesno"}, {"yes", inst.answer.yes}};
    } else {
        j["answer"] = {{"type", "span"}, {"start", inst.answer.start}, {"end", inst.answer.end}};
    }
    json meta;
    if (!inst.property_positions.empty()) meta["property_positions"] = inst.property_positions;
    if (!inst.primary_positions.empty()) meta["primary_positions"] = inst.primary_positions;
    if (!inst.question_positions.empty()) meta["question_positions"] = inst.question_positions;
    if (!inst.keyword_positions.empty()) meta["keyword_positions"] = inst.keyword_positions;
    if (!inst.salient_q.empty()) meta["salient_q"] = inst.salient_q;
    if (!inst.salient_c.empty()) meta["salient_c"] = inst.salient_c;
    if (!inst.attack_sentences.empty()) meta["attack_sentences"] = inst.attack_sentences;
    j["meta"] = meta;
    return j.dump();
}

Instance instance_from_json(const std::string& line) {
    json j = json::parse(line);
    Instance inst;
    inst.id = j.at("id").get<std::string>();
    inst.question = j.at("question").get<std::vector<std::string>>();
    inst.context = j.at("context").get<std::vector<std::string>>();
    const json& a = j.at("answer");
    if (a.at("type") == "yesno") {
        inst.answer.type = TaskType::YesNo;
        inst.answer.yes = a.at("yes").get<bool>();
    } else {
        inst.answer.type = TaskType::Span;
        inst.answer.start = a.at("start").get<int>();
        inst.answer.end = a.at("end").get<int>();
    }
    const json& meta = j.value("meta", json::object());
    auto get_vec = [&](const char* key) {
        return meta.contains(key) ? meta.at(key).get<std::vector<int>>() : std::vector<int>{};
    };
    inst.property_positions = get_vec("property_positions");
    inst.primary_positions = get_vec("primary_positions");
    inst.question_positions = get_vec("question_positions");
    inst.keyword_positions = get_vec("keyword_positions");
    inst.salient_q = get_vec("salient_q");
    inst.salient_c = get_vec("salient_c");
    if (meta.contains("attack_sentences"))
        inst.attack_sentences =
            meta.at("attack_sentences").get<std::vector<std::vector<std::string>>>();
    return inst;
}

}  // namespace attrsim
