#pragma once

#include <string>
#include <vector>

#include "attrsim/vocab.hpp"

namespace attrsim {

enum class TaskType { YesNo, Span };

struct AnswerSpec {
    TaskType type = TaskType::YesNo;
    bool yes = false;
    int start = 0, end = 0;  // [start,end) in context token coordinates
};

// One reading-comprehension example D = (q, c, a) plus the generator
// annotations the factor rules need. All *_positions fields are indices into
// the encoded sequence CLS q SEP c SEP.
struct Instance {
    std::string id;
    std::vector<std::string> question;
    std::vector<std::string> context;
    AnswerSpec answer;

    std::vector<int> property_positions;  // yes-no: context property tokens P
    std::vector<int> primary_positions;   // bridge: primary-question tokens P
    std::vector<int> question_positions;  // bridge: all question tokens Q
    std::vector<int> keyword_positions;   // distractor: essential question keywords P
    std::vector<int> salient_q;           // occlusion candidates, question side
    std::vector<int> salient_c;           // occlusion candidates, context side

    // bridge/distractor: generator-written attack sentences (token lists)
    std::vector<std::vector<std::string>> attack_sentences;
};

struct Encoding {
    std::vector<int> ids;  // length max_seq, PAD-filled
    int length = 0;        // tokens before padding
    int q_begin = 0, q_end = 0;
    int c_begin = 0, c_end = 0;
};

// CLS q SEP c SEP, padded with PAD up to max_seq. Throws on unknown words,
// empty question/context, or overflow.
Encoding encode(const Instance& inst, const Vocabulary& vocab, int max_seq);

// Words for the first enc.length positions (inverse of encode on the closed
// vocabulary).
std::vector<std::string> decode(const Encoding& enc, const Vocabulary& vocab);

// Gold span in encoded coordinates.
inline int encoded_span_start(const Instance& inst, const Encoding& enc) {
    return enc.c_begin + inst.answer.start;
}
inline int encoded_span_end(const Instance& inst, const Encoding& enc) {
    return enc.c_begin + inst.answer.end;
}

// JSONL helpers for dataset files.
std::string instance_to_json(const Instance& inst);
Instance instance_from_json(const std::string& line);

}  // namespace attrsim
