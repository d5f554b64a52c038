#include "attrsim/vocab.hpp"

namespace attrsim {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    for (size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int>(i)).second)
            throw Error("Vocabulary: duplicate word '" + words_[i] + "'");
    }
    if (size() < 4 || words_[0] != "<cls>" || words_[1] != "<sep>" || words_[2] != "<pad>" ||
        words_[3] != "<mask>")
        throw Error("Vocabulary: specials must be <cls> <sep> <pad> <mask> at ids 0-3");
}

int Vocabulary::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw Error("Vocabulary: unknown word '" + word + "'");
    return it->second;
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || id >= size()) throw Error("Vocabulary: id out of range");
    return words_[static_cast<size_t>(id)];
}

const Vocabulary& Vocabulary::builtin() {
    static const Vocabulary vocab([] {
        std::vector<std::string> w = {"<cls>", "<sep>", "<pad>", "<mask>"};
        auto push = [&](std::initializer_list<const char*> group) {
            for (const char* s : group) w.emplace_back(s);
        };
        // punctuation and function words
        push({".", "?", "are", "and", "both", "of", "the", "same", "is", "a", "what",
              "does", "person", "who", "works", "at", "own", "owns", "did", "trade",
              "traded", "for", "coins"});
        // verbs used by the single-hop grammar (base / third person)
        push({"sell", "sells", "keep", "keeps", "build", "builds", "paint", "paints",
              "carry", "carries"});
        // people
        push({"alice", "bob", "cara", "dane", "elio", "fern", "gus", "hana", "ivan",
              "jade", "kira", "liam", "mira", "nolan", "opal", "pavel", "quinn", "rosa",
              "sten", "tilda", "umar", "vera", "wren", "yuri", "zora", "amos", "brit",
              "cole", "dora", "emil"});
        // workplaces
        push({"mill", "bakery", "harbor", "library", "forge", "vineyard", "dairy",
              "quarry", "studio", "garage", "orchard", "brewery", "foundry", "cannery",
              "depot", "arcade"});
        // pets
        push({"pet", "ferret", "crow", "iguana", "lemur", "badger", "otter", "parrot",
              "gecko", "hound", "mole", "lynx", "toad", "heron", "stoat", "shrew",
              "finch"});
        // comparison property classes and values
        push({"color", "red", "blue", "green", "amber", "violet", "teal", "crimson",
              "ivory"});
        push({"genre", "documentary", "romance", "comedy", "thriller", "western",
              "musical", "noir", "satire"});
        push({"nationality", "danish", "french", "german", "polish", "swedish", "dutch",
              "finnish", "czech"});
        push({"material", "wood", "steel", "glass", "copper", "marble", "denim",
              "granite", "velvet"});
        // objects and numbers for the single-hop grammar
        push({"lamp", "rope", "kettle", "ladder", "barrel", "mirror", "wagon", "candle",
              "bucket", "banner", "crate", "easel", "stool", "basket", "anvil", "loom"});
        push({"10", "15", "20", "25", "30", "35", "40", "45", "50", "55", "60", "65",
              "70", "75", "80", "90"});
        return w;
    }());
    return vocab;
}

}  // namespace attrsim
