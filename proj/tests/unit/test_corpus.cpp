#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kecrs/corpus.hpp"
#include "kecrs/errors.hpp"
#include "support.hpp"

using namespace kecrs;
using namespace kecrs::testing;

namespace {

std::vector<Conversation> redial50(const KnowledgeGraph& g) {
    auto convs = load_conversations(fixture("redial50.jsonl"));
    for (auto& c : convs) bind_markers(c, g);
    return convs;
}

// Input may be pretty-printed; the loader wants one conversation per line.
std::vector<Conversation> parse_line(std::string line, const FlagPolicy& policy = {}) {
    std::replace(line.begin(), line.end(), '\n', ' ');
    std::istringstream in(line);
    return load_conversations(in, "inline", policy);
}

const char* kTwoTables = R"({"conversationId": 5, "initiatorWorkerId": 1, "messages": [
    {"text": "saw @11", "senderWorkerId": 1, "timeOffset": 3},
    {"text": "try @12", "senderWorkerId": 2, "timeOffset": 1}],
  "movieMentions": {"11": "Alpha Run", "12": "Bravo"},
  "initiatorQuestions": {"11": {"suggested": 0, "seen": 1, "liked": 1}},
  "respondentQuestions": {"11": {"suggested": 1, "seen": 0, "liked": 0},
                          "12": {"suggested": 1, "seen": 2, "liked": 2}}})";

}  // namespace

TEST_CASE("fixture counts match the replay oracle") {
    const auto ex = load_json("expected_redial50.json");
    const KnowledgeGraph g = KnowledgeGraph::load(fixture("kg30"));
    const auto convs = redial50(g);
    REQUIRE(convs.size() == 50);
    std::size_t utterances = 0, rec = 0, eligible = 0, gen = 0;
    const EntityLinker linker(g);
    for (const auto& c : convs) {
        CHECK(markers_bound(c));
        utterances += c.messages.size();
        for (const auto& e : make_rec_examples(c, linker)) {
            ++rec;
            eligible += e.eligible() ? 1 : 0;
        }
        gen += make_gen_examples(c).size();
        for (std::size_t i = 1; i < c.messages.size(); ++i) {
            CHECK(c.messages[i - 1].time_offset <= c.messages[i].time_offset);
        }
    }
    CHECK(utterances == ex.at("utterances").get<std::size_t>());
    CHECK(rec == ex.at("rec_examples").get<std::size_t>());
    CHECK(eligible == ex.at("eligible_examples").get<std::size_t>());
    CHECK(gen == ex.at("gen_examples").get<std::size_t>());
    CHECK(build_vocab(convs, 2).size() == ex.at("vocab_size_min2").get<std::size_t>());
}

TEST_CASE("vocabulary order and entity binding") {
    Conversation c;
    Message m;
    m.text = "b a b c c c drama";
    c.messages.push_back(m);
    const Vocabulary v = build_vocab(std::span<const Conversation>(&c, 1), 1);
    CHECK(v.token(5) == "c");
    CHECK(v.token(6) == "b");
    CHECK(v.token(7) == "a");
    CHECK(v.token(8) == "drama");
    CHECK(build_vocab(std::span<const Conversation>(&c, 1), 2).size() == 7);
    CHECK(v.entity_token_map().empty());
}

TEST_CASE("seeker table wins and messages are ordered by time") {
    const auto convs = parse_line(kTwoTables);
    REQUIRE(convs.size() == 1);
    const Conversation& c = convs[0];
    CHECK(c.id == "5");
    CHECK(c.messages[0].text == "try @12");
    CHECK(c.messages[0].speaker == Speaker::recommender);
    CHECK(c.messages[1].speaker == Speaker::seeker);
    CHECK_FALSE(c.flags.at("11").suggested);
    CHECK(c.flags.at("11").liked);
    CHECK(c.flags.at("12").suggested);
    CHECK(c.flags.at("12").liked);
    CHECK_FALSE(parse_line(kTwoTables, FlagPolicy{false})[0].flags.at("12").liked);
    CHECK(render_text(c.messages[1]) == "saw Alpha Run");
}

TEST_CASE("ingestion errors name the conversation") {
    std::string no_title = kTwoTables;
    no_title.replace(no_title.find("\"12\": \"Bravo\""), 13, "\"13\": \"Bravo\"");
    try {
        parse_line(no_title);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("conversation 5") != std::string::npos);
        CHECK(std::string(e.what()).find("@12") != std::string::npos);
    }
    std::string no_flags = kTwoTables;
    no_flags.replace(no_flags.find("\"12\": {"), 7, "\"99\": {");
    CHECK_THROWS_AS(parse_line(no_flags), IngestionError);
    CHECK_THROWS_AS(parse_line("{ broken"), ParseError);
    CHECK_THROWS_AS(load_conversations(fixture("missing.jsonl")), IngestionError);
}

TEST_CASE("split sizes") {
    std::vector<Conversation> convs(10006);
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].id = std::to_string(i);
    const DatasetSplit s = split_dataset(convs, 3);
    CHECK(s.train.size() == 8005);
    CHECK(s.valid.size() == 1000);
    CHECK(s.test.size() == 1001);
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.valid, &s.test}) {
        for (const auto& c : *part) ids.insert(c.id);
    }
    CHECK(ids.size() == convs.size());
    CHECK(split_dataset(convs, 3).valid.front().id == s.valid.front().id);
    CHECK(split_dataset(std::vector<Conversation>(10), 0).train.size() == 8);
    CHECK_THROWS_AS(split_dataset(std::vector<Conversation>(9), 0), IngestionError);
}

TEST_CASE("synthetic items are recoverable from their attributes") {
    const SynthCorpus s = synth_corpus({});
    CHECK(s.item_by_attributes.size() == 10);
    const EntityLinker linker(s.graph);
    for (const auto& [attrs, item] : s.item_by_attributes) {
        const auto hop = one_hop_neighbors(s.graph, item);
        CHECK(std::set<EntityId>(hop.begin(), hop.end()) == attrs);
    }
    for (const Conversation& c : s.conversations) {
        REQUIRE(c.messages.size() == 5);
        const EntitySequence said = linker.link(std::span<const Message>(&c.messages[2], 1));
        const std::set<EntityId> asked(said.entity_ids.begin(), said.entity_ids.end());
        REQUIRE(s.item_by_attributes.count(asked) == 1);
        CHECK(c.messages[3].markers.at(0).entity == s.item_by_attributes.at(asked));
    }
    CHECK_THROWS_AS(synth_corpus({50, 8, 3}), IngestionError);
}

TEST_CASE("written conversations load back unchanged") {
    const SynthCorpus s = synth_corpus({12, 5, 4, 20, 9});
    std::stringstream buf;
    write_conversations(buf, s.conversations);
    const auto back = load_conversations(buf);
    REQUIRE(back.size() == s.conversations.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const Conversation& a = s.conversations[i];
        const Conversation& b = back[i];
        CHECK(a.id == b.id);
        CHECK(a.titles == b.titles);
        REQUIRE(a.messages.size() == b.messages.size());
        for (std::size_t k = 0; k < a.messages.size(); ++k) {
            CHECK(a.messages[k].text == b.messages[k].text);
            CHECK(a.messages[k].speaker == b.messages[k].speaker);
        }
        for (const auto& [marker, f] : a.flags) {
            CHECK(b.flags.at(marker).suggested == f.suggested);
            CHECK(b.flags.at(marker).liked == f.liked);
        }
    }
}
