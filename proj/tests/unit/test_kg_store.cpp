#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "kecrs/errors.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/rng.hpp"
#include "support.hpp"

using namespace kecrs;
using kecrs::testing::fixture;
using kecrs::testing::load_json;

namespace {

KnowledgeGraph from_strings(const std::string& triples, const std::string& entities) {
    std::istringstream t(triples), e(entities);
    return load_triples(t, e);
}

std::vector<DomainRecord> fixture_records() {
    std::ifstream in(fixture("domain_records.jsonl"));
    return read_domain_records(in, "domain_records.jsonl");
}

KgThresholds thresholds_of(const nlohmann::json& j) {
    return KgThresholds::from_map(j.get<std::map<std::string, int>>());
}

void check_stats(const KgStats& s, const nlohmann::json& expected) {
    CHECK(s.total_nodes == expected.at("total_nodes").get<std::size_t>());
    CHECK(s.total_edges == expected.at("total_edges").get<std::size_t>());
    for (const auto& [type, n] : expected.at("node_counts").items()) {
        CHECK_MESSAGE(s.node_counts.at(type) == n.get<std::size_t>(), type);
    }
    for (const auto& [rel, n] : expected.at("edge_counts").items()) {
        CHECK_MESSAGE(s.edge_counts.at(rel) == n.get<std::size_t>(), rel);
    }
}

}  // namespace

TEST_CASE("single triple is indexed in both directions") {
    const auto g = from_strings("a\tlikes\tb\n", "a\tmovie\tA\nb\tgenre\tB\n");
    const auto r = *g.find_relation("likes");
    REQUIRE(g.neighbors(0, r).size() == 1);
    CHECK(g.neighbors(0, r)[0] == 1);
    REQUIRE(g.neighbors(1, r).size() == 1);
    CHECK(g.neighbors(1, r)[0] == 0);
}

TEST_CASE("empty triple file leaves isolated nodes") {
    const auto g = from_strings("", "a\tmovie\tA\nb\tmovie\tB\nc\tgenre\tC\n");
    CHECK(g.num_entities() == 3);
    CHECK(graph_stats(g).total_edges == 0);
    CHECK(one_hop_neighbors(g, 0).empty());
}

TEST_CASE("comments and duplicates") {
    const auto g = from_strings("# header\na\tr\tb\na\tr\tb\n", "# ids\na\tmovie\tA\nb\tgenre\tB\n");
    CHECK(g.num_triples() == 1);
}

TEST_CASE("malformed input is reported with its line") {
    CHECK_THROWS_AS(from_strings("a\tr\n", "a\tmovie\tA\n"), ParseError);
    try {
        from_strings("", "a\tmovie\tA\nb\tplanet\tB\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(from_strings("a\tr\tzzz\n", "a\tmovie\tA\n"), ReferentialError);
    CHECK_THROWS_AS(from_strings("", "a\tmovie\tSame\nb\tmovie\tsame\n"), ParseError);
    CHECK_THROWS_AS(from_strings("a\tr\ta\n", "a\tmovie\tA\n"), ReferentialError);
}

TEST_CASE("one-hop neighbours") {
    const auto g = from_strings("m\tgenre\tt\nm\tcast\tx\n",
                                "m\tmovie\tM\nt\tgenre\tthriller\nx\tcast\tX\nlone\tmovie\tLone\n");
    CHECK(one_hop_neighbors(g, 0) == std::vector<EntityId>{1, 2});
    CHECK(one_hop_neighbors(g, 3).empty());
    CHECK_THROWS_AS(one_hop_neighbors(g, 1), LookupError);
}

TEST_CASE("30-entity fixture matches the line-count recount") {
    const auto expected = load_json("expected_kg30.json");
    const auto g = KnowledgeGraph::load(fixture("kg30"));
    check_stats(graph_stats(g), expected);

    const EntityId m0 = *g.find_key("m0");
    std::set<std::string> hop;
    for (EntityId e : one_hop_neighbors(g, m0)) hop.insert(g.entity(e).key);
    CHECK(hop.size() == 6);
    CHECK(hop == expected.at("m0_one_hop").get<std::set<std::string>>());
}

TEST_CASE("item ids are exactly the movies") {
    const auto g = KnowledgeGraph::load(fixture("kg30"));
    std::size_t movies = 0;
    for (std::size_t e = 0; e < g.num_entities(); ++e) {
        const bool movie = g.entity(static_cast<EntityId>(e)).type == NodeType::movie;
        movies += movie ? 1 : 0;
        CHECK(g.is_item(static_cast<EntityId>(e)) == movie);
    }
    CHECK(g.item_ids().size() == movies);
}

TEST_CASE("neighbour lists equal a brute-force recount on random graphs") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(199));
        const int nr = 1 + static_cast<int>(rng.below(4));
        GraphBuilder b;
        for (int i = 0; i < n; ++i) {
            b.add_entity("e" + std::to_string(i), "name" + std::to_string(i),
                         rng.below(3) == 0 ? NodeType::movie : NodeType::keyword);
        }
        for (int r = 0; r < nr; ++r) b.add_relation("r" + std::to_string(r));
        std::set<Triple> triples;
        const int m = static_cast<int>(rng.below(static_cast<std::uint64_t>(3 * n)));
        for (int k = 0; k < m; ++k) {
            const auto h = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
            const auto t = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
            if (h == t) continue;
            const Triple tr{h, static_cast<RelationId>(rng.below(static_cast<std::uint64_t>(nr))), t};
            b.add_triple(tr.head, tr.relation, tr.tail);
            triples.insert(tr);
        }
        const KnowledgeGraph g = std::move(b).build();
        CHECK(g.num_triples() == triples.size());
        for (EntityId e = 0; e < n; ++e) {
            for (RelationId r = 0; r < nr; ++r) {
                std::vector<EntityId> brute;
                for (const Triple& t : triples) {
                    if (t.relation != r) continue;
                    if (t.head == e) brute.push_back(t.tail);
                    if (t.tail == e) brute.push_back(t.head);
                }
                std::sort(brute.begin(), brute.end());
                const auto got = g.neighbors(e, r);
                CHECK(std::vector<EntityId>(got.begin(), got.end()) == brute);
            }
        }
    }
}

TEST_CASE("save and load round-trip") {
    const auto g = KnowledgeGraph::load(fixture("kg30"));
    kecrs::testing::TempDir dir("kg");
    g.save(dir.path());
    const auto h = KnowledgeGraph::load(dir.path());
    CHECK(graph_stats(g) == graph_stats(h));
    for (EntityId e = 0; e < static_cast<EntityId>(g.num_entities()); ++e) {
        CHECK(g.entity(e).key == h.entity(e).key);
        for (RelationId r = 0; r < static_cast<RelationId>(g.num_relations()); ++r) {
            const auto a = g.neighbors(e, r);
            const auto b = h.neighbors(e, r);
            CHECK(std::vector<EntityId>(a.begin(), a.end()) == std::vector<EntityId>(b.begin(), b.end()));
        }
    }
}

TEST_CASE("stats of an empty graph are all zero") {
    const KgStats s = graph_stats(KnowledgeGraph{});
    CHECK(s.total_nodes == 0);
    CHECK(s.total_edges == 0);
    for (const auto& [type, n] : s.node_counts) CHECK(n == 0);
}

TEST_CASE("department labels") {
    CHECK(crew_departments().size() == 11);
    CHECK(*canonical_department("Visual Effects") == "visual effect");
    CHECK(*canonical_department(" Directing ") == "directing");
    CHECK(*canonical_department("Crew") == "crew");
    CHECK(*canonical_department("Costume & Make-Up") == "costume & make-up");
    CHECK_FALSE(canonical_department("Catering"));
}

TEST_CASE("single record with default thresholds keeps genres only") {
    DomainRecord r;
    r.title = "Solo";
    r.year = 2000;
    r.genres = {"Drama", "Crime"};
    r.cast = {"A"};
    r.keywords = {"k"};
    r.companies = {"c"};
    r.crew = {{"D", "directing"}};
    const std::vector<DomainRecord> recs{r};
    const KgStats s = graph_stats(build_domain_kg(recs));
    CHECK(s.total_nodes == 3);
    CHECK(s.node_counts.at("movie") == 1);
    CHECK(s.node_counts.at("genre") == 2);
    CHECK(s.total_edges == 2);
    CHECK(s.edge_counts.size() == 15);
}

TEST_CASE("thresholds of one keep every value") {
    const auto recs = fixture_records();
    KgThresholds all{1, 1, 1, 1, 1};
    const KgStats s = graph_stats(build_domain_kg(recs, all));
    std::size_t occurrences = 0;
    for (const auto& r : recs) {
        auto distinct = [](const std::vector<std::string>& v) {
            std::set<std::string> s;
            for (const auto& x : v) {
                std::string f = x;
                f.erase(0, f.find_first_not_of(' '));
                f.erase(f.find_last_not_of(' ') + 1);
                for (char& c : f) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                s.insert(f);
            }
            return s.size();
        };
        occurrences += distinct(r.genres) + distinct(r.keywords) + distinct(r.cast) + distinct(r.companies);
        std::set<std::pair<std::string, std::string>> crew;
        for (const auto& c : r.crew) {
            std::string f = c.name;
            f.erase(0, f.find_first_not_of(' '));
            f.erase(f.find_last_not_of(' ') + 1);
            for (char& ch : f) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            crew.insert({f, c.department});
        }
        occurrences += crew.size();
    }
    CHECK(s.total_edges == occurrences);
}

TEST_CASE("20-record fixture matches the tally script") {
    const auto expected = load_json("expected_domain.json");
    const auto recs = fixture_records();
    REQUIRE(recs.size() == expected.at("records").get<std::size_t>());
    for (const auto& c : expected.at("cases")) {
        INFO(c.at("thresholds").dump());
        check_stats(graph_stats(build_domain_kg(recs, thresholds_of(c.at("thresholds")))), c);
    }
}

TEST_CASE("repeated titles get distinct names") {
    const auto g = build_domain_kg(fixture_records());
    std::set<std::string> names;
    for (EntityId id : g.item_ids()) names.insert(g.entity(id).name);
    CHECK(names.size() == g.item_ids().size());
    CHECK(g.find_by_name("Picture 0 (1997)"));
}

TEST_CASE("unknown departments and thresholds are rejected") {
    std::istringstream in("{\"title\":\"x\",\"crew\":[{\"name\":\"a\",\"department\":\"Catering\"}]}\n");
    CHECK_THROWS_AS(read_domain_records(in), ParseError);
    CHECK_THROWS_AS(KgThresholds::from_map({{"colour", 2}}), LookupError);
}
