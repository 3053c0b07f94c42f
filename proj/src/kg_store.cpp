#include "kecrs/kg_store.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "kecrs/errors.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

namespace {

constexpr std::array<std::string_view, 7> kNodeTypeNames = {
    "genre", "movie", "cast", "crew", "keyword", "production", "generic"};

constexpr std::array<std::string_view, 11> kDepartments = {
    "crew",   "production", "sound", "editing",       "directing", "writing",
    "art",    "costume & make-up",  "camera", "visual effect", "lighting"};

std::string sanitize_field(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return out;
}

bool skip_line(const std::string& line) {
    const std::string t = text::trim(line);
    return t.empty() || t[0] == '#';
}

}  // namespace

std::string_view to_string(NodeType t) { return kNodeTypeNames[static_cast<std::size_t>(t)]; }

std::optional<NodeType> parse_node_type(std::string_view s) {
    const std::string folded = text::fold_case(s);
    for (std::size_t i = 0; i < kNodeTypeNames.size(); ++i) {
        if (folded == kNodeTypeNames[i]) return static_cast<NodeType>(i);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

const Entity& KnowledgeGraph::entity(EntityId id) const {
    if (!contains(id)) throw LookupError("unknown entity id " + std::to_string(id));
    return entities_[static_cast<std::size_t>(id)];
}

const std::string& KnowledgeGraph::relation_name(RelationId r) const {
    if (r < 0 || static_cast<std::size_t>(r) >= relations_.size()) {
        throw LookupError("unknown relation id " + std::to_string(r));
    }
    return relations_[static_cast<std::size_t>(r)];
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view name) const {
    auto it = by_relation_.find(std::string(name));
    if (it == by_relation_.end()) return std::nullopt;
    return it->second;
}

std::optional<EntityId> KnowledgeGraph::find_key(std::string_view key) const {
    auto it = by_key_.find(std::string(key));
    if (it == by_key_.end()) return std::nullopt;
    return it->second;
}

std::optional<EntityId> KnowledgeGraph::find_by_name(std::string_view name) const {
    auto it = by_name_.find(text::fold_case(name));
    if (it == by_name_.end() || it->second.empty()) return std::nullopt;
    return it->second.front();
}

std::optional<EntityId> KnowledgeGraph::find_by_name(std::string_view name, NodeType type) const {
    auto it = by_name_.find(text::fold_case(name));
    if (it == by_name_.end()) return std::nullopt;
    for (EntityId e : it->second) {
        if (entities_[static_cast<std::size_t>(e)].type == type) return e;
    }
    return std::nullopt;
}

std::span<const EntityId> KnowledgeGraph::neighbors(EntityId e, RelationId r) const {
    if (!contains(e)) throw LookupError("unknown entity id " + std::to_string(e));
    if (r < 0 || static_cast<std::size_t>(r) >= relations_.size()) {
        throw LookupError("unknown relation id " + std::to_string(r));
    }
    const auto& off = offsets_[static_cast<std::size_t>(r)];
    const auto& adj = adjacency_[static_cast<std::size_t>(r)];
    const std::size_t b = off[static_cast<std::size_t>(e)];
    const std::size_t n = off[static_cast<std::size_t>(e) + 1] - b;
    return std::span<const EntityId>(adj.data() + b, n);
}

int KnowledgeGraph::item_index(EntityId e) const {
    if (!contains(e)) return -1;
    return item_pos_[static_cast<std::size_t>(e)];
}

void KnowledgeGraph::write_entities(std::ostream& out) const {
    for (const Entity& e : entities_) {
        out << sanitize_field(e.key) << '\t' << to_string(e.type) << '\t' << sanitize_field(e.name)
            << '\n';
    }
}

void KnowledgeGraph::write_triples(std::ostream& out) const {
    for (const Triple& t : triples_) {
        out << sanitize_field(entities_[static_cast<std::size_t>(t.head)].key) << '\t'
            << relations_[static_cast<std::size_t>(t.relation)] << '\t'
            << sanitize_field(entities_[static_cast<std::size_t>(t.tail)].key) << '\n';
    }
}

void KnowledgeGraph::write_relations(std::ostream& out) const {
    for (const std::string& r : relations_) out << r << '\n';
}

void KnowledgeGraph::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream ent(dir / "entities.tsv", std::ios::trunc);
    std::ofstream tri(dir / "triples.tsv", std::ios::trunc);
    std::ofstream rel(dir / "relations.tsv", std::ios::trunc);
    if (!ent || !tri || !rel) throw IngestionError("cannot write graph files under " + dir.string());
    write_entities(ent);
    write_triples(tri);
    write_relations(rel);
}

KnowledgeGraph KnowledgeGraph::load(const std::filesystem::path& dir) {
    std::ifstream ent(dir / "entities.tsv");
    std::ifstream tri(dir / "triples.tsv");
    if (!ent) throw IngestionError("missing " + (dir / "entities.tsv").string());
    if (!tri) throw IngestionError("missing " + (dir / "triples.tsv").string());
    std::ifstream rel(dir / "relations.tsv");
    return load_triples(tri, ent, rel ? &rel : nullptr);
}

// ---------------------------------------------------------------------------

EntityId GraphBuilder::add_entity(std::string key, std::string name, NodeType type) {
    auto& g = graph_;
    if (g.by_key_.count(key) != 0) throw ReferentialError("duplicate entity id '" + key + "'");
    std::string folded = text::fold_case(name);
    if (!names_.emplace(static_cast<int>(type), folded).second) {
        throw ReferentialError("duplicate " + std::string(to_string(type)) + " surface name '" +
                               name + "'");
    }
    const auto id = static_cast<EntityId>(g.entities_.size());
    g.by_key_.emplace(key, id);
    g.by_name_[folded].push_back(id);
    g.entities_.push_back({std::move(key), std::move(name), type});
    return id;
}

RelationId GraphBuilder::add_relation(std::string_view name) {
    auto& g = graph_;
    auto it = g.by_relation_.find(std::string(name));
    if (it != g.by_relation_.end()) return it->second;
    const auto id = static_cast<RelationId>(g.relations_.size());
    g.relations_.emplace_back(name);
    g.by_relation_.emplace(std::string(name), id);
    return id;
}

bool GraphBuilder::has_name(std::string_view name, NodeType type) const {
    return names_.count({static_cast<int>(type), text::fold_case(name)}) != 0;
}

void GraphBuilder::add_triple(EntityId head, RelationId relation, EntityId tail) {
    auto& g = graph_;
    if (!g.contains(head) || !g.contains(tail)) throw ReferentialError("triple references unknown entity");
    if (relation < 0 || static_cast<std::size_t>(relation) >= g.relations_.size()) {
        throw ReferentialError("triple references unknown relation");
    }
    if (head == tail) {
        throw ReferentialError("self-loop on entity '" + g.entities_[static_cast<std::size_t>(head)].key +
                               "'");
    }
    const Triple t{head, relation, tail};
    if (seen_.insert(t).second) g.triples_.push_back(t);
}

KnowledgeGraph GraphBuilder::build() && {
    KnowledgeGraph g = std::move(graph_);
    const std::size_t n = g.entities_.size();
    const std::size_t nr = g.relations_.size();
    g.offsets_.assign(nr, std::vector<std::size_t>(n + 1, 0));
    g.adjacency_.assign(nr, {});
    for (const Triple& t : g.triples_) {
        auto& off = g.offsets_[static_cast<std::size_t>(t.relation)];
        ++off[static_cast<std::size_t>(t.head) + 1];
        ++off[static_cast<std::size_t>(t.tail) + 1];
    }
    for (std::size_t r = 0; r < nr; ++r) {
        auto& off = g.offsets_[r];
        for (std::size_t i = 0; i < n; ++i) off[i + 1] += off[i];
        g.adjacency_[r].resize(off[n]);
    }
    std::vector<std::vector<std::size_t>> fill(nr);
    for (std::size_t r = 0; r < nr; ++r) fill[r].assign(g.offsets_[r].begin(), g.offsets_[r].end() - 1);
    for (const Triple& t : g.triples_) {
        const auto r = static_cast<std::size_t>(t.relation);
        g.adjacency_[r][fill[r][static_cast<std::size_t>(t.head)]++] = t.tail;
        g.adjacency_[r][fill[r][static_cast<std::size_t>(t.tail)]++] = t.head;
    }
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            std::sort(g.adjacency_[r].begin() + static_cast<std::ptrdiff_t>(g.offsets_[r][i]),
                      g.adjacency_[r].begin() + static_cast<std::ptrdiff_t>(g.offsets_[r][i + 1]));
        }
    }
    g.items_.clear();
    g.item_pos_.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.entities_[i].type == NodeType::movie) {
            g.item_pos_[i] = static_cast<int>(g.items_.size());
            g.items_.push_back(static_cast<EntityId>(i));
        }
    }
    seen_.clear();
    names_.clear();
    return g;
}

// ---------------------------------------------------------------------------

KnowledgeGraph load_triples(std::istream& triple_file, std::istream& entity_file,
                            std::istream* relation_file) {
    GraphBuilder b;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(entity_file, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (skip_line(line)) continue;
        const auto f = text::split(line, '\t');
        if (f.size() != 3) throw ParseError("entities", lineno, "expected 3 tab-separated fields");
        const auto type = parse_node_type(f[1]);
        if (!type) throw ParseError("entities", lineno, "unknown node type '" + f[1] + "'");
        if (f[0].empty()) throw ParseError("entities", lineno, "empty entity id");
        try {
            b.add_entity(f[0], f[2], *type);
        } catch (const ReferentialError& e) {
            throw ParseError("entities", lineno, e.what());
        }
    }
    if (relation_file != nullptr) {
        lineno = 0;
        while (std::getline(*relation_file, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (skip_line(line)) continue;
            b.add_relation(text::trim(line));
        }
    }
    lineno = 0;
    while (std::getline(triple_file, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (skip_line(line)) continue;
        const auto f = text::split(line, '\t');
        if (f.size() != 3) throw ParseError("triples", lineno, "expected 3 tab-separated fields");
        if (f[1].empty()) throw ParseError("triples", lineno, "empty relation name");
        const auto head = b.find_key(f[0]);
        const auto tail = b.find_key(f[2]);
        if (!head || !tail) {
            throw ReferentialError("triples:" + std::to_string(lineno) + ": dangling entity id '" +
                                   (head ? f[2] : f[0]) + "'");
        }
        try {
            b.add_triple(*head, b.add_relation(f[1]), *tail);
        } catch (const ReferentialError& e) {
            throw ReferentialError("triples:" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return std::move(b).build();
}

std::vector<EntityId> one_hop_neighbors(const KnowledgeGraph& graph, EntityId item) {
    if (!graph.is_item(item)) throw LookupError("not an item: " + std::to_string(item));
    std::vector<EntityId> out;
    for (std::size_t r = 0; r < graph.num_relations(); ++r) {
        for (EntityId n : graph.neighbors(item, static_cast<RelationId>(r))) {
            if (n != item) out.push_back(n);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------

std::span<const std::string_view> crew_departments() { return kDepartments; }

std::optional<std::string_view> canonical_department(std::string_view label) {
    std::string s = text::fold_case(text::trim(label));
    if (s == "generic crew" || s == "crew") return kDepartments[0];
    if (s == "production department") s = "production";
    if (s == "visual effects") s = "visual effect";
    if (s == "costume & makeup" || s == "costume and make-up" || s == "costume & make up") {
        s = "costume & make-up";
    }
    for (std::string_view d : kDepartments) {
        if (s == d) return d;
    }
    return std::nullopt;
}

namespace {

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key) || j.at(key).is_null()) return out;
    for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
    return out;
}

}  // namespace

DomainRecord parse_domain_record(const nlohmann::json& j) {
    DomainRecord r;
    r.title = j.at("title").get<std::string>();
    if (text::trim(r.title).empty()) throw IngestionError("record with empty title");
    if (j.contains("year") && !j.at("year").is_null()) r.year = j.at("year").get<int>();
    r.genres = string_list(j, "genres");
    r.cast = string_list(j, "cast");
    r.keywords = string_list(j, "keywords");
    r.companies = string_list(j, "companies");
    if (j.contains("crew")) {
        for (const auto& c : j.at("crew")) {
            const std::string dept = c.at("department").get<std::string>();
            const auto canon = canonical_department(dept);
            if (!canon) throw IngestionError("unknown crew department '" + dept + "'");
            r.crew.push_back({c.at("name").get<std::string>(), std::string(*canon)});
        }
    }
    return r;
}

std::vector<DomainRecord> read_domain_records(std::istream& in, const std::string& source) {
    std::vector<DomainRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(parse_domain_record(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source, lineno, e.what());
        } catch (const IngestionError& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    return out;
}

KgThresholds KgThresholds::from_map(const std::map<std::string, int>& m) {
    KgThresholds t;
    for (const auto& [k, v] : m) {
        if (k == "keyword") t.keyword = v;
        else if (k == "cast") t.cast = v;
        else if (k == "company") t.company = v;
        else if (k == "crew") t.crew = v;
        else if (k == "genre") t.genre = v;
        else throw LookupError("unknown threshold '" + k + "'");
    }
    return t;
}

namespace {

// Number of records mentioning each case-folded value, plus first-seen order.
struct Tally {
    std::unordered_map<std::string, int> count;
    std::vector<std::string> order;  // first surface form per folded value
    std::unordered_map<std::string, std::string> surface;

    void add_record(const std::vector<std::string>& values) {
        std::set<std::string> once;
        for (const auto& v : values) {
            std::string f = text::fold_case(text::trim(v));
            if (f.empty() || !once.insert(f).second) continue;
            if (count[f]++ == 0) {
                order.push_back(f);
                surface[f] = text::trim(v);
            }
        }
    }
};

}  // namespace

KnowledgeGraph build_domain_kg(std::span<const DomainRecord> records, const KgThresholds& th) {
    Tally genres, keywords, cast, crew, companies;
    for (const DomainRecord& r : records) {
        genres.add_record(r.genres);
        keywords.add_record(r.keywords);
        cast.add_record(r.cast);
        companies.add_record(r.companies);
        std::vector<std::string> names;
        for (const auto& c : r.crew) names.push_back(c.name);
        crew.add_record(names);
    }

    GraphBuilder b;
    const RelationId rel_genre = b.add_relation("genre");
    const RelationId rel_keyword = b.add_relation("keyword");
    const RelationId rel_cast = b.add_relation("cast");
    std::unordered_map<std::string_view, RelationId> rel_dept;
    for (std::string_view d : kDepartments) rel_dept[d] = b.add_relation("crew:" + std::string(d));
    const RelationId rel_company = b.add_relation("company");

    std::size_t next_key = 0;
    auto key = [&next_key] { return std::to_string(next_key++); };

    std::vector<EntityId> movie_ids;
    for (const DomainRecord& r : records) {
        std::string name = text::trim(r.title);
        if (b.has_name(name, NodeType::movie)) name += " (" + std::to_string(r.year) + ")";
        const std::string base = name;
        for (int k = 2; b.has_name(name, NodeType::movie); ++k) name = base + " #" + std::to_string(k);
        movie_ids.push_back(b.add_entity(key(), name, NodeType::movie));
    }

    auto make_nodes = [&](const Tally& t, int threshold, NodeType type) {
        std::unordered_map<std::string, EntityId> ids;
        for (const auto& f : t.order) {
            if (t.count.at(f) >= threshold) ids[f] = b.add_entity(key(), t.surface.at(f), type);
        }
        return ids;
    };
    const auto genre_ids = make_nodes(genres, th.genre, NodeType::genre);
    const auto keyword_ids = make_nodes(keywords, th.keyword, NodeType::keyword);
    const auto cast_ids = make_nodes(cast, th.cast, NodeType::cast);
    const auto crew_ids = make_nodes(crew, th.crew, NodeType::crew);
    const auto company_ids = make_nodes(companies, th.company, NodeType::production);

    auto link = [&](EntityId movie, const std::vector<std::string>& values,
                    const std::unordered_map<std::string, EntityId>& ids, RelationId rel) {
        for (const auto& v : values) {
            auto it = ids.find(text::fold_case(text::trim(v)));
            if (it != ids.end()) b.add_triple(movie, rel, it->second);
        }
    };
    for (std::size_t i = 0; i < records.size(); ++i) {
        const DomainRecord& r = records[i];
        const EntityId m = movie_ids[i];
        link(m, r.genres, genre_ids, rel_genre);
        link(m, r.keywords, keyword_ids, rel_keyword);
        link(m, r.cast, cast_ids, rel_cast);
        for (const auto& c : r.crew) {
            auto it = crew_ids.find(text::fold_case(text::trim(c.name)));
            if (it != crew_ids.end()) b.add_triple(m, rel_dept.at(c.department), it->second);
        }
        link(m, r.companies, company_ids, rel_company);
    }
    return std::move(b).build();
}

nlohmann::json KgStats::to_json() const {
    return {{"node_counts", node_counts},
            {"edge_counts", edge_counts},
            {"total_nodes", total_nodes},
            {"total_edges", total_edges}};
}

KgStats graph_stats(const KnowledgeGraph& graph) {
    KgStats s;
    for (NodeType t : kAllNodeTypes) s.node_counts[std::string(to_string(t))] = 0;
    for (const Entity& e : graph.entities()) ++s.node_counts[std::string(to_string(e.type))];
    for (const std::string& r : graph.relation_names()) s.edge_counts[r] = 0;
    for (const Triple& t : graph.triples()) ++s.edge_counts[graph.relation_name(t.relation)];
    s.total_nodes = graph.num_entities();
    s.total_edges = graph.num_triples();
    return s;
}

}  // namespace kecrs
