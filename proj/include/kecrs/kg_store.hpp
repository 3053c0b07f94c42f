#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace kecrs {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

enum class NodeType { genre, movie, cast, crew, keyword, production, generic };

inline constexpr NodeType kAllNodeTypes[] = {NodeType::genre,      NodeType::movie,
                                             NodeType::cast,       NodeType::crew,
                                             NodeType::keyword,    NodeType::production,
                                             NodeType::generic};

std::string_view to_string(NodeType t);
std::optional<NodeType> parse_node_type(std::string_view s);

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    auto operator<=>(const Triple&) const = default;
};

struct Entity {
    std::string key;   // external id as written in the entity file
    std::string name;  // surface name used for linking
    NodeType type = NodeType::generic;
};

/// Immutable typed multi-relational graph. Entity ids are dense and follow
/// insertion order. Every triple (h, r, t) is indexed in both directions:
/// neighbors(h, r) contains t and neighbors(t, r) contains h, each list sorted
/// by ascending entity id.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return relations_.size(); }
    std::size_t num_triples() const { return triples_.size(); }

    const Entity& entity(EntityId id) const;
    std::span<const Entity> entities() const { return entities_; }
    const std::string& relation_name(RelationId r) const;
    std::span<const std::string> relation_names() const { return relations_; }
    std::optional<RelationId> find_relation(std::string_view name) const;
    std::optional<EntityId> find_key(std::string_view key) const;
    /// Case-insensitive surface-name lookup; the lowest id wins across types.
    std::optional<EntityId> find_by_name(std::string_view name) const;
    std::optional<EntityId> find_by_name(std::string_view name, NodeType type) const;

    std::span<const Triple> triples() const { return triples_; }
    std::span<const EntityId> neighbors(EntityId e, RelationId r) const;

    /// Recommendable items: exactly the movie entities, ascending id.
    std::span<const EntityId> item_ids() const { return items_; }
    bool is_item(EntityId e) const { return item_index(e) >= 0; }
    /// Position of `e` in item_ids(), or -1.
    int item_index(EntityId e) const;

    bool contains(EntityId e) const { return e >= 0 && static_cast<std::size_t>(e) < entities_.size(); }

    void write_entities(std::ostream& out) const;
    void write_triples(std::ostream& out) const;
    void write_relations(std::ostream& out) const;
    /// Writes entities.tsv, triples.tsv and relations.tsv under `dir`.
    void save(const std::filesystem::path& dir) const;
    static KnowledgeGraph load(const std::filesystem::path& dir);

private:
    friend class GraphBuilder;

    std::vector<Entity> entities_;
    std::vector<std::string> relations_;
    std::vector<Triple> triples_;
    std::vector<EntityId> items_;
    std::vector<int> item_pos_;
    std::unordered_map<std::string, EntityId> by_key_;
    std::unordered_map<std::string, RelationId> by_relation_;
    // case-folded name -> ids, ascending
    std::unordered_map<std::string, std::vector<EntityId>> by_name_;
    // CSR per relation
    std::vector<std::vector<std::size_t>> offsets_;
    std::vector<std::vector<EntityId>> adjacency_;
};

/// Single-threaded construction; build() materializes all indexes.
class GraphBuilder {
public:
    /// Throws ReferentialError on a duplicate key or a surface name that
    /// collides (after case folding) with another entity of the same type.
    EntityId add_entity(std::string key, std::string name, NodeType type);
    /// Idempotent: returns the existing id for a known name.
    RelationId add_relation(std::string_view name);
    /// Duplicate triples collapse. Self-loops are rejected.
    void add_triple(EntityId head, RelationId relation, EntityId tail);

    bool has_name(std::string_view name, NodeType type) const;
    std::optional<EntityId> find_key(std::string_view key) const { return graph_.find_key(key); }
    std::size_t num_entities() const { return graph_.entities_.size(); }

    KnowledgeGraph build() &&;

private:
    KnowledgeGraph graph_;
    std::set<Triple> seen_;
    std::set<std::pair<int, std::string>> names_;
};

/// Parses the tab-separated entity and triple files (see README for the
/// formats). `relation_file`, when given, fixes the relation table order and
/// may declare relations without edges.
KnowledgeGraph load_triples(std::istream& triple_file, std::istream& entity_file,
                            std::istream* relation_file = nullptr);

/// Union over relations of the item's neighbors, without the item itself,
/// ascending and deduplicated.
std::vector<EntityId> one_hop_neighbors(const KnowledgeGraph& graph, EntityId item);

// ---------------------------------------------------------------------------
// Domain graph construction from movie records.

struct CrewCredit {
    std::string name;
    std::string department;
};

struct DomainRecord {
    std::string title;
    int year = 0;
    std::vector<std::string> genres;
    std::vector<std::string> cast;
    std::vector<CrewCredit> crew;
    std::vector<std::string> keywords;
    std::vector<std::string> companies;
};

/// The eleven crew departments, in relation-table order.
std::span<const std::string_view> crew_departments();
/// Canonical department for a free-form label ("Visual Effects" -> "visual effect").
std::optional<std::string_view> canonical_department(std::string_view label);

DomainRecord parse_domain_record(const nlohmann::json& j);
/// One JSON object per line; blank lines skipped. Errors carry line numbers.
std::vector<DomainRecord> read_domain_records(std::istream& in, const std::string& source = "records");

/// Minimum global occurrence counts (number of records mentioning a value)
/// for an attribute value to become a node.
struct KgThresholds {
    int keyword = 4;
    int cast = 4;
    int company = 4;
    int crew = 10;
    int genre = 1;

    static KgThresholds from_map(const std::map<std::string, int>& m);
};

KnowledgeGraph build_domain_kg(std::span<const DomainRecord> records, const KgThresholds& thresholds = {});

struct KgStats {
    std::map<std::string, std::size_t> node_counts;  // node type -> count
    std::map<std::string, std::size_t> edge_counts;  // relation name -> count
    std::size_t total_nodes = 0;
    std::size_t total_edges = 0;

    nlohmann::json to_json() const;
    bool operator==(const KgStats&) const = default;
};

KgStats graph_stats(const KnowledgeGraph& graph);

}  // namespace kecrs
