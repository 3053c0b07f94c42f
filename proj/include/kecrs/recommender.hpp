#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kecrs/autodiff.hpp"
#include "kecrs/conversation.hpp"
#include "kecrs/graph_encoder.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/params.hpp"

namespace kecrs {

using ad::RowVector;

struct SourceSpan {
    int message = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Entities in order of occurrence in a dialogue context.
struct EntitySequence {
    std::vector<EntityId> entity_ids;
    std::vector<SourceSpan> source_spans;

    std::size_t size() const { return entity_ids.size(); }
    bool empty() const { return entity_ids.empty(); }
};

/// Surface-name lexicon over all graph entities, keyed by the case-folded
/// word sequence of each name.
class EntityLinker {
public:
    explicit EntityLinker(const KnowledgeGraph& graph);

    /// Markers resolve directly; everything else matches the longest
    /// word-aligned, case-insensitive surface name. Overlaps are settled
    /// longest-first, then leftmost. Throws LinkingError for a marker that has
    /// no bound entity.
    EntitySequence link(std::span<const Message> messages) const;
    /// Plain text without markers.
    EntitySequence link_text(const std::string& text) const;

    const KnowledgeGraph& graph() const { return *graph_; }

private:
    void link_message(const Message& msg, int index, EntitySequence& out) const;

    const KnowledgeGraph* graph_;
    std::unordered_map<std::string, EntityId> lexicon_;
    std::size_t max_words_ = 0;
};

EntitySequence link_entities(std::span<const Message> context, const KnowledgeGraph& graph);

struct AttentionParams {
    Parameter* w_q = nullptr;  // d_q x d_f
    Parameter* w_k = nullptr;  // 1 x d_q

    static AttentionParams create(ParamStore& store, Eigen::Index d_q, Eigen::Index d_f, Rng& rng);
    static AttentionParams bind(ParamStore& store);
};

/// alpha = softmax(W_k tanh(W_q H_E^T)), c_E = alpha H_E, returned as (c_E, alpha). Throws EmptyInput
/// when H_E has no rows.
std::pair<RowVector, RowVector> attentive_pool(const Matrix& h_e, const Matrix& w_q, const RowVector& w_k);
std::pair<ad::Var, ad::Var> attentive_pool(ad::Tape& tape, const ad::Var& h_e, const AttentionParams& params);

/// softmax over c_E . H_I[i], computed with max subtraction.
RowVector score_items(const RowVector& c_e, const Matrix& h_items);

struct RecPrediction {
    RowVector probs;      // over graph item_ids order
    RowVector pooled;     // c_E
    RowVector attention;  // alpha, empty for an empty history
};

struct RecTrainingExample {
    std::string conversation_id;
    int turn = 0;
    EntitySequence history;
    EntityId label = 0;
    bool is_new = false;
    bool is_liked = false;

    bool eligible() const { return is_new && is_liked; }
};

struct TopK {
    std::vector<EntityId> items;
    bool truncated = false;
};

/// The K most probable items outside `mentioned`; ties go to the lower id.
TopK recommend_topk(std::span<const double> probs, std::span<const EntityId> item_ids, int k,
                    const std::set<EntityId>& mentioned);

struct RecommenderConfig {
    EncoderConfig encoder;
    int d_q = 0;  // 0 means d_f

    nlohmann::json to_json() const;
    static RecommenderConfig from_json(const nlohmann::json& j);
};

/// Graph encoder plus attentive pooling and item scoring. Holds a reference
/// to the graph, which must outlive it.
class Recommender {
public:
    Recommender(const KnowledgeGraph& graph, const RecommenderConfig& cfg, std::uint64_t seed);
    Recommender(const KnowledgeGraph& graph, const RecommenderConfig& cfg, ParamStore params);
    Recommender(const Recommender& other);
    Recommender& operator=(const Recommender&) = delete;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const RgcnParams& encoder_params() const { return rgcn_; }
    const KnowledgeGraph& graph() const { return *graph_; }
    const RecommenderConfig& config() const { return cfg_; }

    EntityEmbeddingTable embeddings() const;
    RecPrediction predict(const EntitySequence& history) const;
    RecPrediction predict(const EntitySequence& history, const EntityEmbeddingTable& table) const;

    /// Mean of -log P_rec(label) over the eligible examples, with gradients
    /// added into params().grad (callers zero them). Returns nullopt when no
    /// example survives the new-and-liked filter.
    std::optional<double> loss_and_grad(std::span<const RecTrainingExample> batch, bool with_grad = true);

    void save(const std::filesystem::path& dir) const;
    static Recommender load(const std::filesystem::path& dir, const KnowledgeGraph& graph);

private:
    void bind();
    /// c_E on the tape; a zero constant for an empty history.
    ad::Var pooled(ad::Tape& tape, const ad::Var& h, const EntitySequence& history) const;

    const KnowledgeGraph* graph_;
    RecommenderConfig cfg_;
    RelationAdjacency adjacency_;
    mutable ParamStore params_;
    RgcnParams rgcn_;
    AttentionParams attn_;
};

}  // namespace kecrs
