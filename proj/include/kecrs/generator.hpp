#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "kecrs/autodiff.hpp"
#include "kecrs/conversation.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/params.hpp"
#include "kecrs/recommender.hpp"
#include "kecrs/transformer.hpp"

namespace kecrs {

/// Token table with five reserved ids in front.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSplit = 4;
    static constexpr int kReserved = 5;
    static constexpr const char* kSplitToken = "_split_";

    Vocabulary();

    /// Returns the existing id for a known token.
    int add(const std::string& token);
    /// kUnk for unknown tokens.
    int id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    std::span<const std::string> tokens() const { return tokens_; }

    std::vector<int> encode(std::span<const std::string> tokens) const;
    /// Space-joined surface text; reserved ids are dropped.
    std::string decode(std::span<const int> ids) const;

    /// token id -> entity id, for single-token entity names.
    const std::map<int, EntityId>& entity_token_map() const { return entity_tokens_; }
    /// Rebuilds entity_token_map() against `graph` (lowest entity id wins).
    void bind_entities(const KnowledgeGraph& graph);

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::map<int, EntityId> entity_tokens_;
};

struct GeneratorConfig {
    TransformerConfig transformer;  // d_model is both d_t and d_res
    int d_f = 8;
    int max_context = 256;  // n-hat
    int max_response = 20;  // n_y

    static GeneratorConfig full_scale();
    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

/// One teacher-forcing example: context X, response Y and the frozen
/// recommendation-side inputs.
struct GenExample {
    std::string conversation_id;
    int turn = 0;
    std::vector<int> context;   // encoded, truncated, never empty
    std::vector<int> response;  // without BOS/EOS, at most n_y ids
    RowVector c_e;              // pooled history representation
    std::vector<EntityId> history;      // entities linked in the context
    std::vector<EntityId> recommended;  // items suggested in the response
    std::vector<EntityId> boe_targets;  // one-hop neighbors of `recommended`
};

struct LossWeights {
    double gen = 1.0;
    double lambda1 = 1.5;    // bag-of-entity
    double lambda2 = 0.025;  // infusion
};

struct LossBreakdown {
    double l_gen = 0.0;
    double l_boe = 0.0;
    double l_infuse = 0.0;
    double l_total = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    std::size_t boe_examples = 0;
};

/// Incremental decoding state. `generated` excludes BOS.
struct DecoderState {
    Matrix memory;
    std::vector<int> prefix;
    std::vector<RowVector> step_hiddens;
    RowVector boe_accumulator;  // running sum of per-step entity distributions

    std::size_t generated() const { return prefix.empty() ? 0 : prefix.size() - 1; }
};

struct StepOutput {
    RowVector p_res;  // over the vocabulary
    RowVector p_boe;  // sigmoid of the accumulator, over all entities
};

/// Transformer encoder-decoder conditioned on c_E, with the bag-of-entity and
/// infusion heads. Entity representations H are a frozen tensor stored with
/// the parameters.
class Generator {
public:
    Generator(const GeneratorConfig& cfg, Vocabulary vocab, const Matrix& entity_table, std::uint64_t seed);
    Generator(const GeneratorConfig& cfg, Vocabulary vocab, ParamStore params);
    Generator(const Generator& other);
    Generator& operator=(const Generator&) = delete;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const Vocabulary& vocab() const { return vocab_; }
    const GeneratorConfig& config() const { return cfg_; }
    const Matrix& entity_table() const { return frozen_h_->value; }
    std::size_t num_entities() const { return static_cast<std::size_t>(frozen_h_->value.rows()); }

    /// Tokens of every message joined by `_split_`, the most recent
    /// max_context kept. An empty context is the single BOS token.
    std::vector<int> context_ids(std::span<const Message> context) const;

    ad::Var encode_context(ad::Tape& tape, const ad::Var& embeddings, std::span<const int> ids) const;
    Matrix encode_context(std::span<const int> ids) const;

    /// Teacher-forced losses, averaged as documented on LossBreakdown and
    /// backpropagated with `weights` into params().grad.
    LossBreakdown loss_and_grad(std::span<const GenExample> batch, const LossWeights& weights, bool with_grad);

    /// Per-step P_res for a teacher-forced pass (rows: positions).
    Matrix teacher_forced_probs(const GenExample& ex) const;
    /// P_boe over the teacher-forced response positions.
    RowVector boe_probability(const GenExample& ex) const;
    /// ||phi'(c_E) E_m^T + b_cE - d_E||^2 / |V_oc|.
    double infusion_distance(const RowVector& c_e, std::span<const EntityId> history) const;
    /// Indicator d_E over the vocabulary.
    RowVector infusion_target(std::span<const EntityId> history) const;
    /// Projects entity rows into token space with phi'.
    Matrix project_entities(const Matrix& rows) const;

    DecoderState start(std::span<const int> context) const;
    /// Decodes the next position of `state.prefix`. Throws LengthError once
    /// more than n_y tokens have been generated.
    StepOutput decode_step(DecoderState& state, const RowVector& c_e) const;
    /// Greedy decoding on P_res(t) + lambda3 * B(t), at most n_y tokens, EOS
    /// excluded from the result.
    std::vector<int> generate(std::span<const int> context, const RowVector& c_e, double lambda3) const;

    void save(const std::filesystem::path& dir) const;
    static Generator load(const std::filesystem::path& dir);

private:
    void bind();
    ad::Var decoder_hidden(ad::Tape& tape, const ad::Var& em, const ad::Var& memory,
                           std::span<const int> prefix) const;
    ad::Var joint_rows(ad::Tape& tape, const ad::Var& hidden, const RowVector& c_e) const;
    ad::Var vocab_logits(ad::Tape& tape, const ad::Var& em, const ad::Var& joint) const;
    ad::Var entity_probs(ad::Tape& tape, const ad::Var& joint) const;
    ad::Var infusion_loss(ad::Tape& tape, const ad::Var& em, const RowVector& c_e,
                          std::span<const EntityId> history) const;

    GeneratorConfig cfg_;
    Vocabulary vocab_;
    mutable ParamStore params_;
    Parameter* embedding_ = nullptr;  // E_m
    TransformerParams transformer_;
    Linear phi_;
    Parameter* b_res_ = nullptr;
    Parameter* w_align_ = nullptr;
    Parameter* b_res_entity_ = nullptr;
    Linear phi_prime_;
    Parameter* b_ce_ = nullptr;
    Parameter* frozen_h_ = nullptr;
};

/// Bag-of-entity targets: union of one-hop neighbors of the recommended items.
std::vector<EntityId> boe_targets(const KnowledgeGraph& graph, std::span<const EntityId> recommended);

}  // namespace kecrs
