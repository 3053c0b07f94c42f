#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kecrs/autodiff.hpp"
#include "kecrs/conversation.hpp"
#include "kecrs/recommender.hpp"

namespace kecrs {

/// One line of the prediction log.
struct PredictionEvent {
    std::string conversation_id;
    int turn = 0;
    std::vector<EntityId> ranked_item_ids;
    std::vector<EntityId> mentioned_item_ids;
    std::vector<EntityId> gold_item_ids;
    std::vector<bool> gold_liked_flags;

    /// Gold items whose liked flag is set.
    std::vector<EntityId> liked_gold() const;

    nlohmann::json to_json() const;
    static PredictionEvent from_json(const nlohmann::json& j);
};

/// One line of the generated-response log.
struct ResponseRecord {
    std::string conversation_id;
    int turn = 0;
    std::vector<int> tokens;
    std::string text;
    std::vector<int> entity_token_ids;

    nlohmann::json to_json() const;
    static ResponseRecord from_json(const nlohmann::json& j);
};

std::vector<PredictionEvent> read_prediction_log(const std::filesystem::path& path);
void write_prediction_log(const std::filesystem::path& path, std::span<const PredictionEvent> events);
std::vector<ResponseRecord> read_response_log(const std::filesystem::path& path);
void write_response_log(const std::filesystem::path& path, std::span<const ResponseRecord> records);

inline constexpr int kDefaultKs[] = {1, 5, 10, 50};

struct RankReport {
    std::map<int, double> recall;
    std::map<int, double> precision;
    std::map<int, double> ndcg;
    std::size_t count = 0;

    nlohmann::json to_json() const;
};

/// Averages over events of Recall@K, Precision@K and binary-gain NDCG@K
/// against liked_gold(). Throws EventError for an event with no liked gold
/// item or a ranked list shorter than the largest K.
RankReport rank_metrics(std::span<const PredictionEvent> events, std::span<const int> ks = kDefaultKs);

enum class DistinctNorm { per_response, per_ngram };

/// Distinct n-grams over the whole set, divided by the response count (or by
/// the total n-gram count). Throws EmptyInput for zero responses.
double distinct_n(std::span<const std::vector<std::string>> responses, int n,
                  DistinctNorm norm = DistinctNorm::per_response);

/// Mean number of linked entities per response text.
double avg_entity_number(std::span<const std::string> responses, const EntityLinker& linker);

struct GenReport {
    std::map<int, double> distinct;
    double aen = 0.0;
    std::size_t count = 0;

    nlohmann::json to_json() const;
};

struct RepetitionReport {
    double new_fraction = 0.0;
    double repetitive_fraction = 0.0;
    std::size_t count = 0;

    nlohmann::json to_json() const;
};

/// Share of top-1 items already in the event's mentioned set.
RepetitionReport repetition_stats(std::span<const PredictionEvent> events);

/// Audit events for the human recommender: one per suggested mention, ranked
/// list = that item, mentioned = items mentioned in earlier messages. Items
/// are identified by dense indices of their marker strings.
std::vector<PredictionEvent> human_recommendation_events(std::span<const Conversation> convs);

struct Projection {
    Matrix points;      // n x 2
    Matrix components;  // 2 x d, rows are principal directions
    RowVector mean;
    std::vector<std::string> labels;
};

/// Mean-centred projection on the top two principal directions, each
/// oriented so that its first nonzero loading is positive. Throws
/// DegenerateProjection for fewer than two rows, fewer than two columns or
/// zero variance.
Projection pca_project(const Matrix& rows, std::vector<std::string> labels);
void write_projection_csv(std::ostream& out, const Projection& p);

}  // namespace kecrs
