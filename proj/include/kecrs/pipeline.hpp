#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "kecrs/corpus.hpp"
#include "kecrs/evalkit.hpp"
#include "kecrs/generator.hpp"
#include "kecrs/recommender.hpp"
#include "kecrs/trainer.hpp"

namespace kecrs {

/// Conversations with every marker bound to a graph item, split by seed.
struct PreparedData {
    DatasetSplit split;
    std::size_t dropped = 0;  // conversations with an unbound marker
};

PreparedData prepare_data(std::vector<Conversation> convs, const KnowledgeGraph& graph, std::uint64_t seed);
/// Reads `<data_dir>/conversations.jsonl`.
PreparedData prepare_data(const std::filesystem::path& data_dir, const KnowledgeGraph& graph, std::uint64_t seed);

std::vector<RecTrainingExample> rec_examples(std::span<const Conversation> convs, const EntityLinker& linker);

/// Generator examples with c_E from the (frozen) recommender.
std::vector<GenExample> gen_examples(std::span<const Conversation> convs, const Recommender& rec,
                                     const EntityEmbeddingTable& table, const Generator& gen,
                                     const EntityLinker& linker);

RecommenderConfig recommender_config(const TrainConfig& cfg);
GeneratorConfig generator_config(const TrainConfig& cfg);

TrainResult train_recommender(Recommender& rec, std::span<const RecTrainingExample> train,
                              std::span<const RecTrainingExample> valid, const TrainConfig& cfg);
TrainResult train_generator(Generator& gen, std::span<const GenExample> train, std::span<const GenExample> valid,
                            const TrainConfig& cfg);

struct EvaluationLogs {
    std::vector<PredictionEvent> predictions;
    std::vector<ResponseRecord> responses;
};

/// Replays each conversation: one prediction event per recommender turn that
/// suggests a new item (ranked list of min(50, eligible) items, the mentioned
/// set taken from the ground-truth transcript), one generated response per
/// recommender turn.
EvaluationLogs run_evaluation(std::span<const Conversation> convs, const Recommender& rec, const Generator& gen,
                              const EntityLinker& linker, double lambda3);

/// Rank metrics over events with liked gold, at every K not above the
/// shortest ranked list; Distinct-2/3/4 and AEN over the responses; the
/// repetition audit over the events.
nlohmann::json evaluate_logs(std::span<const PredictionEvent> predictions, std::span<const ResponseRecord> responses,
                             const EntityLinker& linker);

// Command bodies shared by the CLI and the tests. Each writes its artifacts
// under `out` and returns a short JSON summary.
nlohmann::json run_train_rec(const TrainConfig& cfg, const std::filesystem::path& kg_dir,
                             const std::filesystem::path& data_dir, const std::filesystem::path& out);
nlohmann::json run_train_gen(const TrainConfig& cfg, const std::filesystem::path& kg_dir,
                             const std::filesystem::path& data_dir, const std::filesystem::path& rec_ckpt,
                             const std::filesystem::path& out);

}  // namespace kecrs
