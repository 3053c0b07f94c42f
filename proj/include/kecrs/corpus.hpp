#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kecrs/conversation.hpp"
#include "kecrs/generator.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/recommender.hpp"

namespace kecrs {

/// REDIAL flag codes: 0 no, 1 yes, 2 did not say.
struct FlagPolicy {
    bool unstated_liked_is_liked = true;
};

/// REDIAL-format JSON lines. Messages are ordered by time offset (stable).
/// Throws IngestionError naming the conversation for a marker without a
/// movieMentions entry or without a flag record.
std::vector<Conversation> load_conversations(std::istream& in, const std::string& source = "conversations",
                                             const FlagPolicy& policy = {});
std::vector<Conversation> load_conversations(const std::filesystem::path& path, const FlagPolicy& policy = {});

/// Inverse of load_conversations for conversations produced here: the seeker
/// is worker 0, the recommender worker 1, and both question tables carry the
/// same flags.
void write_conversations(std::ostream& out, std::span<const Conversation> convs);

/// True when every marker of every message is bound to an entity.
bool markers_bound(const Conversation& conv);

struct DatasetSplit {
    std::vector<Conversation> train;
    std::vector<Conversation> valid;
    std::vector<Conversation> test;
};

/// Seeded shuffle, then train = round(0.8 n), valid = floor(0.1 n), test the
/// rest. Requires at least 10 conversations.
DatasetSplit split_dataset(std::vector<Conversation> convs, std::uint64_t seed);

/// Tokens seen at least `min_freq` times in `train`, by descending count then
/// byte order, after the reserved ids. entity_token_map is bound when a graph
/// is given.
Vocabulary build_vocab(std::span<const Conversation> train, int min_freq, const KnowledgeGraph* graph = nullptr);

/// One example per (recommender message, suggested marker). Examples that are
/// not new or not liked are still emitted, with the flags showing why.
std::vector<RecTrainingExample> make_rec_examples(const Conversation& conv, const EntityLinker& linker);

struct GenPair {
    std::string conversation_id;
    int turn = 0;
    std::vector<Message> context;
    std::vector<std::string> response;  // truncated to n_y tokens
    std::vector<EntityId> recommended;  // bound suggested markers of the response
};

/// One pair per recommender message with a nonempty response.
std::vector<GenPair> make_gen_examples(const Conversation& conv, int max_response = 20);

struct SynthConfig {
    int num_convs = 50;
    int num_items = 10;
    int num_attrs = 6;
    int vocab_size = 60;  // size of the filler-word pool
    std::uint64_t seed = 0;
};

struct SynthCorpus {
    std::vector<Conversation> conversations;
    KnowledgeGraph graph;
    /// Attribute set of every item; each set belongs to exactly one item.
    std::map<std::set<EntityId>, EntityId> item_by_attributes;
};

/// Items take distinct attribute subsets (all singletons, then pairs, ...).
/// The graph depends only on the counts; the seed drives the dialogues.
SynthCorpus synth_corpus(const SynthConfig& cfg);

}  // namespace kecrs
