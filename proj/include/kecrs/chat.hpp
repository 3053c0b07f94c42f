#pragma once

#include <set>
#include <string>
#include <vector>

#include "kecrs/conversation.hpp"
#include "kecrs/generator.hpp"
#include "kecrs/recommender.hpp"

namespace kecrs {

struct ChatReply {
    std::string text;
    std::vector<int> tokens;
    std::vector<EntityId> items;  // top-K, never previously mentioned
    bool truncated = false;
};

/// Append-only dialogue with loaded models. Every item mentioned by either
/// side, and every item shown in a top-K list, joins the mentioned set.
class ChatSession {
public:
    ChatSession(const KnowledgeGraph& graph, Recommender rec, Generator gen, int k = 3, double lambda3 = 0.1);

    ChatReply chat_turn(const std::string& user_text);

    const Conversation& transcript() const { return transcript_; }
    const std::set<EntityId>& mentioned() const { return mentioned_; }

private:
    const KnowledgeGraph* graph_;
    Recommender rec_;
    Generator gen_;
    EntityLinker linker_;
    EntityEmbeddingTable table_;
    int k_;
    double lambda3_;
    Conversation transcript_;
    std::set<EntityId> mentioned_;
};

}  // namespace kecrs
