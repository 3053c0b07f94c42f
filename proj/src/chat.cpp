#include "kecrs/chat.hpp"

namespace kecrs {

ChatSession::ChatSession(const KnowledgeGraph& graph, Recommender rec, Generator gen, int k, double lambda3)
    : graph_(&graph),
      rec_(std::move(rec)),
      gen_(std::move(gen)),
      linker_(graph),
      table_(rec_.embeddings()),
      k_(k),
      lambda3_(lambda3) {
    transcript_.id = "chat";
}

ChatReply ChatSession::chat_turn(const std::string& user_text) {
    Message user;
    user.speaker = Speaker::seeker;
    user.text = user_text;
    user.time_offset = static_cast<double>(transcript_.messages.size());
    transcript_.messages.push_back(std::move(user));

    const EntitySequence history = linker_.link(transcript_.messages);
    for (EntityId e : history.entity_ids) {
        if (graph_->is_item(e)) mentioned_.insert(e);
    }
    const RecPrediction pred = rec_.predict(history, table_);
    const auto probs = std::span<const double>(pred.probs.data(), static_cast<std::size_t>(pred.probs.size()));
    const TopK top = recommend_topk(probs, graph_->item_ids(), k_, mentioned_);

    ChatReply reply;
    reply.items = top.items;
    reply.truncated = top.truncated;
    reply.tokens = gen_.generate(gen_.context_ids(transcript_.messages), pred.pooled, lambda3_);
    reply.text = gen_.vocab().decode(reply.tokens);

    Message bot;
    bot.speaker = Speaker::recommender;
    bot.text = reply.text;
    bot.time_offset = static_cast<double>(transcript_.messages.size());
    transcript_.messages.push_back(std::move(bot));

    mentioned_.insert(top.items.begin(), top.items.end());
    for (EntityId e : linker_.link_text(reply.text).entity_ids) {
        if (graph_->is_item(e)) mentioned_.insert(e);
    }
    return reply;
}

}  // namespace kecrs
