#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kecrs/kg_store.hpp"

namespace kecrs {

enum class Speaker { seeker, recommender };

/// `@marker` occurrence in a message. `entity` is filled once the movie title
/// has been bound to a graph item.
struct MentionMarker {
    std::string marker;
    std::string title;
    std::optional<EntityId> entity;
};

struct Message {
    Speaker speaker = Speaker::seeker;
    std::string text;
    std::vector<MentionMarker> markers;  // in order of appearance, deduplicated
    double time_offset = 0.0;
};

struct MentionFlags {
    bool suggested = false;
    bool seen = false;
    bool liked = false;
};

struct Conversation {
    std::string id;
    std::vector<Message> messages;
    std::map<std::string, MentionFlags> flags;   // marker -> flags
    std::map<std::string, std::string> titles;   // marker -> movie title
};

/// Message text with each `@marker` replaced by its movie title.
std::string render_text(const Message& msg);
/// Tokens of render_text().
std::vector<std::string> message_tokens(const Message& msg);

/// Resolves every marker's title to a movie entity: exact case-insensitive
/// name first, then the name with a trailing "(year)" removed. Unresolved
/// markers keep an empty `entity` and fail later in linking.
void bind_markers(Conversation& conv, const KnowledgeGraph& graph);

}  // namespace kecrs
