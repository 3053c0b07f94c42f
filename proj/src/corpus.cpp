#include "kecrs/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "json.hpp"
#include "kecrs/errors.hpp"
#include "kecrs/rng.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

namespace {

bool is_marker_byte(char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

// Markers of `text` in order of first appearance.
std::vector<std::string> find_markers(const std::string& text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '@') continue;
        std::size_t j = i + 1;
        while (j < text.size() && is_marker_byte(text[j])) ++j;
        if (j == i + 1) continue;
        std::string m = text.substr(i + 1, j - i - 1);
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(std::move(m));
        i = j - 1;
    }
    return out;
}

std::string id_string(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
}

int flag_code(const nlohmann::json& v) {
    if (v.is_number()) return v.get<int>();
    if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
    if (v.is_string()) return std::stoi(v.get<std::string>());
    return 2;
}

// Accepts the usual object form and the empty-list form of REDIAL tables.
const nlohmann::json& table(const nlohmann::json& j, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j.contains(key)) return empty;
    const auto& t = j.at(key);
    if (t.is_object()) return t;
    if (t.is_array() && t.empty()) return empty;
    if (t.is_null()) return empty;
    throw IngestionError(std::string("field '") + key + "' is not an object");
}

Conversation parse_conversation(const nlohmann::json& j, const FlagPolicy& policy) {
    Conversation conv;
    conv.id = id_string(j.at("conversationId"));
    const auto fail = [&](const std::string& what) { throw IngestionError("conversation " + conv.id + ": " + what); };

    for (const auto& [marker, title] : table(j, "movieMentions").items()) {
        conv.titles[marker] = title.is_string() ? title.get<std::string>() : std::string();
    }
    const nlohmann::json& seeker_q = table(j, "initiatorQuestions");
    const nlohmann::json& recommender_q = table(j, "respondentQuestions");

    const std::string initiator = j.contains("initiatorWorkerId") ? id_string(j.at("initiatorWorkerId")) : "";
    struct Timed {
        double t;
        Message m;
    };
    std::vector<Timed> msgs;
    for (const auto& mj : j.at("messages")) {
        Message m;
        m.text = mj.at("text").get<std::string>();
        m.time_offset = mj.value("timeOffset", 0.0);
        m.speaker = id_string(mj.at("senderWorkerId")) == initiator ? Speaker::seeker : Speaker::recommender;
        for (const auto& marker : find_markers(m.text)) {
            auto title = conv.titles.find(marker);
            if (title == conv.titles.end()) fail("marker @" + marker + " has no movieMentions entry");
            m.markers.push_back({marker, title->second, std::nullopt});
            if (conv.flags.count(marker) != 0) continue;
            const nlohmann::json* rec = nullptr;
            if (seeker_q.contains(marker)) {
                rec = &seeker_q.at(marker);
            } else if (recommender_q.contains(marker)) {
                rec = &recommender_q.at(marker);
            } else {
                fail("missing flag record for marker @" + marker);
            }
            MentionFlags f;
            f.suggested = flag_code(rec->value("suggested", nlohmann::json(0))) == 1;
            f.seen = flag_code(rec->value("seen", nlohmann::json(2))) == 1;
            const int liked = flag_code(rec->value("liked", nlohmann::json(2)));
            f.liked = liked == 1 || (liked == 2 && policy.unstated_liked_is_liked);
            conv.flags[marker] = f;
        }
        msgs.push_back({m.time_offset, std::move(m)});
    }
    if (msgs.empty()) fail("no messages");
    std::stable_sort(msgs.begin(), msgs.end(), [](const Timed& a, const Timed& b) { return a.t < b.t; });
    for (auto& t : msgs) conv.messages.push_back(std::move(t.m));
    return conv;
}

}  // namespace

std::string render_text(const Message& msg) {
    std::string out;
    const std::string& s = msg.text;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '@') {
            std::size_t j = i + 1;
            while (j < s.size() && is_marker_byte(s[j])) ++j;
            const std::string marker = s.substr(i + 1, j - i - 1);
            auto it = std::find_if(msg.markers.begin(), msg.markers.end(),
                                   [&](const MentionMarker& m) { return m.marker == marker; });
            if (j > i + 1 && it != msg.markers.end()) {
                out += it->title;
                i = j - 1;
                continue;
            }
        }
        out += s[i];
    }
    return out;
}

std::vector<std::string> message_tokens(const Message& msg) { return text::tokenize(render_text(msg)); }

std::vector<Conversation> load_conversations(std::istream& in, const std::string& source, const FlagPolicy& policy) {
    std::vector<Conversation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            out.push_back(parse_conversation(j, policy));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
    return out;
}

std::vector<Conversation> load_conversations(const std::filesystem::path& path, const FlagPolicy& policy) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    return load_conversations(in, path.string(), policy);
}

void write_conversations(std::ostream& out, std::span<const Conversation> convs) {
    for (const Conversation& c : convs) {
        nlohmann::json j;
        j["conversationId"] = c.id;
        j["initiatorWorkerId"] = 0;
        j["respondentWorkerId"] = 1;
        nlohmann::json msgs = nlohmann::json::array();
        for (std::size_t i = 0; i < c.messages.size(); ++i) {
            const Message& m = c.messages[i];
            msgs.push_back({{"messageId", i},
                            {"timeOffset", m.time_offset},
                            {"senderWorkerId", m.speaker == Speaker::seeker ? 0 : 1},
                            {"text", m.text}});
        }
        j["messages"] = msgs;
        j["movieMentions"] = c.titles;
        nlohmann::json q = nlohmann::json::object();
        for (const auto& [marker, f] : c.flags) {
            q[marker] = {{"suggested", f.suggested ? 1 : 0}, {"seen", f.seen ? 1 : 0}, {"liked", f.liked ? 1 : 0}};
        }
        j["initiatorQuestions"] = q;
        j["respondentQuestions"] = q;
        out << j.dump() << '\n';
    }
}

bool markers_bound(const Conversation& conv) {
    for (const Message& m : conv.messages) {
        for (const MentionMarker& mk : m.markers) {
            if (!mk.entity) return false;
        }
    }
    return true;
}

DatasetSplit split_dataset(std::vector<Conversation> convs, std::uint64_t seed) {
    if (convs.size() < 10) throw IngestionError("split_dataset needs at least 10 conversations");
    Rng rng = Rng::derive(seed, 4);
    rng.shuffle(std::span<Conversation>(convs));
    const std::size_t n = convs.size();
    const auto n_train = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n) + 0.5));
    const std::size_t n_valid = n / 10;
    DatasetSplit s;
    auto first = std::make_move_iterator(convs.begin());
    s.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(first + static_cast<std::ptrdiff_t>(n_train),
                   first + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(convs.end()));
    return s;
}

Vocabulary build_vocab(std::span<const Conversation> train, int min_freq, const KnowledgeGraph* graph) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const Conversation& c : train) {
        for (const Message& m : c.messages) {
            for (auto& t : message_tokens(m)) ++counts[t];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts) {
        if (n >= static_cast<std::size_t>(std::max(min_freq, 1))) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, _] : kept) v.add(tok);
    if (graph != nullptr) v.bind_entities(*graph);
    return v;
}

std::vector<RecTrainingExample> make_rec_examples(const Conversation& conv, const EntityLinker& linker) {
    std::vector<RecTrainingExample> out;
    const KnowledgeGraph& graph = linker.graph();
    EntitySequence history;
    for (std::size_t i = 0; i < conv.messages.size(); ++i) {
        const Message& msg = conv.messages[i];
        if (msg.speaker == Speaker::recommender) {
            std::set<EntityId> prior;
            for (EntityId e : history.entity_ids) {
                if (graph.is_item(e)) prior.insert(e);
            }
            for (const MentionMarker& mk : msg.markers) {
                auto f = conv.flags.find(mk.marker);
                if (f == conv.flags.end() || !f->second.suggested) continue;
                if (!mk.entity) throw LinkingError("unresolvable mention marker @" + mk.marker);
                RecTrainingExample ex;
                ex.conversation_id = conv.id;
                ex.turn = static_cast<int>(i);
                ex.history = history;
                ex.label = *mk.entity;
                ex.is_new = prior.count(*mk.entity) == 0;
                ex.is_liked = f->second.liked;
                out.push_back(std::move(ex));
            }
        }
        const EntitySequence here = linker.link(std::span<const Message>(&msg, 1));
        for (std::size_t k = 0; k < here.size(); ++k) {
            history.entity_ids.push_back(here.entity_ids[k]);
            SourceSpan span = here.source_spans[k];
            span.message = static_cast<int>(i);
            history.source_spans.push_back(span);
        }
    }
    return out;
}

std::vector<GenPair> make_gen_examples(const Conversation& conv, int max_response) {
    std::vector<GenPair> out;
    for (std::size_t i = 0; i < conv.messages.size(); ++i) {
        const Message& msg = conv.messages[i];
        if (msg.speaker != Speaker::recommender) continue;
        GenPair p;
        p.conversation_id = conv.id;
        p.turn = static_cast<int>(i);
        p.response = message_tokens(msg);
        if (p.response.empty()) continue;
        if (p.response.size() > static_cast<std::size_t>(max_response)) {
            p.response.resize(static_cast<std::size_t>(max_response));
        }
        p.context.assign(conv.messages.begin(), conv.messages.begin() + static_cast<std::ptrdiff_t>(i));
        for (const MentionMarker& mk : msg.markers) {
            auto f = conv.flags.find(mk.marker);
            if (mk.entity && f != conv.flags.end() && f->second.suggested) p.recommended.push_back(*mk.entity);
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kAttributeWords[] = {
    "comedy",  "horror",   "drama",    "thriller", "romance",   "action",  "fantasy",   "mystery",
    "western", "musical",  "crime",    "war",      "sport",     "history", "family",    "animation",
    "heist",   "vampire",  "zombie",   "space",    "pirate",    "robot",   "samurai",   "dinosaur"};

std::string attribute_name(int k) {
    constexpr int n = static_cast<int>(std::size(kAttributeWords));
    return k < n ? kAttributeWords[k] : "attr" + std::to_string(k);
}

// Attribute subsets in order of size, then lexicographic.
std::vector<std::vector<int>> attribute_subsets(int num_attrs, int count) {
    std::vector<std::vector<int>> out;
    for (int size = 1; size <= num_attrs && static_cast<int>(out.size()) < count; ++size) {
        // iterate combinations of `size` out of num_attrs
        std::vector<int> idx(static_cast<std::size_t>(size));
        for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
        while (static_cast<int>(out.size()) < count) {
            out.push_back(idx);
            int i = size - 1;
            while (i >= 0 && idx[static_cast<std::size_t>(i)] == num_attrs - size + i) --i;
            if (i < 0) break;
            ++idx[static_cast<std::size_t>(i)];
            for (int k = i + 1; k < size; ++k) idx[static_cast<std::size_t>(k)] = idx[static_cast<std::size_t>(k - 1)] + 1;
        }
    }
    return out;
}

std::string join_attributes(const std::vector<std::string>& names) {
    return text::join(names, " and ");
}

}  // namespace

SynthCorpus synth_corpus(const SynthConfig& cfg) {
    if (cfg.num_convs < 1 || cfg.num_items < 1 || cfg.num_attrs < 1 || cfg.vocab_size < 1) {
        throw IngestionError("synth_corpus: all counts must be at least 1");
    }
    if (cfg.num_attrs < 31 && cfg.num_items > (1 << cfg.num_attrs) - 1) {
        throw IngestionError("synth_corpus: more items than distinct attribute subsets");
    }
    const auto subsets = attribute_subsets(cfg.num_attrs, cfg.num_items);

    GraphBuilder b;
    const RelationId genre = b.add_relation("genre");
    const RelationId keyword = b.add_relation("keyword");
    std::vector<EntityId> items, attrs;
    for (int i = 0; i < cfg.num_items; ++i) {
        items.push_back(b.add_entity(std::to_string(b.num_entities()), "film" + std::to_string(i), NodeType::movie));
    }
    for (int k = 0; k < cfg.num_attrs; ++k) {
        attrs.push_back(b.add_entity(std::to_string(b.num_entities()), attribute_name(k),
                                     k % 2 == 0 ? NodeType::genre : NodeType::keyword));
    }
    SynthCorpus out;
    for (int i = 0; i < cfg.num_items; ++i) {
        std::set<EntityId> set;
        for (int k : subsets[static_cast<std::size_t>(i)]) {
            b.add_triple(items[static_cast<std::size_t>(i)], k % 2 == 0 ? genre : keyword,
                         attrs[static_cast<std::size_t>(k)]);
            set.insert(attrs[static_cast<std::size_t>(k)]);
        }
        out.item_by_attributes.emplace(std::move(set), items[static_cast<std::size_t>(i)]);
    }
    out.graph = std::move(b).build();

    Rng rng = Rng::derive(cfg.seed, 5);
    auto filler = [&] { return "w" + std::to_string(rng.below(static_cast<std::uint64_t>(cfg.vocab_size))); };
    for (int c = 0; c < cfg.num_convs; ++c) {
        const int item = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_items)));
        const auto& subset = subsets[static_cast<std::size_t>(item)];
        std::vector<std::string> sorted_names;
        for (int k : subset) sorted_names.push_back(attribute_name(k));
        std::vector<std::string> spoken = sorted_names;
        rng.shuffle(std::span<std::string>(spoken));

        Conversation conv;
        conv.id = "synth-" + std::to_string(c);
        const std::string marker = std::to_string(1000 + item);
        const std::string title = "film" + std::to_string(item);
        conv.titles[marker] = title;
        conv.flags[marker] = MentionFlags{true, false, true};

        auto say = [&](Speaker who, std::string text) {
            Message m;
            m.speaker = who;
            m.text = std::move(text);
            m.time_offset = static_cast<double>(conv.messages.size());
            conv.messages.push_back(std::move(m));
        };
        say(Speaker::seeker, "hi " + filler() + " " + filler());
        say(Speaker::recommender, "hi ! what kind of movies do you like ?");
        say(Speaker::seeker, "i like " + join_attributes(spoken) + " movies");
        say(Speaker::recommender, "you should watch @" + marker + " . it is " + join_attributes(sorted_names));
        conv.messages.back().markers.push_back({marker, title, items[static_cast<std::size_t>(item)]});
        say(Speaker::seeker, "thanks " + filler());
        out.conversations.push_back(std::move(conv));
    }
    return out;
}

}  // namespace kecrs
