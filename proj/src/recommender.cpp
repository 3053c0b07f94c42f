#include "kecrs/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kecrs/errors.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

namespace {

std::string strip_year(const std::string& title) {
    const std::string t = text::trim(title);
    if (t.size() >= 6 && t.back() == ')') {
        const auto open = t.rfind('(');
        if (open != std::string::npos) {
            const std::string inner = t.substr(open + 1, t.size() - open - 2);
            const bool digits = !inner.empty() &&
                                std::all_of(inner.begin(), inner.end(), [](char c) { return c >= '0' && c <= '9'; });
            if (digits) return text::trim(t.substr(0, open));
        }
    }
    return t;
}

bool is_marker_byte(char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

}  // namespace

void bind_markers(Conversation& conv, const KnowledgeGraph& graph) {
    for (Message& m : conv.messages) {
        for (MentionMarker& mk : m.markers) {
            auto e = graph.find_by_name(mk.title, NodeType::movie);
            if (!e) e = graph.find_by_name(strip_year(mk.title), NodeType::movie);
            if (e) mk.entity = *e;
        }
    }
}

// ---------------------------------------------------------------------------

EntityLinker::EntityLinker(const KnowledgeGraph& graph) : graph_(&graph) {
    for (const Entity& e : graph.entities()) {
        std::vector<std::string> words;
        for (auto& w : text::word_spans(e.name)) words.push_back(std::move(w.word));
        if (words.empty()) continue;
        const auto id = static_cast<EntityId>(&e - graph.entities().data());
        // ids ascend, so the first insertion keeps the lowest id for a name
        lexicon_.emplace(text::join(words, " "), id);
        max_words_ = std::max(max_words_, words.size());
    }
}

void EntityLinker::link_message(const Message& msg, int index, EntitySequence& out) const {
    struct Hit {
        std::size_t begin, end;
        EntityId entity;
    };
    std::vector<Hit> hits;
    std::string masked = msg.text;

    for (std::size_t i = 0; i < msg.text.size(); ++i) {
        if (msg.text[i] != '@') continue;
        std::size_t j = i + 1;
        while (j < msg.text.size() && is_marker_byte(msg.text[j])) ++j;
        if (j == i + 1) continue;
        const std::string marker = msg.text.substr(i + 1, j - i - 1);
        auto it = std::find_if(msg.markers.begin(), msg.markers.end(),
                               [&](const MentionMarker& m) { return m.marker == marker; });
        if (it == msg.markers.end() || !it->entity) {
            throw LinkingError("unresolvable mention marker @" + marker);
        }
        hits.push_back({i, j, *it->entity});
        std::fill(masked.begin() + static_cast<std::ptrdiff_t>(i), masked.begin() + static_cast<std::ptrdiff_t>(j), ' ');
        i = j - 1;
    }

    const auto words = text::word_spans(masked);
    struct Candidate {
        std::size_t start, len;
        EntityId entity;
    };
    std::vector<Candidate> cands;
    for (std::size_t s = 0; s < words.size(); ++s) {
        std::string key;
        for (std::size_t len = 1; len <= max_words_ && s + len <= words.size(); ++len) {
            if (len > 1) key += ' ';
            key += words[s + len - 1].word;
            auto it = lexicon_.find(key);
            if (it != lexicon_.end()) cands.push_back({s, len, it->second});
        }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.len != b.len) return a.len > b.len;
        return a.start < b.start;
    });
    std::vector<bool> taken(words.size(), false);
    for (const Candidate& c : cands) {
        bool free = true;
        for (std::size_t k = c.start; k < c.start + c.len; ++k) free = free && !taken[k];
        if (!free) continue;
        for (std::size_t k = c.start; k < c.start + c.len; ++k) taken[k] = true;
        hits.push_back({words[c.start].begin, words[c.start + c.len - 1].end, c.entity});
    }
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.begin < b.begin; });
    for (const Hit& h : hits) {
        out.entity_ids.push_back(h.entity);
        out.source_spans.push_back({index, h.begin, h.end});
    }
}

EntitySequence EntityLinker::link(std::span<const Message> messages) const {
    EntitySequence out;
    for (std::size_t i = 0; i < messages.size(); ++i) link_message(messages[i], static_cast<int>(i), out);
    return out;
}

EntitySequence EntityLinker::link_text(const std::string& text) const {
    Message m;
    m.text = text;
    EntitySequence out;
    link_message(m, 0, out);
    return out;
}

EntitySequence link_entities(std::span<const Message> context, const KnowledgeGraph& graph) {
    return EntityLinker(graph).link(context);
}

// ---------------------------------------------------------------------------

AttentionParams AttentionParams::create(ParamStore& store, Eigen::Index d_q, Eigen::Index d_f, Rng& rng) {
    store.add("attn.wq", glorot_matrix(d_q, d_f, rng));
    store.add("attn.wk", glorot_matrix(1, d_q, rng));
    return bind(store);
}

AttentionParams AttentionParams::bind(ParamStore& store) {
    return {&store.get("attn.wq"), &store.get("attn.wk")};
}

std::pair<ad::Var, ad::Var> attentive_pool(ad::Tape& tape, const ad::Var& h_e, const AttentionParams& params) {
    if (h_e.rows() == 0) throw EmptyInput("attentive_pool: empty entity history");
    ad::Var hidden = ad::tanh(ad::matmul_nt(tape.param(*params.w_q), h_e));  // d_q x |E|
    ad::Var alpha = ad::softmax_rows(ad::matmul(tape.param(*params.w_k), hidden));  // 1 x |E|
    return {ad::matmul(alpha, h_e), alpha};
}

std::pair<RowVector, RowVector> attentive_pool(const Matrix& h_e, const Matrix& w_q, const RowVector& w_k) {
    ad::Tape tape;
    Parameter q{"wq", w_q, Matrix(), false};
    Parameter k{"wk", w_k, Matrix(), false};
    auto [c, alpha] = attentive_pool(tape, tape.constant(h_e), AttentionParams{&q, &k});
    return {c.value().row(0), alpha.value().row(0)};
}

RowVector score_items(const RowVector& c_e, const Matrix& h_items) {
    if (c_e.size() != h_items.cols()) throw ShapeError("score_items: dimension mismatch");
    RowVector logits = c_e * h_items.transpose();
    const double m = logits.maxCoeff();
    RowVector p = (logits.array() - m).exp();
    return p / p.sum();
}

TopK recommend_topk(std::span<const double> probs, std::span<const EntityId> item_ids, int k,
                    const std::set<EntityId>& mentioned) {
    if (k < 1) throw LookupError("recommend_topk: K must be at least 1");
    if (probs.size() != item_ids.size()) throw ShapeError("recommend_topk: probs and item ids differ in length");
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
        if (mentioned.count(item_ids[i]) == 0) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return item_ids[a] < item_ids[b];
    });
    TopK out;
    const auto take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < take; ++i) out.items.push_back(item_ids[order[i]]);
    out.truncated = take < static_cast<std::size_t>(k);
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json RecommenderConfig::to_json() const {
    return {{"d_k", encoder.d_k}, {"d_f", encoder.d_f}, {"layers", encoder.layers}, {"d_q", d_q}};
}

RecommenderConfig RecommenderConfig::from_json(const nlohmann::json& j) {
    RecommenderConfig c;
    c.encoder.d_k = j.value("d_k", c.encoder.d_k);
    c.encoder.d_f = j.value("d_f", c.encoder.d_f);
    c.encoder.layers = j.value("layers", c.encoder.layers);
    c.d_q = j.value("d_q", c.d_q);
    return c;
}

Recommender::Recommender(const KnowledgeGraph& graph, const RecommenderConfig& cfg, std::uint64_t seed)
    : graph_(&graph), cfg_(cfg), adjacency_(graph) {
    Rng rng = Rng::derive(seed, 1);
    RgcnParams::create(params_, graph, cfg.encoder, rng);
    const int d_q = cfg.d_q > 0 ? cfg.d_q : cfg.encoder.d_f;
    AttentionParams::create(params_, d_q, cfg.encoder.d_f, rng);
    bind();
}

Recommender::Recommender(const KnowledgeGraph& graph, const RecommenderConfig& cfg, ParamStore params)
    : graph_(&graph), cfg_(cfg), adjacency_(graph), params_(std::move(params)) {
    bind();
    if (static_cast<std::size_t>(rgcn_.base->value.rows()) != graph.num_entities()) {
        throw ShapeError("recommender checkpoint has " + std::to_string(rgcn_.base->value.rows()) +
                         " entities, graph has " + std::to_string(graph.num_entities()));
    }
}

Recommender::Recommender(const Recommender& other)
    : graph_(other.graph_), cfg_(other.cfg_), adjacency_(other.adjacency_), params_(other.params_) {
    bind();
}

void Recommender::bind() {
    rgcn_ = RgcnParams::bind(params_, graph_->num_relations(), cfg_.encoder.layers);
    attn_ = AttentionParams::bind(params_);
}

EntityEmbeddingTable Recommender::embeddings() const {
    ad::Tape tape;
    EntityEmbeddingTable t;
    t.H = encode_graph(tape, adjacency_, rgcn_).value();
    t.items.assign(graph_->item_ids().begin(), graph_->item_ids().end());
    return t;
}

ad::Var Recommender::pooled(ad::Tape& tape, const ad::Var& h, const EntitySequence& history) const {
    if (history.empty()) return tape.constant(Matrix::Zero(1, h.cols()));
    std::vector<int> rows(history.entity_ids.begin(), history.entity_ids.end());
    return attentive_pool(tape, ad::gather_rows(h, rows), attn_).first;
}

RecPrediction Recommender::predict(const EntitySequence& history) const {
    return predict(history, embeddings());
}

RecPrediction Recommender::predict(const EntitySequence& history, const EntityEmbeddingTable& table) const {
    RecPrediction p;
    if (history.empty()) {
        p.pooled = RowVector::Zero(table.H.cols());
    } else {
        Matrix h_e(static_cast<Eigen::Index>(history.size()), table.H.cols());
        for (std::size_t i = 0; i < history.size(); ++i) {
            h_e.row(static_cast<Eigen::Index>(i)) = table.H.row(history.entity_ids[i]);
        }
        auto [c, alpha] = attentive_pool(h_e, attn_.w_q->value, attn_.w_k->value.row(0));
        p.pooled = c;
        p.attention = alpha;
    }
    p.probs = score_items(p.pooled, table.item_view());
    return p;
}

std::optional<double> Recommender::loss_and_grad(std::span<const RecTrainingExample> batch, bool with_grad) {
    std::vector<const RecTrainingExample*> kept;
    for (const auto& ex : batch) {
        if (ex.eligible()) kept.push_back(&ex);
    }
    if (kept.empty()) return std::nullopt;

    ad::Tape tape;
    ad::Var h = encode_graph(tape, adjacency_, rgcn_);
    std::vector<int> item_rows(graph_->item_ids().begin(), graph_->item_ids().end());
    ad::Var h_items = ad::gather_rows(h, item_rows);

    std::vector<ad::Var> pooled_rows;
    std::vector<int> rows, cols;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const int label = graph_->item_index(kept[i]->label);
        if (label < 0) throw LookupError("training label is not an item: " + std::to_string(kept[i]->label));
        pooled_rows.push_back(pooled(tape, h, kept[i]->history));
        rows.push_back(static_cast<int>(i));
        cols.push_back(label);
    }
    // Stack c_E rows into one |batch| x d_f matrix via transposed concatenation.
    std::vector<ad::Var> columns;
    for (const ad::Var& r : pooled_rows) columns.push_back(ad::transpose(r));
    ad::Var c = ad::transpose(ad::concat_cols(columns));
    ad::Var logp = ad::log_softmax_rows(ad::matmul_nt(c, h_items));
    ad::Var loss = ad::sum_entries(logp, rows, cols) * (-1.0 / static_cast<double>(kept.size()));
    if (with_grad) tape.backward(loss);
    return loss.scalar();
}

void Recommender::save(const std::filesystem::path& dir) const {
    save_checkpoint(dir, params_,
                    {{"kind", "recommender"},
                     {"config", cfg_.to_json()},
                     {"num_entities", graph_->num_entities()},
                     {"num_relations", graph_->num_relations()}});
}

Recommender Recommender::load(const std::filesystem::path& dir, const KnowledgeGraph& graph) {
    nlohmann::json meta;
    ParamStore store = load_checkpoint(dir, &meta);
    if (meta.value("kind", "") != "recommender") {
        throw IngestionError("checkpoint in " + dir.string() + " is not a recommender checkpoint");
    }
    return Recommender(graph, RecommenderConfig::from_json(meta.at("config")), std::move(store));
}

}  // namespace kecrs
