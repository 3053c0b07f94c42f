#include "kecrs/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

#include "kecrs/errors.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

PreparedData prepare_data(std::vector<Conversation> convs, const KnowledgeGraph& graph, std::uint64_t seed) {
    PreparedData out;
    std::vector<Conversation> kept;
    for (Conversation& c : convs) {
        bind_markers(c, graph);
        if (markers_bound(c)) {
            kept.push_back(std::move(c));
        } else {
            ++out.dropped;
        }
    }
    out.split = split_dataset(std::move(kept), seed);
    return out;
}

PreparedData prepare_data(const std::filesystem::path& data_dir, const KnowledgeGraph& graph, std::uint64_t seed) {
    return prepare_data(load_conversations(data_dir / "conversations.jsonl"), graph, seed);
}

std::vector<RecTrainingExample> rec_examples(std::span<const Conversation> convs, const EntityLinker& linker) {
    std::vector<RecTrainingExample> out;
    for (const Conversation& c : convs) {
        for (auto& ex : make_rec_examples(c, linker)) out.push_back(std::move(ex));
    }
    return out;
}

std::vector<GenExample> gen_examples(std::span<const Conversation> convs, const Recommender& rec,
                                     const EntityEmbeddingTable& table, const Generator& gen,
                                     const EntityLinker& linker) {
    std::vector<GenExample> out;
    const Vocabulary& vocab = gen.vocab();
    for (const Conversation& c : convs) {
        for (const GenPair& p : make_gen_examples(c, gen.config().max_response)) {
            GenExample ex;
            ex.conversation_id = p.conversation_id;
            ex.turn = p.turn;
            ex.context = gen.context_ids(p.context);
            ex.response = vocab.encode(p.response);
            const EntitySequence history = linker.link(p.context);
            ex.c_e = rec.predict(history, table).pooled;
            ex.history = history.entity_ids;
            ex.recommended = p.recommended;
            ex.boe_targets = boe_targets(rec.graph(), p.recommended);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

RecommenderConfig recommender_config(const TrainConfig& cfg) {
    RecommenderConfig r;
    r.encoder = {cfg.d_k, cfg.d_f, cfg.rgcn_layers};
    return r;
}

GeneratorConfig generator_config(const TrainConfig& cfg) {
    GeneratorConfig g;
    g.transformer.d_model = cfg.d_model;
    g.transformer.heads = cfg.heads;
    g.transformer.enc_layers = cfg.enc_layers;
    g.transformer.dec_layers = cfg.dec_layers;
    g.d_f = cfg.d_f;
    g.max_context = cfg.max_context;
    g.max_response = cfg.max_response;
    return g;
}

namespace {

OptimizerSettings optimizer(const TrainConfig& cfg, double lr) {
    return {lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_threshold, cfg.l2_coeff};
}

template <typename T>
std::vector<T> pick(std::span<const T> all, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

}  // namespace

TrainResult train_recommender(Recommender& rec, std::span<const RecTrainingExample> train,
                              std::span<const RecTrainingExample> valid, const TrainConfig& cfg) {
    std::vector<RecTrainingExample> eligible;
    for (const auto& ex : train) {
        if (ex.eligible()) eligible.push_back(ex);
    }
    if (eligible.empty()) throw EmptyInput("no new-and-liked training examples");
    TrainTask task;
    task.params = &rec.params();
    task.num_examples = eligible.size();
    task.batch_loss = [&](std::span<const std::size_t> idx) {
        const auto batch = pick<RecTrainingExample>(eligible, idx);
        return rec.loss_and_grad(batch, true);
    };
    std::vector<RecTrainingExample> val(valid.begin(), valid.end());
    task.validation_loss = [&]() -> std::optional<double> {
        if (val.empty()) return std::nullopt;
        return rec.loss_and_grad(val, false);
    };
    TrainLoopConfig loop{optimizer(cfg, cfg.lr_rec), cfg.epochs, cfg.batch_rec, cfg.patience, cfg.seed};
    return train_loop(task, loop);
}

TrainResult train_generator(Generator& gen, std::span<const GenExample> train, std::span<const GenExample> valid,
                            const TrainConfig& cfg) {
    const LossWeights weights{1.0, cfg.lambda1, cfg.lambda2};
    TrainTask task;
    task.params = &gen.params();
    task.num_examples = train.size();
    task.batch_loss = [&](std::span<const std::size_t> idx) -> std::optional<double> {
        const auto batch = pick<GenExample>(train, idx);
        return gen.loss_and_grad(batch, weights, true).l_total;
    };
    task.validation_loss = [&]() -> std::optional<double> {
        if (valid.empty()) return std::nullopt;
        return gen.loss_and_grad(valid, weights, false).l_total;
    };
    TrainLoopConfig loop{optimizer(cfg, cfg.lr_gen), cfg.epochs, cfg.batch_gen, cfg.patience, cfg.seed};
    return train_loop(task, loop);
}

EvaluationLogs run_evaluation(std::span<const Conversation> convs, const Recommender& rec, const Generator& gen,
                              const EntityLinker& linker, double lambda3) {
    EvaluationLogs logs;
    const KnowledgeGraph& graph = rec.graph();
    const EntityEmbeddingTable table = rec.embeddings();
    const auto items = graph.item_ids();
    const Vocabulary& vocab = gen.vocab();
    for (const Conversation& c : convs) {
        for (std::size_t i = 0; i < c.messages.size(); ++i) {
            const Message& msg = c.messages[i];
            if (msg.speaker != Speaker::recommender) continue;
            const std::span<const Message> context(c.messages.data(), i);
            const EntitySequence history = linker.link(context);
            std::set<EntityId> mentioned;
            for (EntityId e : history.entity_ids) {
                if (graph.is_item(e)) mentioned.insert(e);
            }
            const RecPrediction pred = rec.predict(history, table);

            PredictionEvent ev;
            ev.conversation_id = c.id;
            ev.turn = static_cast<int>(i);
            for (const MentionMarker& mk : msg.markers) {
                auto f = c.flags.find(mk.marker);
                if (f == c.flags.end() || !f->second.suggested || !mk.entity) continue;
                if (mentioned.count(*mk.entity) != 0) continue;
                if (std::find(ev.gold_item_ids.begin(), ev.gold_item_ids.end(), *mk.entity) != ev.gold_item_ids.end()) {
                    continue;
                }
                ev.gold_item_ids.push_back(*mk.entity);
                ev.gold_liked_flags.push_back(f->second.liked);
            }
            if (!ev.gold_item_ids.empty()) {
                const auto probs = std::span<const double>(pred.probs.data(), static_cast<std::size_t>(pred.probs.size()));
                ev.ranked_item_ids = recommend_topk(probs, items, 50, mentioned).items;
                ev.mentioned_item_ids.assign(mentioned.begin(), mentioned.end());
                logs.predictions.push_back(std::move(ev));
            }

            ResponseRecord r;
            r.conversation_id = c.id;
            r.turn = static_cast<int>(i);
            r.tokens = gen.generate(gen.context_ids(context), pred.pooled, lambda3);
            r.text = vocab.decode(r.tokens);
            for (int t : r.tokens) {
                if (vocab.entity_token_map().count(t) != 0) r.entity_token_ids.push_back(t);
            }
            logs.responses.push_back(std::move(r));
        }
    }
    return logs;
}

nlohmann::json evaluate_logs(std::span<const PredictionEvent> predictions, std::span<const ResponseRecord> responses,
                             const EntityLinker& linker) {
    nlohmann::json report = nlohmann::json::object();
    std::vector<PredictionEvent> scored;
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (const auto& e : predictions) {
        if (e.liked_gold().empty()) continue;
        scored.push_back(e);
        shortest = std::min(shortest, e.ranked_item_ids.size());
    }
    if (!scored.empty()) {
        std::vector<int> ks;
        for (int k : kDefaultKs) {
            if (static_cast<std::size_t>(k) <= shortest) ks.push_back(k);
        }
        if (!ks.empty()) report["rank"] = rank_metrics(scored, ks).to_json();
    }
    if (!predictions.empty()) report["repetition"] = repetition_stats(predictions).to_json();
    if (!responses.empty()) {
        GenReport g;
        std::vector<std::vector<std::string>> tokens;
        std::vector<std::string> texts;
        for (const auto& r : responses) {
            tokens.push_back(text::split(r.text, ' '));
            if (tokens.back().size() == 1 && tokens.back()[0].empty()) tokens.back().clear();
            texts.push_back(r.text);
        }
        for (int n : {2, 3, 4}) g.distinct[n] = distinct_n(tokens, n);
        g.aen = avg_entity_number(texts, linker);
        g.count = responses.size();
        report["generation"] = g.to_json();
    }
    return report;
}

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

nlohmann::json summary(const TrainResult& r) {
    return {{"epochs_run", r.curve.size()}, {"best_epoch", r.best_epoch}};
}

}  // namespace

nlohmann::json run_train_rec(const TrainConfig& cfg, const std::filesystem::path& kg_dir,
                             const std::filesystem::path& data_dir, const std::filesystem::path& out) {
    const KnowledgeGraph graph = KnowledgeGraph::load(kg_dir);
    const PreparedData data = prepare_data(data_dir, graph, cfg.seed);
    const EntityLinker linker(graph);
    const auto train = rec_examples(data.split.train, linker);
    const auto valid = rec_examples(data.split.valid, linker);
    Recommender rec(graph, recommender_config(cfg), cfg.seed);
    const TrainResult result = train_recommender(rec, train, valid, cfg);
    std::filesystem::create_directories(out);
    rec.save(out);
    write_loss_curve(out / "loss_curve.csv", result.curve);
    write_json(out / "config.json", cfg.to_json());
    if (result.diverged) throw NumericalError("recommender training diverged: " + result.divergence);
    nlohmann::json s = summary(result);
    s["dropped_conversations"] = data.dropped;
    s["train_examples"] = train.size();
    return s;
}

nlohmann::json run_train_gen(const TrainConfig& cfg, const std::filesystem::path& kg_dir,
                             const std::filesystem::path& data_dir, const std::filesystem::path& rec_ckpt,
                             const std::filesystem::path& out) {
    const KnowledgeGraph graph = KnowledgeGraph::load(kg_dir);
    const Recommender rec = Recommender::load(rec_ckpt, graph);
    if (rec.config().encoder.d_f != cfg.d_f) throw ShapeError("config d_f differs from the recommender checkpoint");
    const PreparedData data = prepare_data(data_dir, graph, cfg.seed);
    const EntityLinker linker(graph);
    const EntityEmbeddingTable table = rec.embeddings();
    Generator gen(generator_config(cfg), build_vocab(data.split.train, cfg.min_freq, &graph), table.H, cfg.seed);
    const auto train = gen_examples(data.split.train, rec, table, gen, linker);
    const auto valid = gen_examples(data.split.valid, rec, table, gen, linker);
    if (train.empty()) throw EmptyInput("no generator training examples");
    const TrainResult result = train_generator(gen, train, valid, cfg);
    std::filesystem::create_directories(out);
    gen.save(out);
    write_loss_curve(out / "loss_curve.csv", result.curve);
    write_json(out / "config.json", cfg.to_json());
    if (result.diverged) throw NumericalError("generator training diverged: " + result.divergence);
    nlohmann::json s = summary(result);
    s["train_examples"] = train.size();
    s["vocab_size"] = gen.vocab().size();
    return s;
}

}  // namespace kecrs
