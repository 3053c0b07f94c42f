#include "kecrs/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <unordered_map>

#include <Eigen/SVD>

#include "kecrs/errors.hpp"
#include "kecrs/text.hpp"

namespace kecrs {

std::vector<EntityId> PredictionEvent::liked_gold() const {
    std::vector<EntityId> out;
    for (std::size_t i = 0; i < gold_item_ids.size(); ++i) {
        if (i >= gold_liked_flags.size() || gold_liked_flags[i]) out.push_back(gold_item_ids[i]);
    }
    return out;
}

nlohmann::json PredictionEvent::to_json() const {
    return {{"conversation_id", conversation_id},   {"turn", turn},
            {"ranked_item_ids", ranked_item_ids},   {"mentioned_item_ids", mentioned_item_ids},
            {"gold_item_ids", gold_item_ids},       {"gold_liked_flags", gold_liked_flags}};
}

PredictionEvent PredictionEvent::from_json(const nlohmann::json& j) {
    PredictionEvent e;
    e.conversation_id = j.at("conversation_id").get<std::string>();
    e.turn = j.at("turn").get<int>();
    e.ranked_item_ids = j.at("ranked_item_ids").get<std::vector<EntityId>>();
    e.mentioned_item_ids = j.at("mentioned_item_ids").get<std::vector<EntityId>>();
    e.gold_item_ids = j.at("gold_item_ids").get<std::vector<EntityId>>();
    e.gold_liked_flags = j.at("gold_liked_flags").get<std::vector<bool>>();
    if (e.gold_liked_flags.size() != e.gold_item_ids.size()) {
        throw EventError("gold_liked_flags and gold_item_ids differ in length");
    }
    return e;
}

nlohmann::json ResponseRecord::to_json() const {
    return {{"conversation_id", conversation_id},
            {"turn", turn},
            {"tokens", tokens},
            {"text", text},
            {"entity_token_ids", entity_token_ids}};
}

ResponseRecord ResponseRecord::from_json(const nlohmann::json& j) {
    ResponseRecord r;
    r.conversation_id = j.at("conversation_id").get<std::string>();
    r.turn = j.at("turn").get<int>();
    r.tokens = j.at("tokens").get<std::vector<int>>();
    r.text = j.at("text").get<std::string>();
    r.entity_token_ids = j.value("entity_token_ids", std::vector<int>{});
    return r;
}

namespace {

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open " + path.string());
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(T::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string(), lineno, e.what());
        } catch (const EventError& e) {
            throw ParseError(path.string(), lineno, e.what());
        }
    }
    return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, std::span<const T> items) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    for (const T& item : items) out << item.to_json().dump() << '\n';
}

nlohmann::json keyed(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

}  // namespace

std::vector<PredictionEvent> read_prediction_log(const std::filesystem::path& path) {
    return read_jsonl<PredictionEvent>(path);
}

void write_prediction_log(const std::filesystem::path& path, std::span<const PredictionEvent> events) {
    write_jsonl(path, events);
}

std::vector<ResponseRecord> read_response_log(const std::filesystem::path& path) {
    return read_jsonl<ResponseRecord>(path);
}

void write_response_log(const std::filesystem::path& path, std::span<const ResponseRecord> records) {
    write_jsonl(path, records);
}

nlohmann::json RankReport::to_json() const {
    return {{"recall", keyed(recall)}, {"precision", keyed(precision)}, {"ndcg", keyed(ndcg)}, {"count", count}};
}

RankReport rank_metrics(std::span<const PredictionEvent> events, std::span<const int> ks) {
    if (ks.empty()) throw EventError("rank_metrics: no cutoffs");
    const int max_k = *std::max_element(ks.begin(), ks.end());
    RankReport r;
    for (int k : ks) {
        if (k < 1) throw EventError("rank_metrics: cutoffs must be positive");
        r.recall[k] = r.precision[k] = r.ndcg[k] = 0.0;
    }
    for (const PredictionEvent& e : events) {
        const auto gold_list = e.liked_gold();
        const std::set<EntityId> gold(gold_list.begin(), gold_list.end());
        if (gold.empty()) throw EventError("event " + e.conversation_id + "/" + std::to_string(e.turn) + " has no gold item");
        if (e.ranked_item_ids.size() < static_cast<std::size_t>(max_k)) {
            throw EventError("event " + e.conversation_id + "/" + std::to_string(e.turn) + " ranks " +
                             std::to_string(e.ranked_item_ids.size()) + " items, fewer than K = " +
                             std::to_string(max_k));
        }
        for (int k : ks) {
            double hits = 0.0, dcg = 0.0, idcg = 0.0;
            for (int rank = 1; rank <= k; ++rank) {
                if (gold.count(e.ranked_item_ids[static_cast<std::size_t>(rank - 1)]) != 0) {
                    hits += 1.0;
                    dcg += 1.0 / std::log2(rank + 1.0);
                }
            }
            const int ideal = std::min<int>(k, static_cast<int>(gold.size()));
            for (int rank = 1; rank <= ideal; ++rank) idcg += 1.0 / std::log2(rank + 1.0);
            r.recall[k] += hits / static_cast<double>(gold.size());
            r.precision[k] += hits / k;
            r.ndcg[k] += dcg / idcg;
        }
        ++r.count;
    }
    if (r.count > 0) {
        const double n = static_cast<double>(r.count);
        for (int k : ks) {
            r.recall[k] /= n;
            r.precision[k] /= n;
            r.ndcg[k] /= n;
        }
    }
    return r;
}

double distinct_n(std::span<const std::vector<std::string>> responses, int n, DistinctNorm norm) {
    if (n < 1) throw EventError("distinct_n: n must be at least 1");
    if (responses.empty()) throw EmptyInput("distinct_n: no responses");
    std::set<std::vector<std::string>> grams;
    std::size_t total = 0;
    for (const auto& r : responses) {
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= r.size(); ++i) {
            grams.emplace(r.begin() + static_cast<std::ptrdiff_t>(i), r.begin() + static_cast<std::ptrdiff_t>(i + n));
            ++total;
        }
    }
    if (norm == DistinctNorm::per_ngram) {
        return total == 0 ? 0.0 : static_cast<double>(grams.size()) / static_cast<double>(total);
    }
    return static_cast<double>(grams.size()) / static_cast<double>(responses.size());
}

double avg_entity_number(std::span<const std::string> responses, const EntityLinker& linker) {
    if (responses.empty()) throw EmptyInput("avg_entity_number: no responses");
    double total = 0.0;
    for (const auto& r : responses) total += static_cast<double>(linker.link_text(r).size());
    return total / static_cast<double>(responses.size());
}

nlohmann::json GenReport::to_json() const {
    return {{"distinct", keyed(distinct)}, {"aen", aen}, {"count", count}};
}

nlohmann::json RepetitionReport::to_json() const {
    return {{"new_fraction", new_fraction}, {"repetitive_fraction", repetitive_fraction}, {"count", count}};
}

RepetitionReport repetition_stats(std::span<const PredictionEvent> events) {
    if (events.empty()) throw EmptyInput("repetition_stats: empty log");
    std::size_t repeated = 0;
    for (const PredictionEvent& e : events) {
        if (e.ranked_item_ids.empty()) throw EventError("repetition_stats: event without a ranked item");
        const EntityId top = e.ranked_item_ids.front();
        if (std::find(e.mentioned_item_ids.begin(), e.mentioned_item_ids.end(), top) != e.mentioned_item_ids.end()) {
            ++repeated;
        }
    }
    RepetitionReport r;
    r.count = events.size();
    r.repetitive_fraction = static_cast<double>(repeated) / static_cast<double>(r.count);
    r.new_fraction = static_cast<double>(r.count - repeated) / static_cast<double>(r.count);
    return r;
}

std::vector<PredictionEvent> human_recommendation_events(std::span<const Conversation> convs) {
    std::unordered_map<std::string, EntityId> ids;
    auto id_of = [&](const std::string& marker) {
        auto [it, _] = ids.emplace(marker, static_cast<EntityId>(ids.size()));
        return it->second;
    };
    std::vector<PredictionEvent> out;
    for (const Conversation& c : convs) {
        std::vector<EntityId> mentioned;
        for (std::size_t i = 0; i < c.messages.size(); ++i) {
            const Message& m = c.messages[i];
            if (m.speaker == Speaker::recommender) {
                for (const MentionMarker& mk : m.markers) {
                    auto f = c.flags.find(mk.marker);
                    if (f == c.flags.end() || !f->second.suggested) continue;
                    PredictionEvent e;
                    e.conversation_id = c.id;
                    e.turn = static_cast<int>(i);
                    e.ranked_item_ids = {id_of(mk.marker)};
                    e.mentioned_item_ids = mentioned;
                    e.gold_item_ids = e.ranked_item_ids;
                    e.gold_liked_flags = {f->second.liked};
                    out.push_back(std::move(e));
                }
            }
            for (const MentionMarker& mk : m.markers) {
                const EntityId id = id_of(mk.marker);
                if (std::find(mentioned.begin(), mentioned.end(), id) == mentioned.end()) mentioned.push_back(id);
            }
        }
    }
    return out;
}

Projection pca_project(const Matrix& rows, std::vector<std::string> labels) {
    if (rows.rows() < 2) throw DegenerateProjection("pca_project: need at least two rows");
    if (rows.cols() < 2) throw DegenerateProjection("pca_project: need at least two columns");
    if (!labels.empty() && labels.size() != static_cast<std::size_t>(rows.rows())) {
        throw ShapeError("pca_project: label count differs from row count");
    }
    Projection p;
    p.mean = rows.colwise().mean();
    const Matrix centered = rows.rowwise() - p.mean;
    if (centered.squaredNorm() == 0.0) throw DegenerateProjection("pca_project: zero variance");
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    p.components = svd.matrixV().leftCols(2).transpose();
    for (Eigen::Index c = 0; c < 2; ++c) {
        const double scale = p.components.row(c).cwiseAbs().maxCoeff();
        for (Eigen::Index k = 0; k < p.components.cols(); ++k) {
            if (std::abs(p.components(c, k)) > 1e-12 * std::max(scale, 1e-300)) {
                if (p.components(c, k) < 0) p.components.row(c) *= -1.0;
                break;
            }
        }
    }
    p.points = centered * p.components.transpose();
    p.labels = std::move(labels);
    return p;
}

void write_projection_csv(std::ostream& out, const Projection& p) {
    out << "x,y,label\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < p.points.rows(); ++i) {
        std::string label = p.labels.empty() ? "" : p.labels[static_cast<std::size_t>(i)];
        if (label.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char c : label) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
            label = q + "\"";
        }
        out << p.points(i, 0) << ',' << p.points(i, 1) << ',' << label << '\n';
    }
}

}  // namespace kecrs
