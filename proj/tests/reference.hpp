#pragma once

// Straightforward re-implementations used as oracles by the unit and
// acceptance tests. Written for clarity, not speed.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kecrs/evalkit.hpp"
#include "kecrs/graph_encoder.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/rng.hpp"

namespace kecrs::testing {

/// Naive R-GCN: loops over triples for every entity and relation.
inline Matrix naive_encode(const KnowledgeGraph& g, const RgcnParams& p) {
    const auto n = static_cast<Eigen::Index>(g.num_entities());
    Matrix h = p.base->value;
    std::vector<Matrix> reps{h};
    for (const RgcnLayerParams& layer : p.layers) {
        Matrix out = Matrix::Zero(n, h.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd acc = layer.self->value * h.row(i).transpose();
            for (std::size_t r = 0; r < g.num_relations(); ++r) {
                std::vector<Eigen::Index> nbrs;
                for (const Triple& t : g.triples()) {
                    if (static_cast<std::size_t>(t.relation) != r) continue;
                    if (t.head == i) nbrs.push_back(t.tail);
                    if (t.tail == i) nbrs.push_back(t.head);
                }
                for (Eigen::Index j : nbrs) {
                    acc += layer.relation[r]->value * h.row(j).transpose() / static_cast<double>(nbrs.size());
                }
            }
            for (Eigen::Index c = 0; c < acc.size(); ++c) out(i, c) = std::max(acc(c), 0.0);
        }
        h = out;
        reps.push_back(h);
    }
    Matrix cat(n, h.cols() * static_cast<Eigen::Index>(reps.size()));
    for (std::size_t l = 0; l < reps.size(); ++l) cat.middleCols(static_cast<Eigen::Index>(l) * h.cols(), h.cols()) = reps[l];
    Matrix out = cat * p.w_h->value.transpose();
    out.rowwise() += p.b_h->value.row(0);
    return out;
}

/// Random typed graph with `n` entities (about a third movies) and `nr` relations.
inline KnowledgeGraph random_graph(Rng& rng, int n, int nr, int edges) {
    GraphBuilder b;
    for (int i = 0; i < n; ++i) {
        b.add_entity("e" + std::to_string(i), "n" + std::to_string(i),
                     i % 3 == 0 ? NodeType::movie : NodeType::keyword);
    }
    for (int r = 0; r < nr; ++r) b.add_relation("r" + std::to_string(r));
    for (int k = 0; k < edges; ++k) {
        const auto h = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
        const auto t = static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(n)));
        if (h != t) b.add_triple(h, static_cast<RelationId>(rng.below(static_cast<std::uint64_t>(nr))), t);
    }
    return std::move(b).build();
}

struct BruteRank {
    std::map<int, double> recall, precision, ndcg;
};

/// Set-intersection metrics, one event at a time.
inline BruteRank brute_rank_metrics(const std::vector<PredictionEvent>& events, const std::vector<int>& ks) {
    BruteRank out;
    for (int k : ks) {
        double rs = 0, ps = 0, ns = 0;
        for (const auto& e : events) {
            std::set<EntityId> gold;
            for (std::size_t i = 0; i < e.gold_item_ids.size(); ++i) {
                if (e.gold_liked_flags[i]) gold.insert(e.gold_item_ids[i]);
            }
            const std::set<EntityId> top(e.ranked_item_ids.begin(), e.ranked_item_ids.begin() + k);
            std::size_t hits = 0;
            for (EntityId g : gold) hits += top.count(g);
            rs += static_cast<double>(hits) / static_cast<double>(gold.size());
            ps += static_cast<double>(hits) / static_cast<double>(k);
            double dcg = 0, idcg = 0;
            for (int i = 0; i < k; ++i) {
                if (gold.count(e.ranked_item_ids[static_cast<std::size_t>(i)])) dcg += 1.0 / std::log2(i + 2.0);
            }
            for (int i = 0; i < std::min<int>(k, static_cast<int>(gold.size())); ++i) idcg += 1.0 / std::log2(i + 2.0);
            ns += dcg / idcg;
        }
        const double n = static_cast<double>(events.size());
        out.recall[k] = rs / n;
        out.precision[k] = ps / n;
        out.ndcg[k] = ns / n;
    }
    return out;
}

/// `count` events over ids [0, pool): a shuffled full ranking and one to four
/// gold ids (repeats allowed), the first always liked.
inline std::vector<PredictionEvent> random_events(Rng& rng, int count, int pool) {
    std::vector<PredictionEvent> out;
    for (int n = 0; n < count; ++n) {
        PredictionEvent e;
        e.conversation_id = "c";
        e.ranked_item_ids.resize(static_cast<std::size_t>(pool));
        std::iota(e.ranked_item_ids.begin(), e.ranked_item_ids.end(), 0);
        rng.shuffle(std::span<EntityId>(e.ranked_item_ids));
        const int g = 1 + static_cast<int>(rng.below(4));
        for (int i = 0; i < g; ++i) {
            e.gold_item_ids.push_back(static_cast<EntityId>(rng.below(static_cast<std::uint64_t>(pool))));
            e.gold_liked_flags.push_back(i == 0 || rng.below(2) == 0);
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Top-two principal directions from a full eigendecomposition of the
/// covariance, as rows.
inline Matrix eigen_top2(const Matrix& rows) {
    Matrix c = rows.rowwise() - rows.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Matrix> es(c.transpose() * c);
    const auto d = es.eigenvalues().size();
    Matrix top(2, rows.cols());
    top.row(0) = es.eigenvectors().col(d - 1).transpose();
    top.row(1) = es.eigenvectors().col(d - 2).transpose();
    return top;
}

/// Largest principal angle between the row spaces of two orthonormal bases,
/// via the sine (the residual of `a` after projecting onto `b`) since acos is
/// ill-conditioned near zero.
inline double max_principal_angle(const Matrix& a, const Matrix& b) {
    const Matrix residual = a - a * b.transpose() * b;
    Eigen::JacobiSVD<Matrix> svd(residual);
    return std::asin(std::min(1.0, svd.singularValues().maxCoeff()));
}

}  // namespace kecrs::testing
