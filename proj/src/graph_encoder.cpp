#include "kecrs/graph_encoder.hpp"

#include <string>

#include "kecrs/errors.hpp"

namespace kecrs {

RelationAdjacency::RelationAdjacency(const KnowledgeGraph& graph)
    : num_entities_(graph.num_entities()) {
    const auto n = static_cast<Eigen::Index>(num_entities_);
    matrices_.reserve(graph.num_relations());
    for (std::size_t r = 0; r < graph.num_relations(); ++r) {
        std::vector<Eigen::Triplet<double>> entries;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto nbrs = graph.neighbors(static_cast<EntityId>(i), static_cast<RelationId>(r));
            if (nbrs.empty()) continue;
            const double w = 1.0 / static_cast<double>(nbrs.size());
            for (EntityId j : nbrs) entries.emplace_back(i, j, w);
        }
        ad::SparseMatrix m(n, n);
        m.setFromTriplets(entries.begin(), entries.end());
        m.makeCompressed();
        matrices_.push_back(std::move(m));
    }
}

RgcnParams RgcnParams::create(ParamStore& store, const KnowledgeGraph& graph, const EncoderConfig& cfg,
                              Rng& rng) {
    if (cfg.layers < 1 || cfg.d_k <= 0 || cfg.d_f <= 0) {
        throw ShapeError("encoder config needs layers >= 1 and positive widths");
    }
    const auto n = static_cast<Eigen::Index>(graph.num_entities());
    store.add("rgcn.base", uniform_matrix(n, cfg.d_k, 0.1, rng));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string prefix = "rgcn.layer" + std::to_string(l);
        for (std::size_t r = 0; r < graph.num_relations(); ++r) {
            store.add(prefix + ".rel" + std::to_string(r), glorot_matrix(cfg.d_k, cfg.d_k, rng));
        }
        store.add(prefix + ".self", glorot_matrix(cfg.d_k, cfg.d_k, rng));
    }
    store.add("rgcn.wh", glorot_matrix(cfg.d_f, static_cast<Eigen::Index>(cfg.layers + 1) * cfg.d_k, rng));
    store.add("rgcn.bh", Matrix::Zero(1, cfg.d_f));
    return bind(store, graph.num_relations(), cfg.layers);
}

RgcnParams RgcnParams::bind(ParamStore& store, std::size_t num_relations, int layers) {
    RgcnParams p;
    p.base = &store.get("rgcn.base");
    for (int l = 0; l < layers; ++l) {
        const std::string prefix = "rgcn.layer" + std::to_string(l);
        RgcnLayerParams layer;
        for (std::size_t r = 0; r < num_relations; ++r) {
            layer.relation.push_back(&store.get(prefix + ".rel" + std::to_string(r)));
        }
        layer.self = &store.get(prefix + ".self");
        p.layers.push_back(std::move(layer));
    }
    p.w_h = &store.get("rgcn.wh");
    p.b_h = &store.get("rgcn.bh");
    return p;
}

Matrix EntityEmbeddingTable::item_view() const {
    Matrix out(static_cast<Eigen::Index>(items.size()), H.cols());
    for (std::size_t k = 0; k < items.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = H.row(items[k]);
    return out;
}

ad::Var rgcn_layer_forward(ad::Tape& tape, const ad::Var& h, const RelationAdjacency& adjacency,
                           const RgcnLayerParams& layer) {
    if (layer.relation.size() != adjacency.num_relations()) {
        throw ShapeError("layer has " + std::to_string(layer.relation.size()) +
                         " relation weights, graph has " + std::to_string(adjacency.num_relations()));
    }
    if (static_cast<std::size_t>(h.rows()) != adjacency.num_entities()) {
        throw ShapeError("entity table has " + std::to_string(h.rows()) + " rows, graph has " +
                         std::to_string(adjacency.num_entities()) + " entities");
    }
    ad::Var acc = ad::matmul_nt(h, tape.param(*layer.self));
    for (std::size_t r = 0; r < adjacency.num_relations(); ++r) {
        if (adjacency[r].nonZeros() == 0) continue;
        acc = acc + ad::matmul_nt(ad::spmm(adjacency[r], h), tape.param(*layer.relation[r]));
    }
    return ad::relu(acc);
}

Matrix rgcn_layer_forward(const Matrix& h, const RelationAdjacency& adjacency,
                          std::span<const Matrix> relation_weights, const Matrix& self_weight) {
    ad::Tape tape;
    std::vector<Parameter> rel(relation_weights.size());
    RgcnLayerParams layer;
    for (std::size_t r = 0; r < rel.size(); ++r) {
        rel[r].value = relation_weights[r];
        rel[r].trainable = false;
        layer.relation.push_back(&rel[r]);
    }
    Parameter self{"self", self_weight, Matrix(), false};
    layer.self = &self;
    return rgcn_layer_forward(tape, tape.constant(h), adjacency, layer).value();
}

Matrix rgcn_layer_forward(const Matrix& h, const KnowledgeGraph& graph,
                          std::span<const Matrix> relation_weights, const Matrix& self_weight) {
    return rgcn_layer_forward(h, RelationAdjacency(graph), relation_weights, self_weight);
}

ad::Var encode_graph(ad::Tape& tape, const RelationAdjacency& adjacency, const RgcnParams& params) {
    std::vector<ad::Var> reps;
    reps.push_back(tape.param(*params.base));
    for (const RgcnLayerParams& layer : params.layers) {
        reps.push_back(rgcn_layer_forward(tape, reps.back(), adjacency, layer));
    }
    ad::Var concat = ad::concat_cols(reps);
    return ad::add_row(ad::matmul_nt(concat, tape.param(*params.w_h)), tape.param(*params.b_h));
}

EntityEmbeddingTable encode_graph(const KnowledgeGraph& graph, const RgcnParams& params) {
    RelationAdjacency adjacency(graph);
    ad::Tape tape;
    EntityEmbeddingTable table;
    table.H = encode_graph(tape, adjacency, params).value();
    table.items.assign(graph.item_ids().begin(), graph.item_ids().end());
    return table;
}

}  // namespace kecrs
