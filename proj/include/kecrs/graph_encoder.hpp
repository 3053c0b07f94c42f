#pragma once

#include <span>
#include <vector>

#include "kecrs/autodiff.hpp"
#include "kecrs/kg_store.hpp"
#include "kecrs/params.hpp"

namespace kecrs {

struct EncoderConfig {
    int d_k = 8;     // per-layer entity width
    int d_f = 8;     // final entity width
    int layers = 2;  // R-GCN depth L

    /// Full-size setting (d_k = d_f = 200, L = 2).
    static EncoderConfig full_scale() { return {200, 200, 2}; }
};

/// Row-normalized adjacency per relation: row i of relation r holds
/// 1/|N_i^r| at each neighbor column (duplicates accumulate). Rows with no
/// neighbors are empty, so they contribute nothing.
class RelationAdjacency {
public:
    explicit RelationAdjacency(const KnowledgeGraph& graph);

    std::size_t num_relations() const { return matrices_.size(); }
    std::size_t num_entities() const { return num_entities_; }
    const ad::SparseMatrix& operator[](std::size_t r) const { return matrices_[r]; }

private:
    std::size_t num_entities_ = 0;
    std::vector<ad::SparseMatrix> matrices_;
};

struct RgcnLayerParams {
    std::vector<Parameter*> relation;  // W_r, d_k x d_k
    Parameter* self = nullptr;         // W_0, d_k x d_k
};

/// Views into a ParamStore. Entity vectors are rows, so W h_j is evaluated as
/// h_j W^T throughout.
struct RgcnParams {
    Parameter* base = nullptr;  // h^(0), |V| x d_k
    std::vector<RgcnLayerParams> layers;
    Parameter* w_h = nullptr;  // d_f x (L+1)*d_k
    Parameter* b_h = nullptr;  // 1 x d_f

    /// Registers freshly initialized tensors under "rgcn.*".
    static RgcnParams create(ParamStore& store, const KnowledgeGraph& graph, const EncoderConfig& cfg,
                             Rng& rng);
    /// Binds to tensors already present in `store`.
    static RgcnParams bind(ParamStore& store, std::size_t num_relations, int layers);

    int depth() const { return static_cast<int>(layers.size()); }
    Eigen::Index d_k() const { return base->value.cols(); }
    Eigen::Index d_f() const { return w_h->value.rows(); }
};

/// H plus the item-row view H_I (rows in graph item_ids order).
struct EntityEmbeddingTable {
    Matrix H;
    std::vector<EntityId> items;

    Matrix item_view() const;
};

/// One relational convolution: relu(sum_r A_r H W_r^T + H W_0^T).
Matrix rgcn_layer_forward(const Matrix& h, const RelationAdjacency& adjacency,
                          std::span<const Matrix> relation_weights, const Matrix& self_weight);
Matrix rgcn_layer_forward(const Matrix& h, const KnowledgeGraph& graph,
                          std::span<const Matrix> relation_weights, const Matrix& self_weight);

ad::Var rgcn_layer_forward(ad::Tape& tape, const ad::Var& h, const RelationAdjacency& adjacency,
                           const RgcnLayerParams& layer);

/// L convolutions, concatenation [h^(0); ...; h^(L)] and the W_h/b_h
/// projection. Differentiable in every RgcnParams tensor.
ad::Var encode_graph(ad::Tape& tape, const RelationAdjacency& adjacency, const RgcnParams& params);

EntityEmbeddingTable encode_graph(const KnowledgeGraph& graph, const RgcnParams& params);

}  // namespace kecrs
