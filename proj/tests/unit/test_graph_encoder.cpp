#include <numeric>

#include "doctest.h"
#include "kecrs/errors.hpp"
#include "kecrs/graph_encoder.hpp"
#include "kecrs/trainer.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace kecrs;
using namespace kecrs::testing;

namespace {

Matrix two_by_two(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

}  // namespace

TEST_CASE("isolated entity keeps only the self term") {
    GraphBuilder b;
    b.add_entity("a", "A", NodeType::movie);
    b.add_relation("r");
    const KnowledgeGraph g = std::move(b).build();
    const Matrix w[] = {Matrix::Identity(2, 2)};
    Matrix h(1, 2);
    h << 1, -2;
    const Matrix out = rgcn_layer_forward(h, g, w, Matrix::Identity(2, 2));
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 0.0);
}

TEST_CASE("one edge with identity weights") {
    GraphBuilder b;
    b.add_entity("a", "A", NodeType::movie);
    b.add_entity("b", "B", NodeType::genre);
    b.add_triple(0, b.add_relation("r"), 1);
    const KnowledgeGraph g = std::move(b).build();
    const Matrix w[] = {Matrix::Identity(2, 2)};
    const Matrix out = rgcn_layer_forward(two_by_two(1, 0, 0, 1), g, w, Matrix::Identity(2, 2));
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 1.0);
    CHECK(out(1, 0) == 1.0);
    CHECK(out(1, 1) == 1.0);
    const Matrix zero[] = {Matrix::Zero(2, 2)};
    CHECK(rgcn_layer_forward(two_by_two(1, 2, 3, 4), g, zero, Matrix::Zero(2, 2)).isZero());
    CHECK_THROWS_AS(rgcn_layer_forward(Matrix::Zero(3, 2), g, w, Matrix::Identity(2, 2)), ShapeError);
}

TEST_CASE("aggregation reduces to selection and to the bias") {
    Rng rng(4);
    const KnowledgeGraph g = random_graph(rng, 7, 2, 10);
    ParamStore store;
    Rng init(1);
    RgcnParams p = RgcnParams::create(store, g, {3, 3, 1}, init);
    Matrix sel = Matrix::Zero(3, 6);
    sel.rightCols(3) = Matrix::Identity(3, 3);
    p.w_h->value = sel;
    std::vector<Matrix> rel;
    for (auto* w : p.layers[0].relation) rel.push_back(w->value);
    const Matrix layer1 = rgcn_layer_forward(p.base->value, g, rel, p.layers[0].self->value);
    CHECK(max_abs_diff(encode_graph(g, p).H, layer1) < 1e-15);

    for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
    p.b_h->value.setConstant(0.75);
    const Matrix h = encode_graph(g, p).H;
    CHECK((h.array() == 0.75).all());
}

TEST_CASE("5-node path graph matches the numpy oracle") {
    const auto ex = load_json("expected_numeric.json").at("rgcn_path");
    GraphBuilder b;
    for (int i = 0; i < 5; ++i) b.add_entity("n" + std::to_string(i), "n" + std::to_string(i), NodeType::movie);
    b.add_relation("r0");
    b.add_relation("r1");
    for (const auto& t : ex.at("triples")) b.add_triple(t[0].get<int>(), t[1].get<int>(), t[2].get<int>());
    const KnowledgeGraph g = std::move(b).build();
    ParamStore store;
    Rng rng(0);
    RgcnParams p = RgcnParams::create(store, g, {ex.at("d_k").get<int>(), ex.at("d_f").get<int>(), ex.at("layers").get<int>()}, rng);
    fill_params(store);
    const Matrix h = encode_graph(g, p).H;
    CHECK(max_abs_diff(h, to_matrix(ex.at("H"))) < 1e-10);
    CHECK(max_abs_diff(h, naive_encode(g, p)) < 1e-10);
}

TEST_CASE("encode_graph matches the naive oracle on random graphs") {
    Rng rng(2024);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(49));
        const int nr = 1 + static_cast<int>(rng.below(4));
        const KnowledgeGraph g = random_graph(rng, n, nr, static_cast<int>(rng.below(static_cast<std::uint64_t>(3 * n))));
        ParamStore store;
        RgcnParams p = RgcnParams::create(store, g, {4, 5, 2}, rng);
        for (std::size_t i = 0; i < store.size(); ++i) {
            store[i].value = uniform_matrix(store[i].value.rows(), store[i].value.cols(), 1.0, rng);
        }
        worst = std::max(worst, max_abs_diff(encode_graph(g, p).H, naive_encode(g, p)));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("relabelling entities permutes the rows of H") {
    Rng rng(17);
    const int n = 12, nr = 3;
    const KnowledgeGraph g = random_graph(rng, n, nr, 30);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<int>(perm));  // new id of old entity i is perm[i]
    std::vector<int> inverse(n);
    for (int i = 0; i < n; ++i) inverse[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i;

    GraphBuilder b;
    for (int k = 0; k < n; ++k) {
        const Entity& e = g.entity(inverse[static_cast<std::size_t>(k)]);
        b.add_entity(e.key, e.name, e.type);
    }
    for (const auto& r : g.relation_names()) b.add_relation(r);
    for (const Triple& t : g.triples()) {
        b.add_triple(perm[static_cast<std::size_t>(t.head)], t.relation, perm[static_cast<std::size_t>(t.tail)]);
    }
    const KnowledgeGraph h = std::move(b).build();

    ParamStore s1, s2;
    RgcnParams p1 = RgcnParams::create(s1, g, {4, 4, 2}, rng);
    Rng again(5);
    RgcnParams p2 = RgcnParams::create(s2, h, {4, 4, 2}, again);
    s2.assign_values(s1);
    for (int i = 0; i < n; ++i) p2.base->value.row(perm[static_cast<std::size_t>(i)]) = p1.base->value.row(i);
    const Matrix h1 = encode_graph(g, p1).H;
    const Matrix h2 = encode_graph(h, p2).H;
    double worst = 0;
    for (int i = 0; i < n; ++i) {
        worst = std::max(worst, (h1.row(i) - h2.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("gradients of a scalar loss over H match finite differences") {
    Rng rng(8);
    const KnowledgeGraph g = random_graph(rng, 6, 2, 8);
    const RelationAdjacency adj(g);
    ParamStore store;
    RgcnParams p = RgcnParams::create(store, g, {8, 8, 2}, rng);
    const Matrix w = fill("loss-weights", 6, 8);
    LossFn loss = [&](bool with_grad) {
        ad::Tape tape;
        ad::Var h = encode_graph(tape, adj, p);
        ad::Var root = ad::sum_all(ad::mul(ad::tanh(h), tape.constant(w)));
        if (with_grad) tape.backward(root);
        return root.scalar();
    };
    const FdReport rep = finite_difference_check(store, loss);
    CHECK(rep.max_rel_error < 1e-4);
    for (const auto& t : rep.tensors) CHECK_MESSAGE(t.checked > 0, t.name);
}

TEST_CASE("item view follows item order and rows stay finite") {
    const KnowledgeGraph g = KnowledgeGraph::load(fixture("kg30"));
    ParamStore store;
    Rng rng(3);
    RgcnParams p = RgcnParams::create(store, g, {8, 8, 2}, rng);
    CHECK(p.w_h->value.cols() == 24);
    const EntityEmbeddingTable t = encode_graph(g, p);
    CHECK(t.H.rows() == static_cast<Eigen::Index>(g.num_entities()));
    CHECK(t.H.allFinite());
    const Matrix items = t.item_view();
    for (std::size_t i = 0; i < t.items.size(); ++i) {
        CHECK(items.row(static_cast<Eigen::Index>(i)) == t.H.row(t.items[i]));
    }
}
