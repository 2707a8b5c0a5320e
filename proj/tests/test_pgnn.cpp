#include "support.hpp"

#include "proton/pgnn.hpp"

#include <doctest.h>

#include <cmath>

using namespace proton;
using testing::gradient_error;
using testing::random_tensor;

namespace {

Tensor scalar_row(double v) { return Tensor(Shape{1, 1}, Vector::Constant(1, v)); }

Tensor column(std::initializer_list<double> v) {
    return Tensor(Shape{static_cast<Index>(v.size()), 1}, Eigen::Map<const Vector>(v.begin(), static_cast<Index>(v.size())));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GraphSpec {
    Index nodes;
    GraphRole role;
};

std::vector<ClassGraph> random_graphs(const std::vector<GraphSpec>& specs, Index d, Rng& rng) {
    std::vector<ClassGraph> out;
    int id = 0;
    for (const auto& s : specs) {
        out.push_back(build_graph(random_tensor({s.nodes, d}, rng, 1.0, false), "g" + std::to_string(id++), s.role));
    }
    return out;
}

PgnnLayerParams random_params(Index d_in, Index d_out, Rng& rng, double scale = 0.5) {
    PgnnLayerParams p;
    p.node_self = random_tensor({d_out, d_in}, rng, scale);
    p.node_neighbor = random_tensor({d_out, d_in}, rng, scale);
    p.node_correction = random_tensor({d_out, d_in}, rng, scale);
    p.proto_self = random_tensor({d_out, d_in}, rng, scale);
    p.proto_feedback = random_tensor({d_out, d_in}, rng, scale);
    p.proto_align = random_tensor({d_out, d_in}, rng, scale);
    p.attention = random_tensor({d_in, d_in}, rng, scale);
    p.node_gate = random_tensor({1, d_in}, rng, scale);
    p.proto_gate = random_tensor({1, d_in}, rng, scale);
    p.align_gate = random_tensor({1, 2 * d_in}, rng, scale);
    return p;
}

Index offset_of(const EpisodeState& s, Index graph) {
    Index at = 0;
    for (Index g = 0; g < graph; ++g) at += s.graph_sizes[static_cast<std::size_t>(g)];
    return at;
}

std::vector<Tensor> cycle_neighbors(const Tensor& nodes, Index i) {
    const Index n = nodes.rows();
    std::vector<Tensor> out;
    if (n == 1) return out;
    const Index next = (i + 1) % n, prev = (i - 1 + n) % n;
    out.push_back(row(nodes, next));
    if (prev != next) out.push_back(row(nodes, prev));
    return out;
}

double max_abs(const Tensor& a, const Tensor& b) { return (a.data() - b.data()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_SUITE("pgnn") {

TEST_CASE("attention examples") {
    const Tensor w = scalar_row(1.0);
    std::vector<Tensor> one{scalar_row(3.0)};
    CHECK(attention_weights(scalar_row(1.0), one, w).data()[0] == doctest::Approx(1.0));
    std::vector<Tensor> same{scalar_row(2.0), scalar_row(2.0)};
    const Tensor half = attention_weights(scalar_row(1.0), same, w);
    CHECK(half.data()[0] == doctest::Approx(0.5));
    CHECK(half.data()[1] == doctest::Approx(0.5));
    std::vector<Tensor> two{scalar_row(1.0), scalar_row(2.0)};
    const Tensor a = attention_weights(scalar_row(1.0), two, w);
    CHECK(std::abs(a.data()[0] - 0.2689) < 1e-4);
    CHECK(std::abs(a.data()[1] - 0.7311) < 1e-4);
    CHECK_THROWS_AS(attention_weights(scalar_row(1.0), std::vector<Tensor>{}, w), std::invalid_argument);
}

TEST_CASE("real node update hand example") {
    PgnnLayerParams p = PgnnLayerParams::constant(1, 1, 1.0);
    p.node_gate.data()[0] = 0.0;
    std::vector<Tensor> nb{scalar_row(2.0)};
    const Tensor out = real_node_update(scalar_row(1.0), nb, scalar_row(1.5), p);
    CHECK(std::abs(out.item() - 3.25) < 1e-12);
}

TEST_CASE("prototype update hand example") {
    PgnnLayerParams p = PgnnLayerParams::constant(1, 1, 1.0);
    p.proto_gate.data()[0] = 0.0;
    const Tensor out = prototype_update_support(scalar_row(1.5), column({1, 2}), std::vector<Tensor>{}, p, 1.0);
    CHECK(std::abs(out.item() - 1.5) < 1e-12);
}

TEST_CASE("one-layer episode reproduces the hand example") {
    PgnnLayerParams p = PgnnLayerParams::constant(1, 1, 1.0);
    p.node_gate.data()[0] = 0.0;
    p.proto_gate.data()[0] = 0.0;
    std::vector<ClassGraph> graphs{build_graph(column({1, 2}), "a", GraphRole::support)};
    const EpisodeState s = EpisodeState::from_graphs(graphs);
    CHECK(s.protos.item() == 1.5);
    PgnnConfig cfg;
    cfg.layer_dims = {1, 1};
    const EpisodeState out = pgnn_layer_forward(s, p, cfg);
    CHECK(std::abs(out.nodes.data()[0] - 3.25) < 1e-10);
    CHECK(std::abs(out.nodes.data()[1] - 2.75) < 1e-10);
    CHECK(std::abs(out.protos.item() - 1.5) < 1e-10);
}

TEST_CASE("closed node gate leaves the plain attention update") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        PgnnLayerParams p = random_params(3, 2, rng);
        p.node_gate.data().setConstant(-1e4);
        const Tensor h = random_tensor({1, 3}, rng, 1.0, false);
        std::vector<Tensor> nb{random_tensor({1, 3}, rng, 1.0, false), random_tensor({1, 3}, rng, 1.0, false)};
        const Tensor pg = random_tensor({1, 3}, rng, 1.0, false);
        // pick h so the gate logit is strongly negative
        Tensor hp = Tensor(Shape{1, 3}, h.data().cwiseAbs());
        const Tensor got = real_node_update(hp, nb, pg, p);
        const Tensor alpha = attention_weights(hp, nb, p.attention);
        Tensor ref = matmul_nt(hp, p.node_self);
        for (std::size_t j = 0; j < nb.size(); ++j)
            ref = ref + scale(matmul_nt(nb[j], p.node_neighbor), alpha.data()[static_cast<Index>(j)]);
        CHECK(max_abs(got, relu(ref)) < 1e-12);
    }
}

TEST_CASE("node equal to prototype gets no correction") {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        PgnnLayerParams p = random_params(3, 3, rng);
        const Tensor h = random_tensor({1, 3}, rng, 1.0, false);
        std::vector<Tensor> nb{random_tensor({1, 3}, rng, 1.0, false)};
        const Tensor a = real_node_update(h, nb, h, p);
        p.node_correction.data().setRandom();
        p.node_gate.data().setRandom();
        CHECK(real_node_update(h, nb, h, p).data() == a.data());
    }
}

TEST_CASE("alignment vanishes for coincident or switched-off prototypes") {
    Rng rng(7);
    for (int t = 0; t < 100; ++t) {
        const PgnnLayerParams p = random_params(3, 2, rng);
        const Tensor pg = random_tensor({1, 3}, rng, 1.0, false);
        const Tensor nodes = random_tensor({4, 3}, rng, 1.0, false);
        const Tensor query = prototype_update_query(pg, nodes, p);
        std::vector<Tensor> same{pg, pg, pg};
        CHECK(max_abs(prototype_update_support(pg, nodes, same, p, 1.0), query) < 1e-15);
        std::vector<Tensor> others{random_tensor({1, 3}, rng, 1.0, false), random_tensor({1, 3}, rng, 1.0, false)};
        CHECK(prototype_update_support(pg, nodes, others, p, 0.0).data() == query.data());
        const Tensor flat = Tensor(Shape{4, 3}, pg.mat().replicate(4, 1).reshaped<Eigen::RowMajor>().eval());
        CHECK(max_abs(prototype_update_query(pg, flat, p), relu(matmul_nt(pg, p.proto_self))) < 1e-15);
    }
}

TEST_CASE("batched layer matches the single-node reference") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const Index d = 3, dout = 4;
        auto graphs = random_graphs({{3, GraphRole::support},
                                     {1, GraphRole::support},
                                     {4, GraphRole::support},
                                     {2, GraphRole::query},
                                     {5, GraphRole::query}},
                                    d, rng);
        const EpisodeState s = EpisodeState::from_graphs(graphs);
        const PgnnLayerParams p = random_params(d, dout, rng);
        PgnnConfig cfg;
        cfg.layer_dims = {d, dout};
        cfg.align_strength = 0.7;
        const EpisodeState out = pgnn_layer_forward(s, p, cfg);
        double worst = 0.0;
        for (Index g = 0; g < s.graph_count(); ++g) {
            const ClassGraph& cg = graphs[static_cast<std::size_t>(g)];
            const Index at = offset_of(s, g);
            for (Index i = 0; i < cg.size(); ++i) {
                const Tensor ref = real_node_update(row(cg.node_feats, i), cycle_neighbors(cg.node_feats, i), cg.proto_feat, p);
                worst = std::max(worst, max_abs(row(out.nodes, at + i), ref));
            }
            Tensor ref;
            if (cg.role == GraphRole::support) {
                std::vector<Tensor> others;
                for (Index o = 0; o < s.graph_count(); ++o)
                    if (o != g && graphs[static_cast<std::size_t>(o)].role == GraphRole::support)
                        others.push_back(graphs[static_cast<std::size_t>(o)].proto_feat);
                ref = prototype_update_support(cg.proto_feat, cg.node_feats, others, p, cfg.align_strength);
            } else {
                ref = prototype_update_query(cg.proto_feat, cg.node_feats, p);
            }
            worst = std::max(worst, max_abs(row(out.protos, g), ref));
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("two-way episode matches a scalar re-implementation") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::normal_distribution<double> gauss;
        const double wr = gauss(rng), ur = gauss(rng), up = gauss(rng), wp = gauss(rng), urp = gauss(rng),
                     upp = gauss(rng), wa = gauss(rng), wb = gauss(rng), wg = gauss(rng), ww1 = gauss(rng),
                     ww2 = gauss(rng);
        const double lambda = 0.5 + std::abs(gauss(rng));
        const std::vector<std::vector<double>> feats{{gauss(rng), gauss(rng), gauss(rng)},
                                                     {gauss(rng), gauss(rng)},
                                                     {gauss(rng), gauss(rng)},
                                                     {gauss(rng)}};
        const std::vector<bool> support{true, true, false, false};

        std::vector<double> protos;
        for (const auto& f : feats) {
            double m = 0;
            for (double v : f) m += v;
            protos.push_back(m / static_cast<double>(f.size()));
        }
        std::vector<double> node_ref, proto_ref;
        for (std::size_t g = 0; g < feats.size(); ++g) {
            const auto& h = feats[g];
            const std::size_t n = h.size();
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> nb;
                if (n > 1) {
                    nb.push_back(h[(i + 1) % n]);
                    if ((i + n - 1) % n != (i + 1) % n) nb.push_back(h[(i + n - 1) % n]);
                }
                double z = 0, agg = 0;
                for (double v : nb) z += std::exp(wa * h[i] * wa * v);
                for (double v : nb) agg += std::exp(wa * h[i] * wa * v) / z * ur * v;
                node_ref.push_back(std::max(0.0, wr * h[i] + agg + sigmoid(wb * h[i]) * up * (protos[g] - h[i])));
            }
            double fb = 0;
            for (double v : h) fb += v - protos[g];
            double acc = wp * protos[g] + sigmoid(wg * protos[g]) * urp * fb;
            if (support[g]) {
                for (std::size_t o = 0; o < feats.size(); ++o)
                    if (o != g && support[o])
                        acc += lambda * sigmoid(ww1 * protos[g] + ww2 * protos[o]) * upp * (protos[o] - protos[g]);
            }
            proto_ref.push_back(std::max(0.0, acc));
        }

        std::vector<ClassGraph> graphs;
        for (std::size_t g = 0; g < feats.size(); ++g) {
            Vector v = Eigen::Map<const Vector>(feats[g].data(), static_cast<Index>(feats[g].size()));
            graphs.push_back(build_graph(Tensor(Shape{v.size(), 1}, v), g % 2 ? "b" : "a",
                                         support[g] ? GraphRole::support : GraphRole::query));
        }
        PgnnLayerParams p = PgnnLayerParams::constant(1, 1, 0.0);
        p.node_self.data()[0] = wr;
        p.node_neighbor.data()[0] = ur;
        p.node_correction.data()[0] = up;
        p.proto_self.data()[0] = wp;
        p.proto_feedback.data()[0] = urp;
        p.proto_align.data()[0] = upp;
        p.attention.data()[0] = wa;
        p.node_gate.data()[0] = wb;
        p.proto_gate.data()[0] = wg;
        p.align_gate.data() << ww1, ww2;
        PgnnConfig cfg;
        cfg.layer_dims = {1, 1};
        cfg.align_strength = lambda;
        const EpisodeState out = pgnn_layer_forward(EpisodeState::from_graphs(graphs), p, cfg);
        for (std::size_t k = 0; k < node_ref.size(); ++k) CHECK(std::abs(out.nodes.data()[static_cast<Index>(k)] - node_ref[k]) < 1e-10);
        for (std::size_t k = 0; k < proto_ref.size(); ++k) CHECK(std::abs(out.protos.data()[static_cast<Index>(k)] - proto_ref[k]) < 1e-10);
    }
}

TEST_CASE("attention rows sum to one and ignore a shared logit shift") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto graphs = random_graphs({{5, GraphRole::support}, {2, GraphRole::support}, {3, GraphRole::query}}, 4, rng);
        const EpisodeState s = EpisodeState::from_graphs(graphs);
        const Tensor w = random_tensor({4, 4}, rng, 1.0, false);
        const Tensor a = matmul_nt(s.nodes, w);
        const Tensor logits = matmul_nt(a, a);
        const Tensor alpha = masked_softmax_rows(logits, s.neighbor_mask);
        for (Index r = 0; r < alpha.rows(); ++r) CHECK(std::abs(alpha.mat().row(r).sum() - 1.0) < 1e-12);
        const Tensor shifted = masked_softmax_rows(Tensor::from_matrix((logits.mat().array() + 3.7).matrix().eval()), s.neighbor_mask);
        CHECK(max_abs(alpha, shifted) < 1e-12);
    }
}

TEST_CASE("gates stay strictly inside the unit interval") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const PgnnLayerParams p = random_params(6, 6, rng, 1.0);
        const Tensor h = random_tensor({20, 6}, rng, 2.0, false);
        const Tensor beta = logistic(matmul_nt(h, p.node_gate));
        const Tensor gamma = logistic(matmul_nt(h, p.proto_gate));
        const Tensor w = logistic(matmul_nt(concat_cols(h, h.reshape({20, 6})), p.align_gate));
        for (const Tensor* t : {&beta, &gamma, &w}) {
            CHECK(t->data().minCoeff() > 0.0);
            CHECK(t->data().maxCoeff() < 1.0);
        }
    }
}

TEST_CASE("cyclic relabeling permutes nodes and keeps the prototype") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const Index n = 2 + static_cast<Index>(seed % 6), shift = 1 + static_cast<Index>(seed % 3) % n;
        auto graphs = random_graphs({{n, GraphRole::support}, {3, GraphRole::support}, {2, GraphRole::query}}, 3, rng);
        PgnnConfig cfg;
        cfg.layer_dims = {3, 4, 4};
        cfg.align_strength = 1.0;
        const PgnnStack stack(cfg, seed);
        const EpisodeState a = stack.forward(EpisodeState::from_graphs(graphs));

        std::vector<Index> order(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = (i + shift) % n;
        auto rolled = graphs;
        rolled[0] = build_graph(gather_rows(graphs[0].node_feats, order).detach(), "g0", GraphRole::support);
        const EpisodeState b = stack.forward(EpisodeState::from_graphs(rolled));
        for (Index i = 0; i < n; ++i)
            CHECK((b.nodes.mat().row(i) - a.nodes.mat().row(order[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((b.nodes.mat().bottomRows(5) - a.nodes.mat().bottomRows(5)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(max_abs(a.protos, b.protos) < 1e-12);
    }
}

TEST_CASE("query graphs are isolated from every other graph") {
    int support_moved = 0, query_moved = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto graphs = random_graphs(
            {{3, GraphRole::support}, {3, GraphRole::support}, {2, GraphRole::query}, {4, GraphRole::query}}, 3, rng);
        PgnnConfig cfg;
        cfg.layer_dims = {3, 4, 4};
        const PgnnStack stack(cfg, seed);
        const EpisodeState a = stack.forward(EpisodeState::from_graphs(graphs));

        auto perturbed = graphs;
        perturbed[3] = build_graph(random_tensor({4, 3}, rng, 1.0, false), "g3", GraphRole::query);
        perturbed[1] = build_graph(random_tensor({3, 3}, rng, 1.0, false), "g1", GraphRole::support);
        const EpisodeState b = stack.forward(EpisodeState::from_graphs(perturbed));
        CHECK(a.protos.mat().row(2) == b.protos.mat().row(2));
        CHECK(a.nodes.mat().middleRows(6, 2) == b.nodes.mat().middleRows(6, 2));
        support_moved += a.protos.mat().row(0) != b.protos.mat().row(0);

        PgnnConfig aligned = cfg;
        aligned.query_alignment_enabled = true;
        const PgnnStack leaky(aligned, seed);
        query_moved += leaky.forward(EpisodeState::from_graphs(graphs)).protos.mat().row(2) !=
                       leaky.forward(EpisodeState::from_graphs(perturbed)).protos.mat().row(2);
    }
    // the same perturbation does reach support graphs and aligned queries
    // whenever the output is not clipped to zero
    CHECK(support_moved > 30);
    CHECK(query_moved > 30);
}

TEST_CASE("zero alignment strength equals the alignment-off switch bit for bit") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto graphs = random_graphs({{3, GraphRole::support}, {2, GraphRole::support}, {2, GraphRole::query}}, 3, rng);
        const EpisodeState s = EpisodeState::from_graphs(graphs);
        const PgnnLayerParams p = random_params(3, 3, rng);
        PgnnConfig zero;
        zero.layer_dims = {3, 3};
        zero.align_strength = 0.0;
        PgnnConfig off = zero;
        off.align_strength = 1.0;
        off.no_cross_graph_alignment = true;
        const EpisodeState a = pgnn_layer_forward(s, p, zero);
        const EpisodeState b = pgnn_layer_forward(s, p, off);
        CHECK(a.protos.data() == b.protos.data());
        for (Index g = 0; g < 2; ++g) {
            const Tensor ref = prototype_update_query(graphs[static_cast<std::size_t>(g)].proto_feat,
                                                      graphs[static_cast<std::size_t>(g)].node_feats, p);
            CHECK(max_abs(row(a.protos, g), ref) < 1e-12);
        }
    }
}

TEST_CASE("constant graph prototype does not depend on graph size") {
    Rng rng(3);
    const PgnnLayerParams p = random_params(3, 3, rng);
    const Tensor v = random_tensor({1, 3}, rng, 1.0, false);
    PgnnConfig cfg;
    cfg.layer_dims = {3, 3};
    Vector first;
    for (Index n = 1; n <= 8; ++n) {
        const Tensor nodes(Shape{n, 3}, v.mat().replicate(n, 1).reshaped<Eigen::RowMajor>().eval());
        std::vector<ClassGraph> g{build_graph(nodes, "a", GraphRole::support)};
        const EpisodeState out = pgnn_layer_forward(EpisodeState::from_graphs(g), p, cfg);
        if (n == 1) first = out.protos.data();
        CHECK((out.protos.data() - first).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("prototype-free variant pools node outputs") {
    Rng rng(4);
    auto graphs = random_graphs({{3, GraphRole::support}, {4, GraphRole::query}}, 3, rng);
    PgnnConfig cfg;
    cfg.layer_dims = {3, 3};
    cfg.no_prototype_node = true;
    const EpisodeState out = pgnn_layer_forward(EpisodeState::from_graphs(graphs), random_params(3, 3, rng), cfg);
    CHECK((out.protos.mat().row(0) - out.nodes.mat().topRows(3).colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((out.protos.mat().row(1) - out.nodes.mat().bottomRows(4).colwise().mean()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stack widths and parameter counts") {
    const PgnnConfig paper = PgnnConfig::for_preset(Preset::paper);
    CHECK(paper.layer_dims.size() == 4);
    CHECK(paper.output_dim() == 128);
    const PgnnStack stack(paper, 1);
    Rng rng(1);
    auto graphs = random_graphs({{2, GraphRole::support}, {2, GraphRole::support}, {2, GraphRole::query}}, 512, rng);
    const EpisodeState out = stack.forward(EpisodeState::from_graphs(graphs));
    CHECK(out.protos.cols() == 128);
    Index counted = 0;
    for (const auto& np : stack.parameters()) counted += np.tensor.size();
    CHECK(counted == pgnn_parameter_count(paper));
    CHECK(counted == 1445376);
    std::vector<ClassGraph> narrow = random_graphs({{2, GraphRole::support}}, 64, rng);
    CHECK_THROWS_AS(stack.forward(EpisodeState::from_graphs(narrow)), DimensionError);
}

TEST_CASE("tiny stack gradients match central differences") {
    const PgnnConfig cfg = PgnnConfig::for_preset(Preset::tiny);
    const PgnnStack stack(cfg, 21);
    Rng rng(8);
    auto graphs = random_graphs(
        {{3, GraphRole::support}, {3, GraphRole::support}, {3, GraphRole::query}, {3, GraphRole::query}},
        cfg.layer_dims.front(), rng);
    const EpisodeState s = EpisodeState::from_graphs(graphs);
    const Tensor probe = random_tensor({4, cfg.output_dim()}, rng, 1.0, false);
    std::vector<Tensor> params;
    for (const auto& np : stack.parameters()) params.push_back(np.tensor);
    auto loss = [&] {
        const EpisodeState out = stack.forward(s);
        return sum(mul(out.protos, probe)) + sum(out.nodes);
    };
    CHECK(gradient_error(loss, params, 1e-6, 8) < 1e-4);
}

}  // TEST_SUITE
