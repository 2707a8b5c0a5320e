#include "support.hpp"

#include "proton/protoloss.hpp"

#include <doctest.h>

#include <cmath>

using namespace proton;
using testing::gradient_error;
using testing::random_tensor;

namespace {

Tensor row_of(std::initializer_list<double> v) {
    return Tensor(Shape{1, static_cast<Index>(v.size())}, Eigen::Map<const Vector>(v.begin(), static_cast<Index>(v.size())));
}

EpisodeOutputs random_outputs(Index classes, Index queries, Index d, Rng& rng) {
    EpisodeOutputs out;
    out.class_protos = random_tensor({classes, d}, rng, 1.0, true);
    out.query_protos = random_tensor({queries, d}, rng, 1.0, true);
    for (Index c = 0; c < classes; ++c) out.class_ids.push_back("c" + std::to_string(c));
    for (Index q = 0; q < queries; ++q) out.query_labels.push_back(q % classes);
    return out;
}

}  // namespace

TEST_SUITE("protoloss") {

TEST_CASE("class prototype examples") {
    const Tensor v = row_of({3, -1});
    std::vector<Tensor> same{v, v, v};
    CHECK(class_prototype(same).data() == v.data());
    std::vector<Tensor> pair{row_of({0, 0}), row_of({2, 4})};
    CHECK(class_prototype(pair).data() == Vector{{1.0, 2.0}});
    CHECK_THROWS_AS(class_prototype(std::vector<Tensor>{}), std::invalid_argument);
}

TEST_CASE("class prototype ignores list order") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::vector<Tensor> ps;
        for (int i = 0; i < 5; ++i) ps.push_back(random_tensor({1, 4}, rng, 1.0, false));
        auto shuffled = ps;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK((class_prototype(ps).data() - class_prototype(shuffled).data()).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("classify examples") {
    std::vector<Tensor> equi{row_of({1, 0}), row_of({0, 1}), row_of({-1, 0})};
    const Tensor u = classify(row_of({0, 0}), equi);
    for (Index c = 0; c < 3; ++c) CHECK(u.data()[c] == doctest::Approx(1.0 / 3));

    // distances 1 and 2
    std::vector<Tensor> two{row_of({1}), row_of({2})};
    const Tensor p = classify(row_of({0}), two);
    CHECK(std::abs(p.data()[0] - 0.7311) < 1e-4);
    CHECK(std::abs(p.data()[1] - 0.2689) < 1e-4);

    std::vector<Tensor> far{row_of({50, 50}), row_of({0.5, 0.5}), row_of({-40, 3})};
    const Tensor q = classify(row_of({0.5, 0.5}), far);
    Index best = 0;
    q.data().maxCoeff(&best);
    CHECK(best == 1);
    CHECK_THROWS_AS(classify(row_of({0}), std::vector<Tensor>{row_of({1})}), std::invalid_argument);
    CHECK_THROWS_AS(classify(row_of({0, 0}), std::vector<Tensor>{row_of({1}), row_of({2})}), DimensionError);
}

TEST_CASE("classify is invariant to a shared translation") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::vector<Tensor> ps, moved;
        const Tensor shift = random_tensor({1, 3}, rng, 5.0, false);
        for (int c = 0; c < 4; ++c) {
            ps.push_back(random_tensor({1, 3}, rng, 1.0, false));
            moved.push_back(ps.back() + shift);
        }
        const Tensor q = random_tensor({1, 3}, rng, 1.0, false);
        const Tensor a = classify(q, ps);
        const Tensor b = classify(q + shift, moved);
        CHECK((a.data() - b.data()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(std::abs(a.data().sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("episodic loss examples") {
    EpisodeOutputs out;
    out.class_protos = Tensor::from_matrix(RowMatrix{{1.0}, {2.0}});
    out.query_protos = Tensor::from_matrix(RowMatrix{{0.0}});
    out.query_labels = {0};
    out.class_ids = {"a", "b"};
    CHECK(std::abs(episodic_loss(out).item() - 0.3133) < 1e-4);

    out.class_protos = Tensor::from_matrix(RowMatrix{{0.0}, {30.0}});
    CHECK(episodic_loss(out).item() < 1e-12);

    EpisodeOutputs five;
    RowMatrix corners = RowMatrix::Identity(5, 5);
    five.class_protos = Tensor::from_matrix(corners);
    five.query_protos = Tensor::from_matrix(RowMatrix::Zero(2, 5));
    five.query_labels = {0, 3};
    five.class_ids = {"a", "b", "c", "d", "e"};
    CHECK(std::abs(episodic_loss(five).item() - std::log(5.0)) < 1e-12);

    five.query_labels = {0, 5};
    CHECK_THROWS_AS(episodic_loss(five), std::invalid_argument);
}

TEST_CASE("episodic loss is non-negative and has exact gradients") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        EpisodeOutputs out = random_outputs(4, 6, 3, rng);
        CHECK(episodic_loss(out).item() >= 0.0);
        CHECK(gradient_error([&] { return episodic_loss(out); }, {out.class_protos, out.query_protos}) < 1e-6);
    }
}

TEST_CASE("registry update examples") {
    PrototypeRegistry reg(0.5);
    const std::vector<std::string> ids{"a"};
    reg.update(ids, RowMatrix{{0.0}});
    CHECK(reg.at("a").vector[0] == 0.0);
    CHECK(reg.at("a").update_count == 1);
    reg.update(ids, RowMatrix{{2.0}});
    CHECK(reg.at("a").vector[0] == 1.0);
    CHECK(reg.at("a").update_count == 2);

    PrototypeRegistry fresh(0.0);
    fresh.update(ids, RowMatrix{{4.0, 1.0}});
    fresh.update(ids, RowMatrix{{-3.0, 2.0}});
    CHECK(fresh.at("a").vector == Vector{{-3.0, 2.0}});
    CHECK_THROWS_AS(fresh.update(ids, RowMatrix{{1.0}}), DimensionError);
    CHECK_THROWS_AS(PrototypeRegistry(1.0), std::invalid_argument);
}

TEST_CASE("registry survives a checkpoint round trip") {
    PrototypeRegistry reg(0.9);
    const std::vector<std::string> ids{"x", "y"};
    reg.update(ids, RowMatrix{{1.0, 2.0}, {3.0, 4.0}});
    reg.update(std::vector<std::string>{"x"}, RowMatrix{{0.5, 0.25}});
    Checkpoint ck;
    ck.blocks = reg.to_blocks();
    const PrototypeRegistry back = PrototypeRegistry::from_checkpoint(ck, 0.9);
    CHECK(back.size() == 2);
    CHECK(back.at("x").vector == reg.at("x").vector);
    CHECK(back.at("x").update_count == 2);
    CHECK(back.at("y").update_count == 1);
}

TEST_CASE("overall loss with only episode classes equals the episodic loss") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        EpisodeOutputs out = random_outputs(5, 5, 4, rng);
        PrototypeRegistry reg;
        reg.update(out.class_ids, out.class_protos.mat());
        CHECK(overall_loss(out, reg).item() == episodic_loss(out).item());
        CHECK(overall_loss(out, PrototypeRegistry()).item() == episodic_loss(out).item());
    }
}

TEST_CASE("far distractor barely moves the overall loss") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        EpisodeOutputs out = random_outputs(3, 3, 2, rng);
        PrototypeRegistry reg;
        reg.update(out.class_ids, out.class_protos.mat());
        const double before = overall_loss(out, reg).item();
        reg.update(std::vector<std::string>{"far"}, RowMatrix{{1e3, -1e3}});
        CHECK(std::abs(overall_loss(out, reg).item() - before) < 1e-6);
    }
}

TEST_CASE("three-class overall loss matches the scalar softmax") {
    EpisodeOutputs out;
    out.class_protos = Tensor::from_matrix(RowMatrix{{1.0}}, true);
    out.class_ids = {"a"};
    out.query_protos = Tensor::from_matrix(RowMatrix{{0.0}}, true);
    out.query_labels = {0};
    PrototypeRegistry reg;
    // distances 1, 2, 3 from the query
    reg.update(std::vector<std::string>{"b", "c"}, RowMatrix{{-2.0}, {3.0}});
    const double expect = -std::log(std::exp(-1.0) / (std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0)));
    CHECK(std::abs(overall_loss(out, reg).item() - expect) < 1e-12);
    // gradients reach the fresh prototypes only
    CHECK(gradient_error([&] { return overall_loss(out, reg); }, {out.class_protos, out.query_protos}) < 1e-6);
}

TEST_CASE("unrelated insertions keep the nearest class") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        EpisodeOutputs out = random_outputs(4, 1, 3, rng);
        std::vector<Tensor> ps;
        for (Index c = 0; c < 4; ++c) ps.push_back(row(out.class_protos, c).detach());
        Index before = 0;
        classify(out.query_protos, ps).data().maxCoeff(&before);
        ps.push_back(Tensor::from_matrix(RowMatrix::Constant(1, 3, 500.0 + static_cast<double>(seed))));
        Index after = 0;
        classify(out.query_protos, ps).data().maxCoeff(&after);
        CHECK(after == before);
    }
}

TEST_CASE("hybrid loss endpoints and interior") {
    const Tensor e = Tensor::scalar(1.0), o = Tensor::scalar(2.0);
    CHECK(hybrid_loss(e, o, 0.0).same(e));
    CHECK(hybrid_loss(e, o, 1.0).same(o));
    CHECK(hybrid_loss(e, o, 0.4).item() == doctest::Approx(1.4).epsilon(1e-15));
    CHECK_THROWS_AS(hybrid_loss(e, o, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(hybrid_loss(e, o, 1.5), std::invalid_argument);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double a = u(rng) * 5, b = u(rng) * 5, l1 = u(rng), l2 = u(rng);
        const double f1 = hybrid_loss(Tensor::scalar(a), Tensor::scalar(b), l1).item();
        const double f2 = hybrid_loss(Tensor::scalar(a), Tensor::scalar(b), l2).item();
        const double mid = hybrid_loss(Tensor::scalar(a), Tensor::scalar(b), 0.5 * (l1 + l2)).item();
        CHECK(std::abs(mid - 0.5 * (f1 + f2)) < 1e-12);
    }
}

}  // TEST_SUITE
