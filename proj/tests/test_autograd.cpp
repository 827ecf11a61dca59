#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "pess/autograd.hpp"
#include "pess/errors.hpp"
#include "pess/rng.hpp"

using namespace pess;
using ad::Graph;
using ad::Mat;
using ad::NodeId;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (double& x : m.a) x = rng.normal(0.0, scale);
    return m;
}

// FD check of d(loss)/d(param) for a scalar-valued graph builder.
double fd_check(Mat param, const std::function<double(const Mat&)>& loss,
                const std::function<NodeId(Graph&, NodeId)>& build, double h = 1e-6) {
    Mat grad(param.rows, param.cols);
    {
        Graph g;
        NodeId p = g.param(&param, &grad);
        NodeId root = build(g, p);
        g.backward(root);
    }
    double worst = 0.0;
    for (size_t i = 0; i < param.size(); ++i) {
        Mat up = param, down = param;
        up.a[i] += h;
        down.a[i] -= h;
        const double fd = (loss(up) - loss(down)) / (2 * h);
        const double denom = std::max({std::fabs(fd), std::fabs(grad.a[i]), 1e-6});
        worst = std::max(worst, std::fabs(fd - grad.a[i]) / denom);
    }
    return worst;
}

// Reduce any matrix node to a scalar via a fixed weighted sum, so every
// entry contributes to the root.
NodeId weighted_sum(Graph& g, NodeId x) {
    const Mat& xv = g.value(x);
    Mat w(xv.cols, 1);
    for (size_t i = 0; i < w.size(); ++i) w.a[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    Mat u(1, xv.rows);
    for (size_t i = 0; i < u.size(); ++i) u.a[i] = 0.5 + 0.2 * static_cast<double>(i % 5);
    return g.matmul(g.input(std::move(u)), g.matmul(x, g.input(std::move(w))));
}

}  // namespace

TEST_CASE("gemm helpers match hand results") {
    Mat a(2, 3), b(3, 2);
    for (size_t i = 0; i < a.size(); ++i) a.a[i] = static_cast<double>(i + 1);
    for (size_t i = 0; i < b.size(); ++i) b.a[i] = static_cast<double>(i) - 2.0;
    Mat c(2, 2);
    ad::gemm_acc(a, b, c);
    // row 0: [1 2 3] * [[-2 -1],[0 1],[2 3]] = (-2+0+6, -1+2+9) = (4, 10)
    CHECK(c.at(0, 0) == doctest::Approx(4));
    CHECK(c.at(0, 1) == doctest::Approx(10));
    CHECK(c.at(1, 0) == doctest::Approx(10));
    CHECK(c.at(1, 1) == doctest::Approx(25));
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(1);
    Mat fixed = random_mat(3, 4, rng);
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(weighted_sum(g, g.matmul(g.input(p), g.input(fixed)))).a[0];
    };
    auto build = [&](Graph& g, NodeId p) { return weighted_sum(g, g.matmul(p, g.input(fixed))); };
    CHECK(fd_check(random_mat(2, 3, rng), loss, build) < 1e-7);
}

TEST_CASE("matmul_nt gradients match finite differences") {
    Rng rng(2);
    Mat fixed = random_mat(5, 3, rng);
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(weighted_sum(g, g.matmul_nt(g.input(p), g.input(fixed)))).a[0];
    };
    auto build = [&](Graph& g, NodeId p) {
        return weighted_sum(g, g.matmul_nt(p, g.input(fixed)));
    };
    CHECK(fd_check(random_mat(2, 3, rng), loss, build) < 1e-7);
}

TEST_CASE("softmax_rows gradients match finite differences") {
    Rng rng(3);
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(weighted_sum(g, g.softmax_rows(g.input(p)))).a[0];
    };
    auto build = [&](Graph& g, NodeId p) { return weighted_sum(g, g.softmax_rows(p)); };
    CHECK(fd_check(random_mat(3, 5, rng), loss, build) < 1e-6);
}

TEST_CASE("layer_norm_rows gradients match finite differences (x, gamma, beta)") {
    Rng rng(4);
    Mat gamma = random_mat(1, 6, rng, 0.5);
    Mat beta = random_mat(1, 6, rng, 0.5);
    for (double& x : gamma.a) x += 1.0;

    auto loss = [&](const Mat& p) {
        Graph g;
        return g
            .value(weighted_sum(
                g, g.layer_norm_rows(g.input(p), g.input(gamma), g.input(beta))))
            .a[0];
    };
    auto build = [&](Graph& g, NodeId p) {
        return weighted_sum(g, g.layer_norm_rows(p, g.input(gamma), g.input(beta)));
    };
    CHECK(fd_check(random_mat(4, 6, rng), loss, build) < 1e-6);

    Mat x = random_mat(4, 6, rng);
    auto loss_gamma = [&](const Mat& p) {
        Graph g;
        return g
            .value(weighted_sum(g, g.layer_norm_rows(g.input(x), g.input(p), g.input(beta))))
            .a[0];
    };
    auto build_gamma = [&](Graph& g, NodeId p) {
        return weighted_sum(g, g.layer_norm_rows(g.input(x), p, g.input(beta)));
    };
    CHECK(fd_check(gamma, loss_gamma, build_gamma) < 1e-6);
}

TEST_CASE("embedding_rows scatters gradients to the right rows") {
    Rng rng(5);
    const std::vector<int> ids = {2, 0, 2, 3};
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(weighted_sum(g, g.embedding_rows(g.input(p), ids))).a[0];
    };
    auto build = [&](Graph& g, NodeId p) { return weighted_sum(g, g.embedding_rows(p, ids)); };
    CHECK(fd_check(random_mat(5, 4, rng), loss, build) < 1e-7);
}

TEST_CASE("slice_cols / concat_cols / mean_rows / relu / elementwise_mul gradients") {
    Rng rng(6);
    Mat other = random_mat(3, 4, rng);
    auto build = [&](Graph& g, NodeId p) {
        NodeId left = g.slice_cols(p, 0, 2);
        NodeId right = g.slice_cols(p, 2, 4);
        NodeId cat = g.concat_cols({g.relu(left), g.elementwise_mul(right, g.slice_cols(g.input(other), 0, 2))});
        NodeId mean = g.mean_rows(cat, 0, 3);
        return weighted_sum(g, mean);
    };
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(build(g, g.input(p))).a[0];
    };
    CHECK(fd_check(random_mat(3, 4, rng), loss, build) < 1e-6);
}

TEST_CASE("cosine_vec value and gradients") {
    Rng rng(7);
    Mat b = random_mat(1, 6, rng);
    auto build = [&](Graph& g, NodeId p) { return g.cosine_vec(p, g.input(b)); };
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(build(g, g.input(p))).a[0];
    };
    Mat a = random_mat(1, 6, rng);
    CHECK(fd_check(a, loss, build) < 1e-6);

    Graph g;
    NodeId c = g.cosine_vec(g.input(a), g.input(a));
    CHECK(g.value(c).a[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy value and gradients, PAD rows ignored") {
    Rng rng(8);
    const std::vector<int> targets = {1, 3, 0, 2};  // one PAD (=0) row
    auto build = [&](Graph& g, NodeId p) {
        return g.cross_entropy(p, targets, 0, Graph::Reduction::mean);
    };
    auto loss = [&](const Mat& p) {
        Graph g;
        return g.value(build(g, g.input(p))).a[0];
    };
    Mat logits = random_mat(4, 5, rng);
    CHECK(fd_check(logits, loss, build) < 1e-6);

    // uniform logits -> ln V per position
    Mat zeros(3, 7);
    Graph g;
    NodeId ce = g.cross_entropy(g.input(zeros), {1, 2, 3}, 0, Graph::Reduction::mean);
    CHECK(g.value(ce).a[0] == doctest::Approx(std::log(7.0)).epsilon(1e-9));

    Graph g2;
    CHECK_THROWS_AS(g2.cross_entropy(g2.input(zeros), {0, 0, 0}, 0, Graph::Reduction::mean),
                    ArgumentError);
}

TEST_CASE("exp/log/scale/add_const compose into a correct logsumexp") {
    Graph g;
    Mat s1 = Mat::scalar(0.3), s2 = Mat::scalar(-1.2);
    NodeId a = g.input(s1), b = g.input(s2);
    NodeId lse = g.add_const(
        g.log(g.add(g.exp(g.add_const(a, -0.3)), g.exp(g.add_const(b, -0.3)))), 0.3);
    const double expect = std::log(std::exp(0.3) + std::exp(-1.2));
    CHECK(g.value(lse).a[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("backward accumulates into external parameter gradients") {
    Mat p(2, 2);
    p.a = {1.0, 2.0, 3.0, 4.0};
    Mat grad(2, 2);
    Mat ones(2, 1);
    ones.a = {1.0, 1.0};

    Graph g;
    NodeId leaf = g.param(&p, &grad);
    NodeId total = g.mean_rows(g.matmul(g.scale(leaf, 2.0), g.input(ones)), 0, 2);
    g.backward(total);
    // d/dp of mean over rows of 2*(p00+p01, p10+p11) = 1 for every entry
    for (double v : grad.a) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph g;
    Mat p(2, 2);
    Mat grad(2, 2);
    NodeId leaf = g.param(&p, &grad);
    CHECK_THROWS_AS(g.backward(leaf), ArgumentError);
}
