#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracle_helpers.hpp"
#include "wsol/rng.hpp"
#include "wsol/tensor.hpp"

using namespace wsol;

namespace {

// Reduces any op output to a scalar through fixed seeded projections so
// finite differences can probe the whole composition.
Tensor reduce_to_scalar(ComputationRecord& rec, const Tensor& t, uint64_t seed) {
    SplitMix64 rng(seed);
    auto proj_row = [&](int n) {
        Tensor p = Tensor::zeros({1, n});
        for (double& v : p.data()) v = rng.uniform(0.5, 1.5);
        return rec.leaf(p);
    };
    if (t.numel() == 1) return t;
    if (t.shape().size() == 1) return rec.matmul(proj_row(t.shape()[0]), t);
    if (t.shape().size() == 2) {
        Tensor rowed = rec.matmul(proj_row(t.shape()[0]), t);  // (1,N)
        Tensor p = Tensor::zeros({t.shape()[1]});
        for (double& v : p.data()) v = rng.uniform(0.5, 1.5);
        return rec.matmul(rowed, rec.leaf(p));
    }
    Tensor pooled = rec.global_average_pool(t);
    return rec.matmul(proj_row(t.shape()[0]), pooled);
}

struct OpCase {
    std::vector<Tensor> inputs;
    std::function<Tensor(ComputationRecord&, const std::vector<Tensor>&)> build;
};

// Reverse-mode gradients of the scalar-reduced op against central differences,
// for every input of the case.
void check_against_fd(const OpCase& c, uint64_t seed, double tol = 1e-4) {
    ComputationRecord rec;
    std::vector<Tensor> leaves;
    for (const auto& in : c.inputs) leaves.push_back(rec.leaf(in));
    Tensor scalar = reduce_to_scalar(rec, c.build(rec, leaves), seed);
    GradientTable table = rec.backward(scalar);

    for (size_t i = 0; i < c.inputs.size(); ++i) {
        Tensor got = table.grad_of(leaves[i]);
        auto f = [&](const Tensor& x) {
            ComputationRecord r2;
            std::vector<Tensor> lv;
            for (size_t j = 0; j < c.inputs.size(); ++j) {
                lv.push_back(r2.leaf(j == i ? x : c.inputs[j]));
            }
            return reduce_to_scalar(r2, c.build(r2, lv), seed).value();
        };
        Tensor fd = finite_difference_gradient(f, c.inputs[i], 1e-5);
        double worst = 0.0;
        for (int e = 0; e < got.numel(); ++e) {
            worst = std::max(worst, oracle::rel_err(got.data()[(size_t)e], fd.data()[(size_t)e]));
        }
        CAPTURE(i);
        CHECK(worst <= tol);
    }
}

}  // namespace

TEST_CASE("forward examples") {
    ComputationRecord rec;
    SUBCASE("linear") {
        Tensor w = rec.leaf(Tensor({1, 2}, {2, -1}));
        Tensor z = rec.leaf(Tensor({2}, {2, 1}));
        Tensor s = rec.linear(w, z);
        CHECK(s.shape() == std::vector<int>{1});
        CHECK(s.data()[0] == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("relu") {
        Tensor x = rec.leaf(Tensor({3}, {-1, 0, 2}));
        Tensor y = rec.relu(x);
        CHECK(y.data() == std::vector<double>{0, 0, 2});
    }
    SUBCASE("global average pool over (C,N)") {
        Tensor z = rec.leaf(Tensor({2, 2}, {1, 3, 0, 2}));
        Tensor pooled = rec.global_average_pool(z);
        CHECK(pooled.data() == std::vector<double>{2, 1});
    }
    SUBCASE("softmax sums to one") {
        Tensor x = rec.leaf(Tensor({3}, {1, 2, 3}));
        Tensor p = rec.softmax(x);
        double sum = 0;
        for (double v : p.data()) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("cross entropy matches -log softmax") {
        Tensor x = rec.leaf(Tensor({3}, {0.5, -1.0, 2.0}));
        Tensor ce = rec.cross_entropy(x, 2);
        Tensor p = rec.softmax(x);
        CHECK(ce.value() == doctest::Approx(-std::log(p.data()[2])).epsilon(1e-12));
    }
}

TEST_CASE("conv2d and maxpool semantics") {
    ComputationRecord rec;
    SUBCASE("3x3 identity kernel with zero padding") {
        Tensor x = rec.leaf(Tensor({1, 2, 2}, {1, 2, 3, 4}));
        Tensor w = Tensor::zeros({1, 1, 3, 3});
        w.data()[4] = 1.0;  // center tap
        Tensor y = rec.conv2d(x, rec.leaf(w), Tensor(), 1, 1);
        CHECK(y.shape() == std::vector<int>{1, 2, 2});
        CHECK(y.data() == std::vector<double>{1, 2, 3, 4});
    }
    SUBCASE("padding contributes zeros") {
        Tensor x = rec.leaf(Tensor({1, 1, 1}, {5}));
        Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
        Tensor y = rec.conv2d(x, rec.leaf(w), Tensor(), 1, 1);
        CHECK(y.data() == std::vector<double>{5});  // only the center overlaps
    }
    SUBCASE("stride 2 output extent") {
        Tensor x = rec.leaf(Tensor::full({1, 4, 4}, 1.0));
        Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
        Tensor y = rec.conv2d(x, rec.leaf(w), Tensor(), 2, 1);
        CHECK(y.shape() == std::vector<int>{1, 2, 2});
    }
    SUBCASE("maxpool picks window max, non-overlapping") {
        Tensor x = rec.leaf(Tensor({1, 2, 4}, {1, 5, 2, 2, 3, 4, 2, 9}));
        Tensor y = rec.maxpool2d(x, 2);
        CHECK(y.shape() == std::vector<int>{1, 1, 2});
        CHECK(y.data() == std::vector<double>{5, 9});
    }
    SUBCASE("maxpool tie routes gradient to the lowest flat index") {
        Tensor x = rec.leaf(Tensor({1, 2, 2}, {7, 7, 7, 7}));
        Tensor y = rec.maxpool2d(x, 2);
        Tensor s = reduce_to_scalar(rec, y, 11);
        GradientTable t = rec.backward(s);
        Tensor g = t.grad_of(x);
        CHECK(g.data()[0] != 0.0);
        CHECK(g.data()[1] == 0.0);
        CHECK(g.data()[2] == 0.0);
        CHECK(g.data()[3] == 0.0);
    }
    SUBCASE("window must divide extents") {
        Tensor x = rec.leaf(Tensor::full({1, 3, 3}, 1.0));
        CHECK_THROWS_WITH_AS(rec.maxpool2d(x, 2), doctest::Contains("divide"),
                             std::invalid_argument);
    }
}

TEST_CASE("backward examples") {
    SUBCASE("gap+linear head gradient is W/N per channel") {
        // W = [[2,-1]], Z 2x2 -> ds0/dZ[c][n] = W[0][c]/N = [[1,1],[-0.5,-0.5]].
        ComputationRecord rec;
        Tensor z = rec.leaf(Tensor({2, 2}, {1, 3, 0, 2}));
        Tensor w = rec.leaf(Tensor({1, 2}, {2, -1}));
        Tensor s = rec.linear(w, rec.global_average_pool(z));
        GradientTable t = rec.backward(s);
        Tensor g = t.grad_of(z);
        const std::vector<double> want{1.0, 1.0, -0.5, -0.5};
        for (int i = 0; i < 4; ++i) CHECK(g.data()[(size_t)i] == doctest::Approx(want[(size_t)i]).epsilon(1e-12));
    }
    SUBCASE("gap+linear head with W=[[1,-1]]") {
        ComputationRecord rec;
        Tensor z = rec.leaf(Tensor({2, 2}, {1, 3, 0, 2}));
        Tensor w = rec.leaf(Tensor({1, 2}, {1, -1}));
        Tensor s = rec.linear(w, rec.global_average_pool(z));
        Tensor g = rec.backward(s).grad_of(z);
        const std::vector<double> want{0.5, 0.5, -0.5, -0.5};
        for (int i = 0; i < 4; ++i) CHECK(g.data()[(size_t)i] == doctest::Approx(want[(size_t)i]).epsilon(1e-12));
    }
    SUBCASE("d(x^2)/dx at 3 is 6") {
        ComputationRecord rec;
        Tensor x = rec.leaf(Tensor::scalar(3.0));
        Tensor y = rec.mul(x, x);
        CHECK(rec.backward(y).grad_of(x).value() == doctest::Approx(6.0).epsilon(1e-12));
    }
    SUBCASE("log chains as 1/s") {
        ComputationRecord rec;
        Tensor x = rec.leaf(Tensor({2}, {1.5, 0.5}));
        Tensor w = rec.leaf(Tensor({1, 2}, {2, 0}));
        Tensor s = rec.matmul(w, x);  // s0 = 3
        Tensor ls = rec.log(s);
        Tensor gs = rec.backward(s).grad_of(x);
        Tensor gl = rec.backward(ls).grad_of(x);
        for (int i = 0; i < 2; ++i) {
            CHECK(gl.data()[(size_t)i] == doctest::Approx(gs.data()[(size_t)i] / 3.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("gradients match central differences per op") {
    SplitMix64 rng(20240817);
    auto rnd = [&](std::vector<int> shape, double lo = -2.0, double hi = 2.0) {
        return oracle::random_tensor(std::move(shape), rng, lo, hi);
    };
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        CAPTURE(seed);
        check_against_fd({{rnd({2, 5, 6}), rnd({3, 2, 3, 3}), rnd({3})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.conv2d(in[0], in[1], in[2], 1, 1);
                          }},
                         seed);
        check_against_fd({{rnd({2, 6, 6}), rnd({3, 2, 3, 3}), rnd({3})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.conv2d(in[0], in[1], in[2], 2, 1);
                          }},
                         seed);
        check_against_fd({{rnd({3, 4})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.relu(in[0]);
                          }},
                         seed);
        check_against_fd({{rnd({2, 4, 4})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.maxpool2d(in[0], 2);
                          }},
                         seed);
        check_against_fd({{rnd({3, 2, 4})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.global_average_pool(in[0]);
                          }},
                         seed);
        check_against_fd({{rnd({3, 5}), rnd({5})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.linear(in[0], in[1]);
                          }},
                         seed);
        check_against_fd({{rnd({4, 3}), rnd({4, 3})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.add(in[0], in[1]);
                          }},
                         seed);
        check_against_fd({{rnd({4, 3}), rnd({4, 3})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.mul(in[0], in[1]);
                          }},
                         seed);
        check_against_fd({{rnd({3, 4}), rnd({4, 2})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.matmul(in[0], in[1]);
                          }},
                         seed);
        check_against_fd({{rnd({5}, 0.5, 2.5)},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.log(in[0]);
                          }},
                         seed);
        check_against_fd({{rnd({5})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.softmax(in[0]);
                          }},
                         seed);
        check_against_fd({{rnd({5})},
                          [](ComputationRecord& r, const std::vector<Tensor>& in) {
                              return r.cross_entropy(in[0], 2);
                          }},
                         seed);
    }
}

TEST_CASE("composed graph matches central differences") {
    SplitMix64 rng(77);
    Tensor img = oracle::random_tensor({2, 6, 6}, rng, -1.0, 1.0);
    Tensor w1 = oracle::random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor b1 = oracle::random_tensor({3}, rng, -0.2, 0.2);
    Tensor wh = oracle::random_tensor({2, 3}, rng, -0.8, 0.8);

    auto build = [&](ComputationRecord& r, const Tensor& x) {
        Tensor h = r.relu(r.conv2d(r.leaf(x), r.leaf(w1), r.leaf(b1), 2, 1));
        Tensor s = r.linear(r.leaf(wh), r.global_average_pool(h));
        return r.cross_entropy(s, 1);
    };
    ComputationRecord rec;
    Tensor x_leaf = rec.leaf(img);
    Tensor h = rec.relu(rec.conv2d(x_leaf, rec.leaf(w1), rec.leaf(b1), 2, 1));
    Tensor s = rec.linear(rec.leaf(wh), rec.global_average_pool(h));
    Tensor loss = rec.cross_entropy(s, 1);
    Tensor got = rec.backward(loss).grad_of(x_leaf);

    auto f = [&](const Tensor& x) {
        ComputationRecord r;
        return build(r, x).value();
    };
    Tensor fd = finite_difference_gradient(f, img, 1e-5);
    double worst = 0;
    for (int i = 0; i < got.numel(); ++i) {
        worst = std::max(worst, oracle::rel_err(got.data()[(size_t)i], fd.data()[(size_t)i]));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("finite difference oracle basics") {
    SUBCASE("sum of squares") {
        auto f = [](const Tensor& x) {
            double s = 0;
            for (double v : x.data()) s += v * v;
            return s;
        };
        Tensor g = finite_difference_gradient(f, Tensor({2}, {1, 2}), 1e-5);
        CHECK(g.data()[0] == doctest::Approx(2.0).epsilon(1e-6));
        CHECK(g.data()[1] == doctest::Approx(4.0).epsilon(1e-6));
    }
    SUBCASE("constant function") {
        auto f = [](const Tensor&) { return 4.2; };
        Tensor g = finite_difference_gradient(f, Tensor({3}, {1, 2, 3}), 1e-5);
        for (double v : g.data()) CHECK(v == 0.0);
    }
    SUBCASE("non-finite evaluation raises") {
        auto f = [](const Tensor& x) { return 1.0 / (x.data()[0] - x.data()[0]); };
        CHECK_THROWS_AS(finite_difference_gradient(f, Tensor({1}, {1}), 1e-5), std::runtime_error);
    }
}

TEST_CASE("backward contracts") {
    ComputationRecord rec;
    Tensor x = rec.leaf(Tensor({2}, {1, 2}));
    Tensor y = rec.mul(x, x);
    SUBCASE("non-scalar source rejected") {
        CHECK_THROWS_WITH_AS(rec.backward(y), doctest::Contains("single value"),
                             std::invalid_argument);
    }
    SUBCASE("detached tensor rejected") {
        CHECK_THROWS_WITH_AS(rec.backward(Tensor::scalar(1.0)), doctest::Contains("detached"),
                             std::invalid_argument);
    }
    SUBCASE("tensor from another record rejected") {
        ComputationRecord other;
        Tensor z = other.leaf(Tensor::scalar(1.0));
        CHECK_THROWS_WITH_AS(rec.backward(z), doctest::Contains("different record"),
                             std::invalid_argument);
    }
    SUBCASE("two backward passes are bitwise identical") {
        Tensor w = rec.leaf(Tensor({1, 2}, {0.3, -0.7}));
        Tensor s = rec.matmul(w, y);
        GradientTable a = rec.backward(s);
        GradientTable b = rec.backward(s);
        const auto ga = a.grad_of(x).data();
        const auto gb = b.grad_of(x).data();
        CHECK(ga == gb);  // exact
    }
    SUBCASE("unreached nodes read as zero gradients") {
        Tensor lonely = rec.leaf(Tensor({3}, {1, 2, 3}));
        Tensor w = rec.leaf(Tensor({1, 2}, {1, 1}));
        Tensor s = rec.matmul(w, y);
        GradientTable t = rec.backward(s);
        Tensor g = t.grad_of(lonely);
        for (double v : g.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("validity and shape errors") {
    ComputationRecord rec;
    SUBCASE("log of non-positive input") {
        Tensor x = rec.leaf(Tensor({2}, {1.0, -0.5}));
        CHECK_THROWS_WITH_AS(rec.log(x), doctest::Contains("non-positive"), std::runtime_error);
    }
    SUBCASE("non-finite values are rejected at the producing op") {
        Tensor x = rec.leaf(Tensor({1}, {1e308}));
        CHECK_THROWS_WITH_AS(rec.mul(x, x), doctest::Contains("non-finite"), std::runtime_error);
    }
    SUBCASE("finite checks can be disabled") {
        ComputationRecord loose;
        loose.set_finite_checks(false);
        Tensor x = loose.leaf(Tensor({1}, {1e308}));
        CHECK_NOTHROW(loose.mul(x, x));
    }
    SUBCASE("conv channel mismatch names the op and shapes") {
        Tensor x = rec.leaf(Tensor::full({2, 4, 4}, 1.0));
        Tensor w = rec.leaf(Tensor::full({1, 3, 3, 3}, 1.0));
        CHECK_THROWS_WITH_AS(rec.conv2d(x, w, Tensor(), 1, 1), doctest::Contains("conv2d"),
                             std::invalid_argument);
    }
    SUBCASE("add shape mismatch") {
        Tensor a = rec.leaf(Tensor::full({2, 2}, 1.0));
        Tensor b = rec.leaf(Tensor::full({4}, 1.0));
        CHECK_THROWS_WITH_AS(rec.add(a, b), doctest::Contains("(2,2)"), std::invalid_argument);
    }
    SUBCASE("matmul inner mismatch") {
        Tensor a = rec.leaf(Tensor::full({2, 3}, 1.0));
        Tensor b = rec.leaf(Tensor::full({4, 2}, 1.0));
        CHECK_THROWS_WITH_AS(rec.matmul(a, b), doctest::Contains("inner"), std::invalid_argument);
    }
}

TEST_CASE("record_forward dispatch") {
    ComputationRecord rec;
    Tensor x = rec.leaf(Tensor({3}, {-1, 0, 2}));
    Tensor y = rec.record_forward(OpKind::relu, {x});
    CHECK(y.data() == std::vector<double>{0, 0, 2});

    OpAttrs attrs;
    attrs.label = 1;
    Tensor ce = rec.record_forward(OpKind::cross_entropy, {x}, attrs);
    CHECK(ce.numel() == 1);

    CHECK_THROWS_AS(rec.record_forward(OpKind::add, {x}), std::invalid_argument);
}

TEST_CASE("gap gradient identity is exact") {
    SplitMix64 rng(5);
    Tensor z = oracle::random_tensor({4, 3, 5}, rng);
    Tensor w = oracle::random_tensor({3, 4}, rng);
    const int N = 15;
    for (int k = 0; k < 3; ++k) {
        ComputationRecord rec;
        Tensor zl = rec.leaf(z);
        Tensor s = rec.linear(rec.leaf(w), rec.global_average_pool(zl));
        Tensor pick = Tensor::zeros({1, 3});
        pick.data()[(size_t)k] = 1.0;
        Tensor sk = rec.matmul(rec.leaf(pick), s);
        Tensor g = rec.backward(sk).grad_of(zl);
        for (int c = 0; c < 4; ++c) {
            for (int n = 0; n < N; ++n) {
                const double want = w.data()[(size_t)k * 4 + c] / N;
                CHECK(std::abs(g.data()[(size_t)c * N + n] - want) <= 1e-12);
            }
        }
    }
}
