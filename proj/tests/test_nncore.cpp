#include "doctest.h"

#include "gradcheck.hpp"
#include "medl/functions.hpp"
#include "medl/layers.hpp"

#include <cmath>
#include <limits>

using namespace medl;
using namespace medl::nn;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (double v : r) {
            m(i, j++) = v;
        }
        ++i;
    }
    return m;
}

} // namespace

TEST_CASE("dense_forward on hand examples") {
    DenseLayer id;
    id.weight = {"w", Matrix::Identity(2, 2)};
    id.bias = {"b", Matrix::Zero(1, 2)};
    CHECK(dense_forward(id, mat({{1, 2}})).isApprox(mat({{1, 2}})));

    id.activation = Activation::selu;
    CHECK(dense_forward(id, Matrix::Zero(1, 2)).cwiseAbs().maxCoeff() == 0.0);

    DenseLayer sum;
    sum.weight = {"w", mat({{1}, {1}})};
    sum.bias = {"b", mat({{1}})};
    CHECK(dense_forward(sum, mat({{2, 3}}))(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("dense_forward rejects the wrong input width") {
    Rng rng(1);
    auto layer = make_dense(3, 2, Activation::linear, rng, "l");
    try {
        dense_forward(layer, Matrix::Zero(4, 5));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("3") != std::string::npos);
        CHECK(msg.find("5") != std::string::npos);
    }
}

TEST_CASE("tied layer uses the transpose of its source") {
    Rng rng(7);
    auto enc = make_dense(4, 3, Activation::linear, rng, "enc");
    auto dec = make_tied(enc, Activation::linear, "dec");
    CHECK(dec.in_dim(&enc) == 3);
    CHECK(dec.out_dim() == 4);
    Matrix x = random_normal(5, 3, 1.0, rng);
    Matrix expected = x * enc.weight.value.transpose();
    CHECK(dense_forward(dec, x, &enc).isApprox(expected));
    CHECK_THROWS_AS(dense_forward(dec, x), StateError);
}

TEST_CASE("selu values and constants") {
    CHECK(selu(0.0) == 0.0);
    CHECK(selu(1.0) == doctest::Approx(1.0507009873554805));
    CHECK(selu(-50.0) == doctest::Approx(-selu_scale * selu_alpha));
    CHECK(selu_scale * selu_alpha == doctest::Approx(1.7581).epsilon(1e-4));
    // derivative agrees with finite differences away from the kink
    for (double x : {-2.0, -0.3, 0.4, 3.0}) {
        double fd = (selu(x + 1e-6) - selu(x - 1e-6)) / 2e-6;
        CHECK(selu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
    }
}

TEST_CASE("softmax examples") {
    Vector half = softmax(Vector::Zero(2));
    CHECK(half(0) == doctest::Approx(0.5));
    CHECK(half(1) == doctest::Approx(0.5));

    Vector big(2);
    big << 1000, 0;
    Vector p = softmax(big);
    CHECK(p.allFinite());
    CHECK(std::abs(p(0) - 1.0) < 1e-12);
    CHECK(p(1) < 1e-12);

    // extended-precision oracle
    Vector x(3);
    x << 1, 2, 3;
    long double denom = 0;
    for (int i = 0; i < 3; ++i) {
        denom += std::exp(static_cast<long double>(x(i)));
    }
    Vector s = softmax(x);
    for (int i = 0; i < 3; ++i) {
        long double oracle = std::exp(static_cast<long double>(x(i))) / denom;
        CHECK(std::abs(static_cast<long double>(s(i)) - oracle) < 1e-15L);
    }
}

TEST_CASE("softmax rows sum to one on random extreme logits") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix logits = random_normal(8, 5, 300.0, rng);
        Matrix p = softmax_rows(logits);
        for (Index i = 0; i < p.rows(); ++i) {
            CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
            CHECK(p.row(i).minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("mse_loss follows the row-norm convention") {
    CHECK(mse_loss(mat({{1, 2}}), mat({{1, 2}})) == 0.0);
    CHECK(mse_loss(mat({{0}}), mat({{2}})) == doctest::Approx(4.0));
    CHECK(mse_loss(mat({{0, 0}, {2, 2}}), Matrix::Zero(2, 2)) == doctest::Approx(4.0));
    CHECK_THROWS_AS(mse_loss(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("cce_loss examples and errors") {
    CHECK(cce_loss(mat({{1, 0}}), mat({{1, 0}})) == doctest::Approx(0.0));
    CHECK(cce_loss(mat({{1, 0}}), mat({{0.5, 0.5}})) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(cce_loss(mat({{1, 0}, {1, 0}}), mat({{1, 0}, {0.5, 0.5}})) == doctest::Approx(0.346574).epsilon(1e-6));
    // floor keeps a zero probability finite
    CHECK(std::isfinite(cce_loss(mat({{0, 1}}), mat({{1, 0}}))));
    CHECK_THROWS_AS(cce_loss(mat({{1, 1}}), mat({{0.5, 0.5}})), ValueError);
    CHECK_THROWS_AS(cce_loss(mat({{0.5, 0.5}}), mat({{0.5, 0.5}})), ValueError);
    CHECK_THROWS_AS(cce_loss(mat({{1, 0}}), mat({{1, 0, 0}})), DimensionError);
}

TEST_CASE("losses are nonnegative and vanish only at the target") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        Matrix x = random_normal(6, 4, 1.0, rng);
        Matrix y = random_normal(6, 4, 1.0, rng);
        CHECK(mse_loss(x, y) > 0.0);
        CHECK(mse_loss(x, x) == 0.0);
        Matrix probs = softmax_rows(random_normal(6, 3, 1.0, rng));
        std::vector<int> codes{0, 1, 2, 0, 1, 2};
        CHECK(cce_loss(one_hot(codes, 3), probs) > 0.0);
        CHECK(cce_loss(one_hot(codes, 3), one_hot(codes, 3)) == 0.0);
    }
}

TEST_CASE("backward on a linear function") {
    Parameter w{"w", Matrix::Constant(1, 1, 0.7)};
    Tape tape;
    Var x = tape.constant(Matrix::Constant(1, 1, 3.0));
    Var loss = matmul(x, tape.parameter(w));
    auto g = backward(tape, loss);
    CHECK(g.of(w)(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("backward validates its loss") {
    Parameter w{"w", Matrix::Ones(2, 2)};
    Tape a, b;
    Var la = sum(a.parameter(w));
    CHECK_THROWS_AS(backward(b, la), StateError);
    Var not_scalar = a.parameter(w);
    CHECK_THROWS_AS(backward(a, not_scalar), DimensionError);
    backward(a, la);
    CHECK_THROWS_AS(backward(a, la), StateError);
}

TEST_CASE("frozen parameters receive exactly zero gradient") {
    Rng rng(5);
    auto l1 = make_dense(3, 4, Activation::selu, rng, "l1");
    auto l2 = make_dense(4, 2, Activation::linear, rng, "l2");
    Matrix x = random_normal(5, 3, 1.0, rng);
    Matrix target = random_normal(5, 2, 1.0, rng);

    Tape tape;
    for (auto* p : {&l1.weight, &l1.bias, &l2.weight, &l2.bias}) {
        tape.freeze(*p);
    }
    Var out = dense(tape, l2, dense(tape, l1, tape.constant(x)));
    auto g = backward(tape, mse(out, target));
    for (auto* p : {&l1.weight, &l1.bias, &l2.weight, &l2.bias}) {
        CHECK(g.contains(*p));
        CHECK(g.of(*p).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("one-layer linear net: mse gradient matches finite differences") {
    Rng rng(9);
    auto layer = make_dense(4, 3, Activation::linear, rng, "lin");
    Matrix x = random_normal(6, 4, 1.0, rng);
    Matrix target = random_normal(6, 3, 1.0, rng);
    auto res = testing::check_gradients(
        [&](Tape& t) { return mse(dense(t, layer, t.constant(x)), target); }, {&layer.weight, &layer.bias});
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("random small networks: every op matches finite differences") {
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        std::uniform_int_distribution<int> width(2, 16);
        const int d0 = width(rng), d1 = width(rng), d2 = width(rng), k = 2 + trial % 3;
        auto l1 = make_dense(d0, d1, Activation::linear, rng, "l1");
        auto bn = make_batchnorm(d1, "bn");
        bn.gamma.value = random_normal(1, d1, 1.0, rng);
        bn.beta.value = random_normal(1, d1, 1.0, rng);
        auto l2 = make_dense(d1, d2, Activation::selu, rng, "l2");
        auto head = make_dense(d2, k, Activation::softmax, rng, "head");
        auto dec = make_tied(l2, Activation::linear, "dec");
        Matrix x = random_normal(7, d0, 1.0, rng);
        std::vector<int> codes;
        for (int i = 0; i < 7; ++i) {
            codes.push_back(i % k);
        }
        Matrix z = one_hot(codes, k);
        Matrix recon_target = random_normal(7, d1, 1.0, rng);

        auto build = [&](Tape& t) {
            Var h = selu(batch_norm(t, bn, dense(t, l1, t.constant(x)), Mode::train, false));
            Var code = dense(t, l2, h);
            Var probs = dense(t, head, code);
            Var recon = dense(t, dec, code, &l2);
            std::vector<Var> terms{mse(recon, recon_target), cce(probs, z)};
            std::vector<double> w{1.3, -0.7};
            return linear_combination(terms, w);
        };
        auto res = testing::check_gradients(
            build, {&l1.weight, &l1.bias, &bn.gamma, &bn.beta, &l2.weight, &l2.bias, &head.weight, &head.bias, &dec.bias});
        INFO("trial " << trial << " worst " << res.worst);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("eval-mode batch norm and softplus gradients") {
    Rng rng(77);
    auto bn = make_batchnorm(3, "bn");
    bn.running_mean = RowVector::Random(3);
    bn.running_var = RowVector::Constant(3, 0.5);
    bn.gamma.value = random_normal(1, 3, 1.0, rng);
    Parameter raw{"raw", random_normal(4, 3, 1.0, rng)};
    Matrix target = random_normal(4, 3, 1.0, rng);
    auto res = testing::check_gradients(
        [&](Tape& t) { return mse(batch_norm(t, bn, softplus(t.parameter(raw)), Mode::eval), target); },
        {&raw, &bn.gamma, &bn.beta});
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("tied weight gradient accumulates into the shared matrix") {
    Rng rng(13);
    auto enc = make_dense(5, 3, Activation::linear, rng, "enc");
    auto dec = make_tied(enc, Activation::linear, "dec");
    Matrix x = random_normal(4, 5, 1.0, rng);

    Tape tape;
    Var code = dense(tape, enc, tape.constant(x));
    Var recon = dense(tape, dec, code, &enc);
    auto g = backward(tape, mse(recon, x));
    CHECK_FALSE(g.contains(dec.weight));

    // compare with an untied twin whose decoder holds an explicit copy
    DenseLayer dec_copy;
    dec_copy.weight = {"copy", enc.weight.value.transpose()};
    dec_copy.bias = dec.bias;
    Tape twin;
    Var code2 = dense(twin, enc, twin.constant(x));
    Var recon2 = dense(twin, dec_copy, code2);
    auto g2 = backward(twin, mse(recon2, x));
    Matrix expected = g2.of(enc.weight) + g2.of(dec_copy.weight).transpose();
    CHECK(g.of(enc.weight).isApprox(expected, 1e-12));

    // one update moves encoder and decoder consistently
    AdamState opt;
    std::vector<Parameter*> params{&enc.weight, &enc.bias, &dec.bias};
    adam_step(opt, params, g);
    Matrix expect = enc.weight.value.transpose();
    expect.rowwise() += dec.bias.value.row(0);
    CHECK(dense_forward(dec, Matrix::Identity(3, 3), &enc).isApprox(expect));
}

TEST_CASE("adam examples") {
    Parameter p{"p", Matrix::Constant(1, 1, 0.0)};
    std::vector<Parameter*> params{&p};

    SUBCASE("zero gradient is a no-op") {
        AdamState s;
        Gradients g;
        g.set_zero(p);
        adam_step(s, params, g);
        CHECK(p.value(0, 0) == 0.0);
        CHECK(s.step_count == 1);
    }
    SUBCASE("first step moves by lr") {
        AdamState s;
        s.learning_rate = 1e-4;
        Gradients g;
        g.accumulate(p, Matrix::Constant(1, 1, 1.0));
        adam_step(s, params, g);
        // bias-corrected m/sqrt(v) = g/|g| on step one
        CHECK(p.value(0, 0) == doctest::Approx(-1e-4 * 1.0 / (1.0 + s.epsilon)).epsilon(1e-12));
        CHECK(s.second_moment[0](0, 0) >= 0.0);
    }
    SUBCASE("deterministic") {
        Parameter q{"q", Matrix::Constant(1, 1, 0.0)};
        std::vector<Parameter*> qs{&q};
        AdamState s1, s2;
        Gradients g1, g2;
        g1.accumulate(p, Matrix::Constant(1, 1, 0.37));
        g2.accumulate(q, Matrix::Constant(1, 1, 0.37));
        for (int i = 0; i < 5; ++i) {
            adam_step(s1, params, g1);
            adam_step(s2, qs, g2);
        }
        CHECK(p.value(0, 0) == q.value(0, 0));
        CHECK(s1.step_count == 5);
    }
    SUBCASE("non-finite gradient is reported") {
        AdamState s;
        Gradients g;
        g.accumulate(p, Matrix::Constant(1, 1, std::numeric_limits<double>::quiet_NaN()));
        CHECK_THROWS_AS(adam_step(s, params, g), DivergenceError);
        CHECK(s.step_count == 0);
    }
}

TEST_CASE("batch norm examples") {
    auto bn = make_batchnorm(2, "bn");
    SUBCASE("already normalised input passes through") {
        Matrix x = mat({{1, -1}, {-1, 1}});
        Matrix y = batchnorm_forward(bn, x, Mode::train);
        CHECK(y.isApprox(x / std::sqrt(1 + bn.epsilon), 1e-12));
    }
    SUBCASE("eval uses running statistics only") {
        bn.running_mean << 0.5, -2.0;
        bn.running_var << 4.0, 0.25;
        bn.gamma.value << 2.0, 1.0;
        bn.beta.value << 0.1, 0.0;
        Matrix x = mat({{1.5, -1.0}});
        Matrix y = batchnorm_forward(bn, x, Mode::eval);
        CHECK(y(0, 0) == doctest::Approx(2.0 * 1.0 / std::sqrt(4.0 + 1e-3) + 0.1));
        CHECK(y(0, 1) == doctest::Approx(1.0 / std::sqrt(0.25 + 1e-3)));
    }
    SUBCASE("train mode output statistics") {
        Rng rng(21);
        Matrix x = random_normal(64, 2, 3.0, rng).array() + 5.0;
        Matrix y = batchnorm_forward(bn, x, Mode::train);
        for (Index j = 0; j < 2; ++j) {
            CHECK(std::abs(y.col(j).mean()) < 1e-12);
            double var = (y.col(j).array() - y.col(j).mean()).square().mean();
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
        CHECK(bn.running_var.minCoeff() >= 0.0);
        CHECK(bn.running_mean(0) != 0.0);
    }
    SUBCASE("train mode needs two rows") {
        CHECK_THROWS_AS(batchnorm_forward(bn, Matrix::Zero(1, 2), Mode::train), ValueError);
        CHECK_NOTHROW(batchnorm_forward(bn, Matrix::Zero(1, 2), Mode::eval));
    }
}

TEST_CASE("kl_gaussian examples") {
    CHECK(kl_gaussian(0.0, 0.25, 0.0, 0.25) == 0.0);
    CHECK(kl_gaussian(0.25, 0.25, 0.0, 0.25) == doctest::Approx(0.5));
    CHECK(kl_gaussian(0.0, 0.5, 0.0, 0.25) == doctest::Approx(0.806853).epsilon(1e-6));
    CHECK_THROWS_AS(kl_gaussian(0.0, 0.0, 0.0, 0.25), ValueError);
    CHECK_THROWS_AS(kl_gaussian(0.0, 0.1, 0.0, -1.0), ValueError);
    // the swapped expansion is KL(p||q): check against the closed form with roles exchanged
    CHECK(kl_gaussian_swapped(0.3, 0.5, 0.0, 0.25) == doctest::Approx(kl_gaussian(0.0, 0.25, 0.3, 0.5)));
}

TEST_CASE("kl_gaussian is nonnegative and zero only at the prior") {
    Rng rng(99);
    std::uniform_real_distribution<double> mu(-2, 2), sd(0.05, 2);
    for (int i = 0; i < 500; ++i) {
        double m = mu(rng), s = sd(rng), s0 = sd(rng);
        CHECK(kl_gaussian(m, s, 0.0, s0) >= 0.0);
    }
    CHECK(kl_gaussian(0.0, 0.7, 0.0, 0.7) == 0.0);
}

TEST_CASE("KL tape nodes match finite differences") {
    Rng rng(4);
    Parameter mu{"mu", random_normal(3, 4, 0.3, rng)};
    Parameter raw{"raw", random_normal(3, 4, 0.5, rng)};
    auto res = testing::check_gradients(
        [&](Tape& t) { return kl_gaussian_sum(t.parameter(mu), softplus(t.parameter(raw)), 0.0, 0.25); }, {&mu, &raw});
    CHECK(res.max_rel_error < 1e-4);
    auto res2 = testing::check_gradients(
        [&](Tape& t) { return kl_gaussian_sum_swapped(t.parameter(mu), softplus(t.parameter(raw)), 0.0, 0.25); },
        {&mu, &raw});
    CHECK(res2.max_rel_error < 1e-4);
}
