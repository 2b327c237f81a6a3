#include "etcn/kernels.hpp"
#include "etcn/reference.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <omp.h>

using namespace etcn;
using etcn::test::max_abs_diff;
using etcn::test::random_matrix;
using etcn::test::random_vector;
using etcn::test::uniform_int;

namespace {

Matrix sample_cols(const Matrix& m, int b, int steps) { return m.middleCols(b * steps, steps); }

}  // namespace

TEST_CASE("a hand-worked dilated causal convolution") {
    // Taps (1, 1) at dilation 1 sum each sample with its predecessor.
    Matrix x(1, 4);
    x << 1, 2, 3, 4;
    Matrix w(1, 2);
    w << 1, 1;
    const Matrix y = kernels::causal_conv(x, w, Vector(), 4, 2, 1);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(0, 1) == 3.0);
    CHECK(y(0, 2) == 5.0);
    CHECK(y(0, 3) == 7.0);

    // Taps (1, 1) at dilation 2 add the sample two steps back.
    const Matrix dilated = kernels::causal_conv(x, w, Vector(), 4, 2, 2);
    CHECK(dilated(0, 0) == 1.0);
    CHECK(dilated(0, 1) == 2.0);
    CHECK(dilated(0, 2) == 4.0);
    CHECK(dilated(0, 3) == 6.0);

    // Tap 1 alone at dilation 2 is a pure delay by two steps.
    w << 0, 1;
    const Matrix delayed = kernels::causal_conv(x, w, Vector(), 4, 2, 2);
    CHECK(delayed(0, 0) == 0.0);
    CHECK(delayed(0, 1) == 0.0);
    CHECK(delayed(0, 2) == 1.0);
    CHECK(delayed(0, 3) == 2.0);
}

TEST_CASE("batched convolution matches the loop-level reference") {
    Rng rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const int c_in = uniform_int(rng, 1, 5), c_out = uniform_int(rng, 1, 5);
        const int k = uniform_int(rng, 1, 4), d = uniform_int(rng, 1, 4);
        const int steps = uniform_int(rng, 1, 20), batch = uniform_int(rng, 1, 11);
        const Matrix x = random_matrix(rng, c_in, batch * steps);
        const Matrix w = random_matrix(rng, c_out, k * c_in);
        const Vector bias = trial % 2 ? random_vector(rng, c_out) : Vector();
        const Matrix y = kernels::causal_conv(x, w, bias, steps, k, d);
        for (int b = 0; b < batch; ++b) {
            const Matrix ref = reference::causal_conv(sample_cols(x, b, steps), w, bias, k, d);
            REQUIRE(max_abs_diff(sample_cols(y, b, steps), ref) < 1e-12);
        }
    }
}

TEST_CASE("col2im is the adjoint of im2col") {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const int c = uniform_int(rng, 1, 4), k = uniform_int(rng, 1, 4), d = uniform_int(rng, 1, 3);
        const int steps = uniform_int(rng, 1, 15), batch = uniform_int(rng, 1, 5);
        const Matrix x = random_matrix(rng, c, batch * steps);
        Matrix cols;
        kernels::im2col_causal(x, steps, k, d, cols);
        const Matrix g = random_matrix(rng, cols.rows(), cols.cols());
        Matrix back = Matrix::Zero(c, batch * steps);
        kernels::col2im_causal_add(g, steps, k, d, back);
        // <im2col(x), g> == <x, col2im(g)>
        CHECK((cols.array() * g.array()).sum() == doctest::Approx((x.array() * back.array()).sum()).epsilon(1e-12));
    }
}

TEST_CASE("convolution backward matches explicit products with the reference") {
    Rng rng(3);
    const int c_in = 3, c_out = 2, k = 3, d = 2, steps = 9, batch = 13;
    const Matrix x = random_matrix(rng, c_in, batch * steps);
    const Matrix w = random_matrix(rng, c_out, k * c_in);
    const Matrix g = random_matrix(rng, c_out, batch * steps);
    const auto back = kernels::causal_conv_backward(x, w, g, steps, k, d, true);

    // The convolution is linear in both x and w, so each gradient entry is
    // <g, conv(e_i)> for the matching unit perturbation.
    Matrix dw(c_out, k * c_in);
    for (int j = 0; j < dw.size(); ++j) {
        Matrix e = Matrix::Zero(c_out, k * c_in);
        e.data()[j] = 1.0;
        double s = 0.0;
        for (int b = 0; b < batch; ++b)
            s += (reference::causal_conv(sample_cols(x, b, steps), e, Vector(), k, d).array() *
                  sample_cols(g, b, steps).array()).sum();
        dw.data()[j] = s;
    }
    CHECK(max_abs_diff(back.d_weight, dw) < 1e-11);
    CHECK(max_abs_diff(back.d_bias, g.rowwise().sum()) < 1e-11);

    for (int trial = 0; trial < 20; ++trial) {
        const int ch = uniform_int(rng, 0, c_in - 1), col = uniform_int(rng, 0, batch * steps - 1);
        Matrix e = Matrix::Zero(c_in, steps);
        e(ch, col % steps) = 1.0;
        const double expect =
            (reference::causal_conv(e, w, Vector(), k, d).array() * sample_cols(g, col / steps, steps).array()).sum();
        CHECK(back.d_input(ch, col) == doctest::Approx(expect).epsilon(1e-12));
    }
    const auto no_bias = kernels::causal_conv_backward(x, w, g, steps, k, d, false, false);
    CHECK(no_bias.d_bias.size() == 0);
    CHECK(max_abs_diff(no_bias.d_weight, back.d_weight) == 0.0);
}

TEST_CASE("batched attention matches the reference and rows of alpha sum to one") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int c = uniform_int(rng, 1, 6), dk = uniform_int(rng, 1, 6);
        const int steps = uniform_int(rng, 1, 25), batch = uniform_int(rng, 1, 6);
        const Matrix x = random_matrix(rng, c, batch * steps);
        const Matrix wq = random_matrix(rng, dk, c), wk = random_matrix(rng, dk, c), wv = random_matrix(rng, c, c);
        const auto fwd = kernels::self_attention(x, wq, wk, wv, steps);
        for (int b = 0; b < batch; ++b) {
            Matrix alpha;
            const Matrix ref = reference::self_attention(sample_cols(x, b, steps), wq, wk, wv, &alpha);
            REQUIRE(max_abs_diff(sample_cols(fwd.output, b, steps), ref) < 1e-11);
            const Matrix a = fwd.alpha(static_cast<std::size_t>(b));
            REQUIRE(max_abs_diff(a, alpha) < 1e-12);
            CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
            CHECK(a.minCoeff() >= 0.0);
        }
        const auto eval = kernels::self_attention(x, wq, wk, wv, steps, false);
        CHECK(eval.weights_t.empty());
        CHECK(max_abs_diff(eval.output, fwd.output) == 0.0);
        CHECK_THROWS(kernels::self_attention_backward(x, wq, wk, wv, eval, fwd.output, steps));
    }
}

TEST_CASE("attention over a single step returns the value projection exactly") {
    Rng rng(5);
    const Matrix x = random_matrix(rng, 4, 7);  // 7 samples of one step
    const Matrix wq = random_matrix(rng, 3, 4), wk = random_matrix(rng, 3, 4), wv = random_matrix(rng, 4, 4);
    const auto fwd = kernels::self_attention(x, wq, wk, wv, 1);
    const Matrix v = wv * x;
    CHECK((fwd.output.array() == v.array()).all());
}

TEST_CASE("softmax helpers are stable and normalized") {
    Matrix m(2, 3);
    m << 1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0;
    Matrix cols = m.transpose();
    kernels::softmax_rows(m);
    kernels::softmax_cols(cols);
    CHECK(m.allFinite());
    CHECK(max_abs_diff(m, cols.transpose()) < 1e-15);
    CHECK(std::abs(m.row(0).sum() - 1.0) < 1e-12);
    CHECK(m(0, 2) > m(0, 1));
}

TEST_CASE("time average pools each sample separately") {
    Matrix x(1, 6);
    x << 1, 2, 3, 10, 20, 30;
    const Matrix p = kernels::time_average(x, 3);
    REQUIRE(p.cols() == 2);
    CHECK(p(0, 0) == 2.0);
    CHECK(p(0, 1) == 20.0);
}

TEST_CASE("results do not depend on the thread count") {
    Rng rng(6);
    const int c = 5, k = 3, d = 2, steps = 17, batch = 37;
    const Matrix x = random_matrix(rng, c, batch * steps);
    const Matrix w = random_matrix(rng, c, k * c);
    const Matrix g = random_matrix(rng, c, batch * steps);
    const Matrix wq = random_matrix(rng, 4, c), wk = random_matrix(rng, 4, c), wv = random_matrix(rng, c, c);

    auto run = [&] {
        auto conv = kernels::causal_conv_backward(x, w, g, steps, k, d, true);
        auto fwd = kernels::self_attention(x, wq, wk, wv, steps);
        auto att = kernels::self_attention_backward(x, wq, wk, wv, fwd, g, steps);
        return std::vector<Matrix>{conv.d_weight, conv.d_bias, conv.d_input, fwd.output,
                                   att.d_input, att.d_query_weight, att.d_key_weight, att.d_value_weight};
    };
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto one = run();
    omp_set_num_threads(4);
    const auto four = run();
    omp_set_num_threads(saved);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(max_abs_diff(one[i], four[i]) == 0.0);
}
