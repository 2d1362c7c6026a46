#include <doctest.h>

#include <cmath>
#include <functional>

#include "lcdiff/lcdn.hpp"
#include "lcdiff/losses.hpp"
#include "testutil.hpp"

using namespace lcdiff;
using DTape = ad::Tape<double>;
using DRef = DTape::Ref;
using DStore = ad::ParamStore<double>;
using LossFn = std::function<DRef(DTape&)>;

namespace {

double eval_loss(const LossFn& f) {
    DTape tape;
    return f(tape)->val[0];
}

void check_grads(DStore& store, const LossFn& f, int per_entry = 5, double tol = 1e-3,
                 double step = 1e-4) {
    store.zero_grad();
    {
        DTape tape;
        tape.backward(f(tape));
    }
    Rng rng(424242);
    for (auto& e : store.entries()) {
        const int n = static_cast<int>(e.value.size());
        for (int s = 0; s < std::min(per_entry, n); ++s) {
            const int idx = n <= per_entry ? s : rng.uniform_int(0, n - 1);
            const double orig = e.value[idx];
            e.value[idx] = orig + step;
            const double fp = eval_loss(f);
            e.value[idx] = orig - step;
            const double fm = eval_loss(f);
            e.value[idx] = orig;
            const double num = (fp - fm) / (2.0 * step);
            const double ana = e.grad[idx];
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
            INFO("entry ", e.name, " index ", idx, ": analytic ", ana, " numeric ", num);
            CHECK(std::abs(num - ana) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("LrmNet is the identity at initialization") {
    Rng rng(1);
    DStore store;
    lcdn::LrmNet<double> lrm(store, {8, 2}, rng);
    Tensor<double> x = testutil::random_tensor<double>(rng, {16, 16, 1});
    DTape tape;
    auto y = lrm.forward(tape, tape.constant(x));
    REQUIRE(y->val.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y->val[i] == x[i]);
}

TEST_CASE("LrmNet preserves shape after training-style perturbation") {
    Rng rng(2);
    DStore store;
    lcdn::LrmNet<double> lrm(store, {8, 2}, rng);
    for (auto& e : store.entries())
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += 0.01 * rng.normal();
    Tensor<double> x = testutil::random_tensor<double>(rng, {16, 12, 1});
    DTape tape;
    auto y = lrm.forward(tape, tape.constant(x));
    CHECK(y->val.dim(0) == 16);
    CHECK(y->val.dim(1) == 12);
    CHECK(y->val.dim(2) == 1);
    CHECK(all_finite(y->val));
}

TEST_CASE("LrmNet gradients match finite differences") {
    Rng rng(3);
    DStore store;
    lcdn::LrmNet<double> lrm(store, {4, 1}, rng);
    // nudge the zero tail so its gradient path is generic
    for (auto& e : store.entries())
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += 0.05 * rng.normal();
    Tensor<double> x = testutil::random_tensor<double>(rng, {8, 8, 1});
    Tensor<double> tgt = testutil::random_tensor<double>(rng, {8, 8, 1});
    check_grads(store, [&](DTape& t) {
        auto y = lrm.forward(t, t.constant(x));
        return t.mse(y, t.constant(tgt));
    }, 3);
}

TEST_CASE("LrmNet rejects bad inputs and reports exploding blocks") {
    Rng rng(4);
    DStore store;
    lcdn::LrmNet<double> lrm(store, {4, 2}, rng);
    DTape tape;
    CHECK_THROWS_AS(lrm.forward(tape, tape.constant(Tensor<double>({8, 8, 2}))), std::invalid_argument);

    Tensor<double> bad({8, 8, 1}, 0.5);
    bad.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(lrm.forward(tape, tape.constant(bad)), numeric_error);

    // a pathological expansion weight overflows the gated product -> diagnostic
    for (auto& e : store.entries())
        if (e.name.find("block0.expand.w") != std::string::npos)
            for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = 1e200;
    Tensor<double> x = testutil::random_tensor<double>(rng, {8, 8, 1}, 0.5, 1.0);
    try {
        DTape t2;
        lrm.forward(t2, t2.constant(x));
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("block") != std::string::npos);
    }
}

TEST_CASE("spatial_gate stays in (0,1), is constant on constant input, and grad-checks") {
    Rng rng(5);
    DStore store;
    const int w = store.add("w", testutil::random_tensor<double>(rng, {7, 7, 2, 1}, -0.2, 0.2));
    const int b = store.add("b", testutil::random_tensor<double>(rng, {1}, -0.1, 0.1));
    const int x = store.add("x", testutil::random_tensor<double>(rng, {10, 10, 3}, -1.0, 1.0));

    {
        DTape tape;
        auto gate = lcdn::spatial_gate(tape, tape.constant(store.at(x).value),
                                       tape.param(store.at(w)), tape.param(store.at(b)));
        REQUIRE(gate->val.dim(2) == 1);
        for (std::size_t i = 0; i < gate->val.size(); ++i) {
            CHECK(gate->val[i] > 0.0);
            CHECK(gate->val[i] < 1.0);
        }
        // constant field -> constant gate
        auto cgate = lcdn::spatial_gate(tape, tape.constant(Tensor<double>({10, 10, 3}, 0.4)),
                                        tape.param(store.at(w)), tape.param(store.at(b)));
        const double v0 = cgate->val.at(5, 5, 0);  // interior, away from padding
        for (int i = 3; i < 7; ++i)
            for (int j = 3; j < 7; ++j) CHECK(cgate->val.at(i, j, 0) == doctest::Approx(v0).epsilon(1e-12));
    }
    check_grads(store, [&](DTape& t) {
        auto gate = lcdn::spatial_gate(t, t.param(store.at(x)), t.param(store.at(w)), t.param(store.at(b)));
        return t.mean_all(t.mul(gate, gate));
    });
}

TEST_CASE("channel_gate is permutation-invariant over space and grad-checks") {
    Rng rng(6);
    DStore store;
    const int w1 = store.add("w1", testutil::random_tensor<double>(rng, {1, 1, 4, 2}, -0.5, 0.5));
    const int b1 = store.add("b1", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    const int w2 = store.add("w2", testutil::random_tensor<double>(rng, {1, 1, 2, 4}, -0.5, 0.5));
    const int b2 = store.add("b2", testutil::random_tensor<double>(rng, {4}, -0.1, 0.1));
    const int x = store.add("x", testutil::random_tensor<double>(rng, {4, 4, 4}, -1.0, 1.0));

    {
        DTape tape;
        auto gate = lcdn::channel_gate(tape, tape.constant(store.at(x).value), tape.param(store.at(w1)),
                                       tape.param(store.at(b1)), tape.param(store.at(w2)),
                                       tape.param(store.at(b2)), 2);
        REQUIRE(gate->val.dim(0) == 1);
        REQUIRE(gate->val.dim(2) == 4);
        for (std::size_t i = 0; i < gate->val.size(); ++i) {
            CHECK(gate->val[i] > 0.0);
            CHECK(gate->val[i] < 1.0);
        }
        // transpose the spatial grid; global pools see the same multiset
        Tensor<double> perm({4, 4, 4});
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                for (int c = 0; c < 4; ++c) perm.at(i, j, c) = store.at(x).value.at(j, i, c);
        auto gate2 = lcdn::channel_gate(tape, tape.constant(perm), tape.param(store.at(w1)),
                                        tape.param(store.at(b1)), tape.param(store.at(w2)),
                                        tape.param(store.at(b2)), 2);
        for (std::size_t i = 0; i < gate->val.size(); ++i)
            CHECK(gate->val[i] == doctest::Approx(gate2->val[i]).epsilon(1e-12));

        // channel count below the reduction ratio is rejected
        CHECK_THROWS(lcdn::channel_gate(tape, tape.constant(Tensor<double>({4, 4, 1}, 0.5)),
                                        tape.param(store.at(w1)), tape.param(store.at(b1)),
                                        tape.param(store.at(w2)), tape.param(store.at(b2)), 2));
    }
    check_grads(store, [&](DTape& t) {
        auto gate = lcdn::channel_gate(t, t.param(store.at(x)), t.param(store.at(w1)), t.param(store.at(b1)),
                                       t.param(store.at(w2)), t.param(store.at(b2)), 2);
        return t.mean_all(t.mul(gate, gate));
    });
}

TEST_CASE("fuse_bands honors the gate algebra") {
    Rng rng(7);
    Tensor<double> x = testutil::random_tensor<double>(rng, {4, 4, 3}, -1.0, 1.0);
    DTape tape;
    auto xv = tape.constant(x);

    auto half_l = tape.constant(Tensor<double>({4, 4, 1}, 0.5));
    auto half_h = tape.constant(Tensor<double>({1, 1, 3}, 0.5));
    auto y = lcdn::fuse_bands(tape, xv, half_l, half_h);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y->val[i] == doctest::Approx(x[i]).epsilon(1e-12));

    auto one_l = tape.constant(Tensor<double>({4, 4, 1}, 1.0));
    auto zero_h = tape.constant(Tensor<double>({1, 1, 3}, 0.0));
    auto y2 = lcdn::fuse_bands(tape, xv, one_l, zero_h);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y2->val[i] == doctest::Approx(x[i]).epsilon(1e-12));

    // random gates against a direct elementwise oracle
    Tensor<double> sl = testutil::random_tensor<double>(rng, {4, 4, 1});
    Tensor<double> sh = testutil::random_tensor<double>(rng, {1, 1, 3});
    auto y3 = lcdn::fuse_bands(tape, xv, tape.constant(sl), tape.constant(sh));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < 3; ++c) {
                const double expect = sl.at(i, j, 0) * x.at(i, j, c) + sh.at(0, 0, c) * x.at(i, j, c);
                CHECK(y3->val.at(i, j, c) == doctest::Approx(expect).epsilon(1e-12));
            }

    CHECK_THROWS(lcdn::fuse_bands(tape, xv, tape.constant(Tensor<double>({4, 4, 2})), half_h));
    CHECK_THROWS(lcdn::fuse_bands(tape, xv, half_l, tape.constant(Tensor<double>({1, 1, 2}))));
}

TEST_CASE("cross_attention rows are normalized and the single-token case is exact") {
    Rng rng(8);
    DStore store;
    const int h = 4, w = 4, d = h * w;
    const int wq = store.add("wq", testutil::random_tensor<double>(rng, {1, 1, 3, 2}, -0.5, 0.5));
    const int bq = store.add("bq", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    const int wk = store.add("wk", testutil::random_tensor<double>(rng, {1, 1, 2, 4}, -0.5, 0.5));
    const int bk = store.add("bk", testutil::random_tensor<double>(rng, {4}, -0.1, 0.1));
    const int wo = store.add("wo", testutil::random_tensor<double>(rng, {1, 1, 2, 2}, -0.5, 0.5));
    const int bo = store.add("bo", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));

    Tensor<double> f = testutil::random_tensor<double>(rng, {h, w, 3}, -1.0, 1.0);
    Tensor<double> x = testutil::random_tensor<double>(rng, {h, w, 2}, -1.0, 1.0);

    DTape tape;
    auto out = lcdn::cross_attention_full(tape, tape.constant(f), tape.constant(x),
                                          tape.param(store.at(wq)), tape.param(store.at(bq)),
                                          tape.param(store.at(wk)), tape.param(store.at(bk)),
                                          tape.param(store.at(wo)), tape.param(store.at(bo)), d);
    REQUIRE(out.alpha->val.dim(0) == 2);
    REQUIRE(out.alpha->val.dim(1) == 2);
    for (int i = 0; i < 2; ++i)
        CHECK(out.alpha->val.at(i, 0) + out.alpha->val.at(i, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out.z->val.dim(2) == 2);

    // single token: alpha = [[1]] regardless of logits
    DStore s1;
    const int wq1 = s1.add("wq", testutil::random_tensor<double>(rng, {1, 1, 3, 1}, -0.5, 0.5));
    const int bq1 = s1.add("bq", testutil::random_tensor<double>(rng, {1}, -0.1, 0.1));
    const int wk1 = s1.add("wk", testutil::random_tensor<double>(rng, {1, 1, 2, 2}, -0.5, 0.5));
    const int bk1 = s1.add("bk", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    const int wo1 = s1.add("wo", testutil::random_tensor<double>(rng, {1, 1, 1, 2}, -0.5, 0.5));
    const int bo1 = s1.add("bo", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    auto single = lcdn::cross_attention_full(tape, tape.constant(f), tape.constant(x),
                                             tape.param(s1.at(wq1)), tape.param(s1.at(bq1)),
                                             tape.param(s1.at(wk1)), tape.param(s1.at(bk1)),
                                             tape.param(s1.at(wo1)), tape.param(s1.at(bo1)), d);
    CHECK(single.alpha->val.size() == 1);
    CHECK(single.alpha->val[0] == doctest::Approx(1.0).epsilon(1e-12));

    // d must equal the flattened spatial size
    CHECK_THROWS(lcdn::cross_attention(tape, tape.constant(f), tape.constant(x), tape.param(store.at(wq)),
                                       tape.param(store.at(bq)), tape.param(store.at(wk)),
                                       tape.param(store.at(bk)), tape.param(store.at(wo)),
                                       tape.param(store.at(bo)), d + 1));
}

TEST_CASE("cross_attention matches a manual two-token computation") {
    // 2x1 spatial grid (d=2), identity-ish 1x1 convs chosen so every product is
    // easy to carry through by hand.
    DTape tape;
    Tensor<double> f({2, 1, 2});
    f.at(0, 0, 0) = 1.0;
    f.at(1, 0, 0) = 2.0;
    f.at(0, 0, 1) = -1.0;
    f.at(1, 0, 1) = 0.5;
    Tensor<double> x({2, 1, 2});
    x.at(0, 0, 0) = 0.3;
    x.at(1, 0, 0) = 0.7;
    x.at(0, 0, 1) = -0.2;
    x.at(1, 0, 1) = 0.4;

    // W_q = identity on 2 channels; W_k maps x -> (K=x, V=x); W_o = identity
    Tensor<double> wq({1, 1, 2, 2});
    wq.at(0, 0, 0, 0) = 1.0;
    wq.at(0, 0, 1, 1) = 1.0;
    Tensor<double> wk({1, 1, 2, 4});
    wk.at(0, 0, 0, 0) = 1.0;  // K ch0 <- x ch0
    wk.at(0, 0, 1, 1) = 1.0;  // K ch1 <- x ch1
    wk.at(0, 0, 0, 2) = 1.0;  // V ch0 <- x ch0
    wk.at(0, 0, 1, 3) = 1.0;  // V ch1 <- x ch1
    Tensor<double> wo({1, 1, 2, 2});
    wo.at(0, 0, 0, 0) = 1.0;
    wo.at(0, 0, 1, 1) = 1.0;
    Tensor<double> zero2({2});

    auto out = lcdn::cross_attention_full(tape, tape.constant(f), tape.constant(x), tape.constant(wq),
                                          tape.constant(zero2), tape.constant(wk),
                                          tape.constant(Tensor<double>({4})), tape.constant(wo),
                                          tape.constant(zero2), 2);

    // manual: Q rows = channels of f over space: q0=(1,2), q1=(-1,0.5)
    //         K rows = channels of x:            k0=(0.3,0.7), k1=(-0.2,0.4)
    const double inv_sqrt_d = 1.0 / std::sqrt(2.0);
    const double l00 = (1 * 0.3 + 2 * 0.7) * inv_sqrt_d;
    const double l01 = (1 * -0.2 + 2 * 0.4) * inv_sqrt_d;
    const double l10 = (-1 * 0.3 + 0.5 * 0.7) * inv_sqrt_d;
    const double l11 = (-1 * -0.2 + 0.5 * 0.4) * inv_sqrt_d;
    const double a00 = std::exp(l00) / (std::exp(l00) + std::exp(l01));
    const double a01 = 1.0 - a00;
    const double a10 = std::exp(l10) / (std::exp(l10) + std::exp(l11));
    const double a11 = 1.0 - a10;
    CHECK(out.alpha->val.at(0, 0) == doctest::Approx(a00).epsilon(1e-9));
    CHECK(out.alpha->val.at(1, 1) == doctest::Approx(a11).epsilon(1e-9));

    // z rows (pre-W_o) = alpha @ V, V rows = x channels; W_o identity keeps them
    const double z00 = a00 * 0.3 + a01 * -0.2;  // token 0, spatial 0
    const double z01 = a00 * 0.7 + a01 * 0.4;   // token 0, spatial 1
    const double z10 = a10 * 0.3 + a11 * -0.2;
    const double z11 = a10 * 0.7 + a11 * 0.4;
    CHECK(out.z->val.at(0, 0, 0) == doctest::Approx(z00).epsilon(1e-9));
    CHECK(out.z->val.at(1, 0, 0) == doctest::Approx(z01).epsilon(1e-9));
    CHECK(out.z->val.at(0, 0, 1) == doctest::Approx(z10).epsilon(1e-9));
    CHECK(out.z->val.at(1, 0, 1) == doctest::Approx(z11).epsilon(1e-9));
}

TEST_CASE("cross_attention gradients match finite differences") {
    Rng rng(9);
    DStore store;
    const int h = 4, w = 4, d = h * w;
    const int wq = store.add("wq", testutil::random_tensor<double>(rng, {1, 1, 3, 2}, -0.5, 0.5));
    const int bq = store.add("bq", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    const int wk = store.add("wk", testutil::random_tensor<double>(rng, {1, 1, 2, 4}, -0.5, 0.5));
    const int bk = store.add("bk", testutil::random_tensor<double>(rng, {4}, -0.1, 0.1));
    const int wo = store.add("wo", testutil::random_tensor<double>(rng, {1, 1, 2, 2}, -0.5, 0.5));
    const int bo = store.add("bo", testutil::random_tensor<double>(rng, {2}, -0.1, 0.1));
    Tensor<double> f = testutil::random_tensor<double>(rng, {h, w, 3}, -1.0, 1.0);
    Tensor<double> x = testutil::random_tensor<double>(rng, {h, w, 2}, -1.0, 1.0);
    check_grads(store, [&](DTape& t) {
        auto z = lcdn::cross_attention(t, t.constant(f), t.constant(x), t.param(store.at(wq)),
                                       t.param(store.at(bq)), t.param(store.at(wk)), t.param(store.at(bk)),
                                       t.param(store.at(wo)), t.param(store.at(bo)), d);
        return t.mean_all(t.mul(z, z));
    });
}

TEST_CASE("FcrmNet starts as the identity modulation and keeps shape") {
    Rng rng(10);
    DStore store;
    lcdn::FcrmConfig cfg;
    cfg.width = 8;
    cfg.tokens = 4;
    cfg.d = 12 * 12;
    lcdn::FcrmNet<double> fcrm(store, cfg, rng);
    auto masks = freqlab::make_masks(12, 12, 0.25);
    Tensor<double> x = testutil::random_tensor<double>(rng, {12, 12, 2});
    DTape tape;
    auto y = fcrm.forward(tape, tape.constant(x), masks);
    REQUIRE(y->val.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y->val[i] == x[i]);

    CHECK_THROWS(fcrm.forward(tape, tape.constant(Tensor<double>({12, 12, 3})), masks));
}

TEST_CASE("FcrmNet rejects width below the reduction ratio") {
    Rng rng(11);
    DStore store;
    lcdn::FcrmConfig cfg;
    cfg.width = 2;  // < reduction 4
    CHECK_THROWS(lcdn::FcrmNet<double>(store, cfg, rng));
}

TEST_CASE("FcrmNet end-to-end gradients match finite differences") {
    Rng rng(12);
    DStore store;
    lcdn::FcrmConfig cfg;
    cfg.width = 8;
    cfg.tokens = 4;
    cfg.d = 8 * 8;
    lcdn::FcrmNet<double> fcrm(store, cfg, rng);
    // perturb the identity-initialized output projection for generic gradients
    for (auto& e : store.entries())
        for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] += 0.05 * rng.normal();
    auto masks = freqlab::make_masks(8, 8, 0.25);
    Tensor<double> x = testutil::random_tensor<double>(rng, {8, 8, 2});
    Tensor<double> tgt = testutil::random_tensor<double>(rng, {8, 8, 2});
    check_grads(store, [&](DTape& t) {
        auto y = fcrm.forward(t, t.constant(x), masks);
        return t.mse(y, t.constant(tgt));
    }, 3);
}

TEST_CASE("restoration_loss obeys its algebraic anchors") {
    Rng rng(13);
    Tensor<double> x = testutil::random_tensor<double>(rng, {12, 12, 3}, 0.1, 0.9);
    DTape tape;
    auto xv = tape.constant(x);

    LossWeights defaults;
    CHECK(defaults.eta == 1.0);
    CHECK(defaults.theta == 0.5);
    CHECK(defaults.lambda == 0.1);

    auto zero = ad::restoration_loss(tape, xv, tape.constant(x), defaults);
    CHECK(zero->val[0] == doctest::Approx(0.0).epsilon(1e-9));

    Tensor<double> shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.1;
    LossWeights l1_only{1.0, 0.0, 0.0};
    auto off = ad::restoration_loss(tape, xv, tape.constant(shifted), l1_only);
    CHECK(off->val[0] == doctest::Approx(0.1).epsilon(1e-9));

    auto full = ad::restoration_loss(tape, xv, tape.constant(shifted), defaults);
    CHECK(full->val[0] >= 0.0);
    CHECK(full->val[0] > off->val[0]);  // extra nonnegative terms

    CHECK_THROWS(ad::restoration_loss(tape, xv, tape.constant(Tensor<double>({12, 14, 3})), defaults));
}

TEST_CASE("LcdnModel recomposes identity output at initialization") {
    Rng rng(14);
    DStore store;
    lcdn::LcdnConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.lrm = {8, 2};
    cfg.fcrm.width = 8;
    cfg.fcrm.tokens = 4;
    lcdn::LcdnModel<double> model(store, cfg, rng);
    CHECK(model.config().fcrm.d == 16 * 16);  // fixed up from the spatial size

    Tensor<double> lum = testutil::random_tensor<double>(rng, {16, 16, 1});
    Tensor<double> chrom = testutil::random_tensor<double>(rng, {16, 16, 2});
    DTape tape;
    auto out = model.forward(tape, lum, chrom);
    REQUIRE(out.ycc->val.dim(2) == 3);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            CHECK(out.ycc->val.at(i, j, 0) == lum.at(i, j, 0));
            CHECK(out.ycc->val.at(i, j, 1) == chrom.at(i, j, 0));
            CHECK(out.ycc->val.at(i, j, 2) == chrom.at(i, j, 1));
        }

    CHECK_THROWS(model.forward(tape, Tensor<double>({8, 8, 1}), Tensor<double>({8, 8, 2})));
}
