// Copyright 2026 The gpad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "gpad/error.hpp"
#include "gpad/models.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace gpad;
using namespace gpad::testing;

namespace {

Kernel test_kernel(std::size_t d)
{
    return Kernel(Kernel::Kind::rbf, d, {.variance = 1.3, .lengthscale = 0.7, .ard = d > 1});
}

Matrix dense_matmul_t(const Matrix& a, const Matrix& b) { return naive_matmul(a, naive_transpose(b)); }

// KL[N(m, L L^T) || N(0, K)] by explicit inverse and elimination determinants.
double dense_kl(const Matrix& m, const Matrix& l, const Matrix& k)
{
    const std::size_t n = m.rows();
    const Matrix s = dense_matmul_t(l, l);
    const DenseInverse ki = gauss_jordan(k);
    const DenseInverse si = gauss_jordan(s);
    const Matrix kis = naive_matmul(ki.inverse, s);
    double tr = 0.0;
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        tr += kis(i, i);
        for (std::size_t j = 0; j < n; ++j) {
            quad += m[i] * ki.inverse(i, j) * m[j];
        }
    }
    return 0.5 * (tr + quad - static_cast<double>(n) + ki.log_abs_det - si.log_abs_det);
}

Matrix column(const Matrix& a, std::size_t c)
{
    Matrix out(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        out[i] = a(i, c);
    }
    return out;
}

struct Numeric {
    Matrix mean;
    Matrix var;
    std::vector<Matrix> cov;
};

Numeric run_conditional(Kernel& k, const Matrix& xnew, const Matrix& z, const Matrix& q_mu,
                        const std::vector<Matrix>& q_sqrt, bool whiten, bool full_cov = false)
{
    Tape t;
    Binding b(t, k.params(), false);
    std::vector<Var> factors;
    for (const Matrix& f : q_sqrt) {
        factors.push_back(ad::constant(t, f));
    }
    ConditionalResult r = conditional(b, ad::constant(t, xnew), ad::constant(t, z), k,
                                      ad::constant(t, q_mu), factors, whiten, full_cov);
    Numeric out{r.mean.value(), r.var.value(), {}};
    for (const Var& c : r.cov) {
        out.cov.push_back(c.value());
    }
    return out;
}

double numeric_kl(const Matrix& q_mu, const std::vector<Matrix>& q_sqrt)
{
    Tape t;
    std::vector<Var> factors;
    for (const Matrix& f : q_sqrt) {
        factors.push_back(ad::constant(t, f));
    }
    return gauss_kl(ad::constant(t, q_mu), factors).value().item();
}

double gpr_value(Dataset data, Kernel k, double noise)
{
    GPR m(std::move(data), std::move(k), Likelihood::gaussian(noise));
    return m.evaluate(nullptr, false).value;
}

void randomize_q(VariationalState& q, Rng& rng)
{
    const std::size_t m = q.q_mu().shape().rows;
    const std::size_t latents = q.q_mu().shape().cols;
    q.q_mu().set_value(random_matrix(rng, m, latents, 0.7));
    std::vector<Matrix> f;
    for (std::size_t l = 0; l < latents; ++l) {
        Matrix low = random_lower(rng, m);
        for (double& x : low.values()) {
            x *= 0.4;
        }
        f.push_back(low);
    }
    q.set_factors(f);
}

} // namespace

TEST(GaussKL, Examples)
{
    EXPECT_EQ(numeric_kl(Matrix(3, 1), {Matrix::identity(3)}), 0.0);
    EXPECT_NEAR(numeric_kl(Matrix{{1.0}}, {Matrix{{1.0}}}), 0.5, 1e-15);
}

TEST(GaussKL, MatchesDenseFormula)
{
    Rng rng(1);
    const Matrix q_mu = random_matrix(rng, 5, 2);
    const std::vector<Matrix> q_sqrt = {random_lower(rng, 5), random_lower(rng, 5)};
    const Matrix eye = Matrix::identity(5);
    const double expected = dense_kl(column(q_mu, 0), q_sqrt[0], eye) +
                            dense_kl(column(q_mu, 1), q_sqrt[1], eye);
    EXPECT_NEAR(numeric_kl(q_mu, q_sqrt), expected, 1e-10);

    // Against a non-identity reference.
    const Matrix k = random_spd(rng, 5);
    Tape t;
    Var p = ad::cholesky(ad::constant(t, k));
    Var kl = gauss_kl(ad::constant(t, q_mu),
                      {ad::constant(t, q_sqrt[0]), ad::constant(t, q_sqrt[1])}, p);
    const double dense = dense_kl(column(q_mu, 0), q_sqrt[0], k) + dense_kl(column(q_mu, 1), q_sqrt[1], k);
    EXPECT_NEAR(kl.value().item(), dense, 1e-10);
}

TEST(GaussKL, RejectsBadFactors)
{
    Matrix bad = Matrix::identity(2);
    bad(1, 1) = 0.0;
    EXPECT_THROW(numeric_kl(Matrix(2, 1), {bad}), ValueError);
    EXPECT_THROW(numeric_kl(Matrix(2, 2), {Matrix::identity(2)}), ShapeError);
}

TEST(JitteredCholesky, EscalatesThenFails)
{
    Tape t;
    // Rank one: needs jitter but factors after it.
    Var k = ad::constant(t, Matrix{{1.0, 1.0}, {1.0, 1.0}});
    const Matrix l = jittered_cholesky(k).value();
    EXPECT_GT(l(1, 1), 0.0);
    EXPECT_LT(l(1, 1), 0.1);
    Var neg = ad::constant(t, Matrix{{1.0, 0.0}, {0.0, -1.0}});
    EXPECT_THROW(jittered_cholesky(neg), CholeskyError);
}

TEST(Conditional, PriorIdentityAtInducingInputs)
{
    Rng rng(2);
    Kernel k = test_kernel(2);
    const Matrix z = random_matrix(rng, 6, 2);
    const Numeric r = run_conditional(k, z, z, Matrix(6, 1), {Matrix::identity(6)}, true);
    const Matrix kd = k.kdiag(z);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(r.mean[i], 0.0, 1e-12);
        EXPECT_NEAR(r.var[i], kd[i], 1e-8);
    }
}

TEST(Conditional, PointMassLimit)
{
    Rng rng(3);
    Kernel k = test_kernel(1);
    const Matrix z = random_matrix(rng, 4, 1);
    const Matrix xs = random_matrix(rng, 7, 1);
    const Matrix q_mu = random_matrix(rng, 4, 1);
    const Numeric delta = run_conditional(k, xs, z, q_mu, {}, true);
    Matrix tiny = linalg::scaled(Matrix::identity(4), 1e-9);
    const Numeric near = run_conditional(k, xs, z, q_mu, {tiny}, true);
    EXPECT_LE(linalg::max_abs_diff(delta.mean, near.mean), 1e-15);
    EXPECT_LE(linalg::max_abs_diff(delta.var, near.var), 1e-15);

    // kdiag - diag(Kxz Kzz^-1 Kzx) with a dense inverse.
    const Matrix kzz = k.kmatrix(z);
    const Matrix kzx = k.kmatrix(z, &xs);
    const Matrix q = naive_matmul(naive_transpose(kzx), naive_matmul(gauss_jordan(kzz).inverse, kzx));
    const Matrix kd = k.kdiag(xs);
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_NEAR(delta.var[i], kd[i] - q(i, i), 1e-10);
    }
}

TEST(Conditional, WhitenedAndDenseParameterizationsAgree)
{
    Rng rng(4);
    Kernel k = test_kernel(2);
    const Matrix z = random_matrix(rng, 5, 2);
    const Matrix xs = random_matrix(rng, 8, 2);
    const Matrix v_mu = random_matrix(rng, 5, 2);
    const std::vector<Matrix> v_sqrt = {random_lower(rng, 5), random_lower(rng, 5)};
    const Numeric white = run_conditional(k, xs, z, v_mu, v_sqrt, true, true);

    const Matrix luu = *linalg::try_cholesky(k.kmatrix(z));
    const Matrix u_mu = naive_matmul(luu, v_mu);
    const std::vector<Matrix> u_sqrt = {naive_matmul(luu, v_sqrt[0]), naive_matmul(luu, v_sqrt[1])};
    const Numeric plain = run_conditional(k, xs, z, u_mu, u_sqrt, false, true);
    EXPECT_LE(linalg::max_abs_diff(white.mean, plain.mean), 1e-8);
    EXPECT_LE(linalg::max_abs_diff(white.var, plain.var), 1e-8);

    // Dense formula for the non-whitened form.
    const Matrix kzz_inv = gauss_jordan(k.kmatrix(z)).inverse;
    const Matrix kzx = k.kmatrix(z, &xs);
    const Matrix proj = naive_matmul(kzz_inv, kzx); // m x t
    const Matrix kxx = k.kmatrix(xs);
    for (std::size_t l = 0; l < 2; ++l) {
        const Matrix s = dense_matmul_t(u_sqrt[l], u_sqrt[l]);
        const Matrix cov = linalg::add(
            linalg::subtract(kxx, naive_matmul(naive_transpose(kzx), proj)),
            naive_matmul(naive_transpose(proj), naive_matmul(s, proj)));
        const Matrix mean = naive_matmul(naive_transpose(proj), column(u_mu, l));
        for (std::size_t i = 0; i < 8; ++i) {
            EXPECT_NEAR(plain.mean(i, l), mean[i], 1e-8);
            EXPECT_NEAR(plain.var(i, l), cov(i, i), 1e-8);
            EXPECT_NEAR(white.cov[l](i, i), white.var(i, l), 1e-10);
        }
        EXPECT_LE(linalg::max_abs_diff(plain.cov[l], cov), 1e-8);
    }
}

TEST(GPR, SinglePointExample)
{
    Dataset data{Matrix{{0.0}}, Matrix{{0.0}}};
    EXPECT_NEAR(gpr_value(data, Kernel(Kernel::Kind::rbf, 1), 1.0), -0.5 * std::log(4 * std::numbers::pi),
                1e-12);
    EXPECT_NEAR(gpr_value(data, Kernel(Kernel::Kind::rbf, 1), 1.0), -1.265512, 1e-6);
}

TEST(GPR, MatchesDenseOracle)
{
    Rng rng(5);
    std::uniform_int_distribution<std::size_t> size(1, 30);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = size(rng);
        Dataset data = smooth_regression(rng, n, 2);
        Kernel k = test_kernel(2);
        const double noise = 0.05 + 0.5 * std::uniform_real_distribution<double>()(rng);
        Matrix cov = k.kmatrix(data.x);
        const Matrix noise_mat = linalg::scaled(Matrix::identity(n), Likelihood::gaussian(noise).variance().value().item());
        cov = linalg::add(cov, noise_mat);
        const double oracle = dense_mvn_logpdf(data.y, cov);
        const double value = gpr_value(data, k, noise);
        EXPECT_LE(std::abs(value - oracle), 1e-8 * std::abs(oracle)) << "n=" << n;
    }
}

TEST(GPR, InterpolatesAsNoiseVanishes)
{
    // Well separated inputs keep K well conditioned, so sigma^2 alpha is tiny.
    Dataset data{Matrix(6, 1), Matrix(6, 1)};
    for (std::size_t i = 0; i < 6; ++i) {
        data.x[i] = -1.5 + 0.6 * static_cast<double>(i);
        data.y[i] = std::sin(3.0 * data.x[i]);
    }
    GPR m(data, Kernel(Kernel::Kind::rbf, 1, {.variance = 10.0, .lengthscale = 0.5}), Likelihood::gaussian(1e-5));
    m.likelihood().variance().set_value(Matrix{{1.5e-6}});
    const Predictive p = m.predict_f(data.x);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(p.mean[i], data.y[i], 1e-6);
    }
    const Predictive py = m.predict_y(data.x);
    EXPECT_NEAR(py.variance[0], p.variance[0] + 1.5e-6, 1e-12);
    const FullPredictive full = m.predict_f_full(data.x);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(full.cov[0](i, i), p.variance[i], 1e-10);
    }
}

TEST(SGPR, EqualsGprWhenInducingOnData)
{
    Rng rng(7);
    Dataset data = smooth_regression(rng, 30, 2);
    SGPR s(data, test_kernel(2), Likelihood::gaussian(0.1), {.z = data.x});
    const double g = gpr_value(data, test_kernel(2), 0.1);
    EXPECT_NEAR(s.evaluate(nullptr, false).value, g, 1e-6);

    // Predictions collapse to the exact posterior too.
    GPR exact(data, test_kernel(2), Likelihood::gaussian(0.1));
    const Matrix xs = random_matrix(rng, 5, 2);
    EXPECT_LE(linalg::max_abs_diff(s.predict_f(xs).mean, exact.predict_f(xs).mean), 1e-6);
    EXPECT_LE(linalg::max_abs_diff(s.predict_f(xs).variance, exact.predict_f(xs).variance), 1e-6);
    const FullPredictive full = s.predict_f_full(xs);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(full.cov[0](i, i), s.predict_f(xs).variance[i], 1e-10);
    }
}

TEST(SGPR, LowerBoundAndDenseFormula)
{
    Rng rng(8);
    Dataset data = smooth_regression(rng, 30, 2);
    SGPR s(data, test_kernel(2), Likelihood::gaussian(0.1), {.inducing = 10});
    const double bound = s.evaluate(nullptr, false).value;
    EXPECT_LE(bound, gpr_value(data, test_kernel(2), 0.1) + 1e-8);

    Kernel k = test_kernel(2);
    const Matrix z = s.z().value();
    const Matrix kzx = k.kmatrix(z, &data.x);
    const Matrix q = naive_matmul(naive_transpose(kzx), naive_matmul(gauss_jordan(k.kmatrix(z)).inverse, kzx));
    const double sigma2 = s.likelihood().variance().value().item();
    const Matrix cov = linalg::add(q, linalg::scaled(Matrix::identity(30), sigma2));
    const double trace_gap = linalg::trace(k.kmatrix(data.x)) - linalg::trace(q);
    const double naive = dense_mvn_logpdf(data.y, cov) - 0.5 / sigma2 * trace_gap;
    EXPECT_NEAR(bound, naive, 1e-8);
}

TEST(SGPR, NestedInducingSetsAreMonotone)
{
    Rng rng(9);
    Dataset data = smooth_regression(rng, 25, 1);
    double previous = -INFINITY;
    for (std::size_t m : {2u, 4u, 8u, 16u}) {
        // Row subsets i * 25 / m are nested for these m only when they divide;
        // build the nested sets explicitly.
        Matrix z(m, 1);
        for (std::size_t i = 0; i < m; ++i) {
            z(i, 0) = data.x(i, 0);
        }
        SGPR s(data, test_kernel(1), Likelihood::gaussian(0.1), {.z = z});
        const double bound = s.evaluate(nullptr, false).value;
        EXPECT_GE(bound, previous - 1e-8) << "m=" << m;
        previous = bound;
    }
}

TEST(SVGP, PriorStateHasZeroKl)
{
    Rng rng(10);
    Dataset data = smooth_regression(rng, 12, 1);
    SVGP m(data, test_kernel(1), Likelihood::gaussian(0.2), {.inducing = 4});
    // q = prior: ELBO is the expected log likelihood under prior marginals.
    Kernel k = test_kernel(1);
    const Matrix kd = k.kdiag(data.x);
    const Likelihood lik = Likelihood::gaussian(0.2);
    double expected = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
        const double mu[] = {0.0};
        const double v[] = {kd[i]};
        expected += lik.variational_expectation(mu, v, data.y[i]);
    }
    EXPECT_NEAR(m.evaluate(nullptr, false).value, expected, 1e-8);
    EXPECT_EQ(numeric_kl(m.q().q_mu().value(), m.q().factor_values()), 0.0);
}

TEST(SVGP, BatchesScaleAndAreDeterministic)
{
    Rng rng(11);
    Dataset data = smooth_regression(rng, 20, 2);
    SVGP m(data, test_kernel(2), Likelihood::gaussian(0.2), {.inducing = 5});
    perturb(m, rng);
    const Evaluation a = m.evaluate();
    const Evaluation b = m.evaluate();
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.gradient, b.gradient);

    std::vector<std::size_t> all(20);
    for (std::size_t i = 0; i < 20; ++i) {
        all[i] = i;
    }
    EXPECT_EQ(m.evaluate(&all).value, a.value);

    // Two halves average to the full objective.
    std::vector<std::size_t> even, odd;
    for (std::size_t i = 0; i < 20; ++i) {
        (i % 2 ? odd : even).push_back(i);
    }
    EXPECT_NEAR(0.5 * (m.evaluate(&even).value + m.evaluate(&odd).value), a.value, 1e-10);

    std::vector<std::size_t> empty;
    EXPECT_THROW(m.evaluate(&empty), ValueError);
    std::vector<std::size_t> bad = {25};
    EXPECT_THROW(m.evaluate(&bad), ValueError);
}

TEST(SVGP, NonWhitenedElboMatchesWhitenedReparameterization)
{
    Rng rng(12);
    Dataset data = smooth_regression(rng, 15, 1);
    SVGP w(data, test_kernel(1), Likelihood::gaussian(0.2), {.inducing = 5});
    randomize_q(w.q(), rng);
    SVGP p(data, test_kernel(1), Likelihood::gaussian(0.2), {.inducing = 5, .whiten = false});
    Kernel k = test_kernel(1);
    const Matrix luu = *linalg::try_cholesky(k.kmatrix(w.z().value()));
    p.q().q_mu().set_value(naive_matmul(luu, w.q().q_mu().value()));
    p.q().set_factors({naive_matmul(luu, w.q().factor_values()[0])});
    EXPECT_NEAR(w.evaluate(nullptr, false).value, p.evaluate(nullptr, false).value, 1e-8);
}

TEST(VGP, PriorStateIsExpectedLogLikelihood)
{
    Rng rng(13);
    const Likelihood lik = Likelihood::bernoulli();
    Dataset data = labelled(rng, 10, 1, lik);
    VGP m(data, test_kernel(1), lik);
    Kernel k = test_kernel(1);
    const Matrix kd = k.kdiag(data.x);
    double expected = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
        const double mu[] = {0.0};
        const double v[] = {kd[i]};
        expected += lik.variational_expectation(mu, v, data.y[i]);
    }
    EXPECT_NEAR(m.evaluate(nullptr, false).value, expected, 1e-8);
}

TEST(VGP, MarginalsMatchConditionalWithDataAsInducing)
{
    Rng rng(14);
    Dataset data = smooth_regression(rng, 9, 1);
    VGP m(data, test_kernel(1), Likelihood::gaussian(0.3));
    randomize_q(m.q(), rng);
    Kernel k = test_kernel(1);
    const Numeric r = run_conditional(k, data.x, data.x, m.q().q_mu().value(),
                                      m.q().factor_values(), true);
    const Predictive p = m.predict_f(data.x);
    EXPECT_LE(linalg::max_abs_diff(p.mean, r.mean), 1e-12);
    // Objective data term uses the same marginals.
    const Likelihood lik = Likelihood::gaussian(0.3);
    double ve = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        const double mu[] = {r.mean[i]};
        const double v[] = {std::max(r.var[i], 0.0)};
        ve += lik.variational_expectation(mu, v, data.y[i]);
    }
    const double kl = numeric_kl(m.q().q_mu().value(), m.q().factor_values());
    EXPECT_NEAR(m.evaluate(nullptr, false).value, ve - kl, 1e-8);
}

TEST(GPMC, ZeroLatentsGiveNoiseDensity)
{
    Rng rng(15);
    Dataset data = smooth_regression(rng, 6, 1);
    GPMC m(data, test_kernel(1), Likelihood::gaussian(0.4));
    for (Param* p : m.params()) {
        if (p->name() != "v") {
            p->set_prior(Prior::gamma(2.0, 1.0));
        }
    }
    const double s2 = m.likelihood().variance().value().item();
    double expected = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        expected += -0.5 * std::log(2 * std::numbers::pi * s2) - 0.5 * data.y[i] * data.y[i] / s2;
    }
    expected += -0.5 * 6 * std::log(2 * std::numbers::pi);
    for (Param* p : m.params()) {
        if (p->prior()) {
            expected += p->prior()->log_density(p->value()) + log_jacobian(p->transform(), p->unconstrained());
        }
    }
    EXPECT_NEAR(m.evaluate(nullptr, false).value, expected, 1e-10);
}

TEST(GPMC, RequiresPriorsOnSampledParams)
{
    Rng rng(16);
    GPMC m(smooth_regression(rng, 4, 1), test_kernel(1), Likelihood::gaussian());
    EXPECT_THROW(m.evaluate(), ValueError);
    for (Param* p : m.params()) {
        if (p->name() != "v") {
            p->set_fixed(true);
        }
    }
    EXPECT_NO_THROW(m.evaluate());
}

TEST(SGPMC, AgreesWithGpmcWhenInducingOnData)
{
    Rng rng(17);
    Dataset data = smooth_regression(rng, 8, 1);
    GPMC g(data, test_kernel(1), Likelihood::gaussian(0.3));
    SGPMC s(data, test_kernel(1), Likelihood::gaussian(0.3), {.z = data.x});
    const Matrix v = random_matrix(rng, 8, 1);
    g.v().set_value(v);
    s.v().set_value(v);
    for (Model* m : {static_cast<Model*>(&g), static_cast<Model*>(&s)}) {
        for (Param* p : m->params()) {
            if (p->name() != "v" && !p->fixed()) {
                p->set_prior(Prior::gaussian(0.0, 4.0));
            }
        }
        // The identity is exact algebra; always-on jitter perturbs the two
        // targets differently.
        EXPECT_EQ(m->jitter(), Jitter::always);
        m->set_jitter(Jitter::exact_first);
    }
    EXPECT_NEAR(g.evaluate(nullptr, false).value, s.evaluate(nullptr, false).value, 1e-8);
    EXPECT_TRUE(s.z().fixed());
}

TEST(Jitter, PolicyNamesAndPersistence)
{
    EXPECT_EQ(parse_jitter(jitter_name(Jitter::always)), Jitter::always);
    EXPECT_EQ(parse_jitter("exact_first"), Jitter::exact_first);
    EXPECT_THROW(parse_jitter("sometimes"), ValueError);
    Rng rng(21);
    GPMC g(smooth_regression(rng, 5, 1), test_kernel(1), Likelihood::gaussian());
    g.set_jitter(Jitter::exact_first);
    EXPECT_EQ(model_from_json(g.to_json())->jitter(), Jitter::exact_first);
    GPR r(smooth_regression(rng, 5, 1), test_kernel(1), Likelihood::gaussian());
    EXPECT_EQ(r.jitter(), Jitter::exact_first);
}

TEST(Jitter, AlwaysPolicyIsSmoothOnSingularGram)
{
    // 40 points on [0, 1] with a unit lengthscale: K is numerically singular,
    // so the exact factorization fails and the regularized one is used.
    Dataset data{Matrix(40, 1), Matrix(40, 1)};
    for (std::size_t i = 0; i < 40; ++i) {
        data.x[i] = static_cast<double>(i) / 39.0;
    }
    Tape t;
    Kernel k(Kernel::Kind::rbf, 1);
    Binding b(t, k.params());
    Var kxx = k.K(b, ad::constant(t, data.x));
    ASSERT_FALSE(linalg::try_cholesky(kxx.value()));
    const Matrix l = jittered_cholesky(kxx, Jitter::always).value();
    const Matrix e = jittered_cholesky(kxx, Jitter::exact_first).value();
    EXPECT_EQ(l, e);

    Rng rng(22);
    GPMC g(data, k, Likelihood::gaussian(0.2));
    for (Param* p : g.params()) {
        if (p->name() != "v") {
            p->set_prior(Prior::gamma(2.0, 2.0));
        }
    }
    perturb(g, rng, 0.05);
    EXPECT_LE(model_gradient_mismatch(g), 1.0);
}

TEST(Models, GradientsMatchFiniteDifferences)
{
    Rng rng(18);
    const std::vector<Likelihood> liks = {Likelihood::gaussian(0.3), Likelihood::bernoulli(),
                                          Likelihood::poisson(), Likelihood::multiclass(3)};
    for (ModelKind kind : {ModelKind::gpr, ModelKind::sgpr, ModelKind::svgp, ModelKind::vgp,
                           ModelKind::gpmc, ModelKind::sgpmc}) {
        for (const Likelihood& lik : liks) {
            if ((kind == ModelKind::gpr || kind == ModelKind::sgpr) &&
                lik.kind() != Likelihood::Kind::gaussian) {
                continue;
            }
            Dataset data = labelled(rng, 12, 2, lik);
            Kernel k = parse_kernel("sum(rbf(ard=true),linear())", 2);
            auto m = make_model(kind, data, k, lik, {.inducing = 4, .train_z = true});
            perturb(*m, rng);
            if (is_mcmc(kind)) {
                for (Param* p : m->params()) {
                    if (p->name() != "v" && !p->fixed()) {
                        p->set_prior(Prior::gamma(2.0, 1.5));
                    }
                }
                // Gamma needs positive support; Z and q params are identity.
                for (Param* p : m->params()) {
                    if (p->transform() == Transform::identity && p->name() != "v") {
                        p->set_prior(Prior::gaussian(0.0, 2.0));
                    }
                }
            }
            EXPECT_LE(model_gradient_mismatch(*m), 1.0)
                << model_kind_name(kind) << " " << lik.spec();
        }
    }
}

TEST(Models, TableCombinations)
{
    Rng rng(19);
    Dataset data = labelled(rng, 5, 1, Likelihood::bernoulli());
    EXPECT_THROW(make_model(ModelKind::gpr, data, test_kernel(1), Likelihood::bernoulli()), ConfigError);
    EXPECT_THROW(make_model(ModelKind::sgpr, data, test_kernel(1), Likelihood::bernoulli()), ConfigError);
    for (ModelKind kind : {ModelKind::vgp, ModelKind::svgp, ModelKind::gpmc, ModelKind::sgpmc}) {
        EXPECT_NO_THROW(make_model(kind, data, test_kernel(1), Likelihood::bernoulli(), {.inducing = 3}));
        EXPECT_NO_THROW(make_model(kind, data, test_kernel(1), Likelihood::gaussian(), {.inducing = 3}));
    }
    EXPECT_EQ(parse_model_kind("sgpmc"), ModelKind::sgpmc);
    EXPECT_THROW(parse_model_kind("gplvm"), ConfigError);
    EXPECT_THROW(make_model(ModelKind::svgp, data, test_kernel(1), Likelihood::bernoulli(), {.inducing = 6}),
                 ValueError);
    EXPECT_THROW(make_model(ModelKind::gpr, data, test_kernel(2), Likelihood::gaussian()), ShapeError);
    Dataset bad = data;
    bad.y = Matrix(4, 1);
    EXPECT_THROW(make_model(ModelKind::gpr, bad, test_kernel(1), Likelihood::gaussian()), ShapeError);
    GPR g(data, test_kernel(1), Likelihood::gaussian());
    EXPECT_THROW(g.predict_f(Matrix(2, 3)), ShapeError);
    EXPECT_THROW(g.set_threads(0), ValueError);
}

TEST(Models, MulticlassShapes)
{
    Rng rng(20);
    const Likelihood lik = Likelihood::multiclass(4);
    Dataset data = labelled(rng, 30, 2, lik);
    SVGP m(data, test_kernel(2), lik, {.inducing = 6});
    EXPECT_EQ(m.q().q_mu().shape(), (Shape{6, 4}));
    perturb(m, rng);
    const Predictive p = m.predict_y(random_matrix(rng, 5, 2));
    ASSERT_EQ(p.mean.shape(), (Shape{5, 4}));
    for (std::size_t i = 0; i < 5; ++i) {
        double total = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            total += p.mean(i, c);
        }
        EXPECT_NEAR(total, 1.0, 1e-8);
    }
}

TEST(Models, PersistenceRoundTrip)
{
    Rng rng(21);
    for (ModelKind kind : {ModelKind::gpr, ModelKind::sgpr, ModelKind::svgp, ModelKind::vgp,
                           ModelKind::gpmc, ModelKind::sgpmc}) {
        const Likelihood lik = Likelihood::gaussian(0.5);
        auto m = make_model(kind, smooth_regression(rng, 10, 2),
                            parse_kernel("sum(rbf(ard=true),white(variance=0.01))", 2), lik,
                            {.inducing = 4, .whiten = kind != ModelKind::svgp});
        perturb(*m, rng);
        if (is_mcmc(kind)) {
            m->kernel().params()[0]->set_fixed(true);
            for (Param* p : m->params()) {
                if (!p->fixed() && p->name() != "v") {
                    p->set_prior(Prior::gaussian(0.0, 3.0));
                }
            }
        }
        const std::string text = m->to_json().dump();
        auto back = model_from_json(nlohmann::json::parse(text));
        EXPECT_EQ(back->kind(), kind);
        EXPECT_EQ(back->evaluate(nullptr, false).value, m->evaluate(nullptr, false).value)
            << model_kind_name(kind);
        EXPECT_EQ(back->to_json().dump(), text);
    }
    EXPECT_THROW(model_from_json(nlohmann::json::object()), ValueError);
}

TEST(Models, ThreadCountDoesNotChangeResults)
{
    Rng rng(22);
    const Likelihood lik = Likelihood::multiclass(3);
    Dataset data = labelled(rng, 60, 2, lik);
    SVGP m(data, test_kernel(2), lik, {.inducing = 8});
    perturb(m, rng);
    const Evaluation one = m.evaluate();
    m.set_threads(4);
    EXPECT_EQ(m.threads(), 4u);
    const Evaluation four = m.evaluate();
    EXPECT_EQ(one.value, four.value);
    EXPECT_EQ(one.gradient, four.gradient);
}
