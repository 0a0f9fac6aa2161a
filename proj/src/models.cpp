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

#include "gpad/models.hpp"

#include "gpad/error.hpp"

#include <cmath>

namespace gpad {

namespace {

constexpr double log_2pi = 1.8378770664093454836;
constexpr double jitter_levels[] = {0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};

Var ones(Tape& t, std::size_t r, std::size_t c) { return ad::constant(t, Matrix(r, c, 1.0)); }

Var unit(Tape& t, std::size_t r, std::size_t c, std::size_t i, std::size_t j)
{
    Matrix e(r, c);
    e(i, j) = 1.0;
    return ad::constant(t, std::move(e));
}

// t x 1 column of sums over the rows of a (m x t), i.e. column sums of a.
Var column_totals(Var a) { return ad::transpose(ad::col_sums(a)); }

Matrix take_rows(const Matrix& a, const std::vector<std::size_t>& rows)
{
    Matrix out(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = a.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix evenly_spaced_rows(const Matrix& x, std::size_t m)
{
    const std::size_t n = x.rows();
    if (m == 0 || m > n) {
        throw ValueError("inducing count " + std::to_string(m) + " must lie in [1, " +
                         std::to_string(n) + "]");
    }
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) {
        idx[i] = i * n / m;
    }
    return take_rows(x, idx);
}

Matrix inducing_inputs(const Dataset& data, const ModelOptions& opts)
{
    if (!opts.z) {
        return evenly_spaced_rows(data.x, opts.inducing);
    }
    if (opts.z->cols() != data.input_dim() || opts.z->rows() == 0) {
        throw ShapeError("inducing inputs must be m x " + std::to_string(data.input_dim()) +
                         ", got " + opts.z->shape().str());
    }
    return *opts.z;
}

// -0.5 * (sum v^2 + size * log 2 pi): log N(v | 0, I).
Var standard_normal_log_density(Var v)
{
    const double count = static_cast<double>(v.shape().size());
    return ad::add_scalar(ad::scale(ad::sum(ad::square(v)), -0.5), -0.5 * count * log_2pi);
}

nlohmann::json matrix_json(const Matrix& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j)
{
    if (!j.is_array() || j.empty()) {
        throw ValueError("expected a non-empty array of rows");
    }
    Matrix m(j.size(), j[0].size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != m.cols()) {
            throw ShapeError("ragged matrix in model document");
        }
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(i, c) = j[i][c].get<double>();
        }
    }
    return m;
}

} // namespace

void Dataset::validate() const
{
    if (x.rows() == 0 || x.cols() == 0) {
        throw ShapeError("dataset needs at least one row and one input column");
    }
    if (y.rows() != x.rows() || y.cols() != 1) {
        throw ShapeError("targets must be " + std::to_string(x.rows()) + " x 1, got " +
                         y.shape().str());
    }
    if (!x.all_finite() || !y.all_finite()) {
        throw ValueError("dataset contains non-finite values");
    }
}

std::string_view jitter_name(Jitter j)
{
    return j == Jitter::always ? "always" : "exact_first";
}

Jitter parse_jitter(std::string_view name)
{
    if (name == "always") {
        return Jitter::always;
    }
    if (name == "exact_first") {
        return Jitter::exact_first;
    }
    throw ValueError("unknown jitter policy '" + std::string(name) + "' (expected always or exact_first)");
}

Var jittered_cholesky(Var k, Jitter policy)
{
    const Matrix& a = k.value();
    const std::size_t n = a.rows();
    const double mean_diag = linalg::trace(a) / static_cast<double>(n);
    const bool relative = mean_diag > 0.0 && std::isfinite(mean_diag);
    for (double level : jitter_levels) {
        if (level == 0.0 && policy == Jitter::always) {
            continue;
        }
        Matrix trial = a;
        for (std::size_t i = 0; i < n; ++i) {
            trial(i, i) += level * (relative ? mean_diag : 1.0);
        }
        if (!linalg::try_cholesky(trial)) {
            continue;
        }
        if (level == 0.0) {
            return ad::cholesky(k);
        }
        // The jitter follows mean(diag K), so it belongs to the differentiated graph.
        Var amount = relative ? ad::scale(ad::sum(ad::diag_part(k)), level / static_cast<double>(n))
                              : ad::constant(k.tape(), level);
        return ad::cholesky(ad::add(k, ad::scale(amount, ad::constant(k.tape(), Matrix::identity(n)))));
    }
    throw CholeskyError(k.id(), "kernel matrix is not positive definite even with jitter 1e-2 x "
                                "mean diagonal (node " + std::to_string(k.id()) + ")");
}

Var gauss_kl(Var q_mu, const std::vector<Var>& q_sqrt, std::optional<Var> prior_chol)
{
    const Shape s = q_mu.shape();
    if (q_sqrt.size() != s.cols) {
        throw ShapeError("gauss_kl needs one factor per column of q_mu");
    }
    for (const Var& l : q_sqrt) {
        if (l.shape() != Shape{s.rows, s.rows}) {
            throw ShapeError("q_sqrt factors must be " + Shape{s.rows, s.rows}.str());
        }
        const Matrix& v = l.value();
        for (std::size_t i = 0; i < s.rows; ++i) {
            if (!(v(i, i) > 0.0)) {
                throw ValueError("q_sqrt has a non-positive diagonal entry");
            }
        }
    }
    const double m = static_cast<double>(s.rows);
    Var mahalanobis = q_mu;
    if (prior_chol) {
        mahalanobis = ad::trisolve(*prior_chol, q_mu);
    }
    Var total = ad::scale(ad::sum(ad::square(mahalanobis)), 0.5);
    for (const Var& l : q_sqrt) {
        Var scaled = prior_chol ? ad::trisolve(*prior_chol, l) : l;
        total = total + ad::scale(ad::sum(ad::square(scaled)), 0.5) -
                ad::sum(ad::log(ad::diag_part(l)));
        if (prior_chol) {
            total = total + ad::sum(ad::log(ad::diag_part(*prior_chol)));
        }
    }
    return ad::add_scalar(total, -0.5 * m * static_cast<double>(s.cols));
}

ConditionalResult conditional(const Binding& b, Var xnew, Var z, const Kernel& kernel, Var q_mu,
                              const std::vector<Var>& q_sqrt, bool whiten, bool full_cov, Jitter policy)
{
    Tape& t = xnew.tape();
    const std::size_t m = z.shape().rows;
    const std::size_t latents = q_mu.shape().cols;
    if (q_mu.shape().rows != m) {
        throw ShapeError("q_mu must have one row per inducing input");
    }
    if (!q_sqrt.empty() && q_sqrt.size() != latents) {
        throw ShapeError("conditional needs one q_sqrt factor per latent");
    }
    Var luu = jittered_cholesky(kernel.K(b, z), policy);
    Var a = ad::trisolve(luu, kernel.K(b, z, xnew)); // m x t, whitened projection
    Var proj = whiten ? a : ad::trisolve(luu, a, linalg::Triangle::lower, true);

    ConditionalResult out;
    out.mean = ad::matmul(ad::transpose(proj), q_mu);
    Var prior_var = ad::sub(kernel.Kdiag(b, xnew), column_totals(ad::square(a)));
    Var prior_cov;
    if (full_cov) {
        prior_cov = ad::sub(kernel.K(b, xnew), ad::matmul(ad::transpose(a), a));
    }
    if (q_sqrt.empty()) {
        out.var = latents == 1 ? prior_var : ad::matmul(prior_var, ones(t, 1, latents));
        if (full_cov) {
            out.cov.assign(latents, prior_cov);
        }
        return out;
    }
    for (std::size_t l = 0; l < latents; ++l) {
        Var spread = ad::matmul(ad::transpose(q_sqrt[l]), proj); // m x t
        Var col = ad::add(prior_var, column_totals(ad::square(spread)));
        Var placed = latents == 1 ? col : ad::matmul(col, unit(t, 1, latents, 0, l));
        out.var = l == 0 ? placed : ad::add(out.var, placed);
        if (full_cov) {
            out.cov.push_back(ad::add(prior_cov, ad::matmul(ad::transpose(spread), spread)));
        }
    }
    return out;
}

std::string_view model_kind_name(ModelKind k)
{
    switch (k) {
    case ModelKind::gpr: return "gpr";
    case ModelKind::vgp: return "vgp";
    case ModelKind::gpmc: return "gpmc";
    case ModelKind::sgpr: return "sgpr";
    case ModelKind::svgp: return "svgp";
    case ModelKind::sgpmc: return "sgpmc";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name)
{
    for (ModelKind k : {ModelKind::gpr, ModelKind::vgp, ModelKind::gpmc, ModelKind::sgpr,
                        ModelKind::svgp, ModelKind::sgpmc}) {
        if (model_kind_name(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown model '" + std::string(name) +
                      "' (expected gpr, vgp, gpmc, sgpr, svgp or sgpmc)");
}

bool is_sparse(ModelKind k)
{
    return k == ModelKind::sgpr || k == ModelKind::svgp || k == ModelKind::sgpmc;
}

bool is_mcmc(ModelKind k) { return k == ModelKind::gpmc || k == ModelKind::sgpmc; }

void check_combination(ModelKind model, Likelihood::Kind lik)
{
    if ((model == ModelKind::gpr || model == ModelKind::sgpr) && lik != Likelihood::Kind::gaussian) {
        throw ConfigError(std::string(model_kind_name(model)) +
                          " is exact inference and supports only the gaussian likelihood; see the "
                          "model table (use vgp/svgp or gpmc/sgpmc for non-gaussian likelihoods)");
    }
}

// ---------------------------------------------------------------------------

Model::Model(ModelKind kind, Dataset data, Kernel kernel, Likelihood likelihood)
    : kind_(kind), data_(std::move(data)), kernel_(std::move(kernel)),
      likelihood_(std::move(likelihood))
{
    data_.validate();
    if (kernel_.input_dim() != data_.input_dim()) {
        throw ShapeError("kernel expects " + std::to_string(kernel_.input_dim()) +
                         " input columns but the data has " + std::to_string(data_.input_dim()));
    }
    check_combination(kind_, likelihood_.kind());
    likelihood_.validate(data_.y);
    jitter_ = is_mcmc(kind_) ? Jitter::always : Jitter::exact_first;
}

ParamRefs Model::params()
{
    ParamRefs out = kernel_.params();
    for (Param* p : likelihood_.params()) {
        out.push_back(p);
    }
    for (Param* p : own_params()) {
        out.push_back(p);
    }
    return out;
}

Var Model::data_x(Tape& t) const { return ad::constant(t, data_.x); }

void Model::check_input(const Matrix& xnew) const
{
    if (xnew.cols() != data_.input_dim()) {
        throw ShapeError("prediction inputs need " + std::to_string(data_.input_dim()) +
                         " columns, got " + xnew.shape().str());
    }
}

void Model::require_priors(const Param& latent)
{
    for (const Param* p : params()) {
        if (p != &latent && !p->fixed() && !p->prior()) {
            throw ValueError("sampled parameter '" + p->name() +
                             "' has no prior; set one or fix the parameter");
        }
    }
}

Evaluation Model::evaluate(const std::vector<std::size_t>* batch, bool with_gradient)
{
    Tape t;
    t.set_pool(pool());
    Binding b(t, params(), with_gradient);
    Var root = objective(b, batch);
    Evaluation out;
    out.value = root.value().item();
    if (with_gradient) {
        out.gradient = b.gradient(root);
    }
    return out;
}

Predictive Model::predict_f(const Matrix& xnew)
{
    check_input(xnew);
    Tape t;
    t.set_pool(pool());
    Binding b(t, params(), false);
    ConditionalResult r = latent(b, ad::constant(t, xnew), false);
    Matrix var = r.var.value();
    for (double& v : var.values()) {
        v = std::max(v, 0.0);
    }
    return {r.mean.value(), std::move(var)};
}

FullPredictive Model::predict_f_full(const Matrix& xnew)
{
    check_input(xnew);
    Tape t;
    t.set_pool(pool());
    Binding b(t, params(), false);
    ConditionalResult r = latent(b, ad::constant(t, xnew), true);
    FullPredictive out{r.mean.value(), {}};
    for (const Var& c : r.cov) {
        out.cov.push_back(c.value());
    }
    return out;
}

Predictive Model::predict_y(const Matrix& xnew)
{
    const Predictive f = predict_f(xnew);
    return likelihood_.predict(f.mean, f.variance);
}

void Model::set_threads(std::size_t n)
{
    if (n == 0) {
        throw ValueError("thread count must be at least 1");
    }
    if (n == 1) {
        pool_.reset();
    } else if (threads() != n) {
        pool_ = std::make_unique<WorkerPool>(n);
    }
}

nlohmann::json Model::to_json()
{
    nlohmann::json j;
    j["format"] = "gpad-model";
    j["version"] = 1;
    j["model"] = std::string(model_kind_name(kind_));
    j["kernel"] = kernel_.expression();
    j["likelihood"] = likelihood_.spec();
    j["input_dim"] = data_.input_dim();
    if (auto* s = dynamic_cast<SVGP*>(this)) {
        j["whiten"] = s->whiten();
    }
    j["jitter"] = std::string(jitter_name(jitter_));
    j["data"] = {{"x", matrix_json(data_.x)}, {"y", matrix_json(data_.y)}};
    j["params"] = snapshot(params());
    return j;
}

// ---------------------------------------------------------------------------

GPR::GPR(Dataset data, Kernel kernel, Likelihood likelihood)
    : Model(ModelKind::gpr, std::move(data), std::move(kernel), std::move(likelihood))
{
}

Var GPR::objective(const Binding& b, const std::vector<std::size_t>*)
{
    Tape& t = b.tape();
    const std::size_t n = data_.size();
    Var x = data_x(t);
    Var noise = ad::scale(b[likelihood_.variance()], ad::constant(t, Matrix::identity(n)));
    Var l = jittered_cholesky(ad::add(kernel_.K(b, x), noise), jitter_);
    Var alpha = ad::trisolve(l, ad::constant(t, data_.y));
    Var value = ad::scale(ad::sum(ad::square(alpha)), -0.5) - ad::sum(ad::log(ad::diag_part(l)));
    value = ad::add_scalar(value, -0.5 * static_cast<double>(n) * log_2pi);
    return value + b.log_prior();
}

ConditionalResult GPR::latent(const Binding& b, Var xnew, bool full_cov)
{
    Tape& t = b.tape();
    const std::size_t n = data_.size();
    Var x = data_x(t);
    Var noise = ad::scale(b[likelihood_.variance()], ad::constant(t, Matrix::identity(n)));
    Var l = jittered_cholesky(ad::add(kernel_.K(b, x), noise), jitter_);
    Var alpha = ad::trisolve(l, ad::constant(t, data_.y));
    Var a = ad::trisolve(l, kernel_.K(b, x, xnew));
    ConditionalResult out;
    out.mean = ad::matmul(ad::transpose(a), alpha);
    out.var = ad::sub(kernel_.Kdiag(b, xnew), column_totals(ad::square(a)));
    if (full_cov) {
        out.cov.push_back(ad::sub(kernel_.K(b, xnew), ad::matmul(ad::transpose(a), a)));
    }
    return out;
}

// ---------------------------------------------------------------------------

SGPR::SGPR(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts)
    : Model(ModelKind::sgpr, std::move(data), std::move(kernel), std::move(likelihood)),
      z_("z", inducing_inputs(data_, opts))
{
}

namespace {

// Shared pieces of the collapsed bound and its optimal q(u).
struct Collapsed {
    Var luu;   // chol(Kuu)
    Var lb;    // chol(I + A A^T), A = Luu^-1 Kuf / sigma
    Var a;     // A
    Var c;     // Lb^-1 A y / sigma
    Var inv_sigma;
};

Collapsed collapse(const Binding& b, const Kernel& kernel, Var z, Var x, Var sigma2, const Matrix& y,
                   Jitter policy)
{
    Tape& t = b.tape();
    const std::size_t m = z.shape().rows;
    Collapsed s;
    s.inv_sigma = ad::exp(ad::scale(ad::log(sigma2), -0.5));
    s.luu = jittered_cholesky(kernel.K(b, z), policy);
    s.a = ad::scale(s.inv_sigma, ad::trisolve(s.luu, kernel.K(b, z, x)));
    Var bmat = ad::add(ad::matmul(s.a, ad::transpose(s.a)), ad::constant(t, Matrix::identity(m)));
    s.lb = ad::cholesky(bmat);
    s.c = ad::scale(s.inv_sigma, ad::trisolve(s.lb, ad::matmul(s.a, ad::constant(t, y))));
    return s;
}

} // namespace

Var SGPR::objective(const Binding& b, const std::vector<std::size_t>*)
{
    Tape& t = b.tape();
    const double n = static_cast<double>(data_.size());
    Var x = data_x(t);
    Var sigma2 = b[likelihood_.variance()];
    const Collapsed s = collapse(b, kernel_, b[z_], x, sigma2, data_.y, jitter_);
    const double yy = [&] {
        double acc = 0.0;
        for (double v : data_.y.values()) {
            acc += v * v;
        }
        return acc;
    }();
    Var inv_sigma2 = ad::square(s.inv_sigma);
    Var value = ad::scale(ad::sum(ad::log(ad::diag_part(s.lb))), -1.0);
    value = value - ad::scale(ad::log(sigma2), 0.5 * n);
    value = value - ad::scale(inv_sigma2, ad::constant(t, 0.5 * yy));
    value = value + ad::scale(ad::sum(ad::square(s.c)), 0.5);
    value = value - ad::scale(ad::mul(inv_sigma2, ad::sum(kernel_.Kdiag(b, x))), 0.5);
    value = value + ad::scale(ad::sum(ad::square(s.a)), 0.5);
    value = ad::add_scalar(value, -0.5 * n * log_2pi);
    return value + b.log_prior();
}

ConditionalResult SGPR::latent(const Binding& b, Var xnew, bool full_cov)
{
    Tape& t = b.tape();
    const Collapsed s = collapse(b, kernel_, b[z_], data_x(t), b[likelihood_.variance()], data_.y, jitter_);
    Var tmp1 = ad::trisolve(s.luu, kernel_.K(b, b[z_], xnew));
    Var tmp2 = ad::trisolve(s.lb, tmp1);
    ConditionalResult out;
    out.mean = ad::matmul(ad::transpose(tmp2), s.c);
    out.var = ad::sub(ad::add(kernel_.Kdiag(b, xnew), column_totals(ad::square(tmp2))),
                      column_totals(ad::square(tmp1)));
    if (full_cov) {
        out.cov.push_back(ad::sub(ad::add(kernel_.K(b, xnew), ad::matmul(ad::transpose(tmp2), tmp2)),
                                  ad::matmul(ad::transpose(tmp1), tmp1)));
    }
    return out;
}

// ---------------------------------------------------------------------------

VariationalState::VariationalState(std::size_t m, std::size_t latents)
    : q_mu_("q_mu", Matrix(m, latents)),
      q_diag_("q_sqrt_diag", Matrix(m, latents, 1.0), Transform::positive)
{
    for (std::size_t l = 0; l < latents; ++l) {
        q_lower_.emplace_back("q_sqrt_lower." + std::to_string(l), Matrix(m, m));
    }
}

ParamRefs VariationalState::params()
{
    ParamRefs out{&q_mu_, &q_diag_};
    for (Param& p : q_lower_) {
        out.push_back(&p);
    }
    return out;
}

std::vector<Var> VariationalState::factors(const Binding& b)
{
    Tape& t = b.tape();
    const std::size_t m = q_mu_.shape().rows;
    const std::size_t latents = q_lower_.size();
    Matrix mask(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            mask(i, j) = 1.0;
        }
    }
    Var mask_v = ad::constant(t, std::move(mask));
    Var diag = b[q_diag_];
    std::vector<Var> out;
    for (std::size_t l = 0; l < latents; ++l) {
        Var d = latents == 1 ? diag : ad::matmul(diag, unit(t, latents, 1, l, 0));
        out.push_back(ad::add(ad::make_diag(d), ad::mul(b[q_lower_[l]], mask_v)));
    }
    return out;
}

std::vector<Matrix> VariationalState::factor_values() const
{
    const Matrix diag = q_diag_.value();
    std::vector<Matrix> out;
    for (std::size_t l = 0; l < q_lower_.size(); ++l) {
        Matrix f = linalg::lower(q_lower_[l].value());
        for (std::size_t i = 0; i < f.rows(); ++i) {
            f(i, i) = diag(i, l);
        }
        out.push_back(std::move(f));
    }
    return out;
}

void VariationalState::set_factors(const std::vector<Matrix>& factors)
{
    if (factors.size() != q_lower_.size()) {
        throw ShapeError("expected one factor per latent");
    }
    Matrix diag = q_diag_.value();
    for (std::size_t l = 0; l < factors.size(); ++l) {
        const Matrix& f = factors[l];
        if (f.shape() != q_lower_[l].shape()) {
            throw ShapeError("factor shape " + f.shape().str() + " does not match " +
                             q_lower_[l].shape().str());
        }
        Matrix low(f.rows(), f.cols());
        for (std::size_t i = 0; i < f.rows(); ++i) {
            diag(i, l) = f(i, i);
            for (std::size_t j = 0; j < i; ++j) {
                low(i, j) = f(i, j);
            }
        }
        q_lower_[l].set_value(low);
    }
    q_diag_.set_value(diag);
}

// ---------------------------------------------------------------------------

SVGP::SVGP(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts)
    : Model(ModelKind::svgp, std::move(data), std::move(kernel), std::move(likelihood)),
      z_("z", inducing_inputs(data_, opts)), whiten_(opts.whiten)
{
    q_ = VariationalState(z_.shape().rows, num_latent());
}

ParamRefs SVGP::own_params()
{
    ParamRefs out{&z_};
    for (Param* p : q_.params()) {
        out.push_back(p);
    }
    return out;
}

Var SVGP::objective(const Binding& b, const std::vector<std::size_t>* batch)
{
    Tape& t = b.tape();
    const std::size_t n = data_.size();
    Matrix xb;
    Matrix yb;
    if (batch == nullptr) {
        xb = data_.x;
        yb = data_.y;
    } else {
        if (batch->empty()) {
            throw ValueError("minibatch is empty");
        }
        for (std::size_t i : *batch) {
            if (i >= n) {
                throw ValueError("minibatch index " + std::to_string(i) + " out of range");
            }
        }
        xb = take_rows(data_.x, *batch);
        yb = take_rows(data_.y, *batch);
    }
    const double scale = static_cast<double>(n) / static_cast<double>(xb.rows());
    const std::vector<Var> factors = q_.factors(b);
    Var z = b[z_];
    Var q_mu = b[q_.q_mu()];
    ConditionalResult r = conditional(b, ad::constant(t, xb), z, kernel_, q_mu, factors, whiten_, false, jitter_);
    Var ve = ad::sum(likelihood_.variational_expectations(b, r.mean, r.var, yb));
    Var kl = whiten_ ? gauss_kl(q_mu, factors)
                     : gauss_kl(q_mu, factors, jittered_cholesky(kernel_.K(b, z), jitter_));
    return ad::scale(ve, scale) - kl + b.log_prior();
}

ConditionalResult SVGP::latent(const Binding& b, Var xnew, bool full_cov)
{
    return conditional(b, xnew, b[z_], kernel_, b[q_.q_mu()], q_.factors(b), whiten_, full_cov, jitter_);
}

// ---------------------------------------------------------------------------

VGP::VGP(Dataset data, Kernel kernel, Likelihood likelihood)
    : Model(ModelKind::vgp, std::move(data), std::move(kernel), std::move(likelihood))
{
    q_ = VariationalState(data_.size(), num_latent());
}

Var VGP::objective(const Binding& b, const std::vector<std::size_t>*)
{
    Tape& t = b.tape();
    const std::size_t latents = num_latent();
    Var lx = jittered_cholesky(kernel_.K(b, data_x(t)), jitter_);
    Var q_mu = b[q_.q_mu()];
    const std::vector<Var> factors = q_.factors(b);
    Var mean = ad::matmul(lx, q_mu);
    Var var;
    for (std::size_t l = 0; l < latents; ++l) {
        Var col = ad::row_sums(ad::square(ad::matmul(lx, factors[l])));
        Var placed = latents == 1 ? col : ad::matmul(col, unit(t, 1, latents, 0, l));
        var = l == 0 ? placed : ad::add(var, placed);
    }
    Var ve = ad::sum(likelihood_.variational_expectations(b, mean, var, data_.y));
    return ve - gauss_kl(q_mu, factors) + b.log_prior();
}

ConditionalResult VGP::latent(const Binding& b, Var xnew, bool full_cov)
{
    return conditional(b, xnew, data_x(b.tape()), kernel_, b[q_.q_mu()], q_.factors(b), true,
                       full_cov, jitter_);
}

// ---------------------------------------------------------------------------

GPMC::GPMC(Dataset data, Kernel kernel, Likelihood likelihood)
    : Model(ModelKind::gpmc, std::move(data), std::move(kernel), std::move(likelihood)),
      v_("v", Matrix(data_.size(), likelihood_.num_latent()))
{
}

Var GPMC::objective(const Binding& b, const std::vector<std::size_t>*)
{
    require_priors(v_);
    Var lx = jittered_cholesky(kernel_.K(b, data_x(b.tape())), jitter_);
    Var v = b[v_];
    Var f = ad::matmul(lx, v);
    Var data_term = ad::sum(likelihood_.log_prob(b, f, data_.y));
    return data_term + standard_normal_log_density(v) + b.log_prior();
}

ConditionalResult GPMC::latent(const Binding& b, Var xnew, bool full_cov)
{
    return conditional(b, xnew, data_x(b.tape()), kernel_, b[v_], {}, true, full_cov, jitter_);
}

// ---------------------------------------------------------------------------

SGPMC::SGPMC(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts)
    : Model(ModelKind::sgpmc, std::move(data), std::move(kernel), std::move(likelihood)),
      z_("z", inducing_inputs(data_, opts)),
      v_("v", Matrix(z_.shape().rows, likelihood_.num_latent()))
{
    z_.set_fixed(!opts.train_z);
}

Var SGPMC::objective(const Binding& b, const std::vector<std::size_t>*)
{
    require_priors(v_);
    Tape& t = b.tape();
    Var v = b[v_];
    ConditionalResult r = conditional(b, data_x(t), b[z_], kernel_, v, {}, true, false, jitter_);
    Var data_term = ad::sum(likelihood_.variational_expectations(b, r.mean, r.var, data_.y));
    return data_term + standard_normal_log_density(v) + b.log_prior();
}

ConditionalResult SGPMC::latent(const Binding& b, Var xnew, bool full_cov)
{
    return conditional(b, xnew, b[z_], kernel_, b[v_], {}, true, full_cov, jitter_);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Model> make_model(ModelKind kind, Dataset data, Kernel kernel,
                                  Likelihood likelihood, const ModelOptions& opts)
{
    switch (kind) {
    case ModelKind::gpr:
        return std::make_unique<GPR>(std::move(data), std::move(kernel), std::move(likelihood));
    case ModelKind::vgp:
        return std::make_unique<VGP>(std::move(data), std::move(kernel), std::move(likelihood));
    case ModelKind::gpmc:
        return std::make_unique<GPMC>(std::move(data), std::move(kernel), std::move(likelihood));
    case ModelKind::sgpr:
        return std::make_unique<SGPR>(std::move(data), std::move(kernel), std::move(likelihood),
                                      opts);
    case ModelKind::svgp:
        return std::make_unique<SVGP>(std::move(data), std::move(kernel), std::move(likelihood),
                                      opts);
    case ModelKind::sgpmc:
        return std::make_unique<SGPMC>(std::move(data), std::move(kernel), std::move(likelihood),
                                       opts);
    }
    throw ConfigError("unknown model kind");
}

std::unique_ptr<Model> model_from_json(const nlohmann::json& j)
{
    if (j.value("format", std::string()) != "gpad-model") {
        throw ValueError("not a gpad model document");
    }
    try {
        const ModelKind kind = parse_model_kind(j.at("model").get<std::string>());
        Dataset data{matrix_from_json(j.at("data").at("x")), matrix_from_json(j.at("data").at("y"))};
        Kernel kernel = parse_kernel(j.at("kernel").get<std::string>(), data.input_dim());
        Likelihood lik = parse_likelihood(j.at("likelihood").get<std::string>());
        ModelOptions opts;
        opts.whiten = j.value("whiten", true);
        if (is_sparse(kind)) {
            for (const auto& p : j.at("params")) {
                if (p.at("name") == "z") {
                    opts.z = Matrix(p.at("shape")[0].get<std::size_t>(),
                                    p.at("shape")[1].get<std::size_t>());
                }
            }
        }
        auto model = make_model(kind, std::move(data), std::move(kernel), std::move(lik), opts);
        if (j.contains("jitter")) {
            model->set_jitter(parse_jitter(j.at("jitter").get<std::string>()));
        }
        restore(model->params(), j.at("params"));
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ValueError(std::string("malformed model document: ") + e.what());
    }
}

} // namespace gpad
