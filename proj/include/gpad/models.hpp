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

// GP models. Every model exposes one scalar objective to maximize (log
// marginal likelihood, evidence lower bound or unnormalized log posterior),
// recorded on a tape so that gradients with respect to the free state come
// from a single reverse sweep.
//
//              gaussian    non-gaussian (variational)   non-gaussian (mcmc)
//   full       GPR         VGP                          GPMC
//   sparse     SGPR        SVGP                         SGPMC

#pragma once

#include "gpad/kernels.hpp"
#include "gpad/likelihoods.hpp"
#include "gpad/parallel.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace gpad {

struct Dataset {
    Matrix x; // n x d
    Matrix y; // n x 1

    std::size_t size() const { return x.rows(); }
    std::size_t input_dim() const { return x.cols(); }
    /// Throws ShapeError / ValueError for empty, ragged or non-finite data.
    void validate() const;
};

/// Where the jitter ladder starts. `exact_first` tries the unregularized
/// factorization before {1e-6, ..., 1e-2} x mean(diag); `always` starts at
/// 1e-6, which keeps MCMC targets smooth where K is barely positive definite.
enum class Jitter { exact_first, always };

std::string_view jitter_name(Jitter j);
/// Throws ValueError for unknown names.
Jitter parse_jitter(std::string_view name);

/// Cholesky factor of a kernel Gram matrix, escalating jitter on failure;
/// throws CholeskyError when every level fails.
Var jittered_cholesky(Var k, Jitter policy = Jitter::exact_first);

/// Sum over latents of KL[N(m_l, S_l) || N(0, I)], S_l = L_l L_l^T. With a
/// prior factor `prior_chol` the reference is N(0, K) with K = P P^T.
Var gauss_kl(Var q_mu, const std::vector<Var>& q_sqrt, std::optional<Var> prior_chol = {});

struct ConditionalResult {
    Var mean;             // t x L
    Var var;              // t x L marginal variances
    std::vector<Var> cov; // L blocks of t x t when full covariance was asked for
};

/// Predictive distribution of f(xnew) given q(u) = N(q_mu, q_sqrt q_sqrt^T)
/// at inducing inputs z. An empty q_sqrt means a point mass at q_mu. When
/// whiten is set, u = L_uu v and q is over v.
ConditionalResult conditional(const Binding& b, Var xnew, Var z, const Kernel& kernel, Var q_mu,
                              const std::vector<Var>& q_sqrt, bool whiten, bool full_cov = false,
                              Jitter policy = Jitter::exact_first);

enum class ModelKind { gpr, vgp, gpmc, sgpr, svgp, sgpmc };

std::string_view model_kind_name(ModelKind k);
/// Throws ConfigError for unknown names.
ModelKind parse_model_kind(std::string_view name);
bool is_sparse(ModelKind k);
bool is_mcmc(ModelKind k);
/// Throws ConfigError for combinations outside the model table (GPR and SGPR
/// are exact in the gaussian likelihood only).
void check_combination(ModelKind model, Likelihood::Kind lik);

struct ModelOptions {
    /// Inducing inputs for sparse models. When absent, `inducing` rows are
    /// taken from the data at evenly spaced indices.
    std::optional<Matrix> z;
    std::size_t inducing = 10;
    bool whiten = true;
    /// SGPMC keeps Z fixed unless this is set.
    bool train_z = false;
};

struct Evaluation {
    double value = 0.0;
    std::vector<double> gradient; // free-state order; empty when not requested
};

struct FullPredictive {
    Matrix mean;             // t x L
    std::vector<Matrix> cov; // L blocks of t x t
};

class Model {
  public:
    virtual ~Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    ModelKind kind() const { return kind_; }
    const Dataset& data() const { return data_; }
    Kernel& kernel() { return kernel_; }
    Likelihood& likelihood() { return likelihood_; }
    std::size_t num_latent() const { return likelihood_.num_latent(); }

    /// Kernel params, then likelihood params, then the model's own.
    ParamRefs params();
    virtual ParamRefs own_params() = 0;

    /// Scalar to maximize, including log priors of free params that have one.
    /// `batch` (sorted row indices) is honoured by SVGP only; null means all rows.
    virtual Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) = 0;
    virtual bool supports_batches() const { return false; }

    Evaluation evaluate(const std::vector<std::size_t>* batch = nullptr, bool with_gradient = true);

    /// Latent predictive marginals at xnew (t x d).
    Predictive predict_f(const Matrix& xnew);
    FullPredictive predict_f_full(const Matrix& xnew);
    /// Observation predictive moments.
    Predictive predict_y(const Matrix& xnew);

    /// Worker threads for per-datum and matrix work; 1 disables the pool.
    void set_threads(std::size_t n);
    std::size_t threads() const { return pool_ ? pool_->threads() : 1; }
    WorkerPool* pool() const { return pool_.get(); }

    /// Jitter ladder used for every kernel factorization. MCMC models default
    /// to `always` so their targets stay smooth; the others try the exact
    /// factorization first.
    Jitter jitter() const { return jitter_; }
    void set_jitter(Jitter j) { jitter_ = j; }

    nlohmann::json to_json();

  protected:
    Model(ModelKind kind, Dataset data, Kernel kernel, Likelihood likelihood);

    virtual ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) = 0;
    Var data_x(Tape& t) const;
    void check_input(const Matrix& xnew) const;
    /// Throws ValueError naming the first free param other than `latent`
    /// without a prior.
    void require_priors(const Param& latent);

    ModelKind kind_;
    Dataset data_;
    Kernel kernel_;
    Likelihood likelihood_;
    std::unique_ptr<WorkerPool> pool_;
    Jitter jitter_ = Jitter::exact_first;
};

class GPR final : public Model {
  public:
    GPR(Dataset data, Kernel kernel, Likelihood likelihood);
    ParamRefs own_params() override { return {}; }
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
};

class SGPR final : public Model {
  public:
    SGPR(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts = {});
    ParamRefs own_params() override { return {&z_}; }
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;
    Param& z() { return z_; }

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
    Param z_;
};

/// Shared variational state: q_mu, positive diagonals of the q_sqrt factors
/// (one column per latent) and their strictly lower parts.
class VariationalState {
  public:
    VariationalState() = default;
    VariationalState(std::size_t m, std::size_t latents);

    ParamRefs params();
    Param& q_mu() { return q_mu_; }
    Param& q_sqrt_diag() { return q_diag_; }
    Param& q_sqrt_lower(std::size_t l) { return q_lower_.at(l); }
    /// Lower-triangular factors on the tape, one per latent.
    std::vector<Var> factors(const Binding& b);
    /// Numeric factors at the current values.
    std::vector<Matrix> factor_values() const;
    void set_factors(const std::vector<Matrix>& factors);

  private:
    Param q_mu_;
    Param q_diag_;
    std::vector<Param> q_lower_;
};

class SVGP final : public Model {
  public:
    SVGP(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts = {});
    ParamRefs own_params() override;
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;
    bool supports_batches() const override { return true; }

    Param& z() { return z_; }
    VariationalState& q() { return q_; }
    bool whiten() const { return whiten_; }

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
    Param z_;
    VariationalState q_;
    bool whiten_;
};

class VGP final : public Model {
  public:
    VGP(Dataset data, Kernel kernel, Likelihood likelihood);
    ParamRefs own_params() override { return q_.params(); }
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;
    VariationalState& q() { return q_; }

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
    VariationalState q_;
};

/// Whitened latents f = L v with v ~ N(0, I); the objective is the log joint
/// density of (y, v, hyperparameters) in unconstrained coordinates.
class GPMC final : public Model {
  public:
    GPMC(Dataset data, Kernel kernel, Likelihood likelihood);
    ParamRefs own_params() override { return {&v_}; }
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;
    Param& v() { return v_; }

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
    Param v_;
};

/// Whitened inducing values u = L_uu v; the data term is the expected log
/// likelihood under p(f | u) with u held at its sampled value.
class SGPMC final : public Model {
  public:
    SGPMC(Dataset data, Kernel kernel, Likelihood likelihood, const ModelOptions& opts = {});
    ParamRefs own_params() override { return {&z_, &v_}; }
    Var objective(const Binding& b, const std::vector<std::size_t>* batch = nullptr) override;
    Param& z() { return z_; }
    Param& v() { return v_; }

  private:
    ConditionalResult latent(const Binding& b, Var xnew, bool full_cov) override;
    Param z_;
    Param v_;
};

std::unique_ptr<Model> make_model(ModelKind kind, Dataset data, Kernel kernel,
                                  Likelihood likelihood, const ModelOptions& opts = {});

/// Rebuilds a model from to_json() output. The document carries the training
/// data, so the result predicts and resumes training on its own.
std::unique_ptr<Model> model_from_json(const nlohmann::json& j);

} // namespace gpad
