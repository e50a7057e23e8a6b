#pragma once

// SVAE: dense encoder producing diagonal Gaussian potentials, dense decoder,
// and a conjugate posterior over the LDS/SLDS parameters.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svae/gradients.hpp"
#include "svae/objective.hpp"
#include "svae/param_space.hpp"

namespace svae::model {

enum class Activation { Gelu, Tanh, Identity };
enum class Likelihood { Gaussian, Gamma };

struct LayerSpec {
    int in = 0, out = 0;
    Activation act = Activation::Identity;
    bool layer_norm = false;  // applied before the activation, no affine part
};

// Row-wise dense network; params are [W_0 (in x out), b_0 (1 x out), W_1, b_1, ...].
struct DenseNet {
    std::vector<LayerSpec> layers;
    std::vector<Mat> params;

    // widths = {in, hidden..., out}; hidden layers use act/layer_norm, the last is linear.
    static DenseNet make(const std::vector<int>& widths, Activation act, bool layer_norm, std::uint64_t seed,
                         std::uint64_t stream);
    int in() const { return layers.front().in; }
    int out() const { return layers.back().out; }
    void validate() const;

    template <class M>
    M forward(const std::vector<M>& p, const M& x) const;
    Mat forward(const Mat& x) const { return forward<Mat>(params, x); }
};

struct ModelConfig {
    int Dx = 0;
    int D = 2;
    int K = 1;
    int hidden = 64;
    int depth = 1;  // hidden layers per network
    bool layer_norm = true;
    Activation act = Activation::Gelu;
    Likelihood likelihood = Likelihood::Gaussian;
    bool identity_bijectors = false;
    // prior: E[Q^-1] = I / prior_noise, Dirichlet rows 1 + sticky on the diagonal
    double prior_noise = 0.1;
    double sticky = 10.0;
    double init_noise = 0.3;  // spread of the initial per-state dynamics
    std::uint64_t seed = 0;

    void validate() const;
};

struct Svae {
    ModelConfig cfg;
    DenseNet enc, dec;
    Mat log_var;  // 1 x Dx, Gaussian head
    mf::GlobalLayout layout;
    std::vector<param::FamilyBijector> bij;
    std::vector<Vec> eta_tilde, eta0;

    static Svae make(const ModelConfig& cfg);

    // Network tensors in a fixed order: encoder, decoder, log_var.
    std::vector<Mat*> net_params();
    std::vector<const Mat*> net_params() const;
    std::vector<std::string> net_param_names() const;

    std::vector<expfam::NaturalParams> eta() const;
    std::vector<expfam::NaturalParams> prior() const;
    mf::GlobalExpectedStats<Mat> global_stats() const;

    template <class M>
    mf::Recognition<M> encode(const std::vector<M>& enc_params, const M& x) const;
    mf::Recognition<Mat> encode(const Mat& x) const;

    // Gaussian mean or Gamma rate, T x Dx.
    template <class M>
    M decode(const std::vector<M>& dec_params, const M& z) const;
    Mat decode(const Mat& z) const;

    template <class M>
    M loglik(const Mat& x, const M& head, const M& log_var, const Mat& weight) const;
};

// mask[t] true = missing; empty = fully observed.
void check_mask(const std::vector<bool>& mask, int T);
Mat observed_weight(const std::vector<bool>& mask, int T);

mf::MeanFieldState infer(const Svae& m, const Mat& x, const std::vector<bool>& mask, const mf::MfOptions& opt);

enum class Objective { Elbo, Surrogate };

struct EvalOptions {
    grad::GradMode mode = grad::GradMode::capped_threshold();
    mf::MfOptions mf;
    grad::GlobalGrad global = grad::GlobalGrad::Natural;
    Objective objective = Objective::Elbo;
    bool drop_correction = false;
    bool need_grads = true;
    double local_scale = 1.0;  // multiplies every per-sequence term
    double prior_scale = 1.0;  // multiplies the prior KL
};

struct EvalResult {
    obj::LossBreakdown loss;  // per sequence, unscaled
    double value = 0.0;       // local_scale * local - prior_scale * prior_kl
    std::vector<Mat> net_grads;
    std::vector<Vec> eta_grads;
    grad::Estimate est;
};

// Objective and gradients for one sequence. eps holds n_mc samples of T x D noise.
EvalResult evaluate(const Svae& m, const Mat& x, const std::vector<bool>& mask, const std::vector<Mat>& eps,
                    const EvalOptions& opt);

obj::LossBreakdown loss(const Svae& m, const Mat& x, const std::vector<bool>& mask, int n_mc, std::uint64_t seed,
                        const mf::MfOptions& opt);

// Stage-1 VAE: per-step posterior N(r / (1 + R), 1 / (1 + R)) against N(0, I).
struct VaeResult {
    double elbo = 0.0, kl = 0.0, reconstruction = 0.0;
    std::vector<Mat> net_grads;
};
VaeResult evaluate_vae(const Svae& m, const Mat& x, const std::vector<Mat>& eps);

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int t = 0;
    std::vector<Mat> m, v;

    // Minimizes: p -= lr * mhat / (sqrt(vhat) + eps).
    void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads, double lr);
};

struct StepMetrics {
    int step = 0;
    int stage = 0;
    double elbo = 0, prior_kl = 0, local_kl = 0, recon = 0, surrogate = 0;
    double wall_ms = 0;
    int sweeps = 0;
    bool fell_back = false;
};

struct TrainConfig {
    int steps = 300;
    double stage1 = 0.1, stage2 = 0.2;  // fractions of steps; stage 3 takes the rest
    int batch = 4;
    double adam_lr = 3e-3;
    double nat_lr = 0.5;
    double nat_lr_joint = 0.1;
    int n_mc = 1;
    grad::GradMode mode = grad::GradMode::capped_threshold();
    grad::GlobalGrad global = grad::GlobalGrad::Natural;
    bool drop_correction = false;
    mf::MfOptions mf;
    std::uint64_t seed = 0;
    bool wall_time = false;  // off keeps metric logs byte-identical
    std::function<void(const StepMetrics&)> on_step;
    std::function<void(int stage, const Svae&)> on_stage_end;

    TrainConfig() {
        mf.max_iters = 30;
        mf.tol = 0;
        mf.residual_tol = 1e-6;
    }
    int stage_of(int step) const;
    void validate() const;
};

// One step on a batch of sequence indices. stage 1 = VAE, 2 = graphical model only, 3 = joint.
StepMetrics train_step(Svae& m, Adam& opt, const std::vector<Mat>& data, const std::vector<int>& batch, int stage,
                       const TrainConfig& cfg, std::uint64_t step_seed);

std::vector<StepMetrics> train(Svae& m, const std::vector<Mat>& data, const TrainConfig& cfg);

struct Imputation {
    Mat z_mean;                 // T x D posterior means
    Mat x_mean;                 // T x Dx decoded means
    std::vector<Mat> x_samples; // decoded posterior samples
    Mat q;                      // Tk x K discrete marginals
    std::vector<int> masked;    // masked step indices
};

// Masked steps get zero potentials. K > 1: discrete states at the edges of each
// masked run are drawn from the block-updated marginals, the run is filled by
// forward-filter / backward-sample bridging under E[log pi], and block updates
// restart from that path.
Imputation impute(const Svae& m, const Mat& x, const std::vector<bool>& mask, int n_samples, std::uint64_t seed,
                  const mf::MfOptions& opt);

// Steps floor(a T) .. ceil(b T) - 1 are masked.
std::vector<bool> mask_range(int T, double a, double b);

// Checkpoint: "SVAE", u32 version, u32 count, then per tensor
// u32 name length, name, u32 rows, u32 cols, rows*cols f64 row-major.
void save(const Svae& m, const std::string& path);
Svae load(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const Svae& m);
Svae decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace svae::model
