#include "svae/svae_model.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include "svae/rng.hpp"

namespace svae::model {

using ad::Var;

namespace {

template <class M>
M layer_norm(const M& h) {
    const int n = static_cast<int>(value(h).cols());
    M mean = sum(h, 1) * (1.0 / n);
    M c = h - bcast_cols(mean, n);
    M var = sum(cmul(c, c), 1) * (1.0 / n);
    return cmul(c, bcast_cols(recip(sqrt(add_scalar(var, 1e-5))), n));
}

template <class M>
M activate(const M& h, Activation a) {
    switch (a) {
        case Activation::Gelu: return gelu(h);
        case Activation::Tanh: return tanh(h);
        case Activation::Identity: return h;
    }
    return h;
}

template <class M>
mf::Recognition<M> masked(const mf::Recognition<M>& rec, const Mat& weight) {
    if (weight.size() == 0) return rec;
    const Mat w = weight.replicate(1, value(rec.r).cols());
    return {cmul(rec.r, lift(rec.r, w)), cmul(rec.R_diag, lift(rec.R_diag, w))};
}

std::vector<Mat> draw_eps(CounterRng& rng, int n, int T, int D) {
    std::vector<Mat> eps;
    for (int i = 0; i < n; ++i) eps.push_back(rng.normal(T, D));
    return eps;
}

bool finite(const std::vector<Mat>& gs) {
    for (const auto& g : gs)
        if (!g.allFinite()) return false;
    return true;
}

// Per-sequence breakdown from a plain local state.
obj::LossBreakdown breakdown(const Svae& m, const Mat& x, const Mat& weight, const mf::Recognition<Mat>& rec,
                             const mf::GlobalExpectedStats<Mat>& g, const mf::LocalState<Mat>& s,
                             const std::vector<Mat>& eps) {
    std::vector<Mat> eta, mu;
    for (const auto& e : m.eta()) {
        eta.push_back(e.data);
        mu.push_back(expfam::expected_stats(e).data);
    }
    obj::LossBreakdown b;
    b.prior_kl = scalar(obj::prior_kl_of<Mat>(m.layout.families(), eta, mu, m.eta0));
    b.local_kl_continuous = scalar(obj::local_kl_continuous<Mat>(g, rec, s));
    b.local_kl_discrete = scalar(obj::local_kl_discrete<Mat>(s));
    const std::function<Mat(const Mat&)> ll = [&](const Mat& z) {
        return m.loglik<Mat>(x, m.decode(z), m.log_var, weight);
    };
    b.reconstruction = scalar(obj::reconstruction<Mat>(ll, s.mu_z, eps));
    const double kl = b.prior_kl + b.local_kl_continuous + b.local_kl_discrete;
    b.elbo = b.reconstruction - kl;
    b.surrogate = obj::surrogate_loss(scalar(obj::recog_inner<Mat>(rec, s.mu_z)), b.prior_kl, b.local_kl_continuous,
                                      b.local_kl_discrete);
    return b;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + 4);
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Mat& a) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(a.rows()));
    put_u32(out, static_cast<std::uint32_t>(a.cols()));
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) {
            const double v = a(i, j);
            const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
            out.insert(out.end(), p, p + 8);
        }
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
    void need(std::size_t n) const {
        if (pos_ + n > b_.size())
            throw LengthError("checkpoint truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) +
                              " more)");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, b_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, b_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.begin() + pos_, b_.begin() + pos_ + n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

// ---------------------------------------------------------------- networks

DenseNet DenseNet::make(const std::vector<int>& widths, Activation act, bool layer_norm, std::uint64_t seed,
                        std::uint64_t stream) {
    if (widths.size() < 2) throw DomainError("DenseNet: need at least input and output widths");
    DenseNet net;
    CounterRng rng(seed, stream);
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        if (widths[i] < 1 || widths[i + 1] < 1) throw DomainError("DenseNet: widths must be positive");
        net.layers.push_back({widths[i], widths[i + 1], last ? Activation::Identity : act, !last && layer_norm});
        net.params.push_back(rng.normal(widths[i], widths[i + 1]) / std::sqrt(double(widths[i])));
        net.params.push_back(Mat::Zero(1, widths[i + 1]));
    }
    return net;
}

void DenseNet::validate() const {
    if (layers.empty() || params.size() != 2 * layers.size()) throw ShapeMismatch("DenseNet: parameter count");
    for (size_t i = 0; i < layers.size(); ++i) {
        if (i > 0 && layers[i].in != layers[i - 1].out) throw ShapeMismatch("DenseNet: consecutive widths differ");
        if (params[2 * i].rows() != layers[i].in || params[2 * i].cols() != layers[i].out ||
            params[2 * i + 1].rows() != 1 || params[2 * i + 1].cols() != layers[i].out)
            throw ShapeMismatch("DenseNet: layer " + std::to_string(i) + " parameter shape");
    }
}

template <class M>
M DenseNet::forward(const std::vector<M>& p, const M& x) const {
    if (value(x).cols() != in()) throw ShapeMismatch("DenseNet: input has " + std::to_string(value(x).cols()) +
                                                     " columns, expected " + std::to_string(in()));
    const int T = static_cast<int>(value(x).rows());
    M h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = matmul(h, p[2 * i]) + bcast_rows(p[2 * i + 1], T);
        if (layers[i].layer_norm) h = layer_norm(h);
        h = activate(h, layers[i].act);
    }
    return h;
}

template Mat DenseNet::forward(const std::vector<Mat>&, const Mat&) const;
template Var DenseNet::forward(const std::vector<Var>&, const Var&) const;

// ---------------------------------------------------------------- model

void ModelConfig::validate() const {
    if (Dx < 1 || D < 1 || K < 1) throw ConfigError("model: Dx, D and K must be positive");
    if (hidden < 1 || depth < 0) throw ConfigError("model: hidden must be positive and depth non-negative");
    if (!(prior_noise > 0) || !(sticky >= 0) || !(init_noise >= 0)) throw ConfigError("model: invalid prior settings");
}

Svae Svae::make(const ModelConfig& cfg) {
    cfg.validate();
    Svae m;
    m.cfg = cfg;
    const int D = cfg.D, K = cfg.K;
    std::vector<int> we{cfg.Dx}, wd{D};
    for (int i = 0; i < cfg.depth; ++i) {
        we.push_back(cfg.hidden);
        wd.push_back(cfg.hidden);
    }
    we.push_back(2 * D);
    wd.push_back(cfg.Dx);
    m.enc = DenseNet::make(we, cfg.act, cfg.layer_norm, cfg.seed, 1);
    m.dec = DenseNet::make(wd, cfg.act, cfg.layer_norm, cfg.seed, 2);
    m.log_var = Mat::Zero(1, cfg.Dx);
    m.layout = {D, K};

    const auto fams = m.layout.families();
    for (const auto& f : fams) {
        if (cfg.identity_bijectors) {
            m.bij.push_back(param::FamilyBijector::identity(f));
        } else if (f.kind == expfam::Kind::NIW) {
            m.bij.push_back(param::FamilyBijector::niw(D));
        } else if (f.kind == expfam::Kind::MNIW) {
            m.bij.push_back(param::FamilyBijector::mniw(D, D + 1));
        } else {
            m.bij.push_back(param::FamilyBijector::dirichlet(K));
        }
    }

    // prior: z_0 ~ N(0, I) on average, E[Q^-1] = I / prior_noise, A = I, sticky rows
    expfam::NiwCanonical niw{Mat::Identity(D, D), Vec::Zero(D), 1.0, D + 2.0};
    m.eta0.push_back(expfam::niw_natural(niw).data);
    expfam::MniwCanonical mn;
    mn.nu = D + 2.0;
    mn.S = Mat::Identity(D, D) * mn.nu * cfg.prior_noise;
    mn.M = Mat::Zero(D, D + 1);
    mn.M.leftCols(D) = Mat::Identity(D, D);
    mn.V = Mat::Identity(D + 1, D + 1);
    for (int k = 0; k < K; ++k) m.eta0.push_back(expfam::mniw_natural(mn).data);
    if (K > 1) {
        m.eta0.push_back(Vec::Ones(K));
        for (int k = 0; k < K; ++k) {
            Vec a = Vec::Ones(K);
            a(k) += cfg.sticky;
            m.eta0.push_back(a);
        }
    }

    // initial posterior: the prior with distinct, contractive per-state dynamics
    CounterRng rng(cfg.seed, 3);
    std::vector<Vec> init = m.eta0;
    for (int k = 0; k < K; ++k) {
        auto c = mn;
        Mat A = 0.95 * Mat::Identity(D, D) + cfg.init_noise * rng.normal(D, D) / std::sqrt(double(D));
        const double nrm = A.operatorNorm();
        if (nrm > 0.99) A *= 0.99 / nrm;
        c.M.leftCols(D) = A;
        c.M.col(D) = cfg.init_noise * rng.normal(D, 1);
        c.V = Mat::Identity(D + 1, D + 1) * 10.0;
        c.nu = D + 12.0;
        c.S = Mat::Identity(D, D) * c.nu * cfg.prior_noise;
        init[1 + k] = expfam::mniw_natural(c).data;
    }
    for (size_t i = 0; i < fams.size(); ++i) m.eta_tilde.push_back(param::inverse(m.bij[i], init[i]));
    return m;
}

std::vector<Mat*> Svae::net_params() {
    std::vector<Mat*> p;
    for (auto& a : enc.params) p.push_back(&a);
    for (auto& a : dec.params) p.push_back(&a);
    p.push_back(&log_var);
    return p;
}

std::vector<const Mat*> Svae::net_params() const {
    std::vector<const Mat*> p;
    for (const auto& a : enc.params) p.push_back(&a);
    for (const auto& a : dec.params) p.push_back(&a);
    p.push_back(&log_var);
    return p;
}

std::vector<std::string> Svae::net_param_names() const {
    std::vector<std::string> n;
    for (size_t i = 0; i < enc.layers.size(); ++i) {
        n.push_back("enc.W" + std::to_string(i));
        n.push_back("enc.b" + std::to_string(i));
    }
    for (size_t i = 0; i < dec.layers.size(); ++i) {
        n.push_back("dec.W" + std::to_string(i));
        n.push_back("dec.b" + std::to_string(i));
    }
    n.push_back("log_var");
    return n;
}

std::vector<expfam::NaturalParams> Svae::eta() const {
    std::vector<expfam::NaturalParams> out;
    for (size_t i = 0; i < bij.size(); ++i) out.push_back({bij[i].family, param::forward(bij[i], eta_tilde[i])});
    return out;
}

std::vector<expfam::NaturalParams> Svae::prior() const {
    std::vector<expfam::NaturalParams> out;
    for (size_t i = 0; i < bij.size(); ++i) out.push_back({bij[i].family, eta0[i]});
    return out;
}

mf::GlobalExpectedStats<Mat> Svae::global_stats() const {
    std::vector<Mat> mu;
    for (const auto& e : eta()) mu.push_back(expfam::expected_stats(e).data);
    return mf::global_expected_stats(layout, mu);
}

template <class M>
mf::Recognition<M> Svae::encode(const std::vector<M>& p, const M& x) const {
    if (value(x).cols() != cfg.Dx) throw ShapeMismatch("encode: x must have Dx columns");
    const int T = static_cast<int>(value(x).rows()), D = cfg.D;
    M out = enc.forward(p, x);
    return {slice(out, 0, 0, T, D), softplus(slice(out, 0, D, T, D))};
}

mf::Recognition<Mat> Svae::encode(const Mat& x) const { return encode<Mat>(enc.params, x); }

template <class M>
M Svae::decode(const std::vector<M>& p, const M& z) const {
    if (value(z).cols() != cfg.D) throw ShapeMismatch("decode: z must have D columns");
    M head = dec.forward(p, z);
    return cfg.likelihood == Likelihood::Gamma ? softplus(head) : head;
}

Mat Svae::decode(const Mat& z) const { return decode<Mat>(dec.params, z); }

template <class M>
M Svae::loglik(const Mat& x, const M& head, const M& lv, const Mat& weight) const {
    if (cfg.likelihood == Likelihood::Gamma) return obj::gamma_loglik<M>(x, head, weight);
    return obj::gaussian_loglik<M>(x, head, lv, weight);
}

template mf::Recognition<Var> Svae::encode(const std::vector<Var>&, const Var&) const;
template Var Svae::decode(const std::vector<Var>&, const Var&) const;
template Mat Svae::loglik(const Mat&, const Mat&, const Mat&, const Mat&) const;
template Var Svae::loglik(const Mat&, const Var&, const Var&, const Mat&) const;

void check_mask(const std::vector<bool>& mask, int T) {
    if (!mask.empty() && static_cast<int>(mask.size()) != T)
        throw ShapeMismatch("mask has length " + std::to_string(mask.size()) + ", expected " + std::to_string(T));
}

Mat observed_weight(const std::vector<bool>& mask, int T) {
    check_mask(mask, T);
    Mat w = Mat::Ones(T, 1);
    for (size_t t = 0; t < mask.size(); ++t)
        if (mask[t]) w(t, 0) = 0.0;
    return w;
}

mf::MeanFieldState infer(const Svae& m, const Mat& x, const std::vector<bool>& mask, const mf::MfOptions& opt) {
    check_mask(mask, static_cast<int>(x.rows()));
    return mf::block_update(m.global_stats(), mf::apply_mask(m.encode(x), mask), opt);
}

// ---------------------------------------------------------------- objectives

EvalResult evaluate(const Svae& m, const Mat& x, const std::vector<bool>& mask, const std::vector<Mat>& eps,
                    const EvalOptions& opt) {
    const int T = static_cast<int>(x.rows());
    const Mat w = observed_weight(mask, T);
    EvalResult res;
    if (!opt.need_grads) {
        const auto g = m.global_stats();
        const auto rec = mf::apply_mask(m.encode(x), mask);
        res.est.state = mf::block_update(g, rec, opt.mf);
        res.loss = breakdown(m, x, w, rec, g, res.est.state.local, eps);
        const double local = (opt.objective == Objective::Elbo ? res.loss.elbo : res.loss.surrogate) + res.loss.prior_kl;
        res.value = opt.local_scale * local - opt.prior_scale * res.loss.prior_kl;
        return res;
    }

    ad::Tape tape;
    std::vector<Var> enc_p, dec_p, wrt;
    for (const auto& a : m.enc.params) enc_p.push_back(tape.leaf(a));
    for (const auto& a : m.dec.params) dec_p.push_back(tape.leaf(a));
    Var lv = tape.leaf(m.log_var);
    wrt = enc_p;
    wrt.insert(wrt.end(), dec_p.begin(), dec_p.end());
    wrt.push_back(lv);
    auto nodes = grad::build_globals(tape, m.layout, m.bij, m.eta_tilde, opt.global);
    wrt.insert(wrt.end(), nodes.eta_tilde.begin(), nodes.eta_tilde.end());

    const auto rec = masked(m.encode<Var>(enc_p, tape.constant(x)), w);
    const grad::InnerInputs in{nodes.g, rec};
    const Var pkl = obj::prior_kl_of(m.layout.families(), nodes.eta, nodes.mu, m.eta0);
    grad::LocalObjective f = [&](const grad::InnerInputs& i, const mf::LocalState<Var>& s) {
        Var data_term;
        if (opt.objective == Objective::Elbo) {
            const std::function<Var(const Var&)> ll = [&](const Var& z) {
                return m.loglik<Var>(x, m.decode<Var>(dec_p, z), lv, w);
            };
            data_term = obj::reconstruction<Var>(ll, s.mu_z, eps);
        } else {
            data_term = obj::recog_inner(i.rec, s.mu_z);
        }
        Var local = data_term - obj::local_kl_continuous(i.g, i.rec, s) - obj::local_kl_discrete(s);
        return local * opt.local_scale - pkl * opt.prior_scale;
    };
    grad::EstimateOptions eo;
    eo.mode = opt.mode;
    eo.mf = opt.mf;
    eo.drop_correction = opt.drop_correction;
    res.est = grad::estimate(tape, in, f, wrt, eo);
    res.value = res.est.value;

    const size_t nn = enc_p.size() + dec_p.size() + 1;
    res.net_grads.assign(res.est.grads.begin(), res.est.grads.begin() + nn);
    for (size_t i = nn; i < res.est.grads.size(); ++i) res.eta_grads.push_back(res.est.grads[i]);
    const mf::Recognition<Mat> rec_m{value(rec.r), value(rec.R_diag)};
    res.loss = breakdown(m, x, w, rec_m, mf::GlobalExpectedStats<Mat>{m.layout.D, m.layout.K, value(nodes.g.J0),
                                                                      value(nodes.g.h0), value(nodes.g.init_logZ),
                                                                      value(nodes.g.theta), value(nodes.g.trans_logZ),
                                                                      value(nodes.g.log_pi0), value(nodes.g.log_pi)},
                         res.est.state.local, eps);
    return res;
}

obj::LossBreakdown loss(const Svae& m, const Mat& x, const std::vector<bool>& mask, int n_mc, std::uint64_t seed,
                        const mf::MfOptions& opt) {
    if (n_mc < 1) throw DomainError("loss: n_mc must be >= 1");
    CounterRng rng(seed, 0x10c);
    EvalOptions eo;
    eo.mf = opt;
    eo.need_grads = false;
    return evaluate(m, x, mask, draw_eps(rng, n_mc, static_cast<int>(x.rows()), m.cfg.D), eo).loss;
}

VaeResult evaluate_vae(const Svae& m, const Mat& x, const std::vector<Mat>& eps) {
    if (eps.empty()) throw DomainError("evaluate_vae: need at least one noise sample");
    ad::Tape tape;
    std::vector<Var> enc_p, dec_p, wrt;
    for (const auto& a : m.enc.params) enc_p.push_back(tape.leaf(a));
    for (const auto& a : m.dec.params) dec_p.push_back(tape.leaf(a));
    Var lv = tape.leaf(m.log_var);
    const auto rec = m.encode<Var>(enc_p, tape.constant(x));
    Var var = recip(add_scalar(rec.R_diag, 1.0));
    Var mean = cmul(rec.r, var);
    Var kl = sum(add_scalar(var + cmul(mean, mean) - log(var), -1.0), -1) * 0.5;
    Var sd = sqrt(var);
    Var recon;
    for (size_t s = 0; s < eps.size(); ++s) {
        Var z = mean + cmul(sd, lift(sd, eps[s]));
        Var ll = m.loglik<Var>(x, m.decode<Var>(dec_p, z), lv, Mat());
        recon = s == 0 ? ll : recon + ll;
    }
    recon = recon * (1.0 / eps.size());
    Var elbo = recon - kl;
    wrt = enc_p;
    wrt.insert(wrt.end(), dec_p.begin(), dec_p.end());
    wrt.push_back(lv);
    auto g = tape.vjp({{elbo, Mat::Ones(1, 1)}});
    VaeResult r;
    r.elbo = scalar(elbo);
    r.kl = scalar(kl);
    r.reconstruction = scalar(recon);
    for (const auto& v : wrt) r.net_grads.push_back(g[v]);
    return r;
}

// ---------------------------------------------------------------- training

void Adam::step(const std::vector<Mat*>& params, const std::vector<Mat>& grads, double lr) {
    if (params.size() != grads.size()) throw DimMismatch("Adam: one gradient per parameter");
    if (m.empty()) {
        for (const auto* p : params) {
            m.push_back(Mat::Zero(p->rows(), p->cols()));
            v.push_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1 - beta1) * grads[i];
        v[i] = beta2 * v[i] + (1 - beta2) * grads[i].cwiseAbs2();
        *params[i] -= (lr * (m[i] / c1).array() / ((v[i] / c2).array().sqrt() + eps)).matrix();
    }
}

int TrainConfig::stage_of(int step) const {
    const int n1 = static_cast<int>(std::lround(stage1 * steps));
    const int n2 = static_cast<int>(std::lround((stage1 + stage2) * steps));
    return step < n1 ? 1 : step < n2 ? 2 : 3;
}

void TrainConfig::validate() const {
    if (steps < 0 || batch < 1 || n_mc < 1) throw ConfigError("train: steps >= 0, batch >= 1, n_mc >= 1");
    if (!(stage1 >= 0) || !(stage2 >= 0) || stage1 + stage2 > 1) throw ConfigError("train: invalid stage fractions");
    if (!(adam_lr >= 0) || !(nat_lr >= 0) || !(nat_lr_joint >= 0)) throw ConfigError("train: negative learning rate");
    mode.validate();
}

StepMetrics train_step(Svae& m, Adam& adam, const std::vector<Mat>& data, const std::vector<int>& batch, int stage,
                       const TrainConfig& cfg, std::uint64_t step_seed) {
    if (batch.empty()) throw DomainError("train_step: empty batch");
    if (stage < 1 || stage > 3) throw DomainError("train_step: stage must be 1, 2 or 3");
    const double N = static_cast<double>(data.size()), B = static_cast<double>(batch.size());
    StepMetrics out;
    out.stage = stage;
    std::vector<Mat> net_sum;
    std::vector<Vec> eta_sum;
    auto accumulate = [](auto& acc, const auto& gs) {
        if (acc.empty()) {
            acc.assign(gs.begin(), gs.end());
        } else {
            for (size_t i = 0; i < gs.size(); ++i) acc[i] += gs[i];
        }
    };
    for (size_t b = 0; b < batch.size(); ++b) {
        const Mat& x = data.at(batch[b]);
        CounterRng rng(step_seed, b);
        const auto eps = draw_eps(rng, cfg.n_mc, static_cast<int>(x.rows()), m.cfg.D);
        if (stage == 1) {
            auto r = evaluate_vae(m, x, eps);
            accumulate(net_sum, r.net_grads);
            out.elbo += r.elbo / B;
            out.recon += r.reconstruction / B;
            out.local_kl += r.kl / B;
            continue;
        }
        EvalOptions eo;
        eo.mode = cfg.mode;
        eo.mf = cfg.mf;
        eo.global = cfg.global;
        eo.drop_correction = cfg.drop_correction;
        eo.objective = stage == 2 ? Objective::Surrogate : Objective::Elbo;
        eo.local_scale = N / B;
        eo.prior_scale = 1.0 / B;
        auto r = evaluate(m, x, {}, eps, eo);
        if (stage == 3) accumulate(net_sum, r.net_grads);
        std::vector<Vec> eg;
        for (const auto& g : r.eta_grads) eg.push_back(g);
        accumulate(eta_sum, eg);
        out.elbo += r.loss.elbo / B;
        out.prior_kl = r.loss.prior_kl;
        out.local_kl += (r.loss.local_kl_continuous + r.loss.local_kl_discrete) / B;
        out.recon += r.loss.reconstruction / B;
        out.surrogate += (r.loss.surrogate + r.loss.prior_kl) / B;
        out.sweeps = std::max(out.sweeps, r.est.sweeps);
        out.fell_back = out.fell_back || r.est.fell_back;
    }
    if (stage > 1) out.surrogate -= out.prior_kl;

    const auto names = m.net_param_names();
    if (!finite(net_sum) || !finite(std::vector<Mat>(eta_sum.begin(), eta_sum.end()))) {
        std::string where;
        for (size_t i = 0; i < net_sum.size() && where.empty(); ++i)
            if (!net_sum[i].allFinite()) where = names[i];
        for (size_t i = 0; i < eta_sum.size() && where.empty(); ++i)
            if (!eta_sum[i].allFinite()) where = "eta_tilde." + std::to_string(i);
        throw NonFinite("train_step: non-finite gradient in " + where + " (stage " + std::to_string(stage) + ")");
    }
    if (!net_sum.empty()) {
        // minimize the negative per-sequence ELBO
        const double scale = stage == 1 ? -1.0 / B : -1.0 / N;
        for (auto& g : net_sum) g *= scale;
        adam.step(m.net_params(), net_sum, cfg.adam_lr);
    }
    if (!eta_sum.empty()) {
        const double lr = stage == 2 ? cfg.nat_lr : cfg.nat_lr_joint;
        for (size_t i = 0; i < eta_sum.size(); ++i) {
            if (cfg.global == grad::GlobalGrad::Plain) {
                m.eta_tilde[i] += lr * eta_sum[i];
                continue;
            }
            if (lr == 0) continue;
            // Step in eta. Conjugate steps of size <= 1 stay in the domain; the joint
            // stage is not conjugate, so the step is halved until it lands inside.
            const Vec dir = param::jvp_forward(m.bij[i], m.eta_tilde[i], eta_sum[i]);
            const Vec eta = param::forward(m.bij[i], m.eta_tilde[i]);
            double t = lr;
            for (int tries = 0;; ++tries) {
                try {
                    const Vec next = eta + t * dir;
                    expfam::validate({m.bij[i].family, next});
                    m.eta_tilde[i] = param::inverse(m.bij[i], next);
                    break;
                } catch (const Error&) {
                    if (tries == 40) throw BoundaryError("train_step: no valid natural step for " + m.bij[i].family.name());
                    t *= 0.5;
                }
            }
        }
    }
    return out;
}

std::vector<StepMetrics> train(Svae& m, const std::vector<Mat>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ConfigError("train: empty dataset");
    for (const auto& x : data)
        if (x.cols() != m.cfg.Dx) throw ShapeMismatch("train: sequence width differs from model Dx");
    const int N = static_cast<int>(data.size());
    std::vector<StepMetrics> log;
    Adam adam;
    int prev = 0;
    CounterRng batch_rng(cfg.seed, 0xba7c);
    for (int step = 0; step < cfg.steps; ++step) {
        const int stage = cfg.stage_of(step);
        if (stage != prev) {
            if (prev > 0 && cfg.on_stage_end) cfg.on_stage_end(prev, m);
            adam = Adam();
            prev = stage;
        }
        std::vector<int> idx(N);
        std::iota(idx.begin(), idx.end(), 0);
        const int B = std::min(cfg.batch, N);
        for (int i = 0; i < B; ++i) std::swap(idx[i], idx[i + batch_rng.next_u64() % (N - i)]);
        idx.resize(B);
        const auto t0 = std::chrono::steady_clock::now();
        auto met = train_step(m, adam, data, idx, stage, cfg, hash3(cfg.seed, 0x57e9, step));
        met.step = step;
        if (cfg.wall_time)
            met.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (cfg.on_step) cfg.on_step(met);
        log.push_back(met);
    }
    if (prev > 0 && cfg.on_stage_end) cfg.on_stage_end(prev, m);
    return log;
}

// ---------------------------------------------------------------- imputation

std::vector<bool> mask_range(int T, double a, double b) {
    if (!(0 <= a && a <= b && b <= 1)) throw ConfigError("mask range must satisfy 0 <= a <= b <= 1");
    std::vector<bool> mask(T, false);
    const int lo = static_cast<int>(std::floor(a * T)), hi = static_cast<int>(std::ceil(b * T));
    for (int t = lo; t < hi && t < T; ++t) mask[t] = true;
    return mask;
}

Imputation impute(const Svae& m, const Mat& x, const std::vector<bool>& mask, int n_samples, std::uint64_t seed,
                  const mf::MfOptions& opt) {
    const int T = static_cast<int>(x.rows()), K = m.cfg.K;
    check_mask(mask, T);
    if (n_samples < 0) throw DomainError("impute: n_samples must be >= 0");
    const auto g = m.global_stats();
    const auto rec = mf::apply_mask(m.encode(x), mask);
    auto st = mf::block_update(g, rec, opt);
    Imputation out;
    for (int t = 0; t < static_cast<int>(mask.size()); ++t)
        if (mask[t]) out.masked.push_back(t);

    if (K > 1 && !out.masked.empty()) {
        const int Tk = T - 1;
        CounterRng rng(seed, 0xb1d6e);
        Mat q = st.local.q.marginal;
        const Mat& lp = g.log_pi;
        auto draw = [&](const Vec& logw) {
            return rng.categorical((logw.array() - logw.maxCoeff()).exp().matrix());
        };
        int t = 0;
        while (t < T) {
            if (!mask[t]) {
                ++t;
                continue;
            }
            int e = t;
            while (e < T && mask[e]) ++e;
            // pairs touching masked steps t..e-1
            const int ka = std::max(t - 1, 0), kb = std::min(e, Tk);
            if (ka < kb) {
                const int start = ka > 0 ? draw(q.row(ka - 1).transpose().array().log().matrix()) : -1;
                const int end = kb < Tk ? draw(q.row(kb).transpose().array().log().matrix()) : -1;
                std::vector<Vec> alpha;
                for (int k = ka; k < kb; ++k) {
                    Vec a(K);
                    for (int j = 0; j < K; ++j) {
                        if (k == ka) {
                            a(j) = start >= 0 ? lp(start, j) : g.log_pi0(j, 0);
                        } else {
                            const Vec prev = alpha.back() + lp.col(j);
                            const double mx = prev.maxCoeff();
                            a(j) = mx + std::log((prev.array() - mx).exp().sum());
                        }
                    }
                    alpha.push_back(a);
                }
                int next = end;
                for (int k = kb - 1; k >= ka; --k) {
                    Vec w = alpha[k - ka];
                    if (next >= 0) w += lp.col(next);
                    next = draw(w);
                    q.row(k).setZero();
                    q(k, next) = 1.0;
                }
            }
            t = e;
        }
        st = mf::block_update(g, rec, opt, q);
    }

    const auto& mu = st.local.mu_z;
    out.z_mean.resize(T, m.cfg.D);
    for (int t = 0; t < T; ++t) out.z_mean.row(t) = mu.Ez[t].transpose();
    out.x_mean = m.decode(out.z_mean);
    for (int s = 0; s < n_samples; ++s)
        out.x_samples.push_back(m.decode(chain::sample_posterior(st.local.omega_z, st.local.filt, hash3(seed, 0x5a, s))));
    out.q = st.local.q.marginal;
    return out;
}

// ---------------------------------------------------------------- checkpoints

std::vector<std::uint8_t> encode_checkpoint(const Svae& m) {
    const auto& c = m.cfg;
    Mat conf(1, 14);
    conf << c.Dx, c.D, c.K, c.hidden, c.depth, c.layer_norm, static_cast<int>(c.act), static_cast<int>(c.likelihood),
        c.identity_bijectors, c.prior_noise, c.sticky, c.init_noise, static_cast<double>(c.seed >> 32),
        static_cast<double>(c.seed & 0xffffffffULL);
    std::vector<std::pair<std::string, Mat>> tensors{{"config", conf}};
    const auto names = m.net_param_names();
    const auto ps = m.net_params();
    for (size_t i = 0; i < ps.size(); ++i) tensors.push_back({names[i], *ps[i]});
    for (size_t i = 0; i < m.eta_tilde.size(); ++i) {
        tensors.push_back({"eta_tilde." + std::to_string(i), m.eta_tilde[i]});
        tensors.push_back({"eta0." + std::to_string(i), m.eta0[i]});
    }
    std::vector<std::uint8_t> out{'S', 'V', 'A', 'E'};
    put_u32(out, kCkptVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [n, a] : tensors) put_tensor(out, n, a);
    return out;
}

Svae decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "SVAE", 4) != 0) throw MagicMismatch("not an SVAE checkpoint");
    Reader r(bytes);
    r.str(4);
    const auto version = r.u32();
    if (version != kCkptVersion) throw MagicMismatch("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.u32();
    std::map<std::string, Mat> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u32();
        const std::string name = r.str(len);
        const auto rows = r.u32(), cols = r.u32();
        r.need(std::size_t(rows) * cols * 8);
        Mat a(rows, cols);
        for (std::uint32_t p = 0; p < rows; ++p)
            for (std::uint32_t q = 0; q < cols; ++q) a(p, q) = r.f64();
        tensors[name] = a;
    }
    if (!r.done()) throw LengthError("checkpoint has trailing bytes");
    auto take = [&](const std::string& n) -> Mat& {
        auto it = tensors.find(n);
        if (it == tensors.end()) throw ConfigError("checkpoint is missing tensor '" + n + "'");
        return it->second;
    };
    const Mat conf = take("config");
    if (conf.size() != 14) throw LengthError("checkpoint config tensor has wrong length");
    ModelConfig c;
    c.Dx = int(conf(0));
    c.D = int(conf(1));
    c.K = int(conf(2));
    c.hidden = int(conf(3));
    c.depth = int(conf(4));
    c.layer_norm = conf(5) != 0;
    c.act = static_cast<Activation>(int(conf(6)));
    c.likelihood = static_cast<Likelihood>(int(conf(7)));
    c.identity_bijectors = conf(8) != 0;
    c.prior_noise = conf(9);
    c.sticky = conf(10);
    c.init_noise = conf(11);
    c.seed = (static_cast<std::uint64_t>(conf(12)) << 32) | static_cast<std::uint64_t>(conf(13));
    Svae m = Svae::make(c);
    const auto names = m.net_param_names();
    auto ps = m.net_params();
    auto assign = [&](const std::string& n, Mat& dst) {
        const Mat& src = take(n);
        if (src.rows() != dst.rows() || src.cols() != dst.cols())
            throw ShapeMismatch("checkpoint tensor '" + n + "' has the wrong shape");
        dst = src;
    };
    for (size_t i = 0; i < ps.size(); ++i) assign(names[i], *ps[i]);
    for (size_t i = 0; i < m.eta_tilde.size(); ++i) {
        Mat a = m.eta_tilde[i], b = m.eta0[i];
        assign("eta_tilde." + std::to_string(i), a);
        assign("eta0." + std::to_string(i), b);
        m.eta_tilde[i] = a;
        m.eta0[i] = b;
    }
    if (tensors.size() != 1 + ps.size() + 2 * m.eta_tilde.size()) throw ConfigError("checkpoint has unknown tensors");
    return m;
}

void save(const Svae& m, const std::string& path) {
    const auto bytes = encode_checkpoint(m);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw ConfigError("write to '" + path + "' failed");
}

Svae load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace svae::model
