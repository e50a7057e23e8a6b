#include "svae/gradients.hpp"

#include <cmath>
#include <new>

namespace svae::grad {

void GradMode::validate() const {
    if (J < 0) throw DomainError("GradMode: J must be >= 0");
    if (!(residual_tol > 0)) throw DomainError("GradMode: residual_tol must be positive");
}

GradMode parse_grad_mode(const std::string& s) {
    auto arg = [&](const std::string& prefix) { return s.substr(prefix.size()); };
    GradMode m;
    if (s == "unrolled") {
        m = GradMode::unrolled();
    } else if (s == "capped") {
        m = GradMode::capped();
    } else if (s == "nosolve") {
        m = GradMode::no_solve();
    } else if (s == "capped_threshold") {
        m = GradMode::capped_threshold();
    } else if (s.rfind("capped_threshold:", 0) == 0) {
        m = GradMode::capped_threshold(std::stod(arg("capped_threshold:")));
    } else if (s.rfind("implicit:", 0) == 0) {
        m = GradMode::fixed_j(std::stoi(arg("implicit:")));
    } else {
        throw ConfigError("unknown gradient mode '" + s + "'");
    }
    m.validate();
    return m;
}

std::string to_string(const GradMode& m) {
    switch (m.kind) {
        case GradKind::Unrolled: return "unrolled";
        case GradKind::ImplicitFixedJ: return "implicit:" + std::to_string(m.J);
        case GradKind::ImplicitCapped: return "capped";
        case GradKind::ImplicitCappedThreshold: return "capped_threshold:" + std::to_string(m.residual_tol);
        case GradKind::NoSolve: return "nosolve";
    }
    return "?";
}

Vec richardson_solve(const std::function<Vec(const Vec&)>& vjp_g, const Vec& rhs, int J, RichardsonStats* stats) {
    if (J < 0) throw DomainError("richardson_solve: J must be >= 0");
    const double limit = 1e6 * std::max(rhs.cwiseAbs().maxCoeff(), 1e-300);
    Vec u = rhs;
    for (int j = 1; j <= J; ++j) {
        Vec next = rhs + u - vjp_g(u);
        const double n = next.cwiseAbs().maxCoeff();
        if (!next.allFinite() || n > limit)
            throw NonFinite("richardson_solve: iterate " + std::to_string(j) + " diverged (norm " + std::to_string(n) + ")");
        u = std::move(next);
        if (stats) stats->iters = j;
    }
    if (stats) stats->norm = u.size() ? u.cwiseAbs().maxCoeff() : 0.0;
    return u;
}

namespace {

mf::GlobalExpectedStats<Mat> values_of(const mf::GlobalExpectedStats<Var>& g) {
    return {g.D, g.K, value(g.J0), value(g.h0), value(g.init_logZ), value(g.theta), value(g.trans_logZ),
            value(g.log_pi0), value(g.log_pi)};
}

mf::GlobalExpectedStats<Var> leaves_of(ad::Tape& t, const mf::GlobalExpectedStats<Mat>& g) {
    return {g.D, g.K, t.leaf(g.J0), t.leaf(g.h0), t.leaf(g.init_logZ), t.leaf(g.theta), t.leaf(g.trans_logZ),
            t.leaf(g.log_pi0), t.leaf(g.log_pi)};
}

std::vector<Var> nodes(const mf::GlobalExpectedStats<Var>& g, const mf::Recognition<Var>& r) {
    return {g.J0, g.h0, g.init_logZ, g.theta, g.trans_logZ, g.log_pi0, g.log_pi, r.r, r.R_diag};
}

double w_residual(const mf::LocalState<Var>& s, const Mat& theta) {
    return (value(s.W) - value(s.q.marginal) * theta).cwiseAbs().maxCoeff();
}

}  // namespace

Var local_surrogate_objective(const InnerInputs& in, const mf::LocalState<Var>& s) {
    return obj::local_surrogate(in.g, in.rec, s);
}

Estimate estimate(ad::Tape& tape, const InnerInputs& in, const LocalObjective& objective, const std::vector<Var>& wrt,
                  const EstimateOptions& opt) {
    opt.mode.validate();
    const auto gm = values_of(in.g);
    const mf::Recognition<Mat> rm{value(in.rec.r), value(in.rec.R_diag)};
    const int T = static_cast<int>(rm.r.rows());
    Estimate est;

    if (opt.mode.kind == GradKind::Unrolled) {
        if (opt.mf.max_iters < 0) throw DomainError("unrolled: max_iters must be >= 0");
        Var q = opt.q_init.size() ? tape.constant(opt.q_init) : mf::uniform_marginals(in.g, T);
        // L = 0 returns the initializer omega = (q theta, 0)
        mf::LocalState<Var> s;
        if (opt.mf.max_iters == 0)
            s = mf::solve_local(in.g, in.rec, matmul(q, in.g.theta), tape.constant(Mat::Zero(T - 1, gm.K)));
        std::vector<double> trace;
        for (int it = 0; it < opt.mf.max_iters; ++it) {
            try {
                s = mf::sweep(in.g, in.rec, q);
            } catch (const std::bad_alloc&) {
                throw CapacityError("unrolled: out of memory after " + std::to_string(est.sweeps) + " sweeps");
            }
            q = s.q.marginal;
            ++est.sweeps;
            est.residual = w_residual(s, gm.theta);
            bool stop = est.residual < opt.mf.residual_tol;
            if (opt.mf.tol > 0) {
                trace.push_back(scalar(obj::local_surrogate(in.g, in.rec, s)) - opt.mf.prior_kl);
                const size_t n = trace.size();
                stop = stop || (n >= 2 && std::abs(trace[n - 1] - trace[n - 2]) < opt.mf.tol);
            }
            if (stop) {
                est.state.converged = true;
                break;
            }
        }
        Var val = objective(in, s);
        est.value = scalar(val);
        auto g = tape.vjp({{val, Mat::Ones(1, 1)}});
        for (const auto& v : wrt) est.grads.push_back(g[v]);
        est.stored_states = est.sweeps;
        est.state.local = mf::solve_local(gm, rm, value(s.W), value(s.omega_k.obs));
        est.state.iters = est.sweeps;
        est.state.residual = est.residual;
        est.state.trace = trace;
        return est;
    }

    est.state = mf::block_update(gm, rm, opt.mf, opt.q_init);
    est.sweeps = est.state.iters;
    est.stored_states = 1;
    const Mat omega = est.state.omega();
    Var w = tape.leaf(omega);
    Var W, obs;
    mf::unflatten_omega(w, T, gm.D, gm.K, W, obs);
    auto s = mf::solve_local(in.g, in.rec, W, obs);
    Var val = objective(in, s);
    est.value = scalar(val);
    auto g1 = tape.vjp({{val, Mat::Ones(1, 1)}});
    for (const auto& v : wrt) est.grads.push_back(g1[v]);
    est.residual = est.state.residual;
    if (opt.drop_correction) return est;

    ad::Tape pt;
    auto gl = leaves_of(pt, gm);
    mf::Recognition<Var> rl{pt.leaf(rm.r), pt.leaf(rm.R_diag)};
    Var wl = pt.leaf(omega);
    Var gr = mf::g_residual(wl, gl, rl);
    est.residual = value(gr).cwiseAbs().maxCoeff();

    int J = 0;
    switch (opt.mode.kind) {
        case GradKind::ImplicitFixedJ: J = opt.mode.J; break;
        case GradKind::ImplicitCapped: J = est.sweeps; break;
        case GradKind::ImplicitCappedThreshold:
            est.fell_back = est.residual > opt.mode.residual_tol;
            J = est.fell_back ? 0 : est.sweeps;
            break;
        case GradKind::NoSolve: J = 0; break;
        case GradKind::Unrolled: break;
    }
    auto vjp_g = [&](const Vec& u) -> Vec { return pt.vjp({{gr, u}})[wl]; };
    RichardsonStats rs;
    const Vec u = richardson_solve(vjp_g, g1[w], J, &rs);
    est.richardson_iters = rs.iters;

    // d omega*/d inputs = -(dg/domega)^-1 dg/dinputs
    auto back = pt.vjp({{gr, Mat(-u)}});
    const auto main_nodes = nodes(in.g, in.rec), phi_nodes = nodes(gl, rl);
    std::vector<std::pair<Var, Mat>> seeds;
    for (size_t i = 0; i < main_nodes.size(); ++i)
        if (back.touched(phi_nodes[i].id)) seeds.push_back({main_nodes[i], back[phi_nodes[i]]});
    if (seeds.empty()) return est;
    auto g2 = tape.vjp(seeds);
    for (size_t i = 0; i < wrt.size(); ++i) est.grads[i] += g2[wrt[i]];
    return est;
}

GlobalNodes build_globals(ad::Tape& tape, const mf::GlobalLayout& layout, const std::vector<param::FamilyBijector>& bij,
                          const std::vector<Vec>& eta_tilde, GlobalGrad kind) {
    const auto fams = layout.families();
    if (bij.size() != fams.size() || eta_tilde.size() != fams.size())
        throw DimMismatch("build_globals: need one bijector and parameter block per factor");
    GlobalNodes out;
    for (size_t i = 0; i < fams.size(); ++i) {
        if (!(bij[i].family == fams[i])) throw FamilyMismatch("build_globals: bijector family differs from layout");
        Var x = tape.leaf(eta_tilde[i]);
        out.eta_tilde.push_back(x);
        if (kind == GlobalGrad::Plain) {
            out.eta.push_back(param::bijector_node(bij[i], x));
            out.mu.push_back(expfam::expected_stats_of(fams[i], out.eta.back()));
        } else {
            out.eta.push_back(param::natgrad_map(bij[i], x));
            const auto f = fams[i];
            out.mu.push_back(ad::straight_through(
                out.eta.back(), [f](const Mat& e) { return Mat(expfam::expected_stats({f, e}).data); }, "mean_params"));
        }
    }
    out.g = mf::global_expected_stats(layout, out.mu);
    return out;
}

}  // namespace svae::grad
