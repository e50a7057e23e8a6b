// svae: generate data, fit, infer, impute, bench and self-check.
//
// Exit codes: 0 ok, 1 failed check suite, 2 configuration error, 3 numerical failure.
// Worker threads: SVAE_THREADS wins over --threads.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "svae/data_io.hpp"
#include "svae/parallel_bp.hpp"
#include "svae/rng.hpp"
#include "svae/svae_model.hpp"

using namespace svae;

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<bool> parse_mask(const std::string& spec, int T) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ConfigError("mask must look like a:b, got '" + spec + "'");
    double a, b;
    try {
        size_t pa, pb;
        a = std::stod(spec.substr(0, colon), &pa);
        b = std::stod(spec.substr(colon + 1), &pb);
        if (pa != colon || pb != spec.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ConfigError("mask must look like a:b, got '" + spec + "'");
    }
    return model::mask_range(T, a, b);
}

struct Common {
    std::string model = "slds";
    int D = 2, K = 0;  // 0: 1 for lds, 8 for slds
    std::string grad_mode = "capped_threshold";
    std::string bp = "sequential";
    int threads = 1;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* c, Common& o) {
    c->add_option("--model", o.model, "lds or slds")->check(CLI::IsMember({"lds", "slds"}));
    c->add_option("--latent-dim", o.D, "continuous latent dimension");
    c->add_option("--states", o.K, "discrete states (slds, default 8)");
    c->add_option("--grad-mode", o.grad_mode,
                  "unrolled | implicit:J | capped | capped_threshold[:tol] | nosolve");
    c->add_option("--bp", o.bp, "sequential or parallel")->check(CLI::IsMember({"sequential", "parallel"}));
    c->add_option("--threads", o.threads, "worker threads (SVAE_THREADS overrides)");
    c->add_option("--seed", o.seed, "master seed");
}

struct Runtime {
    std::unique_ptr<ThreadPool> pool;
    mf::BpOptions bp;
    int threads = 1;
};

Runtime make_runtime(const Common& o) {
    Runtime rt;
    if (o.threads < 1) throw ConfigError("--threads must be >= 1");
    rt.threads = threads_from_env(o.threads);
    rt.pool = std::make_unique<ThreadPool>(rt.threads);
    rt.bp.parallel = o.bp == "parallel";
    rt.bp.pool = rt.pool.get();
    return rt;
}

int states_of(const Common& o) {
    if (o.model == "lds") {
        if (o.K > 1) throw ConfigError("--states is fixed to 1 for --model lds");
        return 1;
    }
    if (o.K < 0) throw ConfigError("--states must be >= 1");
    return o.K == 0 ? 8 : o.K;
}

std::ostream& open_out(const std::string& path, std::ofstream& f) {
    if (path.empty() || path == "-") return std::cout;
    f.open(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    return f;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string kind = "laplace";
    std::string out, csv;
    int T = 250, n = 20, grid = 100, period = 0, D = 2, Dx = 10;
    std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
    data::SequenceFile f;
    if (a.kind == "laplace") {
        data::SynthConfig c;
        c.T = a.T;
        c.n_sequences = a.n;
        c.grid_size = a.grid;
        c.switch_period = a.period;
        c.seed = a.seed;
        f = data::gen_laplace_sequences(c);
    } else {
        if (a.T < 1 || a.n < 1 || a.D < 1 || a.Dx < 1) throw ConfigError("T, n, latent dim and Dx must be positive");
        CounterRng rng(a.seed, 0x9e4);
        data::LdsParams p;
        const double th = 0.2;
        p.A = Mat::Identity(a.D, a.D) * 0.95;
        if (a.D >= 2) {
            p.A(0, 0) = p.A(1, 1) = 0.95 * std::cos(th);
            p.A(0, 1) = -0.95 * std::sin(th);
            p.A(1, 0) = 0.95 * std::sin(th);
        }
        p.Q = Mat::Identity(a.D, a.D) * 0.05;
        p.b = Vec::Zero(a.D);
        p.mu0 = Vec::Zero(a.D);
        p.S0 = Mat::Identity(a.D, a.D);
        p.C = rng.normal(a.Dx, a.D);
        p.R = Mat::Identity(a.Dx, a.Dx) * 0.01;
        p.d = Vec::Zero(a.Dx);
        f.T = a.T;
        f.Dx = a.Dx;
        for (int n = 0; n < a.n; ++n) f.x.push_back(data::gen_lds_ground_truth(p, a.T, hash3(a.seed, 0x5e9, n)).x);
    }
    if (a.out.empty()) throw ConfigError("--out is required");
    data::write_sequences(a.out, f);
    if (!a.csv.empty()) {
        std::ofstream os(a.csv, std::ios::binary);
        if (!os) throw ConfigError("cannot write " + a.csv);
        data::write_csv(os, f);
    }
    std::cerr << "wrote " << f.N() << " sequences of T=" << f.T << ", Dx=" << f.Dx << " to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
    Common c;
    std::string data, metrics, checkpoint;
    int steps = 300, batch = 4, n_mc = 1, hidden = 64, sweeps = 30;
    double adam_lr = 3e-3, nat_lr = 0.5, nat_lr_joint = 0.1;
    bool drop_correction = false, plain = false, wall_time = false;
};

int run_fit(const FitArgs& a) {
    const auto rt = make_runtime(a.c);
    const auto f = data::read_sequences(a.data);
    model::ModelConfig mc;
    mc.Dx = f.Dx;
    mc.D = a.c.D;
    mc.K = states_of(a.c);
    mc.hidden = a.hidden;
    mc.seed = a.c.seed;
    auto m = model::Svae::make(mc);

    model::TrainConfig tc;
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.n_mc = a.n_mc;
    tc.adam_lr = a.adam_lr;
    tc.nat_lr = a.nat_lr;
    tc.nat_lr_joint = a.nat_lr_joint;
    tc.mode = grad::parse_grad_mode(a.c.grad_mode);
    tc.global = a.plain ? grad::GlobalGrad::Plain : grad::GlobalGrad::Natural;
    tc.drop_correction = a.drop_correction;
    tc.mf.max_iters = a.sweeps;
    tc.mf.bp = rt.bp;
    tc.seed = a.c.seed;
    tc.wall_time = a.wall_time;
    tc.validate();

    std::ofstream file;
    std::ostream& os = open_out(a.metrics, file);
    os << "step,elbo,prior_kl,local_kl,recon,surrogate,wall_ms\n";
    tc.on_step = [&](const model::StepMetrics& s) {
        os << s.step << ',' << fmt(s.elbo) << ',' << fmt(s.prior_kl) << ',' << fmt(s.local_kl) << ','
           << fmt(s.recon) << ',' << fmt(s.surrogate) << ',' << fmt(s.wall_ms) << '\n';
    };
    tc.on_stage_end = [&](int stage, const model::Svae& cur) {
        std::cerr << "stage " << stage << " done\n";
        if (!a.checkpoint.empty() && stage < 3) model::save(cur, a.checkpoint + ".stage" + std::to_string(stage));
    };
    model::train(m, f.x, tc);
    os.flush();
    if (!a.checkpoint.empty()) model::save(m, a.checkpoint);
    return 0;
}

// ---------------------------------------------------------------------------
// infer / impute

struct InferArgs {
    Common c;
    std::string checkpoint, data, out, mask;
    int samples = 0, sweeps = 100;
};

mf::MfOptions infer_options(const InferArgs& a, const Runtime& rt) {
    mf::MfOptions o;
    o.max_iters = a.sweeps;
    o.tol = 0;
    o.residual_tol = 1e-8;
    o.bp = rt.bp;
    return o;
}

void write_row_values(std::ostream& os, const Mat& m, int row, int cols) {
    for (int j = 0; j < cols; ++j) os << ',' << (row < m.rows() ? fmt(m(row, j)) : std::string());
}

int run_infer(const InferArgs& a) {
    const auto rt = make_runtime(a.c);
    const auto m = model::load(a.checkpoint);
    const auto f = data::read_sequences(a.data);
    if (f.Dx != m.cfg.Dx) throw ConfigError("data has Dx=" + std::to_string(f.Dx) + ", model expects " +
                                            std::to_string(m.cfg.Dx));
    const auto opt = infer_options(a, rt);
    std::ofstream file;
    std::ostream& os = open_out(a.out, file);
    os << "seq,t";
    for (int d = 0; d < m.cfg.D; ++d) os << ",z" << d;
    for (int k = 0; k < m.cfg.K; ++k) os << ",q" << k;
    os << '\n';
    for (int n = 0; n < f.N(); ++n) {
        const auto st = model::infer(m, f.x[n], {}, opt);
        for (int t = 0; t < f.T; ++t) {
            os << n << ',' << t;
            for (int d = 0; d < m.cfg.D; ++d) os << ',' << fmt(st.local.mu_z.Ez[t](d));
            write_row_values(os, st.local.q.marginal, t, m.cfg.K);
            os << '\n';
        }
        std::cerr << "seq " << n << ": " << st.iters << " sweeps, residual " << st.residual << "\n";
    }
    return 0;
}

int run_impute(const InferArgs& a) {
    const auto rt = make_runtime(a.c);
    const auto m = model::load(a.checkpoint);
    const auto f = data::read_sequences(a.data);
    if (f.Dx != m.cfg.Dx) throw ConfigError("data has Dx=" + std::to_string(f.Dx) + ", model expects " +
                                            std::to_string(m.cfg.Dx));
    if (a.samples < 0) throw ConfigError("--samples must be >= 0");
    const auto mask = a.mask.empty() ? std::vector<bool>(f.T, false) : parse_mask(a.mask, f.T);
    const auto opt = infer_options(a, rt);

    std::string idx;
    for (int t = 0; t < f.T; ++t)
        if (mask[t]) idx += (idx.empty() ? "" : " ") + std::to_string(t);
    std::cerr << "masked steps: " << (idx.empty() ? "none" : idx) << "\n";

    std::ofstream file;
    std::ostream& os = open_out(a.out, file);
    os << "seq,t,masked";
    for (int d = 0; d < m.cfg.Dx; ++d) os << ",x" << d;
    os << '\n';
    for (int n = 0; n < f.N(); ++n) {
        const auto r = model::impute(m, f.x[n], mask, a.samples, hash3(a.c.seed, 0x1a9, n), opt);
        for (int t = 0; t < f.T; ++t) {
            os << n << ',' << t << ',' << (mask[t] ? 1 : 0);
            for (int d = 0; d < m.cfg.Dx; ++d) os << ',' << fmt(r.x_mean(t, d));
            os << '\n';
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
    Common c;
    int T = 1024, reps = 3, sweeps = 10, Dx = 0, hidden = 16;
    std::string out;
};

int run_bench(const BenchArgs& a) {
    const auto rt = make_runtime(a.c);
    if (a.T < 2 || a.reps < 1 || a.sweeps < 0) throw ConfigError("need T >= 2, reps >= 1, sweeps >= 0");
    model::ModelConfig mc;
    mc.D = a.c.D;
    mc.Dx = a.Dx > 0 ? a.Dx : a.c.D;
    mc.K = states_of(a.c);
    mc.hidden = a.hidden;
    mc.seed = a.c.seed;
    const auto m = model::Svae::make(mc);
    CounterRng rng(a.c.seed, 0xbe7c);
    const Mat x = rng.normal(a.T, mc.Dx);
    const std::vector<Mat> eps{rng.normal(a.T, mc.D)};

    model::EvalOptions eo;
    eo.mode = grad::parse_grad_mode(a.c.grad_mode);
    eo.mf.max_iters = a.sweeps;
    eo.mf.tol = 0;
    eo.mf.residual_tol = 0;
    eo.mf.bp = rt.bp;

    int peak = 0;
    double best = 1e300;
    for (int r = 0; r < a.reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = model::evaluate(m, x, {}, eps, eo);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        best = std::min(best, ms);
        peak = std::max(peak, res.est.stored_states);
    }
    std::ofstream file;
    std::ostream& os = open_out(a.out, file);
    os << "T,D,K,bp,threads,grad_mode,ms_per_step,peak_states\n";
    os << a.T << ',' << mc.D << ',' << mc.K << ',' << a.c.bp << ',' << rt.threads << ','
       << grad::to_string(eo.mode) << ',' << fmt(best) << ',' << peak << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// check

struct CheckResult {
    bool ok;
    std::string detail;
};

mf::Recognition<Mat> random_rec(CounterRng& rng, int T, int D) {
    Mat R = rng.normal(T, D).array().abs() + 0.5;
    return {rng.normal(T, D), R};
}

model::Svae check_model(int D, int K, std::uint64_t seed) {
    model::ModelConfig mc;
    mc.Dx = 3;
    mc.D = D;
    mc.K = K;
    mc.hidden = 4;
    mc.seed = seed;
    return model::Svae::make(mc);
}

CheckResult check_bp() {
    double worst = 0;
    for (int T : {1, 2, 3, 17, 64}) {
        const auto m = check_model(2, 1, 1);
        CounterRng rng(T, 1);
        const auto g = m.global_stats();
        const auto p = mf::mf_to_continuous(g, mf::uniform_marginals(g, T), random_rec(rng, T, 2));
        const auto fs = chain::kalman_filter(p), fp = parallel::parallel_filter(p);
        const auto ss = chain::kalman_smooth(p, fs), sp = parallel::parallel_smooth(p, fp);
        worst = std::max(worst, std::abs(fs.logZ(0, 0) - fp.logZ(0, 0)));
        for (int t = 0; t < T; ++t) {
            worst = std::max(worst, (ss.Ez[t] - sp.Ez[t]).cwiseAbs().maxCoeff());
            worst = std::max(worst, (ss.Ezz[t] - sp.Ezz[t]).cwiseAbs().maxCoeff());
        }
    }
    return {worst < 1e-8, "max parallel/sequential gap " + fmt(worst)};
}

CheckResult check_hmm() {
    CounterRng rng(2, 0);
    double worst = 0;
    for (int K : {1, 2, 3}) {
        for (int Tk : {1, 2, 4}) {
            hmm::HmmPotentials<Mat> p;
            p.K = K;
            p.Tk = Tk;
            p.log_pi0 = rng.normal(K, 1);
            p.log_pi = rng.normal(K, K);
            p.obs = rng.normal(Tk, K);
            const auto fb = hmm::forward_backward(p);
            // path enumeration
            int n = 1;
            for (int t = 0; t < Tk; ++t) n *= K;
            std::vector<double> lw(n);
            Mat marg = Mat::Zero(Tk, K);
            double mx = -1e300;
            for (int c = 0; c < n; ++c) {
                int r = c, prev = -1;
                double s = 0;
                for (int t = 0; t < Tk; ++t) {
                    const int k = r % K;
                    r /= K;
                    s += (prev < 0 ? p.log_pi0(k) : p.log_pi(prev, k)) + p.obs(t, k);
                    prev = k;
                }
                lw[c] = s;
                mx = std::max(mx, s);
            }
            double Z = 0;
            for (double v : lw) Z += std::exp(v - mx);
            for (int c = 0; c < n; ++c) {
                int r = c;
                for (int t = 0; t < Tk; ++t) {
                    marg(t, r % K) += std::exp(lw[c] - mx) / Z;
                    r /= K;
                }
            }
            worst = std::max(worst, std::abs(fb.logZ(0, 0) - (mx + std::log(Z))));
            worst = std::max(worst, (fb.marginal - marg).cwiseAbs().maxCoeff());
        }
    }
    return {worst < 1e-10, "max enumeration gap " + fmt(worst)};
}

CheckResult check_expfam() {
    const auto m = check_model(2, 3, 3);
    double worst = 0;
    const double h = 1e-5;
    for (const auto& eta : m.eta()) {
        const Vec mu = expfam::expected_stats(eta).data;
        for (int i = 0; i < eta.data.size(); ++i) {
            auto e = eta;
            e.data(i) += h;
            const double fp = expfam::log_partition(e);
            e.data(i) -= 2 * h;
            const double fm = expfam::log_partition(e);
            const double fd = (fp - fm) / (2 * h);
            worst = std::max(worst, std::abs(fd - mu(i)) / std::max(1.0, std::abs(mu(i))));
        }
    }
    return {worst < 1e-5, "max relative grad-logZ gap " + fmt(worst)};
}

CheckResult check_meanfield() {
    double drop = 0, resid = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto m = check_model(2, 3, 10 + s);
        CounterRng rng(s, 4);
        mf::MfOptions o;
        o.max_iters = 2000;
        o.tol = 0;
        o.residual_tol = 1e-9;
        const auto st = mf::block_update(m.global_stats(), random_rec(rng, 20, 2), o);
        for (size_t i = 1; i < st.trace.size(); ++i) drop = std::max(drop, st.trace[i - 1] - st.trace[i]);
        resid = std::max(resid, st.residual);
    }
    return {drop <= 1e-9 && resid <= 1e-8, "largest decrease " + fmt(drop) + ", residual " + fmt(resid)};
}

CheckResult check_gradients() {
    const auto m = check_model(2, 2, 5);
    CounterRng rng(5, 5);
    const Mat x = rng.normal(5, 3);
    const std::vector<Mat> eps{rng.normal(5, 2)};
    model::EvalOptions eo;
    eo.mf.max_iters = 5000;
    eo.mf.tol = 0;
    eo.mf.residual_tol = 1e-12;
    eo.mode = grad::GradMode::no_solve();
    const auto ns = model::evaluate(m, x, {}, eps, eo);
    eo.mode = grad::GradMode::fixed_j(0);
    const auto j0 = model::evaluate(m, x, {}, eps, eo);
    bool same = true;
    for (size_t i = 0; i < ns.net_grads.size(); ++i) same = same && ns.net_grads[i] == j0.net_grads[i];
    eo.mode = grad::GradMode::capped();
    const auto cap = model::evaluate(m, x, {}, eps, eo);
    eo.mode = grad::GradMode::unrolled();
    const auto unr = model::evaluate(m, x, {}, eps, eo);
    double worst = 0;
    for (size_t i = 0; i < cap.net_grads.size(); ++i) {
        const double scale = std::max(1e-2, unr.net_grads[i].cwiseAbs().maxCoeff());
        worst = std::max(worst, (cap.net_grads[i] - unr.net_grads[i]).cwiseAbs().maxCoeff() / scale);
    }
    return {same && worst < 1e-4,
            std::string(same ? "" : "nosolve != J=0; ") + "capped/unrolled rel gap " + fmt(worst)};
}

CheckResult check_io() {
    data::SynthConfig c;
    c.T = 20;
    c.n_sequences = 2;
    c.grid_size = 16;
    const auto f = data::gen_laplace_sequences(c);
    const bool seq_ok = data::encode(data::decode(data::encode(f))) == data::encode(f);
    const auto m = check_model(2, 3, 6);
    const auto bytes = model::encode_checkpoint(m);
    const bool ck_ok = model::encode_checkpoint(model::decode_checkpoint(bytes)) == bytes;
    return {seq_ok && ck_ok, std::string("sequence file ") + (seq_ok ? "ok" : "differs") + ", checkpoint " +
                                 (ck_ok ? "ok" : "differs")};
}

int run_check(const std::string& suite) {
    const std::vector<std::pair<std::string, CheckResult (*)()>> all{
        {"bp", check_bp},           {"hmm", check_hmm},             {"expfam", check_expfam},
        {"meanfield", check_meanfield}, {"gradients", check_gradients}, {"io", check_io}};
    bool any = false, ok = true;
    for (const auto& [name, fn] : all) {
        if (suite != "all" && suite != name) continue;
        any = true;
        CheckResult r{false, ""};
        try {
            r = fn();
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        std::cout << (r.ok ? "PASS " : "FAIL ") << name << ": " << r.detail << "\n";
        ok = ok && r.ok;
    }
    if (!any) throw ConfigError("unknown suite '" + suite + "'");
    return ok ? 0 : 1;
}

// Config file entries "[command] key = value" become --key value unless the flag is on the command line.
std::vector<std::string> merge_config(const std::vector<std::string>& args, CLI::App& app) {
    std::string path;
    for (size_t i = 0; i + 1 < args.size(); ++i)
        if (args[i] == "--config") path = args[i + 1];
    if (path.empty() || args.empty()) return args;
    const auto cfg = data::Config::load(path);
    const std::string cmd = args[0];
    auto* sub = [&]() -> CLI::App* {
        try {
            return app.get_subcommand(cmd);
        } catch (const CLI::OptionNotFound&) {
            return nullptr;
        }
    }();
    if (!sub) return args;
    std::set<std::string> given;
    for (const auto& s : args)
        if (s.rfind("--", 0) == 0) given.insert(s.substr(2, s.find('=') == std::string::npos ? std::string::npos
                                                                                             : s.find('=') - 2));
    std::vector<std::string> known;
    std::vector<std::string> out{cmd};
    for (const auto* opt : sub->get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || names[0] == "config") continue;
        const std::string key = cmd + "." + names[0];
        known.push_back(key);
        if (!cfg.has(key) || given.count(names[0])) continue;
        const std::string v = cfg.get(key, "");
        if (opt->get_expected_min() == 0) {
            if (cfg.get_bool(key, false)) out.push_back("--" + names[0]);
        } else {
            out.push_back("--" + names[0]);
            out.push_back(v);
        }
    }
    cfg.reject_unknown(known);
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured VAE with switching linear dynamics"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    std::string config_path;

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "synthetic sequences");
    g->add_option("--kind", gen.kind, "laplace or lds")->check(CLI::IsMember({"laplace", "lds"}));
    g->add_option("--out", gen.out, "sequence file")->required();
    g->add_option("--csv", gen.csv, "also write CSV");
    g->add_option("--T", gen.T, "steps per sequence");
    g->add_option("--n", gen.n, "number of sequences");
    g->add_option("--grid", gen.grid, "laplace grid size");
    g->add_option("--period", gen.period, "laplace regime period (0 = T/5)");
    g->add_option("--latent-dim", gen.D, "lds latent dimension");
    g->add_option("--dx", gen.Dx, "lds observation dimension");
    g->add_option("--seed", gen.seed, "seed");

    FitArgs fit;
    auto* f = app.add_subcommand("fit", "three-stage training");
    add_common(f, fit.c);
    f->add_option("--data", fit.data, "sequence file")->required();
    f->add_option("--metrics", fit.metrics, "metric CSV (default stdout)");
    f->add_option("--checkpoint", fit.checkpoint, "fitted model; stages 1 and 2 go to <path>.stage1/.stage2");
    f->add_option("--steps", fit.steps);
    f->add_option("--batch", fit.batch);
    f->add_option("--n-mc", fit.n_mc, "Monte Carlo samples per sequence");
    f->add_option("--hidden", fit.hidden, "hidden width");
    f->add_option("--sweeps", fit.sweeps, "max block-update sweeps");
    f->add_option("--adam-lr", fit.adam_lr);
    f->add_option("--nat-lr", fit.nat_lr, "stage-2 natural step");
    f->add_option("--nat-lr-joint", fit.nat_lr_joint, "stage-3 natural step");
    f->add_flag("--drop-correction", fit.drop_correction, "biased gradient: treat the inner optimum as constant");
    f->add_flag("--plain-gradient", fit.plain, "ordinary gradient on the global parameters");
    f->add_flag("--wall-time", fit.wall_time, "record wall_ms (breaks byte-identical logs)");

    InferArgs inf;
    auto* in = app.add_subcommand("infer", "posterior means and discrete marginals");
    add_common(in, inf.c);
    in->add_option("--checkpoint", inf.checkpoint)->required();
    in->add_option("--data", inf.data)->required();
    in->add_option("--out", inf.out, "CSV (default stdout)");
    in->add_option("--sweeps", inf.sweeps);

    InferArgs imp;
    auto* im = app.add_subcommand("impute", "fill a masked range");
    add_common(im, imp.c);
    im->add_option("--checkpoint", imp.checkpoint)->required();
    im->add_option("--data", imp.data)->required();
    im->add_option("--out", imp.out, "CSV (default stdout)");
    im->add_option("--mask", imp.mask, "fractional range a:b");
    im->add_option("--samples", imp.samples, "posterior samples to draw");
    im->add_option("--sweeps", imp.sweeps);

    BenchArgs bench;
    auto* b = app.add_subcommand("bench", "time one gradient step");
    add_common(b, bench.c);
    b->add_option("--T", bench.T);
    b->add_option("--dx", bench.Dx, "observation dimension (default latent dim)");
    b->add_option("--reps", bench.reps);
    b->add_option("--hidden", bench.hidden, "hidden width");
    b->add_option("--sweeps", bench.sweeps, "block-update sweeps per step");
    b->add_option("--out", bench.out, "CSV (default stdout)");

    std::string suite = "all";
    auto* ck = app.add_subcommand("check", "run the invariant suite");
    ck->add_option("--suite", suite, "all | bp | hmm | expfam | meanfield | gradients | io");

    for (auto* s : {g, f, in, im, b, ck}) s->add_option("--config", config_path, "INI file, [command] sections");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = merge_config(args, app);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (g->parsed()) return run_generate(gen);
        if (f->parsed()) return run_fit(fit);
        if (in->parsed()) return run_infer(inf);
        if (im->parsed()) return run_impute(imp);
        if (b->parsed()) return run_bench(bench);
        if (ck->parsed()) return run_check(suite);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
