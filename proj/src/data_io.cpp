#include "svae/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "svae/errors.hpp"
#include "svae/rng.hpp"

static_assert(std::endian::native == std::endian::little, "SVSQ I/O assumes a little-endian host");

namespace svae::data {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'S', 'Q'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeader = 20;

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get_at(const std::vector<std::uint8_t>& in, std::size_t off) {
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    return v;
}

Mat chol_lower(const Mat& S, const char* what) {
    if (S.size() == 0) return S;
    Eigen::LLT<Mat> llt(sym(S));
    if (llt.info() != Eigen::Success) throw NotSPD(std::string(what) + " is not positive definite");
    return llt.matrixL();
}

Vec gauss(CounterRng& rng, const Vec& mean, const Mat& L) { return mean + L * rng.normal(static_cast<int>(mean.size()), 1); }

Mat emit(CounterRng& rng, const Mat& z, const Mat& C, const Vec& d, const Mat& R) {
    if (C.size() == 0) return z;
    const Mat L = chol_lower(R, "R");
    Mat x(z.rows(), C.rows());
    for (int t = 0; t < z.rows(); ++t) x.row(t) = gauss(rng, C * z.row(t).transpose() + d, L).transpose();
    return x;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void SequenceFile::validate() const {
    if (T <= 0 || Dx <= 0) throw ShapeMismatch("SequenceFile: T and Dx must be positive");
    for (const auto& m : x) {
        if (m.rows() != T || m.cols() != Dx) throw ShapeMismatch("SequenceFile: sequence shape differs from header");
        if (!m.allFinite()) throw NonFinite("SequenceFile: non-finite value");
    }
    if (!labels.empty()) {
        if (labels.size() != x.size()) throw ShapeMismatch("SequenceFile: one label row per sequence");
        for (const auto& l : labels)
            if (static_cast<int>(l.size()) != T) throw ShapeMismatch("SequenceFile: label row length must be T");
    }
}

std::vector<std::uint8_t> encode(const SequenceFile& f) {
    f.validate();
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.N()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.T));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.Dx));
    out.reserve(out.size() + static_cast<std::size_t>(f.N()) * f.T * (f.Dx * 8 + 1));
    for (const auto& m : f.x)
        for (int t = 0; t < f.T; ++t)
            for (int i = 0; i < f.Dx; ++i) put<double>(out, m(t, i));
    for (const auto& l : f.labels) out.insert(out.end(), l.begin(), l.end());
    return out;
}

SequenceFile decode(const std::vector<std::uint8_t>& in) {
    if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw MagicMismatch("not an SVSQ file");
    if (in.size() < kHeader) throw LengthError("SVSQ header truncated");
    const auto version = get_at<std::uint32_t>(in, 4);
    if (version != kVersion) throw MagicMismatch("unsupported SVSQ version " + std::to_string(version));
    const std::size_t N = get_at<std::uint32_t>(in, 8), T = get_at<std::uint32_t>(in, 12),
                      Dx = get_at<std::uint32_t>(in, 16);
    const std::size_t payload = N * T * Dx * 8, rest = in.size() - kHeader;
    if (rest < payload)
        throw LengthError("SVSQ payload truncated: expected " + std::to_string(payload) + " bytes, found " +
                          std::to_string(rest));
    const std::size_t extra = rest - payload;
    if (extra != 0 && extra != N * T)
        throw LengthError("SVSQ trailing block of " + std::to_string(extra) + " bytes is not a label block");
    SequenceFile f;
    f.T = static_cast<int>(T);
    f.Dx = static_cast<int>(Dx);
    std::size_t off = kHeader;
    for (std::size_t n = 0; n < N; ++n) {
        Mat m(T, Dx);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < Dx; ++i, off += 8) m(t, i) = get_at<double>(in, off);
        f.x.push_back(std::move(m));
    }
    if (extra)
        for (std::size_t n = 0; n < N; ++n, off += T) f.labels.emplace_back(in.begin() + off, in.begin() + off + T);
    f.validate();
    return f;
}

void write_sequences(const std::string& path, const SequenceFile& f) {
    const auto bytes = encode(f);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw ConfigError("write to '" + path + "' failed");
}

SequenceFile read_sequences(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

void write_csv(std::ostream& os, const SequenceFile& f) {
    os << "seq,t";
    for (int i = 0; i < f.Dx; ++i) os << ",x" << i;
    if (!f.labels.empty()) os << ",label";
    os << '\n';
    os.precision(17);
    for (int n = 0; n < f.N(); ++n)
        for (int t = 0; t < f.T; ++t) {
            os << n << ',' << t;
            for (int i = 0; i < f.Dx; ++i) os << ',' << f.x[n](t, i);
            if (!f.labels.empty()) os << ',' << int(f.labels[n][t]);
            os << '\n';
        }
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::MeanUp: return "mean+";
        case Regime::MeanDown: return "mean-";
        case Regime::VarUp: return "var+";
        case Regime::VarDown: return "var-";
    }
    return "?";
}

void SynthConfig::validate() const {
    if (grid_size < 2) throw ConfigError("synth: grid_size must be >= 2");
    if (T < 1 || n_sequences < 1) throw ConfigError("synth: T and n_sequences must be positive");
    if (switch_period < 0) throw ConfigError("synth: switch_period must be >= 0");
    if (!(delta >= 0) || !(gamma >= 0)) throw ConfigError("synth: steps must be non-negative");
    if (!(sigma >= 0)) throw ConfigError("synth: sigma must be >= 0");
    if (!(amplitude > 0)) throw ConfigError("synth: amplitude must be positive");
    if (!(m_lo < m_hi) || !(s_lo > 0) || !(s_lo < s_hi)) throw ConfigError("synth: empty location/scale box");
    if (fixed_regime > 3) throw ConfigError("synth: fixed_regime must be -1 or 0..3");
    const double span_m = delta * period(), span_s = gamma * period();
    if (fixed_regime < 0 && (2 * span_m > m_hi - m_lo + 1e-12 || 2 * span_s > s_hi - s_lo + 1e-12))
        throw ConfigError("synth: one switch period of drift does not fit the location/scale box");
}

Vec laplace_frame(const SynthConfig& cfg, double m, double s) {
    Vec f(cfg.grid_size);
    for (int i = 0; i < cfg.grid_size; ++i) f(i) = std::exp(-std::abs(double(i) / cfg.grid_size - m) / s) / (2 * s);
    if (!(f.sum() > 0) || !f.allFinite()) throw ConfigError("synth: Laplace bump left the grid");
    return cfg.amplitude * f / f.sum();
}

SequenceFile gen_laplace_sequences(const SynthConfig& cfg) {
    cfg.validate();
    SequenceFile out;
    out.T = cfg.T;
    out.Dx = cfg.grid_size;
    const int P = cfg.period();
    const double span_m = cfg.delta * P, span_s = cfg.gamma * P;
    for (int n = 0; n < cfg.n_sequences; ++n) {
        CounterRng rng(cfg.seed, static_cast<std::uint64_t>(n));
        double m = cfg.m_lo + span_m + rng.uniform() * (cfg.m_hi - cfg.m_lo - 2 * span_m);
        double s = cfg.s_lo + span_s + rng.uniform() * (cfg.s_hi - cfg.s_lo - 2 * span_s);
        int regime = -1;
        Mat x(cfg.T, cfg.grid_size);
        std::vector<std::uint8_t> lab(cfg.T);
        for (int t = 0; t < cfg.T; ++t) {
            if (cfg.fixed_regime >= 0) {
                regime = cfg.fixed_regime;
            } else if (t % P == 0) {
                Vec w = Vec::Zero(4);
                const int left = std::min(P, cfg.T - t);
                if (m + cfg.delta * left <= cfg.m_hi) w(0) = 1;
                if (m - cfg.delta * left >= cfg.m_lo) w(1) = 1;
                if (s + cfg.gamma * left <= cfg.s_hi) w(2) = 1;
                if (s - cfg.gamma * left >= cfg.s_lo) w(3) = 1;
                if (regime >= 0 && w.sum() > 1) w(regime) = 0;
                regime = rng.categorical(w);
            }
            switch (static_cast<Regime>(regime)) {
                case Regime::MeanUp: m += cfg.delta; break;
                case Regime::MeanDown: m -= cfg.delta; break;
                case Regime::VarUp: s += cfg.gamma; break;
                case Regime::VarDown: s -= cfg.gamma; break;
            }
            if (!(s > 0)) throw ConfigError("synth: scale left the positive range");
            Vec f = laplace_frame(cfg, m, s);
            if (cfg.sigma > 0) f += cfg.sigma * rng.normal(cfg.grid_size, 1);
            x.row(t) = f.transpose();
            lab[t] = static_cast<std::uint8_t>(regime);
        }
        out.x.push_back(std::move(x));
        out.labels.push_back(std::move(lab));
    }
    return out;
}

LdsSample gen_lds_ground_truth(const LdsParams& p, int T, std::uint64_t seed) {
    const int D = static_cast<int>(p.A.rows());
    if (T < 1) throw DomainError("gen_lds: T must be positive");
    if (p.A.cols() != D || p.Q.rows() != D || p.b.size() != D || p.mu0.size() != D || p.S0.rows() != D)
        throw DimMismatch("gen_lds: parameter shapes disagree");
    CounterRng rng(seed, 0x4c4453);
    const Mat LQ = chol_lower(p.Q, "Q"), L0 = chol_lower(p.S0, "S0");
    LdsSample out;
    out.spectral_radius = p.A.eigenvalues().cwiseAbs().maxCoeff();
    out.z.resize(T, D);
    Vec z = gauss(rng, p.mu0, L0);
    out.z.row(0) = z.transpose();
    for (int t = 1; t < T; ++t) {
        z = gauss(rng, p.A * z + p.b, LQ);
        out.z.row(t) = z.transpose();
    }
    out.x = emit(rng, out.z, p.C, p.d, p.R);
    return out;
}

SldsSample gen_slds_ground_truth(const SldsParams& p, int T, std::uint64_t seed) {
    const int K = static_cast<int>(p.A.size()), D = static_cast<int>(p.mu0.size());
    if (T < 2) throw DomainError("gen_slds: T must be >= 2");
    if (K < 1 || p.Q.size() != p.A.size() || p.b.size() != p.A.size() || p.pi0.size() != K || p.pi.rows() != K ||
        p.pi.cols() != K)
        throw DimMismatch("gen_slds: parameter shapes disagree");
    CounterRng rng(seed, 0x534c4453);
    std::vector<Mat> LQ;
    for (const auto& Q : p.Q) LQ.push_back(chol_lower(Q, "Q"));
    SldsSample out;
    out.z.resize(T, D);
    Vec z = gauss(rng, p.mu0, chol_lower(p.S0, "S0"));
    out.z.row(0) = z.transpose();
    int k = rng.categorical(p.pi0);
    for (int t = 0; t + 1 < T; ++t) {
        if (t > 0) k = rng.categorical(p.pi.row(k).transpose());
        out.k.push_back(k);
        z = gauss(rng, p.A[k] * z + p.b[k], LQ[k]);
        out.z.row(t + 1) = z.transpose();
    }
    out.x = emit(rng, out.z, p.C, p.d, p.R);
    return out;
}

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const int indent = static_cast<int>(line.find_first_not_of(" \t"));
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ParseError("unterminated section header", lineno, indent + static_cast<int>(body.size()));
            section = trim(body.substr(1, body.size() - 2));
            if (section.empty()) throw ParseError("empty section name", lineno, indent + 1);
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, indent);
        const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
        if (key.empty()) throw ParseError("missing key", lineno, indent);
        if (key.find_first_of(" \t[]") != std::string::npos) throw ParseError("invalid key '" + key + "'", lineno, indent);
        const std::string full = section.empty() ? key : section + "." + key;
        if (c.values_.count(full))
            throw ParseError("duplicate key '" + full + "' (first on line " + std::to_string(c.lines_[full]) + ")",
                             lineno, indent);
        c.values_[full] = value;
        c.lines_[full] = lineno;
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != it->second.size())
        throw ParseError("'" + key + "' is not a number: '" + it->second + "'", lines_.count(key) ? lines_.at(key) : 0, 0);
    return v;
}

long Config::get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != it->second.size())
        throw ParseError("'" + key + "' is not an integer: '" + it->second + "'", lines_.count(key) ? lines_.at(key) : 0,
                         0);
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ParseError("'" + key + "' is not a boolean: '" + s + "'", lines_.count(key) ? lines_.at(key) : 0, 0);
}

void Config::reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_)
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
}

}  // namespace svae::data
