#pragma once

// Synthetic sequence generators, the SVSQ sequence file, CSV export and the
// key = value config format.
//
// SVSQ layout (little-endian): "SVSQ", u32 version = 1, u32 N, u32 T, u32 Dx,
// N*T*Dx f64 (sequence-major, then time, then feature), then optionally N*T u8
// regime labels. Labels are present iff the bytes after the payload number N*T.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "svae/linalg.hpp"

namespace svae::data {

struct SequenceFile {
    int T = 0, Dx = 0;
    std::vector<Mat> x;                               // N entries, T x Dx
    std::vector<std::vector<std::uint8_t>> labels;    // empty or N entries of length T

    int N() const { return static_cast<int>(x.size()); }
    void validate() const;
};

std::vector<std::uint8_t> encode(const SequenceFile& f);
SequenceFile decode(const std::vector<std::uint8_t>& bytes);
void write_sequences(const std::string& path, const SequenceFile& f);
SequenceFile read_sequences(const std::string& path);

// Header "seq,t,x0,...,x{Dx-1}[,label]", one row per (sequence, step).
void write_csv(std::ostream& os, const SequenceFile& f);

// Regimes of the Laplace bump: drift the location up/down, widen/narrow the scale.
enum class Regime : std::uint8_t { MeanUp = 0, MeanDown = 1, VarUp = 2, VarDown = 3 };
const char* regime_name(Regime r);

// Frame x_t[i] = amplitude * p(g_i; m_t, s_t) / sum_j p(g_j; m_t, s_t) + sigma * noise,
// with p the Laplace density and g_i = i / grid_size. Every noiseless frame sums to
// amplitude. Each switch_period steps a new regime is drawn uniformly from those
// that keep (m, s) inside [m_lo, m_hi] x [s_lo, s_hi] for the whole period, excluding
// the current one. A fixed_regime >= 0 disables switching.
struct SynthConfig {
    int grid_size = 100;
    int T = 250;
    int n_sequences = 20;
    int switch_period = 0;  // 0 = T / 5
    double delta = 0.005;   // location step per time step
    double gamma = 0.001;   // scale step per time step
    double sigma = 0.01;
    double amplitude = 10.0;
    double m_lo = 0.15, m_hi = 0.85;
    double s_lo = 0.02, s_hi = 0.12;
    int fixed_regime = -1;
    std::uint64_t seed = 0;

    int period() const { return switch_period > 0 ? switch_period : std::max(1, T / 5); }
    void validate() const;
};

SequenceFile gen_laplace_sequences(const SynthConfig& cfg);

// Noiseless frame for location m and scale s.
Vec laplace_frame(const SynthConfig& cfg, double m, double s);

// z_0 ~ N(mu0, S0), z_{t+1} = A z_t + b + N(0, Q); x_t = C z_t + d + N(0, R).
// With C empty, x = z.
struct LdsParams {
    Mat A, Q;
    Vec b, mu0;
    Mat S0;
    Mat C, R;
    Vec d;
};

struct LdsSample {
    Mat z;  // T x D
    Mat x;  // T x Dx
    double spectral_radius = 0.0;
};

LdsSample gen_lds_ground_truth(const LdsParams& p, int T, std::uint64_t seed);

// K linear regimes with a Markov chain over k_t; k_t drives z_t -> z_{t+1}.
struct SldsParams {
    std::vector<Mat> A, Q;
    std::vector<Vec> b;
    Vec mu0;
    Mat S0;
    Vec pi0;  // K
    Mat pi;   // K x K, rows sum to 1
    Mat C, R;
    Vec d;
};

struct SldsSample {
    Mat z, x;
    std::vector<int> k;  // T - 1
};

SldsSample gen_slds_ground_truth(const SldsParams& p, int T, std::uint64_t seed);

// INI-style text: "[section]" headers, "key = value" lines, '#' or ';' comments.
// Keys are stored as "section.key" (bare "key" before any header).
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    // Throws ConfigError naming the first key not in known.
    void reject_unknown(const std::vector<std::string>& known) const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
};

}  // namespace svae::data
