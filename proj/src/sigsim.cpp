// SPDX-License-Identifier: Apache-2.0
#include "rlarff/sigsim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "rlarff/error.hpp"
#include "rlarff/seeds.hpp"

namespace rlarff::sim {

namespace {

// 32-chip spreading sequence for the all-zero preamble symbol.
constexpr std::array<int, 32> kChips = {1, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1,
                                        0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 1, 0};

bool finite(double v) { return std::isfinite(v); }

ComplexSignal oqpsk_halfsine(std::size_t length, std::size_t spc) {
    // Even chips ride the I branch, odd chips the Q branch delayed by one chip
    // period; every pulse is a half sine two chip periods long.
    ComplexSignal s(length, Complex{0.0, 0.0});
    const std::size_t pulse = 2 * spc;
    const std::size_t chips = (length + spc - 1) / spc + 2;
    for (std::size_t k = 0; k < chips; ++k) {
        const double level = kChips[k % kChips.size()] ? 1.0 : -1.0;
        const std::size_t start = k * spc;
        for (std::size_t t = 0; t < pulse; ++t) {
            const std::size_t n = start + t;
            if (n >= length) break;
            const double v = level * std::sin(std::numbers::pi * static_cast<double>(t) / static_cast<double>(pulse));
            if (k % 2 == 0) {
                s[n].real(s[n].real() + v);
            } else {
                s[n].imag(s[n].imag() + v);
            }
        }
    }
    return s;
}

ComplexSignal chirp(std::size_t length, double span) {
    ComplexSignal s(length);
    const double m = static_cast<double>(length);
    const double f0 = -span / 2.0;
    for (std::size_t n = 0; n < length; ++n) {
        const double t = static_cast<double>(n);
        const double phase = 2.0 * std::numbers::pi * (f0 * t + span * t * t / (2.0 * m));
        s[n] = std::polar(1.0, phase);
    }
    return s;
}

double uniform(std::mt19937_64& rng, std::pair<double, double> range) {
    if (range.first == range.second) return range.first;
    return std::uniform_real_distribution<double>(range.first, range.second)(rng);
}

void check_range(const std::pair<double, double>& r, const char* name) {
    if (!(finite(r.first) && finite(r.second) && r.first <= r.second)) {
        fail(Errc::config, std::string("device range ") + name + " must be finite with min <= max");
    }
}

}  // namespace

void PreambleSpec::validate() const {
    if (length == 0) fail(Errc::config, "preamble length must be positive");
    if (waveform == "oqpsk_halfsine") {
        if (samples_per_chip == 0) fail(Errc::config, "samples_per_chip must be positive");
    } else if (waveform == "chirp") {
        if (!finite(chirp_span)) fail(Errc::config, "chirp_span must be finite");
    } else {
        fail(Errc::config, "unknown preamble waveform '" + waveform + "'");
    }
}

ComplexSignal generate_preamble(const PreambleSpec& spec) {
    spec.validate();
    if (spec.waveform == "chirp") return chirp(spec.length, spec.chirp_span);
    return oqpsk_halfsine(spec.length, spec.samples_per_chip);
}

void DeviceImpairment::validate() const {
    if (!(iq_gain > 0.0) || !finite(iq_gain)) fail(Errc::config, "iq_gain must be positive");
    if (!(pa_a1 > 0.0) || !finite(pa_a1)) fail(Errc::config, "pa_a1 must be positive");
    if (!finite(iq_phase) || !finite(pa_a3) || !finite(dc_offset.real()) || !finite(dc_offset.imag()))
        fail(Errc::config, "device impairment parameters must be finite");
    if (!(phase_noise_std >= 0.0) || !finite(phase_noise_std))
        fail(Errc::config, "phase_noise_std must be non-negative");
}

void ChannelProfile::validate() const {
    if (environment_id.empty()) fail(Errc::config, "channel environment_id must be non-empty");
    if (taps.empty() || taps.size() > kMaxTaps)
        fail(Errc::config, "channel '" + environment_id + "' must have 1.." + std::to_string(kMaxTaps) + " taps");
    double energy = 0.0;
    for (const auto& h : taps) energy += std::norm(h);
    if (!(energy > 0.0)) fail(Errc::degenerate_channel, "channel '" + environment_id + "' has zero tap energy");
    if (!finite(cfo)) fail(Errc::config, "channel '" + environment_id + "' cfo must be finite");
    if (snr_db && std::isnan(*snr_db)) fail(Errc::config, "channel '" + environment_id + "' snr_db is NaN");
}

ComplexSignal apply_impairment(const ComplexSignal& s, const DeviceImpairment& imp, std::uint64_t seed) {
    imp.validate();
    // Transmit IQ imbalance: y = mu*s + nu*conj(s), identity at gain 1, phase 0.
    const Complex mu = (Complex{1.0, 0.0} + imp.iq_gain * std::polar(1.0, -imp.iq_phase)) / 2.0;
    const Complex nu = (Complex{1.0, 0.0} - imp.iq_gain * std::polar(1.0, imp.iq_phase)) / 2.0;
    ComplexSignal out(s.size());
    for (std::size_t n = 0; n < s.size(); ++n) {
        Complex u = mu * s[n] + nu * std::conj(s[n]);
        u += imp.dc_offset;
        out[n] = imp.pa_a1 * u + imp.pa_a3 * u * std::norm(u);
    }
    if (imp.phase_noise_std > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> step(0.0, imp.phase_noise_std);
        double theta = 0.0;
        for (auto& v : out) {
            theta += step(rng);
            v *= std::polar(1.0, theta);
        }
    }
    return out;
}

ComplexSignal apply_channel(const ComplexSignal& x, const ChannelProfile& ch, std::uint64_t seed) {
    ch.validate();
    const std::size_t m = x.size();
    ComplexSignal y(m, Complex{0.0, 0.0});
    for (std::size_t n = 0; n < m; ++n) {
        Complex acc{0.0, 0.0};
        for (std::size_t k = 0; k < ch.taps.size() && k <= n; ++k) acc += ch.taps[k] * x[n - k];
        y[n] = acc;
    }
    if (ch.cfo != 0.0) {
        for (std::size_t n = 0; n < m; ++n) y[n] *= std::polar(1.0, ch.cfo * static_cast<double>(n));
    }
    if (ch.snr_db && std::isfinite(*ch.snr_db) && m > 0) {
        double power = 0.0;
        for (const auto& v : y) power += std::norm(v);
        power /= static_cast<double>(m);
        const double noise_power = power / std::pow(10.0, *ch.snr_db / 10.0);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, std::sqrt(noise_power / 2.0));
        for (auto& v : y) {
            const double re = noise(rng);
            const double im = noise(rng);
            v += Complex{re, im};
        }
    }
    return y;
}

void DeviceRanges::validate() const {
    check_range(iq_gain, "iq_gain");
    check_range(iq_phase, "iq_phase");
    check_range(pa_a1, "pa_a1");
    check_range(pa_a3, "pa_a3");
    check_range(phase_noise_std, "phase_noise_std");
    if (!(iq_gain.first > 0.0)) fail(Errc::config, "iq_gain range must be positive");
    if (!(pa_a1.first > 0.0)) fail(Errc::config, "pa_a1 range must be positive");
    if (!(phase_noise_std.first >= 0.0)) fail(Errc::config, "phase_noise_std range must be non-negative");
    if (!(dc_magnitude >= 0.0) || !finite(dc_magnitude)) fail(Errc::config, "dc_magnitude must be non-negative");
}

DeviceImpairment sample_device(const DeviceRanges& ranges, std::uint64_t device_seed) {
    ranges.validate();
    std::mt19937_64 rng(device_seed);
    DeviceImpairment d;
    d.iq_gain = uniform(rng, ranges.iq_gain);
    d.iq_phase = uniform(rng, ranges.iq_phase);
    const double re = uniform(rng, {-ranges.dc_magnitude, ranges.dc_magnitude});
    const double im = uniform(rng, {-ranges.dc_magnitude, ranges.dc_magnitude});
    d.dc_offset = Complex{re, im};
    d.pa_a1 = uniform(rng, ranges.pa_a1);
    d.pa_a3 = uniform(rng, ranges.pa_a3);
    d.phase_noise_std = uniform(rng, ranges.phase_noise_std);
    return d;
}

std::vector<DeviceImpairment> sample_devices(const DeviceRanges& ranges, std::size_t count, std::uint64_t seed) {
    std::vector<DeviceImpairment> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_device(ranges, derive_seed(seed, i)));
    return out;
}

bool distinguishable(const DeviceImpairment& a, const DeviceImpairment& b, const ImpairmentGaps& gaps) {
    return std::abs(a.iq_gain - b.iq_gain) > gaps.iq_gain || std::abs(a.iq_phase - b.iq_phase) > gaps.iq_phase ||
           std::abs(a.dc_offset - b.dc_offset) > gaps.dc_offset || std::abs(a.pa_a1 - b.pa_a1) > gaps.pa_a1 ||
           std::abs(a.pa_a3 - b.pa_a3) > gaps.pa_a3;
}

ComplexSignal clean_signal(const PreambleSpec& spec, const DeviceImpairment& imp) {
    DeviceImpairment quiet = imp;
    quiet.phase_noise_std = 0.0;
    return apply_impairment(generate_preamble(spec), quiet, 0);
}

std::string role_name(Role r) {
    switch (r) {
        case Role::train: return "train";
        case Role::validation: return "validation";
        case Role::adapt: return "adapt";
        case Role::eval: return "eval";
    }
    return "train";
}

Role parse_role(const std::string& name) {
    if (name == "train") return Role::train;
    if (name == "validation") return Role::validation;
    if (name == "adapt") return Role::adapt;
    if (name == "eval") return Role::eval;
    fail(Errc::format, "unknown dataset role '" + name + "'");
}

void LabeledDataset::validate() const {
    if (length == 0) fail(Errc::contract, "dataset signal length must be positive");
    const std::set<std::string> declared(environments.begin(), environments.end());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.signal.size() != length)
            fail(Errc::dimension, "sample " + std::to_string(i) + " has length " + std::to_string(s.signal.size()) +
                                      ", expected " + std::to_string(length));
        if (s.device >= device_count)
            fail(Errc::contract, "sample " + std::to_string(i) + " label " + std::to_string(s.device) +
                                     " outside [0, " + std::to_string(device_count) + ")");
        if (!declared.contains(s.environment))
            fail(Errc::contract, "sample " + std::to_string(i) + " environment '" + s.environment + "' not declared");
    }
}

nd::Tensor to_input_tensor(const ComplexSignal& x) {
    nd::Tensor t({2, x.size()});
    for (std::size_t n = 0; n < x.size(); ++n) {
        t(0, n) = x[n].real();
        t(1, n) = x[n].imag();
    }
    return t;
}

nd::Tensor LabeledDataset::input(std::size_t i) const {
    const auto& sig = samples.at(i).signal;
    nd::Tensor t({2, sig.size()});
    for (std::size_t n = 0; n < sig.size(); ++n) {
        t(0, n) = static_cast<double>(sig[n].real());
        t(1, n) = static_cast<double>(sig[n].imag());
    }
    return t;
}

std::vector<std::uint32_t> LabeledDataset::labels() const {
    std::vector<std::uint32_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.device);
    return out;
}

std::pair<std::uint64_t, std::uint64_t> sample_seeds(std::uint64_t dataset_seed, std::size_t triple_index) {
    const std::uint64_t base = derive_seed(dataset_seed, triple_index);
    return {derive_seed(base, "impairment"), derive_seed(base, "channel")};
}

LabeledDataset build_dataset(const PreambleSpec& spec, const std::vector<DeviceImpairment>& devices,
                             const std::vector<ChannelProfile>& channels, std::size_t per_pair_count,
                             std::uint64_t seed, Role role) {
    if (devices.empty()) fail(Errc::config, "build_dataset: device list is empty");
    if (channels.empty()) fail(Errc::config, "build_dataset: channel list is empty");
    if (per_pair_count == 0) fail(Errc::config, "build_dataset: per_pair_count must be positive");
    for (const auto& d : devices) d.validate();
    for (const auto& c : channels) c.validate();

    const ComplexSignal s = generate_preamble(spec);
    LabeledDataset out;
    out.length = spec.length;
    out.device_count = devices.size();
    out.role = role;
    out.preamble = spec;
    out.devices = devices;
    out.channels = channels;
    out.per_pair_count = per_pair_count;
    out.seed = seed;
    for (const auto& c : channels) {
        if (std::find(out.environments.begin(), out.environments.end(), c.environment_id) == out.environments.end())
            out.environments.push_back(c.environment_id);
    }
    out.samples.reserve(devices.size() * channels.size() * per_pair_count);

    std::size_t triple = 0;
    for (std::size_t j = 0; j < devices.size(); ++j) {
        for (const auto& ch : channels) {
            for (std::size_t r = 0; r < per_pair_count; ++r, ++triple) {
                const auto [imp_seed, ch_seed] = sample_seeds(seed, triple);
                const ComplexSignal x = apply_channel(apply_impairment(s, devices[j], imp_seed), ch, ch_seed);
                Sample smp;
                smp.signal.resize(x.size());
                for (std::size_t n = 0; n < x.size(); ++n)
                    smp.signal[n] = {static_cast<float>(x[n].real()), static_cast<float>(x[n].imag())};
                smp.device = static_cast<std::uint32_t>(j);
                smp.environment = ch.environment_id;
                out.samples.push_back(std::move(smp));
            }
        }
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_adapt_eval(const LabeledDataset& d, double adapt_fraction,
                                                           std::uint64_t seed) {
    if (!(adapt_fraction > 0.0 && adapt_fraction < 1.0))
        fail(Errc::config, "adapt_fraction must lie in (0, 1), got " + std::to_string(adapt_fraction));
    std::vector<std::vector<std::size_t>> by_device(d.device_count);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        if (d.samples[i].device >= d.device_count) fail(Errc::contract, "split_adapt_eval: label out of range");
        by_device[d.samples[i].device].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<char> to_adapt(d.samples.size(), 0);
    for (std::size_t j = 0; j < by_device.size(); ++j) {
        auto& idx = by_device[j];
        if (idx.empty()) continue;
        if (idx.size() < 2)
            fail(Errc::stratification, "device " + std::to_string(j) + " has fewer than 2 samples");
        std::shuffle(idx.begin(), idx.end(), rng);
        auto take = static_cast<std::size_t>(std::ceil(adapt_fraction * static_cast<double>(idx.size()) - 1e-9));
        take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
        for (std::size_t k = 0; k < take; ++k) to_adapt[idx[k]] = 1;
    }

    LabeledDataset adapt = d, eval = d;
    adapt.samples.clear();
    eval.samples.clear();
    adapt.role = Role::adapt;
    eval.role = Role::eval;
    for (std::size_t i = 0; i < d.samples.size(); ++i) (to_adapt[i] ? adapt : eval).samples.push_back(d.samples[i]);
    return {std::move(adapt), std::move(eval)};
}

LabeledDataset select_environments(const LabeledDataset& d, const std::vector<std::string>& environments) {
    LabeledDataset out = d;
    out.samples.clear();
    out.environments = environments;
    const std::set<std::string> keep(environments.begin(), environments.end());
    for (const auto& s : d.samples)
        if (keep.contains(s.environment)) out.samples.push_back(s);
    out.channels.erase(std::remove_if(out.channels.begin(), out.channels.end(),
                                      [&](const ChannelProfile& c) { return !keep.contains(c.environment_id); }),
                       out.channels.end());
    return out;
}

}  // namespace rlarff::sim
