// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rlarff/ndmath.hpp"

namespace rlarff::sim {

using Complex = std::complex<double>;
using ComplexSignal = std::vector<Complex>;

/// Known transmitted preamble. Waveforms:
///  - "oqpsk_halfsine": repeated 32-chip spreading sequence, offset-QPSK
///    with half-sine pulses (samples_per_chip samples per chip period).
///  - "chirp": unit-amplitude linear chirp sweeping chirp_span cycles/sample.
struct PreambleSpec {
    std::size_t length = 1280;
    std::string waveform = "oqpsk_halfsine";
    std::size_t samples_per_chip = 5;
    double chirp_span = 0.25;

    void validate() const;
    bool operator==(const PreambleSpec&) const = default;
};

ComplexSignal generate_preamble(const PreambleSpec& spec);

/// Transmitter hardware impairments, applied in declaration order.
struct DeviceImpairment {
    double iq_gain = 1.0;         // Q-branch amplitude ratio
    double iq_phase = 0.0;        // radians
    Complex dc_offset{0.0, 0.0};
    double pa_a1 = 1.0;
    double pa_a3 = 0.0;
    double phase_noise_std = 0.0;  // radians per sample, random-walk increment

    void validate() const;
    bool operator==(const DeviceImpairment&) const = default;
};

struct ChannelProfile {
    std::string environment_id;
    std::vector<Complex> taps{Complex{1.0, 0.0}};
    double cfo = 0.0;               // radians per sample
    std::optional<double> snr_db;   // nullopt: noiseless

    void validate() const;
    bool operator==(const ChannelProfile&) const = default;
};

inline constexpr std::size_t kMaxTaps = 8;

ComplexSignal apply_impairment(const ComplexSignal& s, const DeviceImpairment& imp, std::uint64_t seed);
ComplexSignal apply_channel(const ComplexSignal& x, const ChannelProfile& ch, std::uint64_t seed);

/// Uniform sampling ranges for device parameters.
struct DeviceRanges {
    std::pair<double, double> iq_gain{0.92, 1.08};
    std::pair<double, double> iq_phase{-0.12, 0.12};
    double dc_magnitude = 0.06;  // real and imaginary parts in [-m, m]
    std::pair<double, double> pa_a1{0.92, 1.08};
    std::pair<double, double> pa_a3{-0.12, 0.0};
    std::pair<double, double> phase_noise_std{0.0, 0.004};

    void validate() const;
};

DeviceImpairment sample_device(const DeviceRanges& ranges, std::uint64_t device_seed);

/// `count` devices, device i drawn with derive_seed(seed, i).
std::vector<DeviceImpairment> sample_devices(const DeviceRanges& ranges, std::size_t count, std::uint64_t seed);

/// Minimum per-parameter differences used by the separability precondition.
struct ImpairmentGaps {
    double iq_gain = 1e-3;
    double iq_phase = 1e-3;
    double dc_offset = 1e-3;
    double pa_a1 = 1e-3;
    double pa_a3 = 1e-3;
};

/// True when any parameter differs by more than its declared gap.
bool distinguishable(const DeviceImpairment& a, const DeviceImpairment& b, const ImpairmentGaps& gaps);

/// Noise-free, identity-channel transmission of the preamble by one device.
ComplexSignal clean_signal(const PreambleSpec& spec, const DeviceImpairment& imp);

enum class Role { train, validation, adapt, eval };
std::string role_name(Role r);
Role parse_role(const std::string& name);

/// One received preamble, stored at 32-bit precision (the on-disk precision).
struct Sample {
    std::vector<std::complex<float>> signal;
    std::uint32_t device = 0;
    std::string environment;

    bool operator==(const Sample&) const = default;
};

struct LabeledDataset {
    std::size_t length = 0;        // M
    std::size_t device_count = 0;  // J
    Role role = Role::train;
    std::vector<std::string> environments;  // declared environment set
    std::vector<Sample> samples;

    // Provenance, carried into the file manifest.
    PreambleSpec preamble;
    std::vector<DeviceImpairment> devices;
    std::vector<ChannelProfile> channels;
    std::size_t per_pair_count = 0;
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return samples.size(); }
    void validate() const;
    /// 2 x M real view (row 0 = I, row 1 = Q) of sample i.
    nd::Tensor input(std::size_t i) const;
    std::vector<std::uint32_t> labels() const;

    bool operator==(const LabeledDataset&) const = default;
};

nd::Tensor to_input_tensor(const ComplexSignal& x);

/// Emits g(f(s)) for every (device, channel, repetition) triple, in that
/// nesting order. Per-sample seeds derive from (seed, triple index).
LabeledDataset build_dataset(const PreambleSpec& spec, const std::vector<DeviceImpairment>& devices,
                             const std::vector<ChannelProfile>& channels, std::size_t per_pair_count,
                             std::uint64_t seed, Role role = Role::train);

/// Stratified by device: each device contributes ceil(fraction * n_dev)
/// samples (clamped to [1, n_dev - 1]) to the adaptation part.
std::pair<LabeledDataset, LabeledDataset> split_adapt_eval(const LabeledDataset& d, double adapt_fraction,
                                                           std::uint64_t seed);

/// Samples recorded in the given environments, relabelled to keep J.
LabeledDataset select_environments(const LabeledDataset& d, const std::vector<std::string>& environments);

/// Seeds used for the impairment and channel stages of one sample.
std::pair<std::uint64_t, std::uint64_t> sample_seeds(std::uint64_t dataset_seed, std::size_t triple_index);

}  // namespace rlarff::sim
