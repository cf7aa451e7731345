// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <map>

#include "rlarff/error.hpp"
#include "rlarff/seeds.hpp"
#include "rlarff/sigsim.hpp"

using namespace rlarff;
using namespace rlarff::sim;

namespace {

ComplexSignal ramp(std::size_t n) {
    ComplexSignal s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = Complex{0.1 * static_cast<double>(i) + 0.3, -0.05 * static_cast<double>(i)};
    return s;
}

DeviceImpairment noisy_device() {
    DeviceImpairment d;
    d.iq_gain = 1.05;
    d.iq_phase = 0.07;
    d.dc_offset = {0.02, -0.01};
    d.pa_a1 = 0.97;
    d.pa_a3 = -0.08;
    d.phase_noise_std = 0.003;
    return d;
}

ChannelProfile multipath(const std::string& id) {
    ChannelProfile ch;
    ch.environment_id = id;
    ch.taps = {Complex{0.9, 0.1}, Complex{0.3, -0.2}, Complex{0.05, 0.05}};
    ch.cfo = 0.002;
    ch.snr_db = 25.0;
    return ch;
}

}  // namespace

TEST_CASE("preamble generation is deterministic and has the requested length") {
    PreambleSpec spec;
    CHECK(spec.length == 1280);
    const auto a = generate_preamble(spec);
    const auto b = generate_preamble(spec);
    CHECK(a.size() == 1280);
    CHECK(a == b);

    PreambleSpec c;
    c.waveform = "chirp";
    c.length = 64;
    const auto ch = generate_preamble(c);
    for (const auto& v : ch) CHECK(std::abs(v) == doctest::Approx(1.0));

    PreambleSpec bad;
    bad.waveform = "nope";
    CHECK_THROWS_AS(generate_preamble(bad), Error);
}

TEST_CASE("apply_impairment examples") {
    const ComplexSignal s = ramp(32);
    CHECK(apply_impairment(s, DeviceImpairment{}, 123) == s);

    DeviceImpairment dc;
    dc.dc_offset = {0.25, -0.5};
    const auto shifted = apply_impairment(s, dc, 1);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(shifted[i] == s[i] + Complex{0.25, -0.5});

    DeviceImpairment pa;
    pa.pa_a3 = -0.1;
    const auto out = apply_impairment(ComplexSignal{Complex{1.0, 0.0}}, pa, 0);
    CHECK(out[0].real() == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(out[0].imag() == 0.0);
}

TEST_CASE("apply_impairment is deterministic per seed and seeds matter for phase noise") {
    const ComplexSignal s = ramp(64);
    const auto d = noisy_device();
    CHECK(apply_impairment(s, d, 5) == apply_impairment(s, d, 5));
    CHECK(apply_impairment(s, d, 5) != apply_impairment(s, d, 6));
}

TEST_CASE("impairment validation") {
    DeviceImpairment d;
    d.pa_a1 = 0.0;
    CHECK_THROWS_AS(apply_impairment(ramp(4), d, 0), Error);
    d = DeviceImpairment{};
    d.iq_gain = -1.0;
    CHECK_THROWS_AS(apply_impairment(ramp(4), d, 0), Error);
}

TEST_CASE("apply_channel examples") {
    const ComplexSignal x = ramp(16);
    ChannelProfile id;
    id.environment_id = "id";
    CHECK(apply_channel(x, id, 9) == x);

    ChannelProfile delay;
    delay.environment_id = "delay";
    delay.taps = {Complex{0, 0}, Complex{1, 0}};
    const auto y = apply_channel(x, delay, 0);
    CHECK(y[0] == Complex{0, 0});
    for (std::size_t n = 1; n < x.size(); ++n) CHECK(y[n] == x[n - 1]);

    ChannelProfile dead;
    dead.environment_id = "dead";
    dead.taps = {Complex{0, 0}, Complex{0, 0}};
    try {
        apply_channel(x, dead, 0);
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::degenerate_channel);
    }
}

TEST_CASE("channel noise meets the requested SNR in expectation") {
    // Monte-Carlo power ratio over 1e5 samples.
    ComplexSignal x(100000);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::polar(1.0, 0.01 * static_cast<double>(n * n % 977));
    ChannelProfile ch = multipath("mc");
    ch.snr_db = 20.0;
    ChannelProfile quiet = ch;
    quiet.snr_db.reset();
    const auto noisy = apply_channel(x, ch, 77);
    const auto clean = apply_channel(x, quiet, 77);
    double ps = 0.0, pn = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        ps += std::norm(clean[n]);
        pn += std::norm(noisy[n] - clean[n]);
    }
    const double measured = 10.0 * std::log10(ps / pn);
    CHECK(std::abs(measured - 20.0) <= 0.5);
}

TEST_CASE("CFO rotates sample n by omega*n") {
    ChannelProfile ch;
    ch.environment_id = "cfo";
    ch.cfo = 0.3;
    const ComplexSignal x(5, Complex{1.0, 0.0});
    const auto y = apply_channel(x, ch, 0);
    for (std::size_t n = 0; n < 5; ++n) {
        CHECK(std::arg(y[n] * std::polar(1.0, -0.3 * static_cast<double>(n))) == doctest::Approx(0.0));
    }
}

TEST_CASE("build_dataset counting and labels") {
    PreambleSpec spec;
    spec.length = 64;
    const auto devices = sample_devices(DeviceRanges{}, 2, 42);
    const auto d = build_dataset(spec, devices, {multipath("a")}, 3, 1);
    CHECK(d.size() == 6);
    CHECK(d.labels() == std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1});
    d.validate();

    const auto again = build_dataset(spec, devices, {multipath("a")}, 3, 1);
    CHECK(again == d);

    const auto ten = sample_devices(DeviceRanges{}, 10, 3);
    const auto big = build_dataset(spec, ten, {multipath("e1"), multipath("e2"), multipath("e3")}, 50, 8);
    CHECK(big.size() == 1500);
    std::map<std::string, int> per_env;
    for (const auto& s : big.samples) ++per_env[s.environment];
    CHECK(per_env.size() == 3);
    for (const auto& [env, n] : per_env) CHECK(n == 500);

    CHECK_THROWS_AS(build_dataset(spec, devices, {multipath("a")}, 0, 1), Error);
    CHECK_THROWS_AS(build_dataset(spec, {}, {multipath("a")}, 1, 1), Error);
}

TEST_CASE("dataset signals are the float-rounded composition channel(impairment(s))") {
    PreambleSpec spec;
    spec.length = 128;
    const std::vector<DeviceImpairment> devices{noisy_device(), DeviceImpairment{}};
    const std::vector<ChannelProfile> channels{multipath("x"), multipath("y")};
    const auto d = build_dataset(spec, devices, channels, 2, 99);
    const ComplexSignal s = generate_preamble(spec);
    std::size_t triple = 0;
    for (std::size_t j = 0; j < devices.size(); ++j)
        for (const auto& ch : channels)
            for (std::size_t r = 0; r < 2; ++r, ++triple) {
                const auto [a, b] = sample_seeds(99, triple);
                const auto x = apply_channel(apply_impairment(s, devices[j], a), ch, b);
                const auto& stored = d.samples[triple].signal;
                for (std::size_t n = 0; n < x.size(); ++n) {
                    CHECK(stored[n].real() == static_cast<float>(x[n].real()));
                    CHECK(stored[n].imag() == static_cast<float>(x[n].imag()));
                }
            }
}

TEST_CASE("split_adapt_eval") {
    PreambleSpec spec;
    spec.length = 32;
    ChannelProfile ch;
    ch.environment_id = "c";
    const auto devices = sample_devices(DeviceRanges{}, 4, 5);

    SUBCASE("100 samples at 20% split 20/80") {
        const auto d = build_dataset(spec, devices, {ch}, 25, 3);
        const auto [adapt, eval] = split_adapt_eval(d, 0.2, 11);
        CHECK(adapt.size() == 20);
        CHECK(eval.size() == 80);
        CHECK(adapt.role == Role::adapt);
        CHECK(eval.role == Role::eval);
        // disjoint and complete: every original sample lands in exactly one part
        std::size_t found = 0;
        for (const auto& s : d.samples) {
            const auto in_a = std::count(adapt.samples.begin(), adapt.samples.end(), s);
            const auto in_e = std::count(eval.samples.begin(), eval.samples.end(), s);
            CHECK(in_a + in_e == 1);
            found += static_cast<std::size_t>(in_a + in_e);
        }
        CHECK(found == d.size());

        const auto [adapt2, eval2] = split_adapt_eval(d, 0.2, 11);
        CHECK(adapt2 == adapt);
        CHECK(eval2 == eval);
    }
    SUBCASE("ceiling per device") {
        const auto d = build_dataset(spec, devices, {ch}, 5, 3);
        const auto [adapt, eval] = split_adapt_eval(d, 0.2, 1);
        std::map<std::uint32_t, int> a, e;
        for (const auto& s : adapt.samples) ++a[s.device];
        for (const auto& s : eval.samples) ++e[s.device];
        for (std::uint32_t j = 0; j < 4; ++j) {
            CHECK(a[j] == 1);
            CHECK(e[j] == 4);
        }
    }
    SUBCASE("stratification error") {
        const auto d = build_dataset(spec, devices, {ch}, 1, 3);
        try {
            split_adapt_eval(d, 0.2, 1);
            FAIL("expected throw");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::stratification);
        }
    }
}

TEST_CASE("devices separated by the declared gaps transmit distinct clean signals") {
    PreambleSpec spec;
    const DeviceRanges ranges;
    const ImpairmentGaps gaps;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const auto devices = sample_devices(ranges, 12, seed);
        std::vector<ComplexSignal> clean;
        for (const auto& d : devices) clean.push_back(clean_signal(spec, d));
        for (std::size_t a = 0; a < devices.size(); ++a)
            for (std::size_t b = a + 1; b < devices.size(); ++b) {
                if (!distinguishable(devices[a], devices[b], gaps)) continue;
                double dist = 0.0;
                for (std::size_t n = 0; n < clean[a].size(); ++n) dist += std::abs(clean[a][n] - clean[b][n]);
                CHECK(dist / static_cast<double>(clean[a].size()) > 0.0);
            }
    }
}

TEST_CASE("select_environments keeps labels and J") {
    PreambleSpec spec;
    spec.length = 16;
    const auto devices = sample_devices(DeviceRanges{}, 3, 1);
    const auto d = build_dataset(spec, devices, {multipath("a"), multipath("b")}, 2, 4);
    const auto only_b = select_environments(d, {"b"});
    CHECK(only_b.size() == 6);
    CHECK(only_b.device_count == 3);
    for (const auto& s : only_b.samples) CHECK(s.environment == "b");
    only_b.validate();
}
