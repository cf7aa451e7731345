// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "rlarff/error.hpp"
#include "rlarff/io.hpp"
#include "support.hpp"

using namespace rlarff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("rlarff_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

sim::LabeledDataset small_dataset(std::uint64_t seed) {
    sim::PreambleSpec spec;
    spec.length = 32;
    sim::ChannelProfile a, b;
    a.environment_id = "a";
    a.snr_db = 20.0;
    b.environment_id = "b";
    b.taps = {{1.0, 0.0}, {0.3, -0.2}};
    b.cfo = 0.01;
    return sim::build_dataset(spec, sim::sample_devices({}, 3, seed), {a, b}, 2, seed, sim::Role::adapt);
}

fx::Architecture small_arch() {
    fx::Architecture a;
    a.input_length = 32;
    a.convs = {{4, 5, 2}};
    a.embedding_dim = 6;
    return a;
}

io::Checkpoint small_checkpoint() {
    io::Checkpoint c;
    c.model = fx::ExtractorModel(small_arch(), 3);
    std::mt19937_64 rng(4);
    for (auto& l : c.model.layers()) l.bias = testing::random_tensor(l.bias.shape(), rng);
    c.head = fx::init_head(3, 6, 5);
    c.seeds = {{"init", 3}, {"train/base", 0xffffffffffffffffULL}};
    c.history = {7, 0.123456789012345678, 0.9, 1.0 / 3.0, true};
    c.config_hash = "0123456789abcdef";
    return c;
}

bool same_bits(const nd::Tensor& a, const nd::Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), 8 * a.size()) == 0;
}

void overwrite(const fs::path& p, std::size_t offset, const std::string& bytes) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class F>
Errc code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error raised");
    return Errc::contract;
}

}  // namespace

TEST_CASE("dataset round-trip is bit-exact") {
    TempDir dir;
    const auto d = small_dataset(11);
    const auto p = dir.path / "d.rffd";
    io::save_dataset(d, p);
    const auto back = io::load_dataset(p);
    CHECK(back == d);
    CHECK(back.channels[0].snr_db == 20.0);
    CHECK_FALSE(back.channels[1].snr_db.has_value());
    // header + manifest + exactly 8 bytes per complex sample
    const auto bytes = io::read_file(p);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= std::uint64_t(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    CHECK(bytes.size() == 16 + len + d.size() * d.length * 8);
    // first I value stored little-endian
    const auto first = std::bit_cast<std::uint32_t>(d.samples[0].signal[0].real());
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= std::uint32_t(static_cast<unsigned char>(bytes[16 + len + i])) << (8 * i);
    CHECK(stored == first);
    // save of the loaded copy reproduces the file byte for byte
    io::save_dataset(back, dir.path / "again.rffd");
    CHECK(io::read_file(dir.path / "again.rffd") == bytes);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    TempDir dir;
    const auto c = small_checkpoint();
    const auto p = dir.path / "m.rffc";
    io::save_checkpoint(c, p);
    const auto back = io::load_checkpoint(p);
    CHECK(back.model.architecture() == c.model.architecture());
    REQUIRE(back.model.layers().size() == c.model.layers().size());
    for (std::size_t k = 0; k < c.model.layers().size(); ++k) {
        CHECK(same_bits(back.model.layers()[k].weight, c.model.layers()[k].weight));
        CHECK(same_bits(back.model.layers()[k].bias, c.model.layers()[k].bias));
    }
    CHECK(same_bits(back.head.directions, c.head.directions));
    CHECK(back.head.scale == c.head.scale);
    CHECK(back.seeds == c.seeds);
    CHECK(back.history == c.history);
    CHECK(back.config_hash == c.config_hash);
    CHECK(back.model.checksum() == c.model.checksum());
    io::save_checkpoint(back, dir.path / "again.rffc");
    CHECK(io::read_file(dir.path / "again.rffc") == io::read_file(p));
}

TEST_CASE("LoRA round-trip is bit-exact, A then B per target") {
    TempDir dir;
    const fx::ExtractorModel m(small_arch(), 3);
    io::LoRAFile f;
    f.module = lora::init_lora(m, {"dense", "conv1"}, 2, 8, "ch9");
    std::mt19937_64 rng(9);
    for (auto& [_, fac] : f.module.factors) fac.b = testing::random_tensor(fac.b.shape(), rng);
    f.base_checksum = m.checksum();
    f.config_hash = "abc";
    const auto p = dir.path / "ch9.rffl";
    io::save_lora(f, p);
    const auto back = io::load_lora(p);
    CHECK(back.module.environment_id == "ch9");
    CHECK(back.module.rank == 2);
    CHECK(back.module.targets == f.module.targets);
    for (const auto& t : f.module.targets) {
        CHECK(same_bits(back.module.at(t).a, f.module.at(t).a));
        CHECK(same_bits(back.module.at(t).b, f.module.at(t).b));
    }
    CHECK(back.base_checksum == m.checksum());

    // payload order: conv1 A, conv1 B, dense A, dense B
    const auto bytes = io::read_file(p);
    std::size_t total = 0;
    for (const auto& t : f.module.targets) total += f.module.at(t).a.size() + f.module.at(t).b.size();
    const std::size_t start = bytes.size() - 8 * total;
    double first = 0.0;
    std::memcpy(&first, bytes.data() + start, 8);
    CHECK(f.module.targets.front() == "conv1");
    CHECK(first == f.module.at("conv1").a[0]);
    const std::size_t b_off = start + 8 * f.module.at("conv1").a.size();
    std::memcpy(&first, bytes.data() + b_off, 8);
    CHECK(first == f.module.at("conv1").b[0]);
}

TEST_CASE("evaluation report round-trip is bit-exact") {
    TempDir dir;
    eval::PairSet ps;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int i = 0; i < 60; ++i) ps.pairs.push_back({u(rng) * (i % 3 == 0 ? 0.4 : 1.0), i % 3 == 0});
    const auto rep = eval::evaluate_pairs(ps);
    const io::ReportInfo info{"rla", "checkpoint base.rffc", "feedbeef00000000", 42};
    const auto p = dir.path / "eval_rla.json";
    io::save_eval_report(rep, info, p);
    CHECK(fs::exists(dir.path / "eval_rla.roc.csv"));
    CHECK(io::read_file(dir.path / "eval_rla.roc.csv").starts_with("threshold,FAR,FRR\n"));
    const auto [back, back_info] = io::load_eval_report(p);
    CHECK(back_info == info);
    CHECK(std::bit_cast<std::uint64_t>(back.eer) == std::bit_cast<std::uint64_t>(rep.eer));
    CHECK(std::bit_cast<std::uint64_t>(back.auc) == std::bit_cast<std::uint64_t>(rep.auc));
    CHECK(back.eer_threshold == rep.eer_threshold);
    CHECK(back.genuine_pairs == rep.genuine_pairs);
    REQUIRE(back.roc.size() == rep.roc.size());
    bool exact = true;
    for (std::size_t i = 0; i < rep.roc.size(); ++i)
        exact = exact && back.roc[i].threshold == rep.roc[i].threshold && back.roc[i].far == rep.roc[i].far &&
                back.roc[i].frr == rep.roc[i].frr;
    CHECK(exact);
}

TEST_CASE("io and format errors") {
    TempDir dir;
    SUBCASE("missing file names the path") {
        const auto p = dir.path / "absent.rffd";
        try {
            io::load_dataset(p);
            FAIL("no error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::io);
            CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
        }
    }
    SUBCASE("wrong magic") {
        const auto p = dir.path / "m.rffc";
        io::save_checkpoint(small_checkpoint(), p);
        CHECK(code_of([&] { io::load_dataset(p); }) == Errc::format);
        CHECK(code_of([&] { io::load_lora(p); }) == Errc::format);
    }
    SUBCASE("version mismatch") {
        const auto p = dir.path / "m.rffc";
        io::save_checkpoint(small_checkpoint(), p);
        auto bytes = io::read_file(p);
        const auto at = bytes.find("\"version\": 1");
        REQUIRE(at != std::string::npos);
        overwrite(p, at + 11, "7");
        try {
            io::load_checkpoint(p);
            FAIL("no error");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::format);
            CHECK(std::string(e.what()).find("version 7") != std::string::npos);
        }
    }
    SUBCASE("truncated payload") {
        const auto p = dir.path / "d.rffd";
        io::save_dataset(small_dataset(1), p);
        const auto bytes = io::read_file(p);
        io::write_file(p, bytes.substr(0, bytes.size() - 3));
        CHECK(code_of([&] { io::load_dataset(p); }) == Errc::format);
    }
    SUBCASE("trailing bytes") {
        const auto p = dir.path / "m.rffc";
        io::save_checkpoint(small_checkpoint(), p);
        io::write_file(p, io::read_file(p) + "xx");
        CHECK(code_of([&] { io::load_checkpoint(p); }) == Errc::format);
    }
    SUBCASE("corrupt manifest") {
        const auto p = dir.path / "a.rffl";
        const fx::ExtractorModel m(small_arch(), 3);
        io::save_lora({lora::init_lora(m, {"dense"}, 1, 1, "x"), 0, {}, ""}, p);
        overwrite(p, 16, "}");
        CHECK(code_of([&] { io::load_lora(p); }) == Errc::format);
    }
    SUBCASE("ROC CSV row count must match the report") {
        eval::PairSet ps;
        ps.pairs = {{0.1, true}, {0.5, false}, {0.2, true}};
        const auto p = dir.path / "eval_x.json";
        io::save_eval_report(eval::evaluate_pairs(ps), {"x", "m", "h", 1}, p);
        io::write_file(io::roc_csv_path(p), "threshold,FAR,FRR\n0.1,0,0.5\n");
        CHECK(code_of([&] { io::load_eval_report(p); }) == Errc::format);
    }
}
