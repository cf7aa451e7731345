// SPDX-License-Identifier: Apache-2.0
#include "rlarff/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "rlarff/error.hpp"

namespace rlarff::io {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kDatasetMagic[] = "RFFDSET1";
constexpr char kCheckpointMagic[] = "RFFCKPT1";
constexpr char kLoRAMagic[] = "RFFLORA1";

template <class U>
void put_le(std::string& out, U bits) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

struct Container {
    json manifest;
    std::string payload;
};

std::string pack(const char* magic, const json& manifest, const std::string& payload) {
    const std::string text = manifest.dump(1);
    std::string out(magic, 8);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out += payload;
    return out;
}

Container unpack(const fs::path& path, const char* magic, const std::string& format) {
    const std::string bytes = read_file(path);
    const std::string where = "'" + path.string() + "'";
    if (bytes.size() < 16 || bytes.compare(0, 8, magic, 8) != 0)
        fail(Errc::format, where + " is not a " + format + " file");
    const auto len = get_le<std::uint64_t>(bytes.data() + 8);
    if (len > bytes.size() - 16) fail(Errc::format, where + " has a truncated manifest");
    Container c;
    try {
        c.manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception& e) {
        fail(Errc::format, where + " has an unreadable manifest: " + e.what());
    }
    if (c.manifest.value("format", std::string{}) != format)
        fail(Errc::format, where + " manifest format is not '" + format + "'");
    const int version = c.manifest.value("version", -1);
    if (version != kFormatVersion)
        fail(Errc::format, where + " has format version " + std::to_string(version) + ", expected " +
                               std::to_string(kFormatVersion));
    c.payload = bytes.substr(16 + len);
    return c;
}

class Reader {
public:
    Reader(const std::string& payload, const fs::path& path) : p_(payload), path_(path) {}

    void need(std::size_t bytes) const {
        if (bytes > p_.size() - pos_)
            fail(Errc::format, "'" + path_.string() + "' payload is shorter than its manifest declares");
    }
    double f64() {
        need(8);
        const auto v = std::bit_cast<double>(get_le<std::uint64_t>(p_.data() + pos_));
        pos_ += 8;
        return v;
    }
    float f32() {
        need(4);
        const auto v = std::bit_cast<float>(get_le<std::uint32_t>(p_.data() + pos_));
        pos_ += 4;
        return v;
    }
    nd::Tensor tensor(const nd::Shape& shape) {
        nd::Tensor t(shape);
        need(8 * t.size());
        for (auto& v : t.data()) v = f64();
        return t;
    }
    void finish() const {
        if (pos_ != p_.size())
            fail(Errc::format, "'" + path_.string() + "' has " + std::to_string(p_.size() - pos_) +
                                   " trailing payload bytes");
    }

private:
    const std::string& p_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const nd::Tensor& t) {
    for (double v : t.data()) put_f64(out, v);
}

json complex_json(const std::complex<double>& c) { return json::array({c.real(), c.imag()}); }
std::complex<double> complex_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json device_json(const sim::DeviceImpairment& d) {
    return {{"iq_gain", d.iq_gain},   {"iq_phase", d.iq_phase}, {"dc_offset", complex_json(d.dc_offset)},
            {"pa_a1", d.pa_a1},       {"pa_a3", d.pa_a3},       {"phase_noise_std", d.phase_noise_std}};
}

sim::DeviceImpairment device_from(const json& j) {
    sim::DeviceImpairment d;
    d.iq_gain = j.at("iq_gain");
    d.iq_phase = j.at("iq_phase");
    d.dc_offset = complex_from(j.at("dc_offset"));
    d.pa_a1 = j.at("pa_a1");
    d.pa_a3 = j.at("pa_a3");
    d.phase_noise_std = j.at("phase_noise_std");
    return d;
}

json channel_json(const sim::ChannelProfile& c) {
    json taps = json::array();
    for (const auto& t : c.taps) taps.push_back(complex_json(t));
    return {{"environment_id", c.environment_id},
            {"taps", taps},
            {"cfo", c.cfo},
            {"snr_db", c.snr_db ? json(*c.snr_db) : json(nullptr)}};
}

sim::ChannelProfile channel_from(const json& j) {
    sim::ChannelProfile c;
    c.environment_id = j.at("environment_id");
    c.taps.clear();
    for (const auto& t : j.at("taps")) c.taps.push_back(complex_from(t));
    c.cfo = j.at("cfo");
    if (!j.at("snr_db").is_null()) c.snr_db = j.at("snr_db").get<double>();
    return c;
}

json architecture_json(const fx::Architecture& a) {
    json convs = json::array();
    for (const auto& c : a.convs)
        convs.push_back({{"out_channels", c.out_channels}, {"width", c.width}, {"stride", c.stride}});
    return {{"input_length", a.input_length}, {"convs", convs}, {"embedding_dim", a.embedding_dim}};
}

fx::Architecture architecture_from(const json& j) {
    fx::Architecture a;
    a.input_length = j.at("input_length");
    a.convs.clear();
    for (const auto& c : j.at("convs")) a.convs.push_back({c.at("out_channels"), c.at("width"), c.at("stride")});
    a.embedding_dim = j.at("embedding_dim");
    return a;
}

json history_json(const HistorySummary& h) {
    return {{"epochs", h.epochs},
            {"train_loss", h.train_loss},
            {"val_auc", h.val_auc},
            {"val_eer", h.val_eer},
            {"stopped_by_auc", h.stopped_by_auc}};
}

HistorySummary history_from(const json& j) {
    HistorySummary h;
    h.epochs = j.at("epochs");
    h.train_loss = j.at("train_loss");
    h.val_auc = j.at("val_auc");
    h.val_eer = j.at("val_eer");
    h.stopped_by_auc = j.at("stopped_by_auc");
    return h;
}

json shape_json(const nd::Shape& s) { return json(std::vector<std::size_t>(s.begin(), s.end())); }
nd::Shape shape_from(const json& j) { return j.get<std::vector<std::size_t>>(); }

// Manifest field errors surface as format errors naming the file.
template <class F>
auto parse_fields(const fs::path& path, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        fail(Errc::format, "'" + path.string() + "' manifest: " + e.what());
    }
}

}  // namespace

HistorySummary HistorySummary::of(const fx::TrainHistory& h) {
    HistorySummary s;
    s.epochs = h.epochs.size();
    s.stopped_by_auc = h.stopped_by_auc;
    if (!h.epochs.empty()) {
        s.train_loss = h.epochs.back().train_loss;
        s.val_auc = h.epochs.back().val_auc;
        s.val_eer = h.epochs.back().val_eer;
    }
    return s;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) fail(Errc::io, "read error on '" + path.string() + "'");
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) fail(Errc::io, "cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(Errc::io, "cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(Errc::io, "write error on '" + tmp.string() + "'");
    }
    fs::rename(tmp, path, ec);
    if (ec) fail(Errc::io, "cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void save_dataset(const sim::LabeledDataset& data, const fs::path& path) {
    data.validate();
    json devices = json::array(), channels = json::array(), labels = json::array(), envs = json::array();
    for (const auto& d : data.devices) devices.push_back(device_json(d));
    for (const auto& c : data.channels) channels.push_back(channel_json(c));
    std::map<std::string, std::size_t> env_index;
    for (std::size_t k = 0; k < data.environments.size(); ++k) env_index[data.environments[k]] = k;
    for (const auto& s : data.samples) {
        labels.push_back(s.device);
        envs.push_back(env_index.at(s.environment));
    }
    const json manifest = {
        {"format", "rlarff-dataset"},
        {"version", kFormatVersion},
        {"M", data.length},
        {"J", data.device_count},
        {"N", data.size()},
        {"role", sim::role_name(data.role)},
        {"environments", data.environments},
        {"preamble",
         {{"length", data.preamble.length},
          {"waveform", data.preamble.waveform},
          {"samples_per_chip", data.preamble.samples_per_chip},
          {"chirp_span", data.preamble.chirp_span}}},
        {"devices", devices},
        {"channels", channels},
        {"per_pair_count", data.per_pair_count},
        {"seed", data.seed},
        {"labels", labels},
        {"sample_environments", envs},
        {"payload", "float32 LE interleaved I/Q, samples in manifest order"},
    };
    std::string payload;
    payload.reserve(data.size() * data.length * 8);
    for (const auto& s : data.samples)
        for (const auto& v : s.signal) {
            put_f32(payload, v.real());
            put_f32(payload, v.imag());
        }
    write_file(path, pack(kDatasetMagic, manifest, payload));
}

sim::LabeledDataset load_dataset(const fs::path& path) {
    const auto c = unpack(path, kDatasetMagic, "rlarff-dataset");
    const auto& m = c.manifest;
    sim::LabeledDataset d;
    std::vector<std::uint32_t> labels;
    std::vector<std::size_t> envs;
    parse_fields(path, [&] {
        d.length = m.at("M");
        d.device_count = m.at("J");
        d.role = sim::parse_role(m.at("role"));
        d.environments = m.at("environments").get<std::vector<std::string>>();
        const auto& p = m.at("preamble");
        d.preamble.length = p.at("length");
        d.preamble.waveform = p.at("waveform");
        d.preamble.samples_per_chip = p.at("samples_per_chip");
        d.preamble.chirp_span = p.at("chirp_span");
        for (const auto& j : m.at("devices")) d.devices.push_back(device_from(j));
        for (const auto& j : m.at("channels")) d.channels.push_back(channel_from(j));
        d.per_pair_count = m.at("per_pair_count");
        d.seed = m.at("seed");
        labels = m.at("labels").get<std::vector<std::uint32_t>>();
        envs = m.at("sample_environments").get<std::vector<std::size_t>>();
        if (m.at("N").get<std::size_t>() != labels.size() || envs.size() != labels.size())
            fail(Errc::format, "'" + path.string() + "' manifest sample counts disagree");
        return 0;
    });
    Reader r(c.payload, path);
    r.need(labels.size() * d.length * 8);
    d.samples.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& s = d.samples[i];
        s.device = labels[i];
        if (envs[i] >= d.environments.size())
            fail(Errc::format, "'" + path.string() + "' sample " + std::to_string(i) + " has an unknown environment");
        s.environment = d.environments[envs[i]];
        s.signal.resize(d.length);
        for (auto& v : s.signal) {
            const float re = r.f32();
            v = {re, r.f32()};
        }
    }
    r.finish();
    try {
        d.validate();
    } catch (const Error& e) {
        fail(Errc::format, "'" + path.string() + "' is inconsistent: " + e.what());
    }
    return d;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    ckpt.head.validate();
    json tensors = json::array();
    std::string payload;
    for (const auto& l : ckpt.model.layers()) {
        tensors.push_back({{"name", l.name + ".weight"}, {"shape", shape_json(l.weight.shape())}});
        tensors.push_back({{"name", l.name + ".bias"}, {"shape", shape_json(l.bias.shape())}});
        put_tensor(payload, l.weight);
        put_tensor(payload, l.bias);
    }
    tensors.push_back({{"name", "head.directions"}, {"shape", shape_json(ckpt.head.directions.shape())}});
    put_tensor(payload, ckpt.head.directions);
    const json manifest = {
        {"format", "rlarff-checkpoint"},
        {"version", kFormatVersion},
        {"architecture", architecture_json(ckpt.model.architecture())},
        {"d", ckpt.model.embedding_dim()},
        {"J", ckpt.head.classes()},
        {"delta", ckpt.head.scale},
        {"seeds", ckpt.seeds},
        {"history", history_json(ckpt.history)},
        {"config_hash", ckpt.config_hash},
        {"checksum", ckpt.model.checksum()},
        {"tensors", tensors},
        {"payload", "float64 LE, tensors in manifest order"},
    };
    write_file(path, pack(kCheckpointMagic, manifest, payload));
}

Checkpoint load_checkpoint(const fs::path& path) {
    const auto c = unpack(path, kCheckpointMagic, "rlarff-checkpoint");
    const auto& m = c.manifest;
    Checkpoint out;
    fx::Architecture arch;
    std::vector<std::pair<std::string, nd::Shape>> shapes;
    std::size_t classes = 0;
    parse_fields(path, [&] {
        arch = architecture_from(m.at("architecture"));
        classes = m.at("J");
        out.head.scale = m.at("delta");
        out.seeds = m.at("seeds").get<std::map<std::string, std::uint64_t>>();
        out.history = history_from(m.at("history"));
        out.config_hash = m.at("config_hash");
        for (const auto& t : m.at("tensors")) shapes.emplace_back(t.at("name"), shape_from(t.at("shape")));
        return 0;
    });
    try {
        arch.validate();
    } catch (const Error& e) {
        fail(Errc::format, "'" + path.string() + "' architecture: " + e.what());
    }
    const fx::ExtractorModel reference(arch, 0);
    const auto ref_layers = reference.layers();
    if (shapes.size() != 2 * ref_layers.size() + 1)
        fail(Errc::format, "'" + path.string() + "' tensor list does not match its architecture");
    Reader r(c.payload, path);
    std::vector<fx::Layer> layers;
    for (std::size_t k = 0; k < ref_layers.size(); ++k) {
        fx::Layer l = ref_layers[k];
        if (shapes[2 * k].first != l.name + ".weight" || shapes[2 * k + 1].first != l.name + ".bias")
            fail(Errc::format, "'" + path.string() + "' tensor order does not match its architecture");
        l.weight = r.tensor(shapes[2 * k].second);
        l.bias = r.tensor(shapes[2 * k + 1].second);
        layers.push_back(std::move(l));
    }
    const auto& head_shape = shapes.back().second;
    if (head_shape != nd::Shape{classes, arch.embedding_dim})
        fail(Errc::format, "'" + path.string() + "' head shape does not match J x d");
    out.head.directions = r.tensor(head_shape);
    r.finish();
    out.model = fx::ExtractorModel(arch, std::move(layers));
    return out;
}

void save_lora(const LoRAFile& file, const fs::path& path) {
    const auto& mod = file.module;
    json targets = json::array();
    std::string payload;
    for (const auto& t : mod.targets) {
        const auto& f = mod.at(t);
        targets.push_back({{"name", t}, {"a_shape", shape_json(f.a.shape())}, {"b_shape", shape_json(f.b.shape())}});
    }
    for (const auto& t : mod.targets) {
        put_tensor(payload, mod.at(t).a);
        put_tensor(payload, mod.at(t).b);
    }
    const json manifest = {
        {"format", "rlarff-lora"},
        {"version", kFormatVersion},
        {"environment_id", mod.environment_id},
        {"r", mod.rank},
        {"targets", targets},
        {"base_checksum", file.base_checksum},
        {"history", history_json(file.history)},
        {"config_hash", file.config_hash},
        {"payload", "float64 LE, A then B per target in manifest order"},
    };
    write_file(path, pack(kLoRAMagic, manifest, payload));
}

LoRAFile load_lora(const fs::path& path) {
    const auto c = unpack(path, kLoRAMagic, "rlarff-lora");
    const auto& m = c.manifest;
    LoRAFile out;
    std::vector<std::pair<nd::Shape, nd::Shape>> shapes;
    parse_fields(path, [&] {
        out.module.environment_id = m.at("environment_id");
        out.module.rank = m.at("r");
        for (const auto& t : m.at("targets")) {
            out.module.targets.push_back(t.at("name"));
            shapes.emplace_back(shape_from(t.at("a_shape")), shape_from(t.at("b_shape")));
        }
        out.base_checksum = m.at("base_checksum");
        out.history = history_from(m.at("history"));
        out.config_hash = m.at("config_hash");
        return 0;
    });
    Reader r(c.payload, path);
    for (std::size_t k = 0; k < shapes.size(); ++k) {
        const auto& [sa, sb] = shapes[k];
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != out.module.rank || sb[0] != out.module.rank)
            fail(Errc::format, "'" + path.string() + "' factor shapes of '" + out.module.targets[k] +
                                   "' do not match rank " + std::to_string(out.module.rank));
        lora::Factors f;
        f.a = r.tensor(sa);
        f.b = r.tensor(sb);
        if (!out.module.factors.emplace(out.module.targets[k], std::move(f)).second)
            fail(Errc::format, "'" + path.string() + "' lists target '" + out.module.targets[k] + "' twice");
    }
    r.finish();
    return out;
}

fs::path roc_csv_path(const fs::path& json_path) {
    fs::path p = json_path;
    return p.replace_extension(".roc.csv");
}

namespace {

std::string exact(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

}  // namespace

void save_eval_report(const eval::EvalReport& report, const ReportInfo& info, const fs::path& json_path) {
    const fs::path csv = roc_csv_path(json_path);
    const json j = {
        {"format", "rlarff-eval-report"},
        {"version", kFormatVersion},
        {"name", info.name},
        {"model", info.model},
        {"config_hash", info.config_hash},
        {"seed", info.seed},
        {"eer", report.eer},
        {"eer_threshold", report.eer_threshold},
        {"auc", report.auc},
        {"genuine_pairs", report.genuine_pairs},
        {"impostor_pairs", report.impostor_pairs},
        {"roc_points", report.roc.size()},
        {"roc_csv", csv.filename().string()},
    };
    std::string rows = "threshold,FAR,FRR\n";
    for (const auto& p : report.roc) rows += exact(p.threshold) + "," + exact(p.far) + "," + exact(p.frr) + "\n";
    write_file(csv, rows);
    write_file(json_path, j.dump(2) + "\n");
}

std::pair<eval::EvalReport, ReportInfo> load_eval_report(const fs::path& json_path) {
    json j;
    try {
        j = json::parse(read_file(json_path));
    } catch (const json::exception& e) {
        fail(Errc::format, "'" + json_path.string() + "' is not valid JSON: " + e.what());
    }
    if (j.value("format", std::string{}) != "rlarff-eval-report")
        fail(Errc::format, "'" + json_path.string() + "' is not an evaluation report");
    if (j.value("version", -1) != kFormatVersion)
        fail(Errc::format, "'" + json_path.string() + "' has an unsupported report version");
    eval::EvalReport r;
    ReportInfo info;
    std::size_t points = 0;
    parse_fields(json_path, [&] {
        info.name = j.at("name");
        info.model = j.at("model");
        info.config_hash = j.at("config_hash");
        info.seed = j.at("seed");
        r.eer = j.at("eer");
        r.eer_threshold = j.at("eer_threshold");
        r.auc = j.at("auc");
        r.genuine_pairs = j.at("genuine_pairs");
        r.impostor_pairs = j.at("impostor_pairs");
        points = j.at("roc_points");
        return 0;
    });
    const fs::path csv = roc_csv_path(json_path);
    std::istringstream in(read_file(csv));
    std::string line;
    if (!std::getline(in, line) || line != "threshold,FAR,FRR")
        fail(Errc::format, "'" + csv.string() + "' does not start with the threshold,FAR,FRR header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        eval::RocPoint p;
        char c1 = 0, c2 = 0;
        std::istringstream row(line);
        if (!(row >> p.threshold >> c1 >> p.far >> c2 >> p.frr) || c1 != ',' || c2 != ',')
            fail(Errc::format, "'" + csv.string() + "' has a malformed row: " + line);
        r.roc.push_back(p);
    }
    if (r.roc.size() != points)
        fail(Errc::format, "'" + csv.string() + "' has " + std::to_string(r.roc.size()) + " rows, report says " +
                               std::to_string(points));
    return {r, info};
}

}  // namespace rlarff::io
