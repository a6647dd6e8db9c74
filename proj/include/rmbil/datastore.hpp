#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "rmbil/models.hpp"

namespace rmbil {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian doubles");

// All writers go through a temp file plus rename, so a crashed run never
// leaves a half-written artifact under the final name.
inline void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open for write: " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

// ---- JSON helpers for the shared value types ----

inline json to_json(const NormStats& st) {
    return json{{"state_mean", st.state_mean},
                {"state_std", st.state_std},
                {"action_mean", st.action_mean},
                {"action_std", st.action_std}};
}

inline NormStats norm_from_json(const json& j) {
    NormStats st;
    st.state_mean = j.at("state_mean").get<Vec>();
    st.state_std = j.at("state_std").get<Vec>();
    st.action_mean = j.at("action_mean").get<Vec>();
    st.action_std = j.at("action_std").get<Vec>();
    return st;
}

inline json to_json(const ExpertConfig& e) {
    return json{{"gain", e.gain},       {"harmonics", e.harmonics}, {"freq_lo", e.freq_lo},
                {"freq_hi", e.freq_hi}, {"amp_lo", e.amp_lo},       {"amp_hi", e.amp_hi}};
}

inline ExpertConfig expert_from_json(const json& j) {
    ExpertConfig e;
    e.gain = j.at("gain").get<double>();
    e.harmonics = j.at("harmonics").get<std::size_t>();
    e.freq_lo = j.at("freq_lo").get<double>();
    e.freq_hi = j.at("freq_hi").get<double>();
    e.amp_lo = j.at("amp_lo").get<double>();
    e.amp_hi = j.at("amp_hi").get<double>();
    return e;
}

// ---- demo dataset: JSON with bit-round-tripping doubles ----

inline void save_dataset(const std::string& path, const Dataset& ds) {
    json j{{"format", "rmbil-data"},
           {"version", 1},
           {"plant", ds.plant},
           {"dt", ds.dt},
           {"n", ds.n},
           {"m", ds.m},
           {"N", ds.N},
           {"T", ds.T},
           {"seed", ds.seed},
           {"expert", to_json(ds.expert)},
           {"norm", to_json(ds.norm)},
           {"expert_rms", ds.expert_rms},
           {"regenerated", ds.regenerated}};
    json trajs = json::array();
    for (const auto& tr : ds.trajs)
        trajs.push_back(json{{"s", tr.s}, {"states", tr.states}, {"actions", tr.actions}});
    j["trajs"] = std::move(trajs);
    atomic_write(path, j.dump());
}

inline Dataset load_dataset(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset parse failure: ") + e.what());
    }
    if (j.value("format", "") != "rmbil-data") throw FormatError("not a dataset file: " + path);
    if (j.value("version", 0) != 1) throw FormatError("unsupported dataset version");
    Dataset ds;
    try {
        ds.plant = j.at("plant").get<std::string>();
        ds.dt = j.at("dt").get<double>();
        ds.n = j.at("n").get<std::size_t>();
        ds.m = j.at("m").get<std::size_t>();
        ds.N = j.at("N").get<std::size_t>();
        ds.T = j.at("T").get<std::size_t>();
        ds.seed = j.at("seed").get<std::uint64_t>();
        ds.expert = expert_from_json(j.at("expert"));
        ds.norm = norm_from_json(j.at("norm"));
        ds.expert_rms = j.at("expert_rms").get<double>();
        ds.regenerated = j.at("regenerated").get<std::size_t>();
        for (const json& t : j.at("trajs")) {
            Trajectory tr;
            tr.s = t.at("s").get<Vec>();
            tr.states = t.at("states").get<std::vector<Vec>>();
            tr.actions = t.at("actions").get<std::vector<Vec>>();
            ds.trajs.push_back(std::move(tr));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset field failure: ") + e.what());
    }
    if (ds.trajs.size() != ds.N) throw FormatError("dataset: N does not match trajectories");
    for (const auto& tr : ds.trajs) {
        if (tr.states.size() != ds.T || tr.actions.size() != ds.T)
            throw FormatError("dataset: trajectory length mismatch");
        for (const Vec& x : tr.states)
            if (x.size() != ds.n) throw FormatError("dataset: state width mismatch");
        for (const Vec& u : tr.actions)
            if (u.size() != ds.m) throw FormatError("dataset: action width mismatch");
    }
    return ds;
}

// ---- checkpoints: magic, u64 LE header length, JSON header, f64 LE blob ----

inline constexpr char kCkptMagic[8] = {'R', 'M', 'B', 'I', 'L', 'C', 'K', '1'};

inline void save_checkpoint(const std::string& path, const std::string& kind, json header,
                            const std::vector<Tensor*>& tensors) {
    header["kind"] = kind;
    json shapes = json::array();
    std::size_t total = 0;
    for (const Tensor* t : tensors) {
        shapes.push_back(t->shape);
        total += t->data.size();
    }
    header["shapes"] = std::move(shapes);
    const std::string hdr = header.dump();

    std::string bytes;
    bytes.reserve(16 + hdr.size() + total * sizeof(double));
    bytes.append(kCkptMagic, sizeof(kCkptMagic));
    const std::uint64_t hlen = hdr.size();
    bytes.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    bytes.append(hdr);
    for (const Tensor* t : tensors)
        bytes.append(reinterpret_cast<const char*>(t->data.data()),
                     t->data.size() * sizeof(double));
    atomic_write(path, bytes);
}

struct CheckpointData {
    json header;
    std::vector<Tensor> tensors;
};

inline CheckpointData load_checkpoint(const std::string& path, const std::string& expected_kind) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw FormatError("not a checkpoint file: " + path);
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, sizeof(hlen));
    if (16 + hlen > bytes.size()) throw FormatError("checkpoint header truncated: " + path);

    CheckpointData ck;
    try {
        ck.header = json::parse(bytes.substr(16, hlen));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint header parse failure: ") + e.what());
    }
    const std::string kind = ck.header.value("kind", "");
    if (kind != expected_kind)
        throw FormatError("checkpoint kind mismatch: have '" + kind + "', want '" +
                          expected_kind + "'");

    std::size_t off = 16 + hlen;
    for (const json& shape : ck.header.at("shapes")) {
        Tensor t;
        t.shape = shape.get<std::vector<std::size_t>>();
        const std::size_t count = Tensor::numel_of(t.shape);
        if (off + count * sizeof(double) > bytes.size())
            throw FormatError("checkpoint blob truncated: " + path);
        t.data.resize(count);
        std::memcpy(t.data.data(), bytes.data() + off, count * sizeof(double));
        off += count * sizeof(double);
        ck.tensors.push_back(std::move(t));
    }
    if (off != bytes.size()) throw FormatError("checkpoint has trailing bytes: " + path);
    return ck;
}

namespace detail {

inline json mlp_meta(const MlpParams& p) {
    return json{{"in", p.in}, {"hidden", p.hidden}, {"out", p.out}};
}

inline MlpParams mlp_shell(const json& j) {
    MlpParams p;
    p.in = j.at("in").get<std::size_t>();
    p.hidden = j.at("hidden").get<std::size_t>();
    p.out = j.at("out").get<std::size_t>();
    return p;
}

// Pop six tensors off the checkpoint list into the net, validating shapes
// against the declared architecture.
inline void fill_mlp(MlpParams& p, std::vector<Tensor>& src, std::size_t& idx) {
    const std::vector<std::vector<std::size_t>> want = {
        {p.hidden, p.in}, {p.hidden}, {p.hidden, p.hidden},
        {p.hidden},       {p.out, p.hidden}, {p.out}};
    if (idx + want.size() > src.size()) throw FormatError("checkpoint is missing tensors");
    for (std::size_t k = 0; k < want.size(); ++k)
        if (src[idx + k].shape != want[k]) throw FormatError("checkpoint tensor shape mismatch");
    p.w1 = std::move(src[idx + 0]);
    p.b1 = std::move(src[idx + 1]);
    p.w2 = std::move(src[idx + 2]);
    p.b2 = std::move(src[idx + 3]);
    p.w3 = std::move(src[idx + 4]);
    p.b3 = std::move(src[idx + 5]);
    idx += want.size();
}

}  // namespace detail

inline void save_dyn(const std::string& path, DynModel& d, json extra = json::object()) {
    json h = std::move(extra);
    h["dyn_kind"] = dyn_kind_name(d.kind);
    h["n"] = d.n;
    h["m"] = d.m;
    h["norm"] = to_json(d.norm);
    h["trained"] = d.trained;
    // infinity is not a JSON number; untrained models carry null
    h["holdout_loss"] = std::isfinite(d.holdout_loss) ? json(d.holdout_loss) : json();
    if (d.kind == DynKind::Affine) {
        h["a_net"] = detail::mlp_meta(d.a_net);
        h["g_net"] = detail::mlp_meta(d.g_net);
    } else {
        h["f_net"] = detail::mlp_meta(d.f_net);
    }
    save_checkpoint(path, "dynamics", std::move(h), d.params());
}

inline DynModel load_dyn(const std::string& path) {
    CheckpointData ck = load_checkpoint(path, "dynamics");
    DynModel d;
    try {
        d.kind = dyn_kind_from(ck.header.at("dyn_kind").get<std::string>());
        d.n = ck.header.at("n").get<std::size_t>();
        d.m = ck.header.at("m").get<std::size_t>();
        d.norm = norm_from_json(ck.header.at("norm"));
        d.trained = ck.header.at("trained").get<bool>();
        const json& hl = ck.header.at("holdout_loss");
        d.holdout_loss =
            hl.is_null() ? std::numeric_limits<double>::infinity() : hl.get<double>();
        std::size_t idx = 0;
        if (d.kind == DynKind::Affine) {
            d.a_net = detail::mlp_shell(ck.header.at("a_net"));
            d.g_net = detail::mlp_shell(ck.header.at("g_net"));
            detail::fill_mlp(d.a_net, ck.tensors, idx);
            detail::fill_mlp(d.g_net, ck.tensors, idx);
        } else {
            d.f_net = detail::mlp_shell(ck.header.at("f_net"));
            detail::fill_mlp(d.f_net, ck.tensors, idx);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("dynamics checkpoint field failure: ") + e.what());
    }
    return d;
}

inline void save_ctrl(const std::string& path, CtrlModel& c, json extra = json::object()) {
    json h = std::move(extra);
    h["n"] = c.n;
    h["m"] = c.m;
    h["norm"] = to_json(c.norm);
    h["nu_mean"] = c.nu_mean;
    h["nu_std"] = c.nu_std;
    h["clamp"] = c.clamp;
    h["phase"] = c.phase;
    h["net"] = detail::mlp_meta(c.net);
    save_checkpoint(path, "controller", std::move(h), c.params());
}

inline CtrlModel load_ctrl(const std::string& path) {
    CheckpointData ck = load_checkpoint(path, "controller");
    CtrlModel c;
    try {
        c.n = ck.header.at("n").get<std::size_t>();
        c.m = ck.header.at("m").get<std::size_t>();
        c.norm = norm_from_json(ck.header.at("norm"));
        c.nu_mean = ck.header.at("nu_mean").get<Vec>();
        c.nu_std = ck.header.at("nu_std").get<Vec>();
        c.clamp = ck.header.at("clamp").get<double>();
        c.phase = ck.header.at("phase").get<int>();
        c.net = detail::mlp_shell(ck.header.at("net"));
        std::size_t idx = 0;
        detail::fill_mlp(c.net, ck.tensors, idx);
    } catch (const json::exception& e) {
        throw FormatError(std::string("controller checkpoint field failure: ") + e.what());
    }
    return c;
}

inline void save_cvae(const std::string& path, CvaeModel& c, json extra = json::object()) {
    json h = std::move(extra);
    h["n"] = c.n;
    h["dz"] = c.dz;
    h["norm"] = to_json(c.norm);
    h["enc"] = detail::mlp_meta(c.enc);
    h["dec"] = detail::mlp_meta(c.dec);
    save_checkpoint(path, "generator", std::move(h), c.params());
}

inline CvaeModel load_cvae(const std::string& path) {
    CheckpointData ck = load_checkpoint(path, "generator");
    CvaeModel c;
    try {
        c.n = ck.header.at("n").get<std::size_t>();
        c.dz = ck.header.at("dz").get<std::size_t>();
        c.norm = norm_from_json(ck.header.at("norm"));
        c.enc = detail::mlp_shell(ck.header.at("enc"));
        c.dec = detail::mlp_shell(ck.header.at("dec"));
        std::size_t idx = 0;
        detail::fill_mlp(c.enc, ck.tensors, idx);
        detail::fill_mlp(c.dec, ck.tensors, idx);
    } catch (const json::exception& e) {
        throw FormatError(std::string("generator checkpoint field failure: ") + e.what());
    }
    return c;
}

// ---- evaluation reports ----

inline void save_report(const std::string& path, json report) {
    report["format"] = "rmbil-report";
    report["version"] = 1;
    atomic_write(path, report.dump(2) + "\n");
}

inline json load_report(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw FormatError(std::string("report parse failure: ") + e.what());
    }
    if (j.value("format", "") != "rmbil-report") throw FormatError("not a report file: " + path);
    return j;
}

// ---- CSV, with round-tripping doubles ----

inline std::string csv_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct LossRow {
    std::size_t epoch = 0;
    std::string phase;
    double loss = 0.0;
    double lr = 0.0;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRow>& rows) {
    std::string out = "epoch,phase,loss,lr\n";
    for (const LossRow& r : rows) {
        out += std::to_string(r.epoch);
        out += ',';
        out += r.phase;
        out += ',';
        out += csv_double(r.loss);
        out += ',';
        out += csv_double(r.lr);
        out += '\n';
    }
    atomic_write(path, out);
}

inline void write_csv(const std::string& path, const std::vector<std::string>& cols,
                      const std::vector<Vec>& rows) {
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out += cols[i];
        out += i + 1 < cols.size() ? ',' : '\n';
    }
    for (const Vec& r : rows) {
        if (r.size() != cols.size()) throw ShapeError("csv row width mismatch");
        for (std::size_t i = 0; i < r.size(); ++i) {
            out += csv_double(r[i]);
            out += i + 1 < r.size() ? ',' : '\n';
        }
    }
    atomic_write(path, out);
}

}  // namespace rmbil
