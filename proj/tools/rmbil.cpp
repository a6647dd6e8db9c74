// Command-line surface for the imitation pipeline: demo generation, the
// three training phases, generator training, rollouts, evaluation grids, and
// CSV report assembly. One command per process; every artifact lands under
// --out with a fixed name and embeds the effective config.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "rmbil/evalkit.hpp"

namespace fs = std::filesystem;
using namespace rmbil;
using nlohmann::json;

namespace {

constexpr const char* kDemos = "demos.rmbil-data.json";
constexpr const char* kDyn = "dynamics.rmbil-ckpt";
constexpr const char* kCtrl = "controller.rmbil-ckpt";
constexpr const char* kRobust = "controller_robust.rmbil-ckpt";
constexpr const char* kCvae = "generator.rmbil-ckpt";

struct Preset {
    TrainConfig tc;  // shared knobs; per-command hidden/lr applied below
    std::size_t hid_dyn = 0, hid_ctrl = 0, hid_cvae = 0;
    double lr_dyn = 0.0, lr_ctrl = 0.0;
    std::size_t demos_n = 0, demos_t = 0;
};

Preset make_preset(const std::string& name) {
    Preset p;
    if (name == "desk") {
        p.tc.solver.method = SolverConfig::Method::Rk4;
        p.tc.solver.tau = 16;
        p.tc.batch = 512;
        p.tc.max_epochs = 200;
        p.tc.windows_cap = 2048;
        p.tc.grad_path = GradPath::Direct;
        p.tc.dz = 2;
        p.tc.cvae_hidden = 32;
        p.tc.cvae_batch = 256;
        p.tc.cvae_max_epochs = 300;
        p.hid_dyn = 32;
        p.hid_ctrl = 32;
        p.hid_cvae = 32;
        p.lr_dyn = 3e-3;
        p.lr_ctrl = 1e-3;
        p.demos_n = 50;
        p.demos_t = 200;
    } else if (name == "paper") {
        p.tc.solver.method = SolverConfig::Method::Rk45;
        p.tc.solver.atol = 1e-4;
        p.tc.solver.rtol = 1e-4;
        p.tc.solver.tau = 16;
        p.tc.batch = 2048;
        p.tc.max_epochs = 500;
        p.tc.windows_cap = 0;
        p.tc.grad_path = GradPath::Adjoint;
        p.tc.dz = 5;
        p.tc.cvae_hidden = 320;
        p.tc.cvae_batch = 2048;
        p.tc.cvae_max_epochs = 500;
        p.hid_dyn = 800;
        p.hid_ctrl = 320;
        p.hid_cvae = 320;
        p.lr_dyn = 1e-2;
        p.lr_ctrl = 1e-3;
        p.demos_n = 50;
        p.demos_t = 1000;
    } else {
        throw Error("unknown preset '" + name + "' (expected desk or paper)");
    }
    return p;
}

// Everything the subcommands can override. Sentinels mean "keep the preset".
struct Opts {
    std::string out, plant = "scalar", preset = "desk", label = "default";
    std::string controller = "robust", controllers = "robust";
    std::string source = "replay", disturbances = "nominal", grad_path, solver;
    std::string gains = "0.1";
    std::uint64_t seed = 0;
    std::size_t subset = 0;
    std::size_t n = 0, t = 0;  // gen-demos sizes
    std::size_t episodes = 0, steps = 0;
    std::size_t tau = 0, batch = 0, hidden = 0, dz = 0;
    std::size_t epochs = kUnset, windows_cap = kUnset;
    double lr = 0.0, eps = 0.0, eps_r = 0.0, noise = -1.0, gain = 0.0, severity = -1.0;

    static constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
};

TrainConfig build_train_cfg(const Opts& o, const Preset& p, std::size_t hidden, double lr) {
    TrainConfig tc = p.tc;
    tc.hidden = hidden;
    tc.adam.lr = lr;
    tc.seed = o.seed;
    if (o.tau) tc.solver.tau = o.tau;
    if (o.batch) {
        tc.batch = o.batch;
        tc.cvae_batch = o.batch;
    }
    if (o.hidden) {
        tc.hidden = o.hidden;
        tc.cvae_hidden = o.hidden;
    }
    if (o.epochs != Opts::kUnset) {
        tc.max_epochs = o.epochs;
        tc.cvae_max_epochs = o.epochs;
    }
    if (o.windows_cap != Opts::kUnset) tc.windows_cap = o.windows_cap;
    if (o.lr > 0.0) tc.adam.lr = o.lr;
    if (o.eps > 0.0) tc.eps = o.eps;
    if (o.eps_r > 0.0) tc.eps_r = o.eps_r;
    if (o.noise >= 0.0) tc.noise_std = o.noise;
    if (o.gain > 0.0) tc.gain = o.gain;
    if (o.dz) tc.dz = o.dz;
    if (!o.grad_path.empty()) {
        if (o.grad_path == "adjoint")
            tc.grad_path = GradPath::Adjoint;
        else if (o.grad_path == "direct")
            tc.grad_path = GradPath::Direct;
        else
            throw Error("unknown grad path '" + o.grad_path + "'");
    }
    if (!o.solver.empty()) {
        if (o.solver == "rk4")
            tc.solver.method = SolverConfig::Method::Rk4;
        else if (o.solver == "rk45")
            tc.solver.method = SolverConfig::Method::Rk45;
        else
            throw Error("unknown solver '" + o.solver + "'");
    }
    return tc;
}

json echo_train_cfg(const std::string& command, const Opts& o, const TrainConfig& tc) {
    return {{"command", command},
            {"preset", o.preset},
            {"seed", o.seed},
            {"subset", o.subset},
            {"tau", tc.solver.tau},
            {"solver", tc.solver.method == SolverConfig::Method::Rk4 ? "rk4" : "rk45"},
            {"grad_path", tc.grad_path == GradPath::Adjoint ? "adjoint" : "direct"},
            {"batch", tc.batch},
            {"max_epochs", tc.max_epochs},
            {"windows_cap", tc.windows_cap},
            {"hidden", tc.hidden},
            {"lr", tc.adam.lr},
            {"eps", tc.eps},
            {"eps_r", tc.eps_r},
            {"noise_std", tc.noise_std},
            {"gain", tc.gain},
            {"dz", tc.dz},
            {"cvae_hidden", tc.cvae_hidden},
            {"cvae_batch", tc.cvae_batch},
            {"cvae_max_epochs", tc.cvae_max_epochs}};
}

fs::path out_path(const Opts& o, const std::string& name) {
    fs::create_directories(o.out);
    return fs::path(o.out) / name;
}

Dataset load_demos(const Opts& o) {
    const fs::path path = fs::path(o.out) / kDemos;
    if (!fs::exists(path))
        throw PhaseOrderError(std::string("missing ") + kDemos + "; run gen-demos first");
    Dataset ds = load_dataset(path.string());
    if (o.subset > 0 && o.subset < ds.N) {
        ds.trajs.resize(o.subset);
        ds.N = o.subset;
    }
    return ds;
}

DynModel load_dyn_required(const Opts& o) {
    const fs::path path = fs::path(o.out) / kDyn;
    if (!fs::exists(path))
        throw PhaseOrderError(std::string("missing ") + kDyn + "; run train-dynamics first");
    return load_dyn(path.string());
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (!tok.empty()) out.push_back(std::stod(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    require(!out.empty(), "empty numeric list '" + csv + "'");
    return out;
}

std::vector<std::string> parse_names(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const std::size_t comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (!tok.empty()) out.push_back(tok);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    require(!out.empty(), "empty name list '" + csv + "'");
    return out;
}

DisturbanceCfg make_disturbance(const std::string& name, double severity, std::size_t m,
                                std::uint64_t seed) {
    DisturbanceCfg d;
    d.seed = seed;
    if (name == "nominal") return d;
    if (name == "slope") {
        d.kind = DisturbanceCfg::Kind::Slope;
        d.slope_bias.assign(m, severity);
    } else if (name == "uneven") {
        d.kind = DisturbanceCfg::Kind::Uneven;
        d.uneven_amp = severity;
    } else if (name == "paramshift") {
        d.kind = DisturbanceCfg::Kind::ParamShift;
        d.param_scale = severity;
    } else {
        throw Error("unknown disturbance '" + name + "'");
    }
    return d;
}

// Owns whatever models a named control law needs; the lambda inside Policy
// captures the heap objects, so the box must outlive the evaluation.
struct PolicyBox {
    std::string name;
    Policy fn;
    std::shared_ptr<CtrlModel> cm;
    std::shared_ptr<DynModel> dm;
    std::shared_ptr<BcModel> bc;
};

PolicyBox make_policy(const std::string& name, const Opts& o, const PlantSpec& plant,
                      const Dataset& ds, const TrainConfig& tc) {
    PolicyBox box;
    box.name = name;
    const auto need = [&](const char* file, const char* hint) {
        const fs::path path = fs::path(o.out) / file;
        if (!fs::exists(path))
            throw PhaseOrderError(std::string("missing ") + file + "; run " + hint + " first");
        return path.string();
    };
    if (name == "robust") {
        box.cm = std::make_shared<CtrlModel>(load_ctrl(need(kRobust, "refine-robust")));
        box.fn = policy_ctrl(*box.cm);
    } else if (name == "nominal") {
        box.cm = std::make_shared<CtrlModel>(load_ctrl(need(kCtrl, "train-controller")));
        box.fn = policy_ctrl(*box.cm);
    } else if (name == "bc") {
        BcConfig bc;
        bc.hidden = tc.hidden;
        bc.adam.lr = tc.adam.lr;
        bc.max_epochs = tc.max_epochs;
        bc.batch = tc.batch;
        bc.seed = o.seed + 14;
        box.bc = std::make_shared<BcModel>(bc_train(ds, bc, nullptr));
        box.fn = policy_bc(*box.bc);
    } else if (name == "ndi-learned") {
        box.dm = std::make_shared<DynModel>(load_dyn_required(o));
        box.fn = policy_ndi_learned(*box.dm);
    } else if (name == "ndi-true") {
        box.fn = policy_ndi_true(plant);
    } else if (name == "expert") {
        box.fn = policy_expert(plant, 5.0);
    } else {
        throw Error("unknown controller '" + name +
                    "' (robust|nominal|bc|ndi-learned|ndi-true|expert)");
    }
    return box;
}

RolloutCfg build_rollout_cfg(const Opts& o, const Dataset& ds, const std::string& disturbance) {
    RolloutCfg rc;
    rc.source = o.source == "cvae" ? RefSource::Generated : RefSource::Replay;
    if (o.source != "cvae" && o.source != "replay")
        throw Error("unknown reference source '" + o.source + "'");
    rc.gain = o.gain > 0.0 ? o.gain : 0.1;
    rc.steps = o.steps;
    rc.seed = o.seed;
    rc.episodes = o.episodes ? o.episodes : 50;
    rc.disturbance =
        make_disturbance(disturbance, o.severity >= 0.0 ? o.severity : 0.02, ds.m, o.seed);
    return rc;
}

json echo_rollout_cfg(const std::string& command, const Opts& o, const RolloutCfg& rc) {
    return {{"command", command},
            {"preset", o.preset},
            {"seed", o.seed},
            {"subset", o.subset},
            {"demo_count_used", 0},  // filled by callers that know the dataset
            {"source", rc.source == RefSource::Generated ? "cvae" : "replay"},
            {"gain", rc.gain},
            {"steps", rc.steps},
            {"episodes", rc.episodes},
            {"severity", o.severity >= 0.0 ? o.severity : 0.02}};
}

int cmd_gen_demos(const Opts& o) {
    const Preset p = make_preset(o.preset);
    const PlantSpec plant = make_plant(o.plant);
    const std::size_t N = o.n ? o.n : p.demos_n;
    const std::size_t T = o.t ? o.t : p.demos_t;
    const Dataset ds = gen_demos(plant, ExpertConfig{}, N, T, o.seed);
    const fs::path path = out_path(o, kDemos);
    save_dataset(path.string(), ds);
    const Dataset back = load_dataset(path.string());
    require(back.N == N && back.T == T, "demo artifact failed validation");
    std::cout << "wrote " << path.string() << " plant=" << ds.plant << " N=" << ds.N
              << " T=" << ds.T << " expert_rms=" << ds.expert_rms << "\n";
    return 0;
}

int cmd_train_dynamics(const Opts& o) {
    const Preset p = make_preset(o.preset);
    Dataset ds = load_demos(o);
    TrainConfig tc = build_train_cfg(o, p, p.hid_dyn, p.lr_dyn);
    Rng rng = Rng(o.seed).fork(11);
    DynModel dm = dyn_init(DynKind::Affine, ds.n, ds.m, tc.hidden, ds.norm, rng);
    const TrainResult r = train_dynamics(dm, ds, tc);
    const fs::path ck = out_path(o, kDyn);
    save_dyn(ck.string(), dm, json{{"config", echo_train_cfg("train-dynamics", o, tc)}});
    write_loss_csv(out_path(o, "dynamics_loss.csv").string(), r.history);
    const DynModel back = load_dyn(ck.string());
    require(back.trained, "dynamics artifact failed validation");
    std::cout << "wrote " << ck.string() << " epochs=" << r.epochs
              << " holdout=" << r.holdout_loss << " converged=" << (r.converged ? 1 : 0) << "\n";
    return 0;
}

int cmd_train_controller(const Opts& o) {
    const Preset p = make_preset(o.preset);
    Dataset ds = load_demos(o);
    const DynModel dm = load_dyn_required(o);
    TrainConfig tc = build_train_cfg(o, p, p.hid_ctrl, p.lr_ctrl);
    const auto [nu_mean, nu_std] = nu_stats(ds, tc.gain);
    Rng rng = Rng(o.seed).fork(12);
    CtrlModel cm = ctrl_init(ds.n, ds.m, tc.hidden, ds.norm, nu_mean, nu_std, rng);
    const TrainResult r = train_controller(dm, cm, ds, tc);
    const fs::path ck = out_path(o, kCtrl);
    save_ctrl(ck.string(), cm, json{{"config", echo_train_cfg("train-controller", o, tc)}});
    write_loss_csv(out_path(o, "controller_loss.csv").string(), r.history);
    require(load_ctrl(ck.string()).phase >= 2, "controller artifact failed validation");
    std::cout << "wrote " << ck.string() << " epochs=" << r.epochs
              << " holdout=" << r.holdout_loss << " converged=" << (r.converged ? 1 : 0) << "\n";
    return 0;
}

int cmd_refine_robust(const Opts& o) {
    const Preset p = make_preset(o.preset);
    Dataset ds = load_demos(o);
    const DynModel dm = load_dyn_required(o);
    const fs::path prev = fs::path(o.out) / kCtrl;
    if (!fs::exists(prev))
        throw PhaseOrderError(std::string("missing ") + kCtrl + "; run train-controller first");
    CtrlModel cm = load_ctrl(prev.string());
    TrainConfig tc = build_train_cfg(o, p, p.hid_ctrl, p.lr_ctrl);
    const TrainResult r = refine_robust(dm, cm, ds, tc);
    const fs::path ck = out_path(o, kRobust);
    save_ctrl(ck.string(), cm, json{{"config", echo_train_cfg("refine-robust", o, tc)}});
    write_loss_csv(out_path(o, "refine_loss.csv").string(), r.history);
    require(load_ctrl(ck.string()).phase == 3, "refined artifact failed validation");
    std::cout << "wrote " << ck.string() << " epochs=" << r.epochs << " loss=" << r.final_loss
              << " converged=" << (r.converged ? 1 : 0) << "\n";
    return 0;
}

int cmd_train_cvae(const Opts& o) {
    const Preset p = make_preset(o.preset);
    Dataset ds = load_demos(o);
    TrainConfig tc = build_train_cfg(o, p, p.hid_cvae, p.lr_ctrl);
    Rng rng = Rng(o.seed).fork(13);
    CvaeModel cv = cvae_init(ds.n, tc.dz, tc.cvae_hidden, ds.norm, rng);
    const TrainResult r = train_cvae(cv, ds, tc);
    const fs::path ck = out_path(o, kCvae);
    save_cvae(ck.string(), cv, json{{"config", echo_train_cfg("train-cvae", o, tc)}});
    write_loss_csv(out_path(o, "generator_loss.csv").string(), r.history);
    require(load_cvae(ck.string()).dz == tc.dz, "generator artifact failed validation");
    std::cout << "wrote " << ck.string() << " epochs=" << r.epochs << " loss=" << r.final_loss
              << " converged=" << (r.converged ? 1 : 0) << "\n";
    return 0;
}

int cmd_rollout(const Opts& o) {
    const Preset p = make_preset(o.preset);
    const Dataset ds = load_demos(o);
    const PlantSpec plant = make_plant(ds.plant);
    const TrainConfig tc = build_train_cfg(o, p, p.hid_ctrl, p.lr_ctrl);
    const std::vector<std::string> names = parse_names(o.controller);
    require(names.size() == 1, "rollout takes exactly one --controller");
    const PolicyBox box = make_policy(names[0], o, plant, ds, tc);

    const std::vector<std::string> dists = parse_names(o.disturbances);
    require(dists.size() == 1, "rollout takes exactly one disturbance");
    RolloutCfg rc = build_rollout_cfg(o, ds, dists[0]);
    if (rc.episodes == 50 && o.episodes == 0) rc.episodes = 1;

    std::shared_ptr<CvaeModel> cv;
    if (rc.source == RefSource::Generated) {
        const fs::path path = fs::path(o.out) / kCvae;
        if (!fs::exists(path))
            throw PhaseOrderError(std::string("missing ") + kCvae + "; run train-cvae first");
        cv = std::make_shared<CvaeModel>(load_cvae(path.string()));
    }
    const EvalReport rep = evaluate_policy(plant, box.fn, ds, cv.get(), rc);

    // traced replay of the first episode, same reference stream as above
    const std::size_t steps = rc.source == RefSource::Replay
                                  ? std::min(rc.steps == 0 ? ds.T - 1 : rc.steps, ds.T - 1)
                                  : (rc.steps == 0 ? ds.T - 1 : rc.steps);
    Rng zr = Rng(rc.seed).fork(1);
    const std::vector<Vec> refs = rc.source == RefSource::Replay
                                      ? replay_refs(ds, 0, steps)
                                      : generated_refs(ds, *cv, 0, steps, zr);
    Trace tr;
    run_episode(plant, rc.disturbance, refs, rc.gain, box.fn, rc.substeps, &tr);
    write_trace_csv(out_path(o, "trace.csv").string(), tr, plant.n, plant.m);

    json echo = echo_rollout_cfg("rollout", o, rc);
    echo["demo_count_used"] = ds.N;
    echo["controller"] = box.name;
    echo["disturbance"] = dists[0];
    const fs::path rp = out_path(o, "rollout.rmbil-report.json");
    save_report(rp.string(), json{{"config", echo}, {"report", report_to_json(rep)}});
    load_report(rp.string());
    std::cout << "wrote " << rp.string() << " mean_score=" << rep.mean_score
              << " median_rms=" << rep.median_rms << "\n";
    return 0;
}

int cmd_evaluate(const Opts& o) {
    const Preset p = make_preset(o.preset);
    const Dataset ds = load_demos(o);
    const PlantSpec plant = make_plant(ds.plant);
    const TrainConfig tc = build_train_cfg(o, p, p.hid_ctrl, p.lr_ctrl);

    std::vector<PolicyBox> boxes;
    std::vector<NamedPolicy> pols;
    for (const std::string& name : parse_names(o.controllers))
        boxes.push_back(make_policy(name, o, plant, ds, tc));
    pols.reserve(boxes.size());
    for (const PolicyBox& b : boxes) pols.push_back({b.name, b.fn});

    std::vector<NamedDisturbance> dists;
    for (const std::string& name : parse_names(o.disturbances))
        dists.push_back(
            {name, make_disturbance(name, o.severity >= 0.0 ? o.severity : 0.02, ds.m, o.seed)});
    const std::vector<double> gains = parse_doubles(o.gains);

    RolloutCfg base = build_rollout_cfg(o, ds, "nominal");
    std::shared_ptr<CvaeModel> cv;
    if (base.source == RefSource::Generated) {
        const fs::path path = fs::path(o.out) / kCvae;
        if (!fs::exists(path))
            throw PhaseOrderError(std::string("missing ") + kCvae + "; run train-cvae first");
        cv = std::make_shared<CvaeModel>(load_cvae(path.string()));
    }

    const auto rows = robustness_sweep(plant, ds, cv.get(), base, pols, dists, gains);

    json echo = echo_rollout_cfg("evaluate", o, base);
    echo["demo_count_used"] = ds.N;
    echo["label"] = o.label;
    json jrows = json::array();
    for (const SweepRow& r : rows)
        jrows.push_back({{"controller", r.controller},
                         {"disturbance", r.disturbance},
                         {"gain", r.gain},
                         {"report", report_to_json(r.report)}});
    const fs::path rp = out_path(o, "eval_" + o.label + ".rmbil-report.json");
    save_report(rp.string(), json{{"config", echo}, {"rows", jrows}});
    load_report(rp.string());
    std::cout << "wrote " << rp.string() << " cells=" << rows.size() << "\n";
    return 0;
}

int cmd_report(const Opts& o) {
    require(!o.out.empty(), "--out is required");
    std::vector<fs::path> files;
    if (fs::exists(o.out))
        for (const auto& entry : fs::directory_iterator(o.out)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("eval_", 0) == 0 && name.find(".rmbil-report.json") != std::string::npos)
                files.push_back(entry.path());
        }
    require(!files.empty(), "no eval_*.rmbil-report.json artifacts under --out; run evaluate");
    std::sort(files.begin(), files.end());

    std::string grid = "label,controller,disturbance,gain,mean_score,std_score,min_score,"
                       "max_score,median_rms\n";
    std::string by_count = "demo_count,controller,gain,mean_score,std_score\n";
    for (const fs::path& f : files) {
        const json doc = load_report(f.string());
        const json& cfg = doc.at("config");
        const std::string label = cfg.value("label", "default");
        const auto demo_count = cfg.at("demo_count_used").get<std::size_t>();
        for (const json& row : doc.at("rows")) {
            const EvalReport rep = report_from_json(row.at("report"));
            grid += label + "," + row.at("controller").get<std::string>() + "," +
                    row.at("disturbance").get<std::string>() + "," +
                    csv_double(row.at("gain").get<double>()) + "," + csv_double(rep.mean_score) +
                    "," + csv_double(rep.std_score) + "," + csv_double(rep.min_score) + "," +
                    csv_double(rep.max_score) + "," + csv_double(rep.median_rms) + "\n";
            if (row.at("disturbance").get<std::string>() == "nominal")
                by_count += std::to_string(demo_count) + "," +
                            row.at("controller").get<std::string>() + "," +
                            csv_double(row.at("gain").get<double>()) + "," +
                            csv_double(rep.mean_score) + "," + csv_double(rep.std_score) + "\n";
        }
    }
    const fs::path g = out_path(o, "score_by_gain_disturbance.csv");
    const fs::path c = out_path(o, "score_by_demo_count.csv");
    atomic_write(g.string(), grid);
    atomic_write(c.string(), by_count);
    std::cout << "wrote " << g.string() << " and " << c.string() << " from " << files.size()
              << " grids\n";
    return 0;
}

void add_common(CLI::App* cmd, Opts& o) {
    // repeated flags are allowed and the last value wins, so callers can
    // append overrides to a shared base command line
    cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    cmd->add_option("--out", o.out, "artifact directory")->required();
    cmd->add_option("--seed", o.seed, "root seed");
    cmd->add_option("--preset", o.preset, "desk|paper");
}

void add_train_overrides(CLI::App* cmd, Opts& o) {
    cmd->add_option("--subset", o.subset, "use only the first k demo trajectories");
    cmd->add_option("--tau", o.tau, "training window length");
    cmd->add_option("--batch", o.batch, "windows per optimizer update");
    cmd->add_option("--epochs", o.epochs, "epoch cap");
    cmd->add_option("--windows-cap", o.windows_cap, "windows visited per epoch (0: all)");
    cmd->add_option("--hidden", o.hidden, "hidden width override");
    cmd->add_option("--lr", o.lr, "learning rate override");
    cmd->add_option("--eps", o.eps, "stop threshold");
    cmd->add_option("--eps-r", o.eps_r, "noised-loss stop threshold");
    cmd->add_option("--noise-std", o.noise, "boundary noise std (standardized)");
    cmd->add_option("--gain", o.gain, "tracking feedback gain");
    cmd->add_option("--dz", o.dz, "generator latent dimension");
    cmd->add_option("--grad-path", o.grad_path, "adjoint|direct");
    cmd->add_option("--solver", o.solver, "rk4|rk45");
}

void add_eval_options(CLI::App* cmd, Opts& o) {
    cmd->add_option("--subset", o.subset, "use only the first k demo trajectories");
    cmd->add_option("--episodes", o.episodes, "episodes per cell");
    cmd->add_option("--steps", o.steps, "steps per episode (0: demo horizon)");
    cmd->add_option("--gain", o.gain, "feedback gain (rollout)");
    cmd->add_option("--source", o.source, "replay|cvae");
    cmd->add_option("--severity", o.severity, "disturbance severity");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"imitation pipeline: demos, three-phase training, generator, evaluation"};
    app.require_subcommand(1);
    Opts o;

    CLI::App* gen = app.add_subcommand("gen-demos", "generate expert demonstrations");
    add_common(gen, o);
    gen->add_option("--plant", o.plant, "scalar|pendulum|pointmass");
    gen->add_option("--n", o.n, "number of demos");
    gen->add_option("--t", o.t, "steps per demo");

    CLI::App* td = app.add_subcommand("train-dynamics", "fit the derivative model (phase 1)");
    add_common(td, o);
    add_train_overrides(td, o);

    CLI::App* tc = app.add_subcommand("train-controller", "closed-loop tracking (phase 2)");
    add_common(tc, o);
    add_train_overrides(tc, o);

    CLI::App* rr = app.add_subcommand("refine-robust", "noise-injected refinement (phase 3)");
    add_common(rr, o);
    add_train_overrides(rr, o);

    CLI::App* tv = app.add_subcommand("train-cvae", "train the reference generator");
    add_common(tv, o);
    add_train_overrides(tv, o);

    CLI::App* ro = app.add_subcommand("rollout", "closed-loop episodes + trace CSV");
    add_common(ro, o);
    ro->add_option("--controller", o.controller,
                   "robust|nominal|bc|ndi-learned|ndi-true|expert");
    ro->add_option("--disturbances", o.disturbances, "nominal|slope|uneven|paramshift");
    add_eval_options(ro, o);

    CLI::App* ev = app.add_subcommand("evaluate", "controller x disturbance x gain grid");
    add_common(ev, o);
    ev->add_option("--controllers", o.controllers, "comma list of control laws");
    ev->add_option("--disturbances", o.disturbances, "comma list of disturbances");
    ev->add_option("--gains", o.gains, "comma list of feedback gains");
    ev->add_option("--label", o.label, "grid label for report merging");
    add_eval_options(ev, o);

    CLI::App* rp = app.add_subcommand("report", "merge evaluation grids into CSV tables");
    add_common(rp, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen_demos(o);
        if (td->parsed()) return cmd_train_dynamics(o);
        if (tc->parsed()) return cmd_train_controller(o);
        if (rr->parsed()) return cmd_refine_robust(o);
        if (tv->parsed()) return cmd_train_cvae(o);
        if (ro->parsed()) return cmd_rollout(o);
        if (ev->parsed()) return cmd_evaluate(o);
        if (rp->parsed()) return cmd_report(o);
        std::cerr << "error: usage: no subcommand\n";
        return 2;
    } catch (const PhaseOrderError& e) {
        std::cerr << "error: phase-order: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: format: " << e.what() << "\n";
        return 4;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: diverged: " << e.what() << "\n";
        return 5;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 5;
    } catch (const DomainError& e) {
        std::cerr << "error: domain: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error: invalid: " << e.what() << "\n";
        return 1;
    }
}
