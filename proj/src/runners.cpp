#include "gmmt/runners.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace gmmt {

namespace fs = std::filesystem;

int worker_count() {
    const char* env = std::getenv("GMMT_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    if (v < 1) return 1;
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    return hw > 0 ? std::min(v, hw) : v;
}

namespace {

void parallel_for(int n, const std::function<void(int)>& body) {
    const int workers = std::min(worker_count(), std::max(1, n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_rate(double v) {  // rates x100 with one decimal, benchmark-table style
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!f) throw DataError("cannot write " + path.string());
    return f;
}

void write_loss_log(const fs::path& path, const std::vector<LossBreakdown>& log) {
    std::ofstream f = open_out(path);
    f << "step,epoch,lr,loss_track,loss_gen,total,loss_D0,loss_D1\n";
    for (const LossBreakdown& lb : log) {
        f << lb.step << ',' << lb.epoch << ',' << fmt(lb.lr) << ',' << fmt(lb.loss_track) << ','
          << (lb.loss_gen ? fmt(*lb.loss_gen) : "") << ',' << fmt(lb.total) << ','
          << (lb.loss_d0 ? fmt(*lb.loss_d0) : "") << ',' << (lb.loss_d1 ? fmt(*lb.loss_d1) : "")
          << '\n';
    }
}

const char* kReportHeader = "axis_value,pr,npr,sr_auc,sr_ratio,re,f_score,ssim_mean\n";

void write_report_row(std::ofstream& f, const std::string& axis_value, const EvalReport& r) {
    f << axis_value << ',' << fmt_rate(r.pr) << ',' << fmt_rate(r.npr) << ',' << fmt_rate(r.sr_auc)
      << ',' << fmt_rate(r.sr_ratio) << ',' << fmt_rate(r.re) << ',' << fmt_rate(r.f_score) << ','
      << (r.has_ssim ? fmt_rate(r.ssim_mean) : "") << '\n';
}

}  // namespace

EvalSummary evaluate_models(TrainedModels& models, const RunConfig& cfg, int n_scenarios,
                            std::uint64_t seed) {
    if (n_scenarios < 1) throw DataError("evaluation needs a non-empty scenario set");
    const ScenarioConfig geo = cfg.scenario_config();
    const NoiseSchedule sched = cfg.schedule();
    const StepPlan plan = make_plan(cfg.total_steps, cfg.steps);
    const bool generative = models.method != Method::Base;

    Rng scen_rng = Rng(seed).split(101);
    std::vector<Scenario> scenarios;
    scenarios.reserve(n_scenarios);
    for (int i = 0; i < n_scenarios; ++i)
        scenarios.push_back(
            synth_scenario(scen_rng, static_cast<Challenge>(scen_rng.uniform_int(0, 3)), geo));

    std::vector<FramePair> frames(n_scenarios);
    std::vector<double> ssims(n_scenarios, 0.0);
    parallel_for(n_scenarios, [&](int i) {
        Rng infer_rng = Rng(seed).split(202).split(static_cast<std::uint64_t>(i));
        Tensor fused;
        if (generative) {
            fused = gmmt_infer(models.net, scenarios[i].f_rgb, scenarios[i].f_tir, plan,
                               models.method == Method::Dm ? GenMode::Dm
                               : models.method == Method::Cgan ? GenMode::Cgan
                                                               : GenMode::Raw,
                               sched, cfg.eta, infer_rng);
            ssims[i] = ssim(fused, scenarios[i].fused_oracle);
        } else {
            fused = typical_fuse_apply(models.typical, scenarios[i].f_rgb, scenarios[i].f_tir);
        }
        Prediction p = track_head_predict(models.head, fused);
        frames[i].pred = p.bbox;
        frames[i].truth = scenarios[i].bbox;
    });

    EvalSummary out;
    out.scenarios = n_scenarios;
    EvalReport& r = out.report;
    r.pr_threshold = cfg.pr_threshold;
    r.npr_threshold = cfg.npr_threshold;
    r.pr = precision_rate(frames, cfg.pr_threshold);
    r.npr = norm_precision_rate(frames, cfg.npr_threshold);
    const SuccessRates sr = success_rate(frames);
    r.sr_auc = sr.sr_auc;
    r.sr_ratio = sr.sr_ratio;
    const RecallFscore rf = recall_and_fscore(frames);
    r.re = rf.re;
    r.f_score = rf.f;
    for (double thr = 0.0; thr <= 8.0001; thr += 0.5)
        r.pr_curve.emplace_back(thr, precision_rate(frames, thr));
    for (double thr = 0.0; thr <= 0.5001; thr += 0.05)
        r.npr_curve.emplace_back(thr, norm_precision_rate(frames, thr));
    if (generative) {
        double total = 0;
        for (double v : ssims) total += v;
        r.ssim_mean = total / n_scenarios;
        r.has_ssim = true;
    }
    return out;
}

std::string run_train(const RunConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const Method method = static_cast<Method>(static_cast<int>(parse_gen_mode(cfg.mode)) + 1);
    TrainedModels models = train(cfg.train_setup(method));

    write_loss_log(fs::path(cfg.out_dir) / "train_log.csv", models.log);

    Checkpoint ckpt;
    ckpt.method = models.method;
    ckpt.dcfg = cfg.denoiser_config();
    ckpt.head_hidden_channels = cfg.head_hidden_channels;
    ckpt.disc_base_channels = cfg.disc_base_channels;
    ckpt.epoch = models.log.empty() ? 0 : models.log.back().epoch;
    ckpt.step = models.log.empty() ? 0 : static_cast<std::uint64_t>(models.log.back().step);
    ckpt.config_ini = cfg.to_ini();
    const std::string path = (fs::path(cfg.out_dir) / "checkpoint.gmck").string();
    save_checkpoint(path, ckpt, models);

    if (models.aborted)
        throw NumericError("training aborted (" + models.abort_message +
                           "); last-good checkpoint written to " + path);
    return path;
}

void run_infer(const RunConfig& cfg, const std::string& checkpoint, int count) {
    cfg.validate();
    if (count < 1) throw DataError("infer: count must be >= 1");
    fs::create_directories(cfg.out_dir);
    Checkpoint ckpt = load_checkpoint(checkpoint, &cfg);
    if (ckpt.method == Method::Base)
        throw ConfigError("infer: checkpoint holds the typical baseline, nothing to sample");

    const ScenarioConfig geo = cfg.scenario_config();
    const NoiseSchedule sched = cfg.schedule();
    const StepPlan plan = make_plan(cfg.total_steps, cfg.steps);
    Rng scen_rng = Rng(cfg.seed).split(101);
    for (int i = 0; i < count; ++i) {
        Scenario s = synth_scenario(scen_rng, static_cast<Challenge>(scen_rng.uniform_int(0, 3)), geo);
        Rng infer_rng = Rng(cfg.seed).split(202).split(static_cast<std::uint64_t>(i));
        Tensor fused = gmmt_infer(ckpt.models.net, s.f_rgb, s.f_tir, plan,
                                  ckpt.method == Method::Dm ? GenMode::Dm
                                  : ckpt.method == Method::Cgan ? GenMode::Cgan
                                                                : GenMode::Raw,
                                  sched, cfg.eta, infer_rng);
        char name[32];
        std::snprintf(name, sizeof name, "fused_%04d.bin", i);
        write_feature_map((fs::path(cfg.out_dir) / name).string(), fused);
    }
}

EvalSummary run_eval(const RunConfig& cfg, const std::string& checkpoint) {
    cfg.validate();
    if (cfg.eval_scenarios < 1) throw DataError("eval: empty scenario set (eval_scenarios < 1)");
    fs::create_directories(cfg.out_dir);
    Checkpoint ckpt = load_checkpoint(checkpoint, &cfg);
    EvalSummary summary = evaluate_models(ckpt.models, cfg, cfg.eval_scenarios, cfg.seed);

    std::ofstream f = open_out(fs::path(cfg.out_dir) / "report.csv");
    f << kReportHeader;
    write_report_row(f, "", summary.report);
    return summary;
}

void run_ablate(const RunConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    std::ofstream f = open_out(fs::path(cfg.out_dir) / "ablate.csv");
    f << "method,pr,npr,sr_auc,sr_ratio,re,f_score,ssim_mean\n";
    for (Method method : {Method::Base, Method::Raw, Method::Cgan, Method::Dm}) {
        RunConfig mcfg = cfg;
        mcfg.epochs = cfg.ablate_epochs;
        mcfg.batch_size = cfg.ablate_batch_size;
        mcfg.lr_warmup_epochs = std::max(1, cfg.ablate_epochs / 5);
        switch (method) {
            case Method::Base:
            case Method::Dm: mcfg.mode = "dm"; break;
            case Method::Raw: mcfg.mode = "raw"; break;
            case Method::Cgan: mcfg.mode = "cgan"; break;
        }
        TrainedModels models = train(mcfg.train_setup(method));
        if (models.aborted)
            throw NumericError(std::string("ablate: training aborted for ") + method_name(method) +
                               " (" + models.abort_message + ")");
        EvalSummary summary = evaluate_models(models, cfg, cfg.eval_scenarios, cfg.seed);
        write_report_row(f, method_name(method), summary.report);
        f.flush();
    }
}

void run_sweep(const RunConfig& cfg, const std::string& axis, const std::string& checkpoint) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);

    if (axis == "steps") {
        if (cfg.steps_values.empty()) throw ConfigError("sweep: empty steps value list");
        std::optional<Checkpoint> ckpt;
        TrainedModels trained;
        if (!checkpoint.empty()) {
            ckpt = load_checkpoint(checkpoint, &cfg);
            trained = std::move(ckpt->models);
        } else {
            trained = train(cfg.train_setup(Method::Dm));
            if (trained.aborted) throw NumericError("sweep: training aborted");
        }
        std::ofstream f = open_out(fs::path(cfg.out_dir) / "sweep_steps.csv");
        f << kReportHeader;
        for (int s : cfg.steps_values) {
            RunConfig scfg = cfg;
            scfg.steps = s;
            EvalSummary summary = evaluate_models(trained, scfg, cfg.eval_scenarios, cfg.seed);
            write_report_row(f, std::to_string(s), summary.report);
            f.flush();
        }
        return;
    }
    if (axis == "lambda") {
        if (cfg.lambda_values.empty()) throw ConfigError("sweep: empty lambda value list");
        std::ofstream f = open_out(fs::path(cfg.out_dir) / "sweep_lambda.csv");
        f << kReportHeader;
        for (double lam : cfg.lambda_values) {
            RunConfig lcfg = cfg;
            lcfg.lambda = lam;
            lcfg.epochs = cfg.sweep_epochs;
            lcfg.lr_warmup_epochs = std::max(1, cfg.sweep_epochs / 4);
            TrainedModels models = train(lcfg.train_setup(Method::Dm));
            if (models.aborted) throw NumericError("sweep: training aborted at lambda");
            EvalSummary summary = evaluate_models(models, cfg, cfg.eval_scenarios, cfg.seed);
            EvalReport r = summary.report;
            r.has_ssim = false;  // the s axis is the similarity study
            char label[32];
            std::snprintf(label, sizeof label, "%g", lam);
            write_report_row(f, label, r);
            f.flush();
        }
        return;
    }
    if (axis == "blocks") {
        if (cfg.blocks_values.empty()) throw ConfigError("sweep: empty blocks value list");
        std::ofstream f = open_out(fs::path(cfg.out_dir) / "sweep_blocks.csv");
        f << kReportHeader;
        for (int n : cfg.blocks_values) {
            RunConfig ncfg = cfg;
            ncfg.blocks = n;
            ncfg.epochs = cfg.sweep_epochs;
            ncfg.lr_warmup_epochs = std::max(1, cfg.sweep_epochs / 4);
            TrainedModels models = train(ncfg.train_setup(Method::Dm));
            if (models.aborted) throw NumericError("sweep: training aborted at blocks");
            EvalSummary summary = evaluate_models(models, ncfg, cfg.eval_scenarios, cfg.seed);
            EvalReport r = summary.report;
            r.has_ssim = false;
            write_report_row(f, std::to_string(n), r);
            f.flush();
        }
        return;
    }
    throw ConfigError("sweep: unknown axis '" + axis + "' (expected steps|lambda|blocks)");
}

void run_goldens(const RunConfig& cfg, bool force) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    const ScenarioConfig geo = cfg.scenario_config();
    for (int tag = 0; tag < 4; ++tag) {
        for (int k = 0; k < 2; ++k) {
            char name[48];
            std::snprintf(name, sizeof name, "golden_%s_%d.bin",
                          challenge_name(static_cast<Challenge>(tag)), k);
            const fs::path path = fs::path(cfg.out_dir) / name;
            if (fs::exists(path) && !force)
                throw DataError(path.string() + " exists; pass --force to regenerate goldens");
            Rng rng = Rng(cfg.seed).split(303).split(static_cast<std::uint64_t>(tag * 2 + k));
            write_scenario(path.string(), synth_scenario(rng, static_cast<Challenge>(tag), geo));
        }
    }
}

}  // namespace gmmt
