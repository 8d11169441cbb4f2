#include "gmmt/runconfig.hpp"
#include <cstring>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace gmmt {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    // shortest representation that parses back to the same bits
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        if constexpr (std::is_same_v<T, double>)
            out << fmt_double(v[i]);
        else
            out << v[i];
    }
    return out.str();
}

struct KvMap {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) != 0; }

    void require_known(const std::map<std::string, bool>& seen) const {
        for (const auto& [k, v] : kv)
            if (!seen.count(k)) throw ConfigError("config: unknown key '" + k + "'");
    }

    void get(const std::string& k, std::string& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (has(k)) out = kv.at(k);
    }
    void get(const std::string& k, std::uint64_t& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (!has(k)) return;
        try {
            out = std::stoull(kv.at(k));
        } catch (...) {
            throw ConfigError("config: bad integer for '" + k + "'");
        }
    }
    void get(const std::string& k, int& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (!has(k)) return;
        try {
            out = std::stoi(kv.at(k));
        } catch (...) {
            throw ConfigError("config: bad integer for '" + k + "'");
        }
    }
    void get(const std::string& k, double& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (!has(k)) return;
        try {
            out = std::stod(kv.at(k));
        } catch (...) {
            throw ConfigError("config: bad number for '" + k + "'");
        }
    }
    void get(const std::string& k, std::vector<int>& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (!has(k)) return;
        out.clear();
        std::istringstream in(kv.at(k));
        std::string item;
        while (std::getline(in, item, ',')) {
            try {
                out.push_back(std::stoi(trim(item)));
            } catch (...) {
                throw ConfigError("config: bad integer list for '" + k + "'");
            }
        }
    }
    void get(const std::string& k, std::vector<double>& out, std::map<std::string, bool>& seen) {
        seen[k] = true;
        if (!has(k)) return;
        out.clear();
        std::istringstream in(kv.at(k));
        std::string item;
        while (std::getline(in, item, ',')) {
            try {
                out.push_back(std::stod(trim(item)));
            } catch (...) {
                throw ConfigError("config: bad number list for '" + k + "'");
            }
        }
    }
};

}  // namespace

RunConfig RunConfig::parse_ini(const std::string& text) {
    std::map<std::string, KvMap> sections;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto comment = line.find_first_of(";#");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (section.empty() || key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        sections[section].kv[key] = trim(line.substr(eq + 1));
    }

    static const char* known_sections[] = {"run",     "scenario", "schedule", "denoiser",
                                           "trainer", "metrics",  "ablate",   "sweep"};
    for (const auto& [name, kvs] : sections) {
        bool ok = false;
        for (const char* s : known_sections) ok = ok || name == s;
        if (!ok) throw ConfigError("config: unknown section [" + name + "]");
    }

    RunConfig c;
    std::map<std::string, bool> seen;
    auto sec = [&sections](const char* name) -> KvMap& { return sections[name]; };

    seen.clear();
    sec("run").get("seed", c.seed, seen);
    sec("run").get("out_dir", c.out_dir, seen);
    sec("run").require_known(seen);

    seen.clear();
    sec("scenario").get("channels", c.channels, seen);
    sec("scenario").get("height", c.height, seen);
    sec("scenario").get("width", c.width, seen);
    sec("scenario").require_known(seen);

    seen.clear();
    sec("schedule").get("total_steps", c.total_steps, seen);
    sec("schedule").get("beta_start", c.beta_start, seen);
    sec("schedule").get("beta_end", c.beta_end, seen);
    sec("schedule").get("steps", c.steps, seen);
    sec("schedule").get("eta", c.eta, seen);
    sec("schedule").require_known(seen);

    seen.clear();
    sec("denoiser").get("blocks", c.blocks, seen);
    sec("denoiser").get("base_channels", c.base_channels, seen);
    sec("denoiser").get("time_embed_dim", c.time_embed_dim, seen);
    sec("denoiser").get("head_hidden_channels", c.head_hidden_channels, seen);
    sec("denoiser").get("disc_base_channels", c.disc_base_channels, seen);
    sec("denoiser").require_known(seen);

    seen.clear();
    sec("trainer").get("mode", c.mode, seen);
    sec("trainer").get("lambda", c.lambda, seen);
    sec("trainer").get("epochs", c.epochs, seen);
    sec("trainer").get("steps_per_epoch", c.steps_per_epoch, seen);
    sec("trainer").get("batch_size", c.batch_size, seen);
    sec("trainer").get("lr_warmup_start", c.lr_warmup_start, seen);
    sec("trainer").get("lr_warmup_end", c.lr_warmup_end, seen);
    sec("trainer").get("lr_warmup_epochs", c.lr_warmup_epochs, seen);
    sec("trainer").get("lr_decay_end", c.lr_decay_end, seen);
    sec("trainer").get("momentum", c.momentum, seen);
    sec("trainer").get("weight_decay", c.weight_decay, seen);
    sec("trainer").require_known(seen);

    seen.clear();
    sec("metrics").get("pr_threshold", c.pr_threshold, seen);
    sec("metrics").get("npr_threshold", c.npr_threshold, seen);
    sec("metrics").get("eval_scenarios", c.eval_scenarios, seen);
    sec("metrics").require_known(seen);

    seen.clear();
    sec("ablate").get("epochs", c.ablate_epochs, seen);
    sec("ablate").get("batch_size", c.ablate_batch_size, seen);
    sec("ablate").require_known(seen);

    seen.clear();
    sec("sweep").get("steps_values", c.steps_values, seen);
    sec("sweep").get("lambda_values", c.lambda_values, seen);
    sec("sweep").get("blocks_values", c.blocks_values, seen);
    sec("sweep").get("epochs", c.sweep_epochs, seen);
    sec("sweep").require_known(seen);

    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_ini(buf.str());
}

std::string RunConfig::to_ini() const {
    std::ostringstream out;
    out << "[run]\n";
    out << "seed = " << seed << "\n";
    out << "out_dir = " << out_dir << "\n";
    out << "\n[scenario]\n";
    out << "channels = " << channels << "\n";
    out << "height = " << height << "\n";
    out << "width = " << width << "\n";
    out << "\n[schedule]\n";
    out << "total_steps = " << total_steps << "\n";
    out << "beta_start = " << fmt_double(beta_start) << "\n";
    out << "beta_end = " << fmt_double(beta_end) << "\n";
    out << "steps = " << steps << "\n";
    out << "eta = " << fmt_double(eta) << "\n";
    out << "\n[denoiser]\n";
    out << "blocks = " << blocks << "\n";
    out << "base_channels = " << base_channels << "\n";
    out << "time_embed_dim = " << time_embed_dim << "\n";
    out << "head_hidden_channels = " << head_hidden_channels << "\n";
    out << "disc_base_channels = " << disc_base_channels << "\n";
    out << "\n[trainer]\n";
    out << "mode = " << mode << "\n";
    out << "lambda = " << fmt_double(lambda) << "\n";
    out << "epochs = " << epochs << "\n";
    out << "steps_per_epoch = " << steps_per_epoch << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "lr_warmup_start = " << fmt_double(lr_warmup_start) << "\n";
    out << "lr_warmup_end = " << fmt_double(lr_warmup_end) << "\n";
    out << "lr_warmup_epochs = " << lr_warmup_epochs << "\n";
    out << "lr_decay_end = " << fmt_double(lr_decay_end) << "\n";
    out << "momentum = " << fmt_double(momentum) << "\n";
    out << "weight_decay = " << fmt_double(weight_decay) << "\n";
    out << "\n[metrics]\n";
    out << "pr_threshold = " << fmt_double(pr_threshold) << "\n";
    out << "npr_threshold = " << fmt_double(npr_threshold) << "\n";
    out << "eval_scenarios = " << eval_scenarios << "\n";
    out << "\n[ablate]\n";
    out << "epochs = " << ablate_epochs << "\n";
    out << "batch_size = " << ablate_batch_size << "\n";
    out << "\n[sweep]\n";
    out << "steps_values = " << fmt_list(steps_values) << "\n";
    out << "lambda_values = " << fmt_list(lambda_values) << "\n";
    out << "blocks_values = " << fmt_list(blocks_values) << "\n";
    out << "epochs = " << sweep_epochs << "\n";
    return out.str();
}

ScenarioConfig RunConfig::scenario_config() const {
    ScenarioConfig geo;
    geo.channels = channels;
    geo.height = height;
    geo.width = width;
    return geo;
}

DenoiserConfig RunConfig::denoiser_config() const {
    DenoiserConfig d;
    d.blocks = blocks;
    d.base_channels = base_channels;
    d.feature_channels = channels;
    d.height = height;
    d.width = width;
    d.time_embed_dim = time_embed_dim;
    return d;
}

NoiseSchedule RunConfig::schedule() const { return build_schedule(total_steps, beta_start, beta_end); }

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.mode = parse_gen_mode(mode);
    t.lambda = lambda;
    t.epochs = epochs;
    t.steps_per_epoch = steps_per_epoch;
    t.batch_size = batch_size;
    t.lr_warmup_start = lr_warmup_start;
    t.lr_warmup_end = lr_warmup_end;
    t.lr_warmup_epochs = lr_warmup_epochs;
    t.lr_decay_end = lr_decay_end;
    t.momentum = momentum;
    t.weight_decay = weight_decay;
    t.seed = seed;
    return t;
}

TrainSetup RunConfig::train_setup(Method method) const {
    TrainSetup s;
    s.method = method;
    s.geo = scenario_config();
    s.dcfg = denoiser_config();
    s.sched = schedule();
    s.tcfg = train_config();
    s.head_hidden_channels = head_hidden_channels;
    s.disc_base_channels = disc_base_channels;
    return s;
}

void RunConfig::validate() const {
    denoiser_config().validate();
    train_config().validate();
    if (steps < 1 || steps > total_steps) throw ConfigError("config: schedule steps out of [1,T]");
    if (eta < 0 || eta > 1) throw ConfigError("config: eta must lie in [0,1]");
    if (eval_scenarios < 0) throw ConfigError("config: eval_scenarios must be >= 0");
    if (pr_threshold < 0 || npr_threshold < 0) throw ConfigError("config: thresholds must be >= 0");
    (void)schedule();
}

}  // namespace gmmt
