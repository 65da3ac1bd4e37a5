#include "ortho/experiment.hpp"
#include "ortho/io.hpp"
#include "ortho/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ortho {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentSpec::validate() const {
    if (rhos.empty() || k_sizes.empty() || methods.empty() || seeds.empty())
        throw std::invalid_argument("spec: empty grid axis");
    for (double r : rhos)
        if (r < 0.0 || r > 1.0)
            throw std::invalid_argument("spec: rho out of [0,1]");
    for (int k : k_sizes)
        if (k < 1 || k > data.num_classes)
            throw std::invalid_argument("spec: k_size out of range");
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("spec: train_frac out of (0,1)");
    if (out_dir.empty()) throw std::invalid_argument("spec: out_dir empty");
    train.validate();
}

namespace {

std::vector<std::string> split_ws(const std::string &s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::string trim(const std::string &s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

void write_file(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io::FileError(path + ": cannot open for writing");
    f << text;
    if (!f.good()) throw io::FileError(path + ": write failed");
}

std::string read_file(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io::FileError(path + ": cannot open");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

} // namespace

ExperimentSpec parse_spec(const std::string &text) {
    ExperimentSpec s;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("spec line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const auto toks = split_ws(val);
        auto need_one = [&] {
            if (toks.size() != 1)
                throw std::invalid_argument("spec key '" + key +
                                            "' expects a single value");
            return toks[0];
        };
        if (key == "rhos") {
            s.rhos.clear();
            for (const auto &t : toks) s.rhos.push_back(std::stod(t));
        } else if (key == "k_sizes") {
            s.k_sizes.clear();
            for (const auto &t : toks) s.k_sizes.push_back(std::stoi(t));
        } else if (key == "methods") {
            s.methods.clear();
            for (const auto &t : toks) s.methods.push_back(method_from_string(t));
        } else if (key == "seeds") {
            s.seeds.clear();
            for (const auto &t : toks) s.seeds.push_back(std::stoull(t));
        } else if (key == "num_classes") {
            s.data.num_classes = std::stoi(need_one());
            s.arch.num_classes = s.data.num_classes;
        } else if (key == "per_class") {
            s.data.per_class = std::stoi(need_one());
        } else if (key == "height") {
            s.data.height = std::stoi(need_one());
            s.arch.height = s.data.height;
        } else if (key == "width") {
            s.data.width = std::stoi(need_one());
            s.arch.width = s.data.width;
        } else if (key == "widths") {
            if (toks.size() != 3)
                throw std::invalid_argument("spec key 'widths' expects 3 values");
            for (int i = 0; i < 3; ++i)
                s.arch.widths[std::size_t(i)] = std::stoi(toks[std::size_t(i)]);
        } else if (key == "epochs") {
            s.train.epochs = std::stoi(need_one());
        } else if (key == "batch_size") {
            s.train.batch_size = std::stoi(need_one());
        } else if (key == "outer_lr") {
            s.train.outer_lr = std::stod(need_one());
        } else if (key == "momentum") {
            s.train.momentum = std::stod(need_one());
        } else if (key == "alpha") {
            s.train.alpha = std::stod(need_one());
        } else if (key == "gamma") {
            s.train.gamma = std::stod(need_one());
        } else if (key == "lambda_adv") {
            s.train.lambda_adv = std::stod(need_one());
        } else if (key == "clip_norm") {
            s.train.clip_norm = std::stod(need_one());
        } else if (key == "adv_hidden") {
            s.train.adv_hidden = std::stoi(need_one());
        } else if (key == "concept_layer") {
            s.train.concept_layer = std::stoi(need_one());
            s.eval.concept_layer = s.train.concept_layer;
        } else if (key == "detach_nu") {
            s.train.detach_nu = need_one() == "true";
        } else if (key == "concept_include_poles") {
            s.train.concept_include_poles = need_one() == "true";
        } else if (key == "debias_include_poles") {
            s.train.debias_include_poles = need_one() == "true";
        } else if (key == "pole_probe_detach") {
            s.train.pole_probe_detach = need_one() == "true";
        } else if (key == "train_frac") {
            s.train_frac = std::stod(need_one());
        } else if (key == "sensitivity_samples") {
            s.eval.sensitivity_samples = std::stoi(need_one());
        } else if (key == "leakage_per_cell") {
            s.eval.leakage_per_cell = std::stoi(need_one());
        } else if (key == "leakage_epochs") {
            s.eval.leakage.epochs = std::stoi(need_one());
        } else if (key == "probe_steps") {
            s.eval.probe.steps = std::stoi(need_one());
        } else if (key == "probe_lr") {
            s.eval.probe.lr = std::stod(need_one());
        } else if (key == "out_dir") {
            s.out_dir = need_one();
        } else {
            throw std::invalid_argument("spec: unknown key '" + key + "'");
        }
    }
    s.validate();
    return s;
}

ExperimentSpec load_spec(const std::string &path) {
    return parse_spec(read_file(path));
}

std::string spec_text(const ExperimentSpec &s) {
    std::ostringstream os;
    os.precision(17);
    os << "rhos =";
    for (double r : s.rhos) os << ' ' << r;
    os << "\nk_sizes =";
    for (int k : s.k_sizes) os << ' ' << k;
    os << "\nmethods =";
    for (Method m : s.methods) os << ' ' << method_name(m);
    os << "\nseeds =";
    for (auto v : s.seeds) os << ' ' << v;
    os << "\nnum_classes = " << s.data.num_classes
       << "\nper_class = " << s.data.per_class << "\nheight = " << s.data.height
       << "\nwidth = " << s.data.width << "\nwidths = " << s.arch.widths[0] << ' '
       << s.arch.widths[1] << ' ' << s.arch.widths[2]
       << "\nepochs = " << s.train.epochs << "\nbatch_size = " << s.train.batch_size
       << "\nouter_lr = " << s.train.outer_lr << "\nmomentum = " << s.train.momentum
       << "\nalpha = " << s.train.alpha << "\ngamma = " << s.train.gamma
       << "\nlambda_adv = " << s.train.lambda_adv
       << "\nclip_norm = " << s.train.clip_norm
       << "\nadv_hidden = " << s.train.adv_hidden
       << "\nconcept_layer = " << s.train.concept_layer
       << "\ndetach_nu = " << (s.train.detach_nu ? "true" : "false")
       << "\nconcept_include_poles = "
       << (s.train.concept_include_poles ? "true" : "false")
       << "\ndebias_include_poles = "
       << (s.train.debias_include_poles ? "true" : "false")
       << "\npole_probe_detach = "
       << (s.train.pole_probe_detach ? "true" : "false")
       << "\ntrain_frac = " << s.train_frac << "\nout_dir = " << s.out_dir
       << "\n";
    return os.str();
}

std::string cell_id(double rho, int k_size) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "rho%.2f-k%d", rho, k_size);
    return buf;
}

std::vector<int> pick_k(int num_classes, int k_size, std::uint64_t seed) {
    if (k_size < 1 || k_size > num_classes)
        throw std::invalid_argument("pick_k: k_size out of range");
    std::vector<int> all(std::size_t(num_classes), 0);
    for (int i = 0; i < num_classes; ++i) all[std::size_t(i)] = i;
    Rng rng(sub_seed(seed, "K", std::uint64_t(k_size)));
    for (std::size_t i = all.size(); i > 1; --i)
        std::swap(all[i - 1], all[std::size_t(rng.next_below(i))]);
    all.resize(std::size_t(k_size));
    std::sort(all.begin(), all.end());
    return all;
}

namespace {

json record_to_json(const RunRecord &r) {
    return json{{"cell", r.cell},
                {"rho", r.rho},
                {"k_size", r.k_size},
                {"K", r.K},
                {"method", method_name(r.method)},
                {"seed", r.seed},
                {"report", json::parse(report_to_json(r.report))},
                {"dataset_fingerprint", r.dataset_fingerprint},
                {"param_hash", r.param_hash},
                {"wall_seconds", r.wall_seconds}};
}

RunRecord record_from_json(const json &j) {
    RunRecord r;
    r.cell = j.at("cell");
    r.rho = j.at("rho");
    r.k_size = j.at("k_size");
    r.K = j.at("K").get<std::vector<int>>();
    r.method = method_from_string(j.at("method"));
    r.seed = j.at("seed");
    r.report = report_from_json(j.at("report").dump());
    r.dataset_fingerprint = j.at("dataset_fingerprint");
    r.param_hash = j.at("param_hash");
    r.wall_seconds = j.at("wall_seconds");
    return r;
}

std::uint64_t cell_fingerprint(double rho, int k_size) {
    const std::string id = cell_id(rho, k_size);
    return io::fnv1a(id.data(), id.size(), 1469598103934665603ULL);
}

} // namespace

RunRecord load_record(const std::string &path) {
    return record_from_json(json::parse(read_file(path)));
}

RunRecord execute_run(const ExperimentSpec &spec, double rho, int k_size,
                      Method method, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    r.cell = cell_id(rho, k_size);
    r.rho = rho;
    r.k_size = k_size;
    r.method = method;
    r.seed = seed;
    r.K = pick_k(spec.data.num_classes, k_size, seed);
    r.dir = spec.out_dir + "/" + r.cell + "/" + method_name(method) + "/" +
            std::to_string(seed);
    fs::create_directories(r.dir);

    const std::uint64_t fp = cell_fingerprint(rho, k_size);
    BiasConfig bc = spec.data;
    bc.biased_classes = r.K;
    bc.rho_biased = rho;
    bc.seed = sub_seed(seed, "data", fp); // shared by all methods of the cell
    Dataset ds = generate(bc);
    r.dataset_fingerprint = dataset_hash(ds);
    Split sp = stratified_split(ds, spec.train_frac, sub_seed(seed, "split", fp));

    TrainConfig tc = spec.train;
    tc.method = method;
    tc.seed = sub_seed(seed, "train", fp);
    TrainResult tr = train(spec.arch, ds, sp, tc);
    r.param_hash = tr.net.param_hash();

    tr.net.save(r.dir + "/model.ckpt");
    save_probes(tr.probes.set, r.dir + "/probes.bin");
    write_file(r.dir + "/history.csv", history_csv(tr.history));

    EvalConfig ec = spec.eval;
    ec.seed = sub_seed(seed, "eval", fp);
    r.report = evaluate(tr.net, ds, sp, ec);
    write_file(r.dir + "/report.json", report_to_json(r.report));

    r.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    write_file(r.dir + "/record.json", record_to_json(r).dump(2));
    return r;
}

SweepResult run_sweep(const ExperimentSpec &spec, int jobs) {
    spec.validate();
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");

    struct Task {
        double rho;
        int k_size;
        Method method;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double rho : spec.rhos)
        for (int k : spec.k_sizes)
            for (std::uint64_t seed : spec.seeds)
                for (Method m : spec.methods) tasks.push_back({rho, k, m, seed});

    SweepResult out;
    out.records.resize(tasks.size());
    std::vector<int> status(tasks.size(), 0); // 1 executed, 2 skipped, 3 failed
    std::mutex mx;
    std::size_t next = 0;

    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lk(mx);
                if (next >= tasks.size()) return;
                i = next++;
            }
            const Task &t = tasks[i];
            const std::string dir = spec.out_dir + "/" + cell_id(t.rho, t.k_size) +
                                    "/" + method_name(t.method) + "/" +
                                    std::to_string(t.seed);
            const std::string rec_path = dir + "/record.json";
            try {
                if (fs::exists(rec_path)) {
                    RunRecord r = record_from_json(json::parse(read_file(rec_path)));
                    r.dir = dir;
                    out.records[i] = std::move(r);
                    status[i] = 2;
                    continue;
                }
                out.records[i] = execute_run(spec, t.rho, t.k_size, t.method, t.seed);
                status[i] = 1;
            } catch (const std::exception &e) {
                RunRecord r;
                r.cell = cell_id(t.rho, t.k_size);
                r.rho = t.rho;
                r.k_size = t.k_size;
                r.method = t.method;
                r.seed = t.seed;
                r.dir = dir;
                r.failed = true;
                r.error = e.what();
                out.records[i] = std::move(r);
                status[i] = 3;
                std::error_code ec;
                fs::create_directories(dir, ec);
                std::ofstream(dir + "/error.txt") << e.what() << "\n";
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto &th : pool) th.join();
    }

    for (int s : status) {
        out.executed += s == 1;
        out.skipped += s == 2;
        out.failed += s == 3;
    }
    out.summary_path = spec.out_dir + "/summary.csv";
    write_file(out.summary_path, summary_csv(out.records, spec.data.num_classes));
    return out;
}

std::string summary_csv(const std::vector<RunRecord> &records, int num_classes) {
    std::ostringstream os;
    os.precision(17);
    os << "cell,rho,k_size,K,method,seed,row,class,test_accuracy,leakage,"
          "leakage_degenerate,mean_discrepancy,mean_abs_projection,"
          "mean_abs_sensitivity,biased_mean_abs_projection,"
          "unbiased_mean_abs_projection,discrepancy,discrepancy_degenerate,"
          "projection,projection_degenerate,sensitivity_mean,sensitivity_std,"
          "sensitivity_degenerate,biased\n";
    for (const RunRecord &r : records) {
        if (r.failed) continue;
        std::string kstr;
        for (std::size_t i = 0; i < r.K.size(); ++i)
            kstr += (i ? ";" : "") + std::to_string(r.K[i]);
        const std::string prefix = r.cell + "," + std::to_string(r.rho) + "," +
                                   std::to_string(r.k_size) + "," + kstr + "," +
                                   method_name(r.method) + "," +
                                   std::to_string(r.seed);
        os << prefix << ",run,," << r.report.test_accuracy << ','
           << r.report.leakage << ',' << (r.report.leakage_degenerate ? 1 : 0)
           << ',' << r.report.mean_discrepancy << ','
           << r.report.mean_abs_projection << ','
           << r.report.mean_abs_sensitivity << ','
           << r.report.biased_mean_abs_projection << ','
           << r.report.unbiased_mean_abs_projection << ",,,,,,,,\n";
        for (const auto &cm : r.report.per_class)
            os << prefix << ",class," << cm.cls << ",,,,,,,,," << cm.discrepancy.value
               << ',' << (cm.discrepancy.degenerate ? 1 : 0) << ',' << cm.projection
               << ',' << (cm.projection_degenerate ? 1 : 0) << ','
               << cm.sensitivity.mean << ',' << cm.sensitivity.stddev << ','
               << (cm.sensitivity.degenerate ? 1 : 0) << ','
               << (cm.biased ? 1 : 0) << "\n";
        if (int(r.report.per_class.size()) != num_classes)
            throw std::logic_error("summary_csv: per-class row count mismatch");
    }
    return os.str();
}

Pearson pearson(const std::vector<double> &xs, const std::vector<double> &ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("pearson: need two equally sized series");
    const double n = double(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    Pearson p;
    if (sxx < 1e-24 || syy < 1e-24) {
        p.degenerate = true;
        return p;
    }
    p.r = sxy / std::sqrt(sxx * syy);
    return p;
}

Pearson rho_bias_correlation(const std::vector<RunRecord> &records,
                             std::uint64_t seed) {
    std::vector<double> xs, ys;
    for (const RunRecord &r : records) {
        if (r.failed || r.method != Method::baseline || r.k_size != 1 ||
            r.seed != seed)
            continue;
        for (const auto &cm : r.report.per_class)
            if (cm.biased) {
                xs.push_back(r.rho);
                ys.push_back(cm.projection);
            }
    }
    if (xs.size() < 5)
        throw std::invalid_argument(
            "rho_bias_correlation: need baseline |K|=1 runs at >= 5 rho values");
    return pearson(xs, ys);
}

LayerDiagnostic layer_variance_table(const std::vector<int> &layers,
                                     const std::vector<std::vector<double>> &values) {
    if (layers.empty() || layers.size() != values.size())
        throw std::invalid_argument("layer_variance_table: size mismatch");
    LayerDiagnostic d;
    d.layers = layers;
    for (const auto &series : values) {
        if (series.size() < 3)
            throw std::invalid_argument(
                "layer_variance_table: need at least 3 rho points");
        double m = 0;
        for (double v : series) m += v;
        m /= double(series.size());
        double var = 0;
        for (double v : series) var += (v - m) * (v - m);
        d.variance.push_back(var / double(series.size()));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.variance.size(); ++i)
        if (d.variance[i] > d.variance[best]) best = i;
    d.recommended = layers[best];
    return d;
}

LayerDiagnostic layer_diagnostic(const ExperimentSpec &spec,
                                 const std::vector<int> &layers,
                                 std::uint64_t seed) {
    if (spec.rhos.size() < 3)
        throw std::invalid_argument("layer_diagnostic: need at least 3 rho points");
    const std::vector<int> K = pick_k(spec.data.num_classes, 1, seed);
    std::vector<std::vector<double>> values(layers.size());
    for (double rho : spec.rhos) {
        const std::uint64_t fp = cell_fingerprint(rho, 1);
        BiasConfig bc = spec.data;
        bc.biased_classes = K;
        bc.rho_biased = rho;
        bc.seed = sub_seed(seed, "data", fp);
        Dataset ds = generate(bc);
        Split sp = stratified_split(ds, spec.train_frac, sub_seed(seed, "split", fp));
        TrainConfig tc = spec.train;
        tc.method = Method::baseline;
        tc.seed = sub_seed(seed, "train", fp);
        TrainResult tr = train(spec.arch, ds, sp, tc);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            ProbeSet ps = train_probes_post_hoc(tr.net, ds, sp.train,
                                                layers[li], spec.eval.probe);
            const auto nu = ps.bias_direction();
            std::vector<int> cls_idx;
            for (int i : sp.test)
                if (ds.samples[std::size_t(i)].label == K[0] &&
                    int(cls_idx.size()) < spec.eval.sensitivity_samples)
                    cls_idx.push_back(i);
            values[li].push_back(
                sensitivity_bias(tr.net, ds, cls_idx, K[0], layers[li], nu).mean);
        }
    }
    return layer_variance_table(layers, values);
}

namespace {

struct SummaryRow {
    double rho;
    int k_size;
    std::string method;
    std::uint64_t seed;
    double test_accuracy, leakage, mean_discrepancy, mean_abs_projection,
        mean_abs_sensitivity;
    bool leakage_degenerate;
};

std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<SummaryRow> parse_summary(const std::string &path) {
    std::istringstream is(read_file(path));
    std::string line;
    if (!std::getline(is, line))
        throw io::FileError(path + ": empty summary");
    std::vector<SummaryRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() < 16 || f[6] != "run") continue;
        SummaryRow r;
        r.rho = std::stod(f[1]);
        r.k_size = std::stoi(f[2]);
        r.method = f[4];
        r.seed = std::stoull(f[5]);
        r.test_accuracy = std::stod(f[8]);
        r.leakage = std::stod(f[9]);
        r.leakage_degenerate = f[10] == "1";
        r.mean_discrepancy = std::stod(f[11]);
        r.mean_abs_projection = std::stod(f[12]);
        r.mean_abs_sensitivity = std::stod(f[13]);
        rows.push_back(r);
    }
    return rows;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Series {
    std::vector<double> xs, ys;
    std::vector<bool> degenerate;
};

// one panel: x = rho, one polyline per method
std::string svg_panel(const std::string &title,
                      const std::vector<std::pair<std::string, Series>> &series,
                      double x0, double y0) {
    static const char *colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    const double W = 420, H = 300, ml = 50, mr = 12, mt = 30, mb = 36;
    double ymin = 1e300, ymax = -1e300;
    for (const auto &[name, s] : series)
        for (double y : s.ys) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (ymax - ymin < 1e-9) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.06 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double rho) { return x0 + ml + rho * (W - ml - mr); };
    auto py = [&](double y) {
        return y0 + mt + (1.0 - (y - ymin) / (ymax - ymin)) * (H - mt - mb);
    };
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" "
                  "fill=\"white\" stroke=\"#888\"/>\n",
                  x0 + ml, y0 + mt, W - ml - mr, H - mt - mb);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"14\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  x0 + W / 2, y0 + 20, title.c_str());
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" "
                  "text-anchor=\"middle\">rho</text>\n",
                  x0 + W / 2, y0 + H - 8);
    out += buf;
    for (double t : {ymin + pad, ymax - pad}) {
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" "
                      "text-anchor=\"end\">%.3g</text>\n",
                      x0 + ml - 4, py(t) + 3, t);
        out += buf;
    }
    int ci = 0;
    for (const auto &[name, s] : series) {
        const char *color = colors[ci % 4];
        std::string pts;
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.xs[i]), py(s.ys[i]));
            pts += buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<polyline points=\"%s\" fill=\"none\" stroke=\"%s\" "
                      "stroke-width=\"1.5\"/>\n",
                      pts.c_str(), color);
        out += buf;
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            // degenerate points are hollow
            std::snprintf(buf, sizeof buf,
                          "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                          "stroke=\"%s\"/>\n",
                          px(s.xs[i]), py(s.ys[i]),
                          s.degenerate[i] ? "none" : color, color);
            out += buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" "
                      "fill=\"%s\">%s</text>\n",
                      x0 + ml + 6, y0 + mt + 14 + 13 * ci, color, name.c_str());
        out += buf;
        ++ci;
    }
    return out;
}

std::string svg_document(double w, double h, const std::string &body) {
    char head[160];
    std::snprintf(head, sizeof head,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" "
                  "height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                  w, h, w, h);
    return std::string(head) + body + "</svg>\n";
}

} // namespace

std::vector<std::string> plot_export(const std::string &summary_path,
                                     const std::string &out_dir,
                                     const std::string &kind) {
    const auto rows = parse_summary(summary_path);
    if (rows.empty()) throw std::invalid_argument("plot_export: no run rows");
    fs::create_directories(out_dir);

    std::vector<std::string> methods;
    std::vector<int> ks;
    for (const auto &r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
            methods.push_back(r.method);
        if (std::find(ks.begin(), ks.end(), r.k_size) == ks.end())
            ks.push_back(r.k_size);
    }
    std::sort(methods.begin(), methods.end());
    std::sort(ks.begin(), ks.end());

    struct Metric {
        const char *name;
        double SummaryRow::*field;
    };
    const Metric metrics[] = {
        {"accuracy", &SummaryRow::test_accuracy},
        {"discrepancy", &SummaryRow::mean_discrepancy},
        {"leakage", &SummaryRow::leakage},
        {"projection", &SummaryRow::mean_abs_projection},
        {"sensitivity", &SummaryRow::mean_abs_sensitivity},
    };

    auto series_for = [&](int k, const Metric &m) {
        std::vector<std::pair<std::string, Series>> out;
        for (const auto &method : methods) {
            Series s;
            std::vector<double> rhos;
            for (const auto &r : rows)
                if (r.k_size == k && r.method == method &&
                    std::find(rhos.begin(), rhos.end(), r.rho) == rhos.end())
                    rhos.push_back(r.rho);
            std::sort(rhos.begin(), rhos.end());
            for (double rho : rhos) {
                std::vector<double> vals;
                bool degen = false;
                for (const auto &r : rows)
                    if (r.k_size == k && r.method == method && r.rho == rho) {
                        vals.push_back(r.*(m.field));
                        degen = degen || r.leakage_degenerate;
                    }
                if (vals.empty()) continue;
                s.xs.push_back(rho);
                s.ys.push_back(median(vals));
                s.degenerate.push_back(degen);
            }
            if (s.xs.empty())
                std::fprintf(stderr,
                             "plot_export: no data for method %s at k=%d; "
                             "series left as a gap\n",
                             method.c_str(), k);
            out.emplace_back(method, std::move(s));
        }
        return out;
    };

    std::vector<std::string> written;
    if (kind == "all" || kind == "fig3") {
        const int k = ks.front();
        for (const auto &m : metrics) {
            const std::string body =
                svg_panel(std::string(m.name) + " (|K|=" + std::to_string(k) + ")",
                          series_for(k, m), 0, 0);
            const std::string path =
                out_dir + "/fig3_" + m.name + ".svg";
            write_file(path, svg_document(420, 300, body));
            written.push_back(path);
        }
    }
    if (kind == "all" || kind == "fig4") {
        std::string body;
        int row = 0;
        for (const auto &m : metrics) {
            int col = 0;
            for (int k : ks) {
                body += svg_panel(std::string(m.name) +
                                      " (|K|=" + std::to_string(k) + ")",
                                  series_for(k, m), 430.0 * col, 310.0 * row);
                ++col;
            }
            ++row;
        }
        const std::string path = out_dir + "/fig4_grid.svg";
        write_file(path, svg_document(430.0 * double(ks.size()),
                                      310.0 * double(std::size(metrics)), body));
        written.push_back(path);
    }
    if (written.empty())
        throw std::invalid_argument("plot_export: unknown kind '" + kind + "'");
    return written;
}

} // namespace ortho
