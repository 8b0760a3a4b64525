// Command-line entry point: data generation, training, inference, sweeps and
// report aggregation. Every run writes its resolved config next to its
// outputs; CSVs are deterministic given (config, seed).

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>

#include "gbi/bayes.hpp"
#include "gbi/checkpoint.hpp"
#include "gbi/config.hpp"
#include "gbi/engine.hpp"
#include "gbi/metrics.hpp"
#include "gbi/ops.hpp"
#include "gbi/seq_model.hpp"
#include "gbi/synth.hpp"
#include "gbi/vision.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gbi;

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open '" + path.string() + "' for writing");
    f << content;
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

struct RunContext {
    RunConfig cfg;
    uint64_t seed = 0;
    fs::path out;

    GenerativeParams gen_params() const {
        GenerativeParams p;
        p.mu = {cfg.get_double("mu1"), cfg.get_double("mu2")};
        const double sigma = cfg.get_double("sigma");
        p.sigma = {sigma, cfg.get_string("sigma2").empty() ? sigma : cfg.get_double("sigma2")};
        p.p_v = cfg.get_double("p_v");
        p.min_block = static_cast<int>(cfg.get_int("min_block"));
        p.max_block = static_cast<int>(cfg.get_int("max_block"));
        return p;
    }

    SeqModelConfig seq_config() const {
        SeqModelConfig c;
        c.hidden = static_cast<int>(cfg.get_int("hidden"));
        c.history = static_cast<int>(cfg.get_int("history"));
        c.has_task_input = cfg.get_string("model") == "gbi";
        c.task_dim = static_cast<int>(cfg.get_int("task_dim"));
        c.lr = static_cast<float>(cfg.get_double("lr"));
        c.z_input_temp = static_cast<float>(cfg.get_double("z_input_temp"));
        return c;
    }

    InferenceConfig inference_config() const {
        InferenceConfig c;
        c.gamma = static_cast<float>(cfg.get_double("gamma"));
        c.alpha = static_cast<float>(cfg.get_double("alpha"));
        c.iter_steps = static_cast<int>(cfg.get_int("iter_steps"));
        c.iter_lr = static_cast<float>(cfg.get_double("iter_lr"));
        c.iter_l2 = static_cast<float>(cfg.get_double("iter_l2"));
        c.engaged_lr = static_cast<float>(cfg.get_double("engaged_lr"));
        c.engaged_clip = static_cast<float>(cfg.get_double("engaged_clip"));
        c.engaged_l2 = static_cast<float>(cfg.get_double("engaged_l2"));
        c.graft_scale = static_cast<float>(cfg.get_double("graft_scale"));
        return c;
    }

    std::vector<double> sweep_means() const {
        const double lo = cfg.get_double("sweep_lo");
        const double hi = cfg.get_double("sweep_hi");
        const double step = cfg.get_double("sweep_step");
        if (!(step > 0.0)) throw Error("config: sweep_step must be positive");
        std::vector<double> means;
        for (double m = lo; m <= hi + 1e-9; m += step) means.push_back(m);
        return means;
    }

    std::string data_dir() const {
        std::string dir = cfg.get_string("data_dir");
        if (dir.empty()) {
            const char* env = std::getenv("GBI_DATA_DIR");
            if (env != nullptr) dir = env;
        }
        if (dir.empty()) dir = "data";
        return dir;
    }

    void finalize(const std::string& command) const {
        write_text(out / "config.resolved.cfg", cfg.resolved());
        json meta;
        meta["command"] = command;
        meta["seed"] = seed;
        meta["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                     std::chrono::system_clock::now().time_since_epoch())
                                     .count();
        write_text(out / "meta.json", meta.dump(2) + "\n");
    }
};

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool out_required = true) {
    cmd->add_option("--config", flags.config_path, "key=value config file");
    auto* out = cmd->add_option("--out", flags.out_dir, "output directory");
    if (out_required) out->required();
    cmd->add_option("--seed", flags.seed, "seed override");
    cmd->add_option("--data-dir", flags.data_dir, "dataset root override");
}

RunContext make_context(const CommonFlags& flags) {
    RunContext ctx;
    ctx.cfg = flags.config_path.empty() ? RunConfig{} : RunConfig::from_file(flags.config_path);
    if (flags.seed >= 0) ctx.cfg.set("seed", std::to_string(flags.seed));
    if (!flags.data_dir.empty()) ctx.cfg.set("data_dir", flags.data_dir);
    if (!flags.out_dir.empty()) {
        ctx.cfg.set("out_dir", flags.out_dir);
        ctx.out = flags.out_dir;
        fs::create_directories(ctx.out);
    }
    ctx.seed = ctx.cfg.get_u64("seed");
    return ctx;
}

// ---- toy task commands ----

int run_gen_data(const CommonFlags& flags) {
    RunContext ctx = make_context(flags);
    auto seq = generate_blocks(ctx.seed, static_cast<int>(ctx.cfg.get_int("n_steps")), ctx.gen_params());
    write_text(ctx.out / "observations.csv", sequence_csv(seq));
    ctx.finalize("gen-data");
    std::printf("gen-data: %zu observations, %d blocks -> %s\n", seq.observations.size(),
                seq.n_blocks(), ctx.out.string().c_str());
    return 0;
}

int run_train_toy(const CommonFlags& flags) {
    RunContext ctx = make_context(flags);
    const auto params = ctx.gen_params();
    auto data = generate_blocks(ctx.seed, static_cast<int>(ctx.cfg.get_int("n_steps")), params);

    SeqModel model = SeqModel::init(ctx.seq_config(), ctx.seed);
    const ZSource source =
        ctx.seq_config().has_task_input ? ZSource::ground_truth : ZSource::none;
    auto result = train_toy(model, data, source, static_cast<int>(ctx.cfg.get_int("trim")));

    Checkpoint ckpt = model.to_checkpoint(ctx.seed, static_cast<int64_t>(result.step_losses.size()));
    json meta = json::parse(ckpt.metadata_json);
    meta["last_block_label"] = result.last_block_label;
    meta["mu1"] = params.mu[0];
    meta["mu2"] = params.mu[1];
    ckpt.metadata_json = meta.dump();
    ckpt.save((ctx.out / "checkpoint.ckpt").string());

    std::string loss_csv = "step,loss\n";
    const int history = model.config().history;
    for (size_t i = 0; i < result.step_losses.size(); ++i)
        loss_csv += std::to_string(history + i) + "," + fmt(result.step_losses[i]) + "\n";
    write_text(ctx.out / "loss.csv", loss_csv);

    std::string blocks_csv = "block,start,label,mean_loss,trimmed_mean_loss\n";
    for (int b = 0; b < data.n_blocks(); ++b) {
        const auto bi = static_cast<size_t>(b);
        blocks_csv += std::to_string(b) + "," + std::to_string(data.block_starts[bi]) + "," +
                      std::to_string(data.z_true[static_cast<size_t>(data.block_starts[bi])]) + "," +
                      fmt(result.block_losses[bi]) + "," + fmt(result.block_losses_trimmed[bi]) + "\n";
    }
    write_text(ctx.out / "blocks.csv", blocks_csv);
    ctx.finalize("train-toy");
    std::printf("train-toy: model=%s steps=%zu final_loss=%.4f -> %s\n",
                ctx.cfg.get_string("model").c_str(), result.step_losses.size(),
                result.step_losses.back(), ctx.out.string().c_str());
    return 0;
}

int run_eval_toy(const CommonFlags& flags, const std::string& ckpt_path) {
    RunContext ctx = make_context(flags);
    Checkpoint ckpt = Checkpoint::load(ckpt_path);
    SeqModel model = SeqModel::from_checkpoint(ckpt);
    model.set_frozen(true);
    json meta = json::parse(ckpt.metadata_json);
    const int last_block_label = meta.value("last_block_label", 0);
    const double mu1 = meta.value("mu1", 0.2);
    const double mu2 = meta.value("mu2", 0.8);

    const auto means = ctx.sweep_means();
    auto sweep = generalization_sweep(ctx.seed, means, ctx.cfg.get_double("sigma"),
                                      static_cast<int>(ctx.cfg.get_int("steps_per_mean")));
    auto rows = generalization_eval(model, sweep, means, ctx.inference_config(),
                                    static_cast<int>(ctx.cfg.get_int("eval_window")));

    std::string csv = "mean,mse,model,seed,last_block_label,mu1,mu2\n";
    const std::string model_name = model.config().has_task_input ? "gbi" : "lstm";
    for (const auto& r : rows)
        csv += fmt(r.mean) + "," + fmt(r.mse) + "," + model_name + "," + std::to_string(ctx.seed) +
               "," + std::to_string(last_block_label) + "," + fmt(mu1) + "," + fmt(mu2) + "\n";
    write_text(ctx.out / "mse.csv", csv);
    ctx.finalize("eval-toy");

    auto groups = mse_groups(rows, mu1, mu2, last_block_label);
    std::printf("eval-toy: model=%s last=%.4f other=%.4f inside=%.4f outside=%.4f -> %s\n",
                model_name.c_str(), groups.last_block, groups.other_mean, groups.inside,
                groups.outside, ctx.out.string().c_str());
    return 0;
}

int run_infer_stream(const CommonFlags& flags, const std::string& ckpt_path,
                     const std::string& mode_name) {
    RunContext ctx = make_context(flags);
    SeqModel model = SeqModel::from_checkpoint(Checkpoint::load(ckpt_path));
    model.set_frozen(true);
    StreamMode mode;
    if (mode_name == "default") mode = StreamMode::default_state;
    else if (mode_name == "engaged") mode = StreamMode::engaged;
    else throw Error("infer-stream: unknown mode '" + mode_name + "'");

    auto data = generate_blocks(ctx.seed, static_cast<int>(ctx.cfg.get_int("n_steps")),
                                ctx.gen_params());
    auto trace = stream_run(model, data.observations, mode, ctx.inference_config());

    std::string csv = "step,x,pred_mean,pred_sigma,z0,z1,grad_z0,grad_z1,evidence\n";
    for (const auto& st : trace)
        csv += std::to_string(st.step) + "," + fmt(st.x) + "," + fmt(st.pred_mean) + "," +
               fmt(st.pred_sigma) + "," + fmt(st.belief[0]) + "," + fmt(st.belief[1]) + "," +
               fmt(st.gradient[0]) + "," + fmt(st.gradient[1]) + "," + fmt(st.evidence) + "\n";
    write_text(ctx.out / "trajectory.csv", csv);
    ctx.finalize("infer-stream");
    std::printf("infer-stream: mode=%s steps=%zu -> %s\n", mode_name.c_str(), trace.size(),
                ctx.out.string().c_str());
    return 0;
}

// ---- vision commands ----

LabeledImageSet load_mnist_split(const RunContext& ctx, const std::string& dataset,
                                 const std::string& split, bool standardized) {
    const fs::path root = fs::path(ctx.data_dir()) / dataset;
    const std::string prefix = split == "train" ? "train" : "t10k";
    LabeledImageSet set = load_idx((root / (prefix + "-images-idx3-ubyte")).string(),
                                   (root / (prefix + "-labels-idx1-ubyte")).string());
    if (standardized) set.standardize();
    return set;
}

int run_train_mnist(const CommonFlags& flags, const std::string& model_name) {
    RunContext ctx = make_context(flags);
    const bool standardized = ctx.cfg.get_bool("normalize");
    LabeledImageSet train = load_mnist_split(ctx, "mnist", "train", standardized);
    LabeledImageSet val = load_mnist_split(ctx, "mnist", "test", standardized);

    VisionConfig vcfg;
    vcfg.epochs = static_cast<int>(ctx.cfg.get_int("epochs"));
    vcfg.batch = static_cast<int>(ctx.cfg.get_int("batch"));
    vcfg.lr = static_cast<float>(ctx.cfg.get_double("vision_lr"));
    vcfg.z_input_temp = static_cast<float>(ctx.cfg.get_double("z_input_temp"));

    VisionTrainReport report;
    if (model_name == "ae" || model_name == "ae-uncond") {
        if (model_name == "ae-uncond") vcfg.class_dim = 0;
        Autoencoder model = Autoencoder::init(vcfg, ctx.seed);
        report = train_autoencoder(model, train, val, ctx.seed);
        model.to_checkpoint(ctx.seed, train.norm).save((ctx.out / "checkpoint.ckpt").string());
    } else if (model_name == "classifier") {
        ConvClassifier model = ConvClassifier::init(vcfg, ctx.seed);
        report = train_classifier(model, train, val, ctx.seed);
        model.to_checkpoint(ctx.seed, train.norm).save((ctx.out / "checkpoint.ckpt").string());
    } else {
        throw Error("train-mnist: unknown model '" + model_name + "' (ae | ae-uncond | classifier)");
    }

    std::string csv = "epoch,train_loss,val_loss\n";
    for (size_t e = 0; e < report.train_losses.size(); ++e)
        csv += std::to_string(e) + "," + fmt(report.train_losses[e]) + "," +
               fmt(report.val_losses[e]) + "\n";
    write_text(ctx.out / "losses.csv", csv);
    ctx.finalize("train-mnist");
    std::printf("train-mnist: model=%s final_train=%.5f final_val=%.5f -> %s\n", model_name.c_str(),
                report.train_losses.back(), report.val_losses.back(), ctx.out.string().c_str());
    return 0;
}

bool checkpoint_standardized(const Checkpoint& ckpt) {
    return json::parse(ckpt.metadata_json).value("standardized", false);
}

int run_eval_mnist(const CommonFlags& flags, const std::string& ae_ckpt,
                   const std::string& clf_ckpt, const std::string& method_name, int limit) {
    RunContext ctx = make_context(flags);
    Checkpoint ac = Checkpoint::load(ae_ckpt);
    Autoencoder ae = Autoencoder::from_checkpoint(ac);
    ae.set_frozen(true);
    LabeledImageSet test = load_mnist_split(ctx, "mnist", "test", checkpoint_standardized(ac));

    ConvClassifier classifier;
    const ClassifyMethod method = classify_method_from_string(method_name);
    if (method == ClassifyMethod::discriminative) {
        if (clf_ckpt.empty()) throw Error("eval-mnist: --clf-ckpt required for the discriminative method");
        classifier = ConvClassifier::from_checkpoint(Checkpoint::load(clf_ckpt));
        classifier.set_frozen(true);
    }

    auto icfg = ctx.inference_config();
    auto result = classify(ae, method == ClassifyMethod::discriminative ? &classifier : nullptr,
                           test, method, icfg, limit);
    const int n = static_cast<int>(result.predicted.size());
    const double acc = accuracy_of(result.predicted, std::span<const int>(test.labels.data(),
                                                                          static_cast<size_t>(n)));

    std::string csv = "method,accuracy,runs,seed\n";
    csv += method_name + "," + fmt(acc) + "," + std::to_string(result.runs_per_inference) + "," +
           std::to_string(ctx.seed) + "\n";
    write_text(ctx.out / "accuracy.csv", csv);

    json jsummary;
    jsummary["method"] = method_name;
    jsummary["accuracy"] = acc;
    jsummary["runs"] = result.runs_per_inference;
    jsummary["seed"] = ctx.seed;
    jsummary["samples"] = n;
    write_text(ctx.out / "summary.json", jsummary.dump(2) + "\n");

    if (method == ClassifyMethod::gbi) {
        auto bins = confidence_bins(result.scores, result.predicted,
                                    std::span<const int>(test.labels.data(), static_cast<size_t>(n)));
        std::string bins_csv = "bin_lo,bin_hi,count,accuracy\n";
        for (const auto& b : bins)
            bins_csv += fmt(b.lo) + "," + fmt(b.hi) + "," + std::to_string(b.count) + "," +
                        fmt(b.accuracy()) + "\n";
        write_text(ctx.out / "confbins.csv", bins_csv);
    }
    ctx.finalize("eval-mnist");
    std::printf("eval-mnist: method=%s accuracy=%.4f runs=%d n=%d -> %s\n", method_name.c_str(),
                acc, result.runs_per_inference, n, ctx.out.string().c_str());
    return 0;
}

int run_ood(const CommonFlags& flags, const std::string& ae_ckpt, const std::string& clf_ckpt,
            int limit) {
    RunContext ctx = make_context(flags);
    Checkpoint ac = Checkpoint::load(ae_ckpt);
    Autoencoder ae = Autoencoder::from_checkpoint(ac);
    ae.set_frozen(true);
    ConvClassifier classifier = ConvClassifier::from_checkpoint(Checkpoint::load(clf_ckpt));
    classifier.set_frozen(true);
    const bool standardized = checkpoint_standardized(ac);

    LabeledImageSet in_dist = load_mnist_split(ctx, "mnist", "test", standardized);
    LabeledImageSet ood = load_mnist_split(ctx, "fashion-mnist", "test", standardized);

    auto icfg = ctx.inference_config();
    auto in_scores = ood_scores(ae, classifier, in_dist, icfg, limit);
    auto out_scores = ood_scores(ae, classifier, ood, icfg, limit);

    const struct {
        const char* name;
        const std::vector<double>& pos;
        const std::vector<double>& neg;
    } stats[] = {
        {"gbi_max", in_scores.gbi_belief_max, out_scores.gbi_belief_max},
        {"clf_logit_max", in_scores.clf_logit_max, out_scores.clf_logit_max},
        {"clf_softmax_max", in_scores.clf_softmax_max, out_scores.clf_softmax_max},
    };
    std::string summary = "method,normalized,aucroc,seed\n";
    json jsummary;
    for (const auto& s : stats) {
        const double auc = aucroc(s.pos, s.neg).auc;
        summary += std::string(s.name) + "," + (standardized ? "true" : "false") + "," + fmt(auc) +
                   "," + std::to_string(ctx.seed) + "\n";
        jsummary[s.name] = auc;
    }
    write_text(ctx.out / "ood_summary.csv", summary);

    std::string scores_csv = "dataset,index,gbi_max,clf_logit_max,clf_softmax_max\n";
    for (size_t i = 0; i < in_scores.gbi_belief_max.size(); ++i)
        scores_csv += "mnist," + std::to_string(i) + "," + fmt(in_scores.gbi_belief_max[i]) + "," +
                      fmt(in_scores.clf_logit_max[i]) + "," + fmt(in_scores.clf_softmax_max[i]) + "\n";
    for (size_t i = 0; i < out_scores.gbi_belief_max.size(); ++i)
        scores_csv += "fashion-mnist," + std::to_string(i) + "," + fmt(out_scores.gbi_belief_max[i]) +
                      "," + fmt(out_scores.clf_logit_max[i]) + "," +
                      fmt(out_scores.clf_softmax_max[i]) + "\n";
    write_text(ctx.out / "ood_scores.csv", scores_csv);

    jsummary["normalized"] = standardized;
    write_text(ctx.out / "ood_summary.json", jsummary.dump(2) + "\n");
    ctx.finalize("ood");
    std::printf("ood: normalized=%s gbi=%.4f clf_logit=%.4f clf_softmax=%.4f -> %s\n",
                standardized ? "true" : "false", jsummary["gbi_max"].get<double>(),
                jsummary["clf_logit_max"].get<double>(), jsummary["clf_softmax_max"].get<double>(),
                ctx.out.string().c_str());
    return 0;
}

int run_cond_gen(const CommonFlags& flags, const std::string& ae_ckpt, int index) {
    RunContext ctx = make_context(flags);
    Checkpoint ac = Checkpoint::load(ae_ckpt);
    Autoencoder ae = Autoencoder::from_checkpoint(ac);
    ae.set_frozen(true);
    LabeledImageSet test = load_mnist_split(ctx, "mnist", "test", checkpoint_standardized(ac));
    if (index < 0 || index >= test.count) throw Error("cond-gen: image index out of range");

    auto tiles = conditional_generate(ae, test.image(index));
    write_pgm_strip((ctx.out / "strip.pgm").string(), tiles, test.rows, test.cols, test.norm);

    std::string csv = "label,mse\n";
    for (size_t c = 0; c < tiles.size(); ++c) {
        double mse = 0;
        auto img = test.image(index);
        for (size_t p = 0; p < tiles[c].size(); ++p) {
            const double d = tiles[c][p] - img[p];
            mse += d * d;
        }
        csv += std::to_string(c) + "," + fmt(mse / static_cast<double>(tiles[c].size())) + "\n";
    }
    write_text(ctx.out / "condgen_mse.csv", csv);
    ctx.finalize("cond-gen");
    std::printf("cond-gen: index=%d true_label=%d -> %s\n", index,
                test.labels[static_cast<size_t>(index)], ctx.out.string().c_str());
    return 0;
}

// ---- report aggregation ----

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw Error("report: column '" + name + "' missing");
    }
};

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("report: cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (first) {
            table.header = std::move(fields);
            first = false;
        } else {
            table.rows.push_back(std::move(fields));
        }
    }
    return table;
}

double sd_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mu = mean_of(xs);
    double acc = 0;
    for (double x : xs) acc += (x - mu) * (x - mu);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

int run_report(const CommonFlags& flags, int table_id, const std::vector<std::string>& inputs) {
    RunContext ctx = make_context(flags);
    if (inputs.empty()) throw Error("report: no input CSVs");

    if (table_id == 1) {
        // inputs: mse.csv files, one per (model, seed)
        std::map<std::string, std::vector<MseGroups>> by_model;
        for (const auto& path : inputs) {
            CsvTable t = read_csv(path);
            const int c_mean = t.col("mean"), c_mse = t.col("mse"), c_model = t.col("model");
            const int c_last = t.col("last_block_label"), c_mu1 = t.col("mu1"), c_mu2 = t.col("mu2");
            if (t.rows.empty()) throw Error("report: empty table in '" + path + "'");
            std::vector<MeanMse> rows;
            for (const auto& r : t.rows)
                rows.push_back({std::stod(r[static_cast<size_t>(c_mean)]),
                                std::stod(r[static_cast<size_t>(c_mse)])});
            by_model[t.rows[0][static_cast<size_t>(c_model)]].push_back(
                mse_groups(rows, std::stod(t.rows[0][static_cast<size_t>(c_mu1)]),
                           std::stod(t.rows[0][static_cast<size_t>(c_mu2)]),
                           std::stoi(t.rows[0][static_cast<size_t>(c_last)])));
        }
        std::string csv = "group";
        for (const auto& [model, _] : by_model) csv += "," + model + "_mse," + model + "_sem";
        csv += "\n";
        std::map<std::string, std::vector<GroupedMseRow>> tables;
        for (const auto& [model, groups] : by_model) tables[model] = mse_group_table(groups);
        for (int g = 0; g < 4; ++g) {
            csv += tables.begin()->second[static_cast<size_t>(g)].name;
            for (const auto& [model, rows] : tables)
                csv += "," + fmt(rows[static_cast<size_t>(g)].mean) + "," +
                       fmt(rows[static_cast<size_t>(g)].sem);
            csv += "\n";
        }
        write_text(ctx.out / "table1.csv", csv);
        std::printf("%s", csv.c_str());
    } else if (table_id == 2) {
        // inputs: accuracy.csv files
        std::map<std::string, std::pair<std::vector<double>, int>> by_method;
        for (const auto& path : inputs) {
            CsvTable t = read_csv(path);
            const int c_m = t.col("method"), c_a = t.col("accuracy"), c_r = t.col("runs");
            for (const auto& r : t.rows) {
                auto& entry = by_method[r[static_cast<size_t>(c_m)]];
                entry.first.push_back(std::stod(r[static_cast<size_t>(c_a)]));
                entry.second = std::stoi(r[static_cast<size_t>(c_r)]);
            }
        }
        std::string csv = "method,accuracy_mean,accuracy_sd,runs,n_seeds\n";
        for (const auto& [method, entry] : by_method)
            csv += method + "," + fmt(mean_of(entry.first)) + "," + fmt(sd_of(entry.first)) + "," +
                   std::to_string(entry.second) + "," + std::to_string(entry.first.size()) + "\n";
        write_text(ctx.out / "table2.csv", csv);
        std::printf("%s", csv.c_str());
    } else if (table_id == 3) {
        // inputs: ood_summary.csv files
        std::map<std::pair<std::string, std::string>, std::vector<double>> by_key;
        for (const auto& path : inputs) {
            CsvTable t = read_csv(path);
            const int c_m = t.col("method"), c_n = t.col("normalized"), c_a = t.col("aucroc");
            for (const auto& r : t.rows)
                by_key[{r[static_cast<size_t>(c_m)], r[static_cast<size_t>(c_n)]}].push_back(
                    std::stod(r[static_cast<size_t>(c_a)]));
        }
        std::string csv = "method,normalized,aucroc_mean,aucroc_sd,n_seeds\n";
        for (const auto& [key, vals] : by_key)
            csv += key.first + "," + key.second + "," + fmt(mean_of(vals)) + "," + fmt(sd_of(vals)) +
                   "," + std::to_string(vals.size()) + "\n";
        write_text(ctx.out / "table3.csv", csv);
        std::printf("%s", csv.c_str());
    } else {
        throw Error("report: --table must be 1, 2 or 3");
    }
    ctx.finalize("report");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-based task-abstraction inference toolkit"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_toy_flags, eval_toy_flags, stream_flags, train_mnist_flags,
        eval_mnist_flags, ood_flags, cond_flags, report_flags;
    std::string eval_toy_ckpt, stream_ckpt, stream_mode = "default";
    std::string train_mnist_model = "ae";
    std::string eval_ae_ckpt, eval_clf_ckpt, eval_method = "gbi";
    std::string ood_ae_ckpt, ood_clf_ckpt, cond_ckpt;
    int eval_limit = -1, ood_limit = -1, cond_index = 0, report_table = 1;
    std::vector<std::string> report_inputs;

    add_common(app.add_subcommand("gen-data", "generate a toy observation stream"), gen_flags);
    add_common(app.add_subcommand("train-toy", "train a sequence model on the toy stream"),
               train_toy_flags);

    auto* eval_toy = app.add_subcommand("eval-toy", "generalization sweep for a trained model");
    add_common(eval_toy, eval_toy_flags);
    eval_toy->add_option("--ckpt", eval_toy_ckpt, "trained checkpoint")->required();

    auto* stream = app.add_subcommand("infer-stream", "stream inference trajectory");
    add_common(stream, stream_flags);
    stream->add_option("--ckpt", stream_ckpt, "trained checkpoint")->required();
    stream->add_option("--mode", stream_mode, "default | engaged");

    auto* train_mnist = app.add_subcommand("train-mnist", "train the vision models");
    add_common(train_mnist, train_mnist_flags);
    train_mnist->add_option("--model", train_mnist_model, "ae | ae-uncond | classifier");

    auto* eval_mnist = app.add_subcommand("eval-mnist", "classify the test split");
    add_common(eval_mnist, eval_mnist_flags);
    eval_mnist->add_option("--ae-ckpt", eval_ae_ckpt, "autoencoder checkpoint")->required();
    eval_mnist->add_option("--clf-ckpt", eval_clf_ckpt, "classifier checkpoint");
    eval_mnist->add_option("--method", eval_method,
                           "gbi | iterative | likelihood | nbi | discriminative");
    eval_mnist->add_option("--limit", eval_limit, "evaluate only the first N samples");

    auto* ood = app.add_subcommand("ood", "out-of-distribution scoring");
    add_common(ood, ood_flags);
    ood->add_option("--ae-ckpt", ood_ae_ckpt, "autoencoder checkpoint")->required();
    ood->add_option("--clf-ckpt", ood_clf_ckpt, "classifier checkpoint")->required();
    ood->add_option("--limit", ood_limit, "score only the first N samples per set");

    auto* cond = app.add_subcommand("cond-gen", "conditional generation strip");
    add_common(cond, cond_flags);
    cond->add_option("--ae-ckpt", cond_ckpt, "autoencoder checkpoint")->required();
    cond->add_option("--index", cond_index, "test image index");

    auto* report = app.add_subcommand("report", "aggregate run CSVs into summary tables");
    add_common(report, report_flags);
    report->add_option("--table", report_table, "1 | 2 | 3")->required();
    report->add_option("inputs", report_inputs, "input CSV files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("gen-data")) return run_gen_data(gen_flags);
        if (app.got_subcommand("train-toy")) return run_train_toy(train_toy_flags);
        if (app.got_subcommand("eval-toy")) return run_eval_toy(eval_toy_flags, eval_toy_ckpt);
        if (app.got_subcommand("infer-stream"))
            return run_infer_stream(stream_flags, stream_ckpt, stream_mode);
        if (app.got_subcommand("train-mnist"))
            return run_train_mnist(train_mnist_flags, train_mnist_model);
        if (app.got_subcommand("eval-mnist"))
            return run_eval_mnist(eval_mnist_flags, eval_ae_ckpt, eval_clf_ckpt, eval_method,
                                  eval_limit);
        if (app.got_subcommand("ood")) return run_ood(ood_flags, ood_ae_ckpt, ood_clf_ckpt, ood_limit);
        if (app.got_subcommand("cond-gen")) return run_cond_gen(cond_flags, cond_ckpt, cond_index);
        if (app.got_subcommand("report")) return run_report(report_flags, report_table, report_inputs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
