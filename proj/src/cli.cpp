#include "contab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "contab/checkpoint.hpp"
#include "contab/data.hpp"
#include "contab/evaluation.hpp"
#include "contab/training.hpp"

namespace fs = std::filesystem;

namespace contab::cli {

namespace {

struct Options {
    // I/O
    std::string input;
    std::string label;
    std::string data;
    std::string checkpoint;
    std::string resume;
    std::string out;
    std::string split = "0.8,0.1,0.1";
    std::string unseen = "modal";
    std::size_t max_cardinality = kDefaultMaxCategoricalCardinality;
    std::uint64_t seed = 0;

    // pretraining
    std::string mode = "semi";
    std::string corruption = "marginal";
    double ratio = 0.3;
    double sigma = 0.1;
    std::size_t epochs = 1000;
    std::size_t batch = 128;
    double lr = 1e-4;
    double rho = 0.9;
    double eps = 1e-8;
    double margin = 2.0;
    double lambda = 0.01;
    int p = 2;
    double alpha = 1.0;
    double beta = 1.0;
    std::size_t checkpoint_every = 0;

    // architecture
    std::size_t token_dim = 16;
    std::size_t layers = 3;
    std::size_t heads = 2;
    std::size_t ff_dim = 0;
    std::size_t z_dim = 0;

    // downstream
    std::size_t finetune_epochs = 100;
    double finetune_lr = 0.0;  // 0 -> pretraining lr
    bool freeze = false;
    double logistic_l2 = 1e-4;
    std::string features = "raw,distilled,concat";
    std::vector<std::string> adapters;
    std::string ratios = "0,0.1,0.2,0.3,0.4,0.5,0.6";
    bool export_mask = false;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        auto v = parse_number(item);
        if (!v) throw UsageError(std::string("bad number '") + item + "' in --" + what);
        out.push_back(*v);
    }
    return out;
}

fs::path require_path(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("no such file or directory: " + p.string());
    return p;
}

fs::path dataset_file(const std::string& data, const char* split) {
    if (data.empty()) throw UsageError("--data is required");
    const fs::path p = require_path(data);
    return fs::is_directory(p) ? require_path(p / (std::string(split) + ".csv")) : p;
}

fs::path dataset_dir(const std::string& data) {
    const fs::path p(data);
    return fs::is_directory(p) ? p : p.parent_path();
}

std::optional<PreprocessorState> load_state(const std::string& data) {
    const fs::path p = dataset_dir(data) / "preprocessor.json";
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream in(p);
    return PreprocessorState::from_json(nlohmann::json::parse(in));
}

TableDataset load_split(const std::string& data, const char* split) {
    const auto state = load_state(data);
    return read_dataset_csv(dataset_file(data, split), state ? state->label_classes.size() : 0);
}

fs::path output_dir(const Options& o) {
    fs::path dir = o.out;
    if (dir.empty()) {
        const char* env = std::getenv(kOutputDirEnv);
        dir = env && *env ? env : "contab_out";
    }
    fs::create_directories(dir);
    return dir;
}

TrainConfig train_config(const Options& o) {
    TrainConfig c;
    c.batch_size = o.batch;
    c.epochs = o.epochs;
    c.learning_rate = o.lr;
    c.rmsprop_decay = o.rho;
    c.rmsprop_epsilon = o.eps;
    c.corruption_ratio = o.ratio;
    c.corruption_mode = corruption_mode_from_string(o.corruption);
    c.gaussian_sigma = o.sigma;
    c.loss.lambda = o.lambda;
    c.loss.p = o.p;
    c.loss.alpha = o.alpha;
    c.loss.beta = o.beta;
    c.loss.margin = o.margin;
    c.mode = train_mode_from_string(o.mode);
    c.seed = o.seed;
    c.checkpoint_every = o.checkpoint_every;
    c.validate();
    return c;
}

ModelConfig model_config(const Options& o) {
    ModelConfig m;
    m.token_dim = o.token_dim;
    m.n_layers = o.layers;
    m.n_heads = o.heads;
    m.ff_dim = o.ff_dim;
    m.z_dim = o.z_dim;
    return m;
}

FinetuneConfig finetune_config(const Options& o) {
    FinetuneConfig f;
    f.epochs = o.finetune_epochs;
    f.batch_size = o.batch;
    f.learning_rate = o.finetune_lr > 0.0 ? o.finetune_lr : o.lr;
    f.rmsprop_decay = o.rho;
    f.rmsprop_epsilon = o.eps;
    f.seed = o.seed;
    f.freeze_encoder = o.freeze;
    return f;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path.string());
    f << text;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

// Subcommand-level config files are not applied by CLI11 itself, so values
// are pushed into every option the command line left untouched.
void apply_config_file(CLI::App& sub) {
    const CLI::Option* cfg = sub.get_option_no_throw("--config");
    if (cfg == nullptr || cfg->count() == 0) return;
    const std::string path = cfg->as<std::string>();
    if (!fs::exists(path)) throw DataError("file not found: " + path);
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::ParseError& e) {
        throw UsageError("cannot parse config " + path + ": " + e.what());
    }
    for (const auto& item : items) {
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub.get_name())) continue;
        if (item.name == "config" || item.name == "++" || item.name == "--") continue;
        CLI::Option* opt = sub.get_option_no_throw("--" + item.name);
        if (opt == nullptr) throw UsageError("unknown key in config " + path + ": " + item.name);
        if (opt->count() > 0) continue;
        for (const auto& v : item.inputs) opt->add_result(v);
        opt->run_callback();
    }
}

int cmd_schema(const Options& o, const fs::path& dir, std::ostream& out) {
    if (o.input.empty()) throw UsageError("--input is required");
    const auto raw = load_csv(require_path(o.input), o.label.empty() ? std::nullopt : std::optional{o.label});
    const auto schema = infer_schema(raw, o.max_cardinality);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : schema)
        j.push_back({{"name", c.name},
                     {"kind", c.kind == ColumnKind::numerical ? "numerical" : "categorical"},
                     {"categories", c.categories},
                     {"all_missing", c.all_missing}});
    write_text(dir / "schema.json", j.dump(2) + "\n");
    out << j.dump(2) << "\n";
    return kSuccess;
}

int cmd_preprocess(const Options& o, const fs::path& dir, std::ostream& out, std::ostream& err) {
    if (o.input.empty()) throw UsageError("--input is required");
    const auto raw = load_csv(require_path(o.input), o.label.empty() ? std::nullopt : std::optional{o.label});
    const auto schema = infer_schema(raw, o.max_cardinality);
    const auto fr = parse_doubles(o.split, "split");
    if (fr.size() != 3) throw UsageError("--split needs three fractions");

    std::optional<Labels> labels;
    std::vector<std::string> classes;
    if (raw.labels) {
        classes = label_classes(*raw.labels);
        labels = encode_labels(*raw.labels, classes);
    }
    const auto idx = split_indices(labels, raw.n_rows(), {fr[0], fr[1], fr[2]}, o.seed);

    auto state = fit_preprocessor(raw.select_rows(idx.train), schema);
    state.label_classes = classes;
    TransformOptions topts;
    if (o.unseen == "error")
        topts.unseen = UnseenCategoryPolicy::error;
    else if (o.unseen != "modal")
        throw UsageError("--unseen must be modal or error");

    for (const auto& [name, rows] : {std::pair{"train", &idx.train}, {"val", &idx.val}, {"test", &idx.test}}) {
        auto result = transform(raw.select_rows(*rows), state, topts);
        result.dataset.row_ids = *rows;
        if (result.unseen_categories)
            err << "warning: " << result.unseen_categories << " unseen categories in " << name
                << " split encoded as the modal level\n";
        write_dataset_csv(dir / (std::string(name) + ".csv"), result.dataset);
    }
    write_text(dir / "preprocessor.json", state.serialize() + "\n");
    out << "features " << state.n_outputs() << ", dropped " << state.dropped_columns.size() << ", rows train/val/test "
        << idx.train.size() << "/" << idx.val.size() << "/" << idx.test.size() << "\n";
    return kSuccess;
}

int cmd_pretrain(const Options& o, const fs::path& dir, std::ostream& out, std::ostream& err) {
    const TrainConfig tc = train_config(o);
    const auto train = load_split(o.data, "train");
    const auto pstate = load_state(o.data);
    const std::uint64_t hash = pstate ? pstate->fingerprint() : 0;

    TrainState state;
    bool resumed = false;
    if (!o.resume.empty()) {
        state = load_checkpoint(require_path(o.resume)).state;
        resumed = true;
    } else {
        state = init_train_state(model_config_for(train, model_config(o)), tc, hash);
    }

    const auto log_path = dir / "loss_log.csv";
    std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write file: " + log_path.string());
    if (!resumed) write_loss_log_header(log);

    const auto t0 = std::chrono::steady_clock::now();
    TrainHooks hooks;
    hooks.progress = &err;
    hooks.on_step = [&](const LossReport& r) {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_loss_log_row(log, r, wall);
    };
    hooks.on_checkpoint = [&](const TrainState& s) {
        save_checkpoint(dir / ("checkpoint_step" + std::to_string(s.step) + ".bin"), s, tc.to_json());
    };

    try {
        auto result = pretrain(train, std::move(state), tc, hooks);
        save_checkpoint(dir / "checkpoint.bin", result.state, tc.to_json());
        const auto& last = result.log.empty() ? LossReport{} : result.log.back();
        out << "pretrained " << result.state.step << " steps, final total loss " << format_double(last.total) << "\n";
    } catch (const DivergenceError& e) {
        save_checkpoint(dir / "checkpoint_last_good.bin", e.last_good(), tc.to_json());
        err << "error: training diverged: " << e.what() << "\n"
            << "last good checkpoint: " << (dir / "checkpoint_last_good.bin").string() << "\n";
        return kDivergence;
    }
    return kSuccess;
}

int cmd_finetune(const Options& o, const fs::path& dir, std::ostream& out) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const auto ckpt = load_checkpoint(require_path(o.checkpoint));
    const auto train = load_split(o.data, "train");
    const auto fc = finetune_config(o);
    const auto tuned = finetune(ckpt.state.model, ckpt.state.params, train, fc);

    TrainState st = ckpt.state;
    st.params = tuned.params;
    st.accumulators = ModelParameters::zeros(st.model);
    save_checkpoint(dir / "finetuned.bin", st, fc.to_json(), "finetuned");

    std::ofstream metrics(dir / "finetune_metrics.jsonl", std::ios::binary);
    for (const char* split : {"val", "test"}) {
        const fs::path f = dataset_dir(o.data) / (std::string(split) + ".csv");
        if (!fs::is_directory(o.data) || !fs::exists(f)) continue;
        auto report = evaluate_finetuned(tuned, load_split(o.data, split), dataset_dir(o.data).filename().string());
        report.note = std::string("split=") + split;
        metrics << report.to_json().dump() << "\n";
        out << split << " " << report.metric << " " << format_double(report.value) << "\n";
    }
    return kSuccess;
}

int cmd_embed(const Options& o, const fs::path& dir, std::ostream& out) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const auto ckpt = load_checkpoint(require_path(o.checkpoint));
    std::vector<std::pair<std::string, fs::path>> inputs;
    if (require_path(o.data), fs::is_directory(o.data)) {
        for (const char* s : {"train", "val", "test"})
            if (fs::exists(fs::path(o.data) / (std::string(s) + ".csv")))
                inputs.emplace_back(std::string("_") + s, fs::path(o.data) / (std::string(s) + ".csv"));
    } else {
        inputs.emplace_back("", o.data);
    }
    for (const auto& [suffix, path] : inputs) {
        const auto ds = read_dataset_csv(path);
        const auto emb = embed_dataset(ckpt.state.model, ckpt.state.params, ds);
        write_embeddings_csv(dir / ("embeddings" + suffix + ".csv"), emb);
        if (o.export_mask) {
            std::mt19937_64 rng(o.seed);
            const auto batch = corrupt(ds.X, fit_marginals(ds.X), {o.ratio, o.seed, corruption_mode_from_string(o.corruption), o.sigma}, rng);
            std::ofstream mf(dir / ("mask" + suffix + ".csv"), std::ios::binary);
            write_mask_csv(mf, batch.mask, ds.row_ids);
        }
        out << "embedded " << ds.n_samples() << " rows -> " << (dir / ("embeddings" + suffix + ".csv")).string() << "\n";
    }
    return kSuccess;
}

int cmd_eval(const Options& o, const fs::path& dir, std::ostream& out, std::ostream& err) {
    const auto train = load_split(o.data, "train");
    const auto test = load_split(o.data, "test");
    std::vector<FeatureMode> modes;
    for (const auto& f : split_list(o.features)) modes.push_back(feature_mode_from_string(f));
    if (modes.empty()) throw UsageError("--features needs at least one mode");
    const bool needs_encoder = std::any_of(modes.begin(), modes.end(), [](auto m) { return m != FeatureMode::raw; });
    if (needs_encoder && o.checkpoint.empty()) throw UsageError("--checkpoint is required for distilled/concat features");

    AdapterRegistry registry;
    for (const auto& spec : o.adapters) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--adapter expects name=command");
        const std::string name = spec.substr(0, eq);
        registry.add(name, std::make_shared<ProcessAdapter>(spec.substr(eq + 1), dir / "adapters" / name));
    }

    std::optional<CheckpointFile> ckpt;
    if (!o.checkpoint.empty()) ckpt = load_checkpoint(require_path(o.checkpoint));
    LogisticConfig lc;
    lc.l2 = o.logistic_l2;
    const std::string name = dataset_dir(o.data).filename().string();
    std::vector<std::string> skipped;
    std::vector<MetricReport> reports;
    if (ckpt) {
        reports = evaluate_feature_modes(name, train, test, ckpt->state.model, ckpt->state.params, modes, lc,
                                         &registry, &skipped);
        if (ckpt->kind == "finetuned") {
            FinetunedModel fm{ckpt->state.model, ckpt->state.params, {}};
            reports.push_back(evaluate_finetuned(fm, test, name));
        }
    } else {
        reports = evaluate_feature_modes(name, train, test, ModelConfig{}, ModelParameters{}, modes, lc, &registry,
                                         &skipped);
    }
    for (const auto& s : skipped) err << "skipped adapter " << s << "\n";

    std::ostringstream table;
    render_feature_table(table, reports);
    write_text(dir / "metrics_table.txt", table.str());
    std::ofstream jsonl(dir / "metrics.jsonl", std::ios::binary);
    for (const auto& r : reports) jsonl << r.to_json().dump() << "\n";
    out << table.str();
    return kSuccess;
}

int cmd_ablate(const Options& o, const fs::path& dir, std::ostream& out, std::ostream& err) {
    const auto train = load_split(o.data, "train");
    const auto test = load_split(o.data, "test");
    AblationConfig ac;
    ac.ratios = parse_doubles(o.ratios, "ratios");
    ac.model = model_config(o);
    ac.train = train_config(o);
    ac.train.mode = TrainMode::semi;
    ac.finetune = finetune_config(o);
    const auto table = ablation_runner(dataset_dir(o.data).filename().string(), train, test, ac, &err);
    std::ostringstream text;
    render_ablation_table(text, table);
    write_text(dir / "ablation.txt", text.str());
    write_text(dir / "ablation.json", table.to_json().dump(2) + "\n");
    out << text.str();
    return kSuccess;
}

void add_io(CLI::App* sub, Options& o) {
    sub->add_option("--out", o.out, "Output directory (default $" + std::string(kOutputDirEnv) + " or ./contab_out)");
    sub->add_option("--seed", o.seed, "Seed for every random stream")->capture_default_str();
}

void add_train(CLI::App* sub, Options& o) {
    sub->add_option("--mode", o.mode, "self or semi")->capture_default_str();
    sub->add_option("--ratio", o.ratio, "Corruption ratio")->capture_default_str();
    sub->add_option("--corruption", o.corruption, "marginal or gaussian")->capture_default_str();
    sub->add_option("--sigma", o.sigma, "Std of gaussian corruption")->capture_default_str();
    sub->add_option("--epochs", o.epochs, "Pretraining epochs")->capture_default_str();
    sub->add_option("--batch", o.batch, "Batch size")->capture_default_str();
    sub->add_option("--lr", o.lr, "RMSProp learning rate")->capture_default_str();
    sub->add_option("--rho", o.rho, "RMSProp decay")->capture_default_str();
    sub->add_option("--eps", o.eps, "RMSProp epsilon")->capture_default_str();
    sub->add_option("--margin", o.margin, "Contrastive margin")->capture_default_str();
    sub->add_option("--lambda", o.lambda, "Input-weight penalty coefficient")->capture_default_str();
    sub->add_option("--p", o.p, "Penalty norm (1 or 2)")->capture_default_str();
    sub->add_option("--alpha", o.alpha, "Classification loss weight")->capture_default_str();
    sub->add_option("--beta", o.beta, "Contrastive loss weight")->capture_default_str();
    sub->add_option("--checkpoint-every", o.checkpoint_every, "Steps between checkpoints (0 = off)")
        ->capture_default_str();
    sub->add_option("--token-dim", o.token_dim, "Per-feature token width")->capture_default_str();
    sub->add_option("--layers", o.layers, "Transformer layers")->capture_default_str();
    sub->add_option("--heads", o.heads, "Attention heads")->capture_default_str();
    sub->add_option("--ff-dim", o.ff_dim, "Feed-forward width (0 = 4 x token dim)")->capture_default_str();
    sub->add_option("--z-dim", o.z_dim, "Bottleneck width (0 = half the features)")->capture_default_str();
}

void add_finetune(CLI::App* sub, Options& o) {
    sub->add_option("--finetune-epochs", o.finetune_epochs, "Fine-tuning epochs")->capture_default_str();
    sub->add_option("--finetune-lr", o.finetune_lr, "Fine-tuning learning rate (0 = --lr)")->capture_default_str();
    sub->add_flag("--freeze", o.freeze, "Train only the linear head (linear probe)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Regularized contrastive autoencoder for tabular data", "contab"};
    app.require_subcommand(1);

    auto* schema = app.add_subcommand("schema", "Infer column kinds of a raw CSV");
    auto* preprocess = app.add_subcommand("preprocess", "Split, fit and apply preprocessing");
    auto* pretrain_cmd = app.add_subcommand("pretrain", "Self- or semi-supervised pretraining");
    auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune the encoder with a linear head");
    auto* embed = app.add_subcommand("embed", "Export L2-normalized embeddings");
    auto* eval = app.add_subcommand("eval", "Baselines on raw, distilled and concatenated features");
    auto* ablate = app.add_subcommand("ablate", "Corruption-ratio sweep");

    for (auto* sub : app.get_subcommands({})) {
        sub->set_config("--config", "", "TOML config file; command-line flags take precedence");
        add_io(sub, o);
    }
    for (auto* sub : {schema, preprocess}) {
        sub->add_option("--input", o.input, "Raw CSV file");
        sub->add_option("--label", o.label, "Label column");
        sub->add_option("--max-cardinality", o.max_cardinality, "Distinct-value threshold for categorical columns")
            ->capture_default_str();
    }
    preprocess->add_option("--split", o.split, "train,val,test fractions")->capture_default_str();
    preprocess->add_option("--unseen", o.unseen, "Unseen category policy: modal or error")->capture_default_str();

    for (auto* sub : {pretrain_cmd, finetune_cmd, embed, eval, ablate})
        sub->add_option("--data", o.data, "Processed dataset directory (or CSV file)");
    for (auto* sub : {finetune_cmd, embed, eval}) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");

    add_train(pretrain_cmd, o);
    pretrain_cmd->add_option("--resume", o.resume, "Resume from a checkpoint");
    add_finetune(finetune_cmd, o);
    finetune_cmd->add_option("--batch", o.batch, "Batch size")->capture_default_str();
    finetune_cmd->add_option("--lr", o.lr, "RMSProp learning rate")->capture_default_str();
    finetune_cmd->add_option("--epochs", o.finetune_epochs, "Alias of --finetune-epochs");

    embed->add_flag("--export-mask", o.export_mask, "Also write a corruption mask per split");
    embed->add_option("--ratio", o.ratio, "Corruption ratio for the exported mask")->capture_default_str();
    embed->add_option("--corruption", o.corruption, "marginal or gaussian")->capture_default_str();
    embed->add_option("--sigma", o.sigma, "Std of gaussian corruption")->capture_default_str();

    eval->add_option("--features", o.features, "Comma list of raw, distilled, concat")->capture_default_str();
    eval->add_option("--adapter", o.adapters, "External baseline as name=command (repeatable)");
    eval->add_option("--logistic-l2", o.logistic_l2, "L2 weight of the logistic baseline")->capture_default_str();

    add_train(ablate, o);
    add_finetune(ablate, o);
    ablate->add_option("--ratios", o.ratios, "Comma list of corruption ratios")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        if (rc == 0) return kSuccess;
        err << app.help();
        return kUsageError;
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        apply_config_file(*active);
        const fs::path dir = output_dir(o);
        write_text(dir / (active->get_name() + ".config.toml"), active->config_to_str(true, false));
        const std::string& name = active->get_name();
        if (name == "schema") return cmd_schema(o, dir, out);
        if (name == "preprocess") return cmd_preprocess(o, dir, out, err);
        if (name == "pretrain") return cmd_pretrain(o, dir, out, err);
        if (name == "finetune") return cmd_finetune(o, dir, out);
        if (name == "embed") return cmd_embed(o, dir, out);
        if (name == "eval") return cmd_eval(o, dir, out, err);
        if (name == "ablate") return cmd_ablate(o, dir, out, err);
        err << app.help();
        return kUsageError;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << active->help();
        return kUsageError;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return kDivergence;
    } catch (const nlohmann::json::exception& e) {
        err << "error: malformed JSON: " << e.what() << "\n";
        return kDataError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kDataError;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace contab::cli
