#include "sensitrim/experiment.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "sensitrim/archive.hpp"
#include "sensitrim/errors.hpp"

namespace sensitrim {

TrainSpec default_pretrain_spec() {
    TrainSpec s;
    s.epochs = 3;
    return s;
}

TrainSpec default_analysis_spec() {
    TrainSpec s;
    s.epochs = 1;
    s.batch_size = 32;
    return s;
}

TrainSpec default_finetune_spec() {
    TrainSpec s;
    s.epochs = 3;
    return s;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("experiment config must be a JSON object");
    ExperimentConfig c;
    try {
        c.model = j.at("model");
        c.task = j.at("task");
        if (j.contains("pretrain_task") && !j["pretrain_task"].is_null()) c.pretrain_task = j["pretrain_task"];
        c.pretrain = train_spec_from_json(j.value("pretrain", nlohmann::json::object()), default_pretrain_spec());
        c.analysis = train_spec_from_json(j.value("analysis", nlohmann::json::object()), default_analysis_spec());
        c.finetune = train_spec_from_json(j.value("finetune", nlohmann::json::object()), default_finetune_spec());
        if (j.contains("budgets")) c.budgets = j["budgets"].get<std::vector<double>>();
        if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
        c.output_dir = j.value("output_dir", c.output_dir);
        if (j.contains("mode")) c.mode = parse_finetune_mode(j["mode"].get<std::string>());
        if (j.contains("mp")) {
            const auto& mp = j["mp"];
            if (mp.contains("attn_statistic")) c.mp.attn_statistic = parse_statistic(mp["attn_statistic"]);
            if (mp.contains("ffn_statistic")) c.mp.ffn_statistic = parse_statistic(mp["ffn_statistic"]);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    for (double b : c.budgets) {
        if (!(b > 0.0 && b <= 1.0)) throw InputError("experiment config: budgets must lie in (0, 1]");
    }
    if (c.budgets.empty()) throw InputError("experiment config: budgets is empty");
    if (c.seeds.empty()) throw InputError("experiment config: seeds is empty");
    return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"model", c.model},
            {"task", c.task},
            {"pretrain_task", c.pretrain_task ? *c.pretrain_task : nlohmann::json(nullptr)},
            {"pretrain", to_json(c.pretrain)},
            {"analysis", to_json(c.analysis)},
            {"finetune", to_json(c.finetune)},
            {"budgets", c.budgets},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir},
            {"mode", to_string(c.mode)},
            {"mp", {{"attn_statistic", to_string(c.mp.attn_statistic)}, {"ffn_statistic", to_string(c.mp.ffn_statistic)}}}};
}

nlohmann::json read_json_file(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

ExperimentConfig load_experiment_config(const fs::path& path) { return experiment_config_from_json(read_json_file(path)); }

ModelConfig resolve_model_config(const nlohmann::json& model, const Dataset& dataset, const Dataset* pretrain_dataset) {
    nlohmann::json m = model;
    std::size_t vocab = dataset.task.vocab_size;
    std::size_t seq = dataset.task.max_seq_len;
    std::size_t classes = dataset.task.num_classes;
    if (pretrain_dataset) {
        vocab = std::max(vocab, pretrain_dataset->task.vocab_size);
        seq = std::max(seq, pretrain_dataset->task.max_seq_len);
        if (pretrain_dataset->task.num_classes != classes) {
            throw InputError("pretrain_task and task must have the same number of classes");
        }
    }
    if (!m.contains("vocab_size")) m["vocab_size"] = vocab;
    if (!m.contains("max_seq_len")) m["max_seq_len"] = seq;
    if (!m.contains("num_classes")) m["num_classes"] = classes;
    return config_from_json(m);
}

nlohmann::json to_json(const BinaryMask& mask) {
    return {{"attn", mask.attn}, {"ffn", mask.ffn}, {"budget", mask.budget}};
}

BinaryMask mask_from_json(const nlohmann::json& j) {
    try {
        BinaryMask m;
        m.attn = j.at("attn").get<std::vector<std::vector<std::uint8_t>>>();
        m.ffn = j.at("ffn").get<std::vector<std::vector<std::uint8_t>>>();
        m.budget = j.at("budget").get<double>();
        refresh_layer_budgets(m);
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mask: ") + e.what());
    }
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::size_t sweep_threads_from_env() {
    const char* v = std::getenv("SENSITRIM_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw UsageError("SENSITRIM_THREADS must be a positive integer");
    return static_cast<std::size_t>(n);
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
    fs::path p = path;
    p.replace_extension();
    p += suffix;
    return p;
}

namespace {

TrainSpec with_seed(TrainSpec spec, std::uint64_t seed) {
    spec.seed = seed;
    return spec;
}

nlohmann::json record_without_timing(const RunRecord& record) {
    auto j = to_json(record);
    j.erase("wall_seconds");
    return j;
}

nlohmann::json record_with_timing(const RunRecord& record) {
    auto j = record_without_timing(record);
    j["timing"] = {{"wall_seconds", record.wall_seconds}};
    return j;
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
}

nlohmann::json task_from_data_file(const std::optional<fs::path>& data, const nlohmann::json& ckpt_meta) {
    if (data) {
        auto j = read_json_file(*data);
        if (j.is_object() && j.contains("task")) return j["task"];
        return j;
    }
    if (ckpt_meta.contains("task")) return ckpt_meta["task"];
    throw UsageError("no --data given and the checkpoint records no task");
}

void check_budget(double budget) {
    if (!(budget > 0.0 && budget <= 1.0)) throw UsageError("--budget must lie in (0, 1]");
}

}  // namespace

// ---------------------------------------------------------------------------

SweepResult run_sweep(const ExperimentConfig& config, std::size_t threads) {
    const Dataset dataset = dataset_from_json(config.task);
    std::optional<Dataset> pre_ds;
    if (config.pretrain_task) pre_ds = dataset_from_json(*config.pretrain_task);
    const ModelConfig model_config = resolve_model_config(config.model, dataset, pre_ds ? &*pre_ds : nullptr);
    const Dataset& pretrain_data = pre_ds ? *pre_ds : dataset;

    struct SeedState {
        EncoderModel pretrained;
        SensitivityScores sensi;
        SensitivityScores mp;
        std::size_t analysis_epochs = 0;
    };
    const std::size_t n_seeds = config.seeds.size();
    const std::size_t n_budgets = config.budgets.size();
    std::vector<SeedState> states(n_seeds);
    parallel_for(n_seeds, threads, [&](std::size_t s) {
        const auto seed = config.seeds[s];
        auto pre = pretrain(model_config, pretrain_data, with_seed(config.pretrain, seed));
        auto sens = sensitivity_epoch(pre.model, dataset, with_seed(config.analysis, seed));
        states[s].analysis_epochs = sens.record.epoch_losses.size();
        states[s].sensi = std::move(sens.scores);
        states[s].mp = mp_scores(pre.model, config.mp);
        states[s].pretrained = std::move(pre.model);
    });

    struct Cell {
        double sensi_acc = 0.0, mp_acc = 0.0;
        std::size_t sensi_epochs = 0, mp_epochs = 0;
        std::vector<LayerBudget> layer_budgets;
    };
    std::vector<Cell> cells(n_budgets * n_seeds);
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        const std::size_t b = i / n_seeds, s = i % n_seeds;
        const auto& st = states[s];
        const TrainSpec spec = with_seed(config.finetune, config.seeds[s]);
        auto sensi_mask = threshold_to_budget(st.sensi, config.budgets[b]).first;
        auto mp_mask = threshold_to_budget(st.mp, config.budgets[b]).first;
        auto ft_sensi = finetune(st.pretrained, sensi_mask, dataset, spec, config.mode);
        auto ft_mp = finetune(st.pretrained, mp_mask, dataset, spec, config.mode);
        cells[i] = {ft_sensi.record.final_metric, ft_mp.record.final_metric, ft_sensi.record.epoch_losses.size(),
                    ft_mp.record.epoch_losses.size(), sensi_mask.per_layer};
    });

    SweepResult out;
    out.seeds.resize(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
        out.seeds[s].seed = config.seeds[s];
        out.seeds[s].sensi_training_epochs = states[s].analysis_epochs;
    }
    for (std::size_t b = 0; b < n_budgets; ++b) {
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto& c = cells[b * n_seeds + s];
            out.rows.push_back({config.budgets[b], c.sensi_acc, c.mp_acc, config.seeds[s]});
            out.seeds[s].sensi_training_epochs += c.sensi_epochs;
            out.seeds[s].mp_training_epochs += c.mp_epochs;
            out.seeds[s].sensi_layer_budgets.push_back(c.layer_budgets);
        }
    }

    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : out.seeds) {
        nlohmann::json budgets = nlohmann::json::array();
        for (const auto& per_layer : s.sensi_layer_budgets) {
            nlohmann::json layers = nlohmann::json::array();
            for (const auto& lb : per_layer) layers.push_back({{"attn", lb.attn}, {"ffn", lb.ffn}});
            budgets.push_back(layers);
        }
        seeds.push_back({{"seed", s.seed},
                         {"sensi_training_epochs", s.sensi_training_epochs},
                         {"mp_training_epochs", s.mp_training_epochs},
                         {"sensi_layer_budgets", budgets}});
    }
    out.summary = {{"schema_version", kReportSchemaVersion},
                   {"config", to_json(config)},
                   {"model_config", to_json(model_config)},
                   {"rows", nlohmann::json::parse(emit(out.rows, ReportFormat::Json)).at("rows")},
                   {"seeds", seeds}};
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json cmd_pretrain(const fs::path& config_path, const fs::path& out) {
    const ExperimentConfig config = load_experiment_config(config_path);
    const Dataset dataset = dataset_from_json(config.task);
    std::optional<Dataset> pre_ds;
    if (config.pretrain_task) pre_ds = dataset_from_json(*config.pretrain_task);
    const ModelConfig model_config = resolve_model_config(config.model, dataset, pre_ds ? &*pre_ds : nullptr);
    const TrainSpec spec = with_seed(config.pretrain, config.seeds.front());
    auto result = pretrain(model_config, pre_ds ? *pre_ds : dataset, spec);

    nlohmann::json meta = {{"command", "pretrain"},
                           {"experiment", to_json(config)},
                           {"task", config.task},
                           {"record", record_without_timing(result.record)}};
    ensure_parent(out);
    save_checkpoint(out, result.model, meta);
    write_text(sibling(out, ".run.json"), dump({{"command", "pretrain"},
                                                 {"experiment", to_json(config)},
                                                 {"model_config", to_json(model_config)},
                                                 {"record", record_with_timing(result.record)}}));
    return {{"checkpoint", out.string()}, {"eval_accuracy", result.record.final_metric}};
}

nlohmann::json cmd_analyze(const AnalyzeOptions& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const nlohmann::json task = task_from_data_file(o.data, ckpt.meta);
    const Dataset dataset = dataset_from_json(task);
    TrainSpec spec = default_analysis_spec();
    spec.epochs = o.epochs;
    spec.batch_size = o.batch_size;
    spec.l1_coeff = o.l1_coeff;
    spec.seed = o.seed;
    if (o.learning_rate) spec.learning_rate = *o.learning_rate;
    spec.mask_learning_rate = o.mask_learning_rate;
    spec.validate();

    auto result = sensitivity_epoch(ckpt.model, dataset, spec);
    nlohmann::json meta = {{"command", "analyze"},
                           {"task", task},
                           {"spec", to_json(spec)},
                           {"checkpoint", o.checkpoint.string()},
                           {"checkpoint_meta", ckpt.meta},
                           {"record", record_without_timing(result.record)}};
    ensure_parent(o.out);
    save_scores(o.out, result.scores, ckpt.model.config, meta);
    std::ostringstream csv;
    write_scores_csv(csv, result.scores, ckpt.model.config);
    write_text(sibling(o.out, ".csv"), csv.str());
    return {{"scores", o.out.string()}, {"csv", sibling(o.out, ".csv").string()}};
}

nlohmann::json cmd_trim(const TrimOptions& o) {
    check_budget(o.budget);
    const ScoreFile sf = load_scores(o.scores);
    auto [mask, threshold] = threshold_to_budget(sf.scores, o.budget);
    const std::size_t seq_len = o.seq_len.value_or(sf.config.max_seq_len);
    if (seq_len == 0 || seq_len > sf.config.max_seq_len) throw UsageError("--seq-len outside [1, max_seq_len]");

    nlohmann::json resolved = {{"command", "trim"},
                               {"budget", o.budget},
                               {"seq_len", seq_len},
                               {"scores", o.scores.string()},
                               {"threshold", {{"attn", threshold.attn}, {"ffn", threshold.ffn}}},
                               {"scores_meta", sf.meta}};
    ensure_parent(o.out);
    save_mask(o.out, mask, sf.config, resolved);
    std::ostringstream csv;
    write_mask_csv(csv, mask, sf.config);
    write_text(sibling(o.out, ".csv"), csv.str());

    const TrimReport report = make_trim_report(sf.config, seq_len, &mask);
    auto rj = to_json(report);
    rj["resolved"] = resolved;
    rj["model_config"] = to_json(sf.config);
    write_text(sibling(o.out, ".report.json"), dump(rj));
    return {{"mask", o.out.string()},
            {"attn_density", report.attn_density},
            {"ffn_density", report.ffn_density},
            {"budget", o.budget}};
}

nlohmann::json cmd_finetune(const FinetuneOptions& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const MaskFile mf = load_mask(o.mask);
    check_mask_compatible(ckpt.model.config, mf.mask);
    const nlohmann::json task = task_from_data_file(o.data, ckpt.meta);
    const Dataset dataset = dataset_from_json(task);
    TrainSpec spec = default_finetune_spec();
    spec.epochs = o.epochs;
    spec.batch_size = o.batch_size;
    spec.learning_rate = o.learning_rate;
    spec.seed = o.seed;
    spec.validate();

    auto result = finetune(ckpt.model, mf.mask, dataset, spec, o.mode);
    nlohmann::json meta = {{"command", "finetune"},
                           {"mode", to_string(o.mode)},
                           {"task", task},
                           {"spec", to_json(spec)},
                           {"checkpoint", o.checkpoint.string()},
                           {"checkpoint_meta", ckpt.meta},
                           {"mask_file", o.mask.string()},
                           {"mask_meta", mf.meta},
                           {"record", record_without_timing(result.record)}};
    if (o.mode == FinetuneMode::Masked) meta["mask"] = to_json(mf.mask);
    ensure_parent(o.out);
    save_checkpoint(o.out, result.model, meta);
    write_text(sibling(o.out, ".run.json"), dump({{"command", "finetune"},
                                                   {"mode", to_string(o.mode)},
                                                   {"task", task},
                                                   {"spec", to_json(spec)},
                                                   {"model_config", to_json(result.model.config)},
                                                   {"record", record_with_timing(result.record)}}));
    return {{"checkpoint", o.out.string()}, {"eval_accuracy", result.record.final_metric}};
}

nlohmann::json cmd_mp(const MpOptions& o) {
    check_budget(o.budget);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const auto scores = mp_scores(ckpt.model, o.spec);
    auto [mask, threshold] = threshold_to_budget(scores, o.budget);
    nlohmann::json resolved = {{"command", "mp"},
                               {"budget", o.budget},
                               {"attn_statistic", to_string(o.spec.attn_statistic)},
                               {"ffn_statistic", to_string(o.spec.ffn_statistic)},
                               {"checkpoint", o.checkpoint.string()},
                               {"checkpoint_meta", ckpt.meta},
                               {"threshold", {{"attn", threshold.attn}, {"ffn", threshold.ffn}}}};
    ensure_parent(o.out);
    save_mask(o.out, mask, ckpt.model.config, resolved);
    std::ostringstream csv;
    write_mask_csv(csv, mask, ckpt.model.config);
    write_text(sibling(o.out, ".csv"), csv.str());
    const auto d = density(mask);
    return {{"mask", o.out.string()}, {"attn_density", d.attn}, {"ffn_density", d.ffn}, {"budget", o.budget}};
}

nlohmann::json cmd_sweep(const SweepOptions& o) {
    ExperimentConfig config = load_experiment_config(o.config);
    if (o.output_dir) config.output_dir = o.output_dir->string();
    const SweepResult result = run_sweep(config, o.threads);
    const fs::path dir = config.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    write_text(dir / "sweep.csv", emit(result.rows, ReportFormat::Csv));
    write_text(dir / "sweep.json", dump(result.summary));
    return {{"csv", (dir / "sweep.csv").string()}, {"json", (dir / "sweep.json").string()}, {"rows", result.rows.size()}};
}

std::string cmd_report(const ReportOptions& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    std::optional<BinaryMask> mask;
    if (o.mask) {
        mask = load_mask(*o.mask).mask;
    } else if (ckpt.meta.contains("mask")) {
        mask = mask_from_json(ckpt.meta["mask"]);
    }
    if (mask) check_mask_compatible(ckpt.model.config, *mask);
    const std::size_t seq_len = o.seq_len.value_or(ckpt.model.config.max_seq_len);
    if (seq_len == 0 || seq_len > ckpt.model.config.max_seq_len) throw UsageError("--seq-len outside [1, max_seq_len]");
    const TrimReport report = make_trim_report(ckpt.model.config, seq_len, mask ? &*mask : nullptr);
    if (o.format == ReportFormat::Csv) return emit(report, ReportFormat::Csv);
    auto j = to_json(report);
    j["resolved"] = {{"command", "report"},
                     {"checkpoint", o.checkpoint.string()},
                     {"mask", o.mask ? nlohmann::json(o.mask->string()) : nlohmann::json(nullptr)},
                     {"seq_len", seq_len}};
    j["model_config"] = to_json(ckpt.model.config);
    return dump(j);
}

nlohmann::json cmd_compare_sensitivity(const CompareOptions& o) {
    check_budget(o.budget);
    const ScoreFile a = load_scores(o.scores_a);
    const ScoreFile b = load_scores(o.scores_b);
    if (a.config.num_layers != b.config.num_layers) {
        throw InputError("score files have different layer counts (" + std::to_string(a.config.num_layers) + " vs " +
                         std::to_string(b.config.num_layers) + ")");
    }
    const auto pa = profile(threshold_to_budget(a.scores, o.budget).first, a.config);
    const auto pb = profile(threshold_to_budget(b.scores, o.budget).first, b.config);
    const auto corr = correlate(pa, pb);
    return {{"schema_version", kReportSchemaVersion},
            {"budget", o.budget},
            {"scores_a", o.scores_a.string()},
            {"scores_b", o.scores_b.string()},
            {"profile_a", to_json(pa)},
            {"profile_b", to_json(pb)},
            {"spearman", to_json(corr)}};
}

}  // namespace sensitrim
