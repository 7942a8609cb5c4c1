// sensitrim: sensitivity-driven budgeted trimming of small transformer encoders.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sensitrim/errors.hpp"
#include "sensitrim/experiment.hpp"

using namespace sensitrim;

namespace {

template <class T>
std::optional<T> opt_if(const CLI::Option* o, const T& v) {
    return o->count() ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sensitivity-driven budgeted trimming of transformer encoders"};
    app.require_subcommand(1);

    // pretrain
    std::string pre_config, pre_out;
    auto* pre = app.add_subcommand("pretrain", "Train a dense model from an experiment config");
    pre->add_option("config", pre_config, "Experiment config (JSON)")->required();
    pre->add_option("-o,--out", pre_out, "Output checkpoint")->required();

    // analyze
    AnalyzeOptions an;
    std::string an_ckpt, an_data, an_out;
    float an_lr = 0.0f, an_mask_lr = 0.0f;
    auto* ana = app.add_subcommand("analyze", "Learn per-dimension sensitivity scores");
    ana->add_option("checkpoint", an_ckpt, "Pretrained checkpoint")->required();
    auto* an_data_opt = ana->add_option("--data", an_data, "Task JSON or experiment config");
    ana->add_option("--epochs", an.epochs, "Analysis epochs")->capture_default_str();
    ana->add_option("--batch", an.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    ana->add_option("--l1", an.l1_coeff, "L1 coefficient on the gates")->capture_default_str()->check(CLI::NonNegativeNumber);
    ana->add_option("--seed", an.seed, "Seed")->capture_default_str();
    auto* an_lr_opt = ana->add_option("--lr", an_lr, "Weight learning rate")->check(CLI::PositiveNumber);
    auto* an_mlr_opt = ana->add_option("--mask-lr", an_mask_lr, "Gate learning rate")->check(CLI::NonNegativeNumber);
    ana->add_option("-o,--out", an_out, "Output score file")->required();

    // trim
    TrimOptions tr;
    std::string tr_scores, tr_out;
    std::size_t tr_seq = 0;
    auto* trim = app.add_subcommand("trim", "Binarize scores to a parameter budget");
    trim->add_option("scores", tr_scores, "Score file")->required();
    trim->add_option("--budget", tr.budget, "Budget B in (0, 1]")->required();
    auto* tr_seq_opt = trim->add_option("--seq-len", tr_seq, "Sequence length for FLOPs");
    trim->add_option("-o,--out", tr_out, "Output mask file")->required();

    // finetune
    FinetuneOptions ft;
    std::string ft_ckpt, ft_mask, ft_data, ft_out, ft_mode = "masked";
    auto* fin = app.add_subcommand("finetune", "Fine-tune under a frozen mask");
    fin->add_option("checkpoint", ft_ckpt, "Pretrained checkpoint")->required();
    fin->add_option("mask", ft_mask, "Mask file")->required();
    auto* ft_data_opt = fin->add_option("--data", ft_data, "Task JSON or experiment config");
    fin->add_option("--epochs", ft.epochs, "Fine-tune epochs")->capture_default_str();
    fin->add_option("--batch", ft.batch_size, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    fin->add_option("--lr", ft.learning_rate, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    fin->add_option("--seed", ft.seed, "Seed")->capture_default_str();
    fin->add_option("--mode", ft_mode, "masked or compacted")
        ->capture_default_str()
        ->check(CLI::IsMember({"masked", "compacted"}));
    fin->add_option("-o,--out", ft_out, "Output checkpoint")->required();

    // mp
    MpOptions mp;
    std::string mp_ckpt, mp_out, mp_stat = "l1_column_norm", mp_ffn_stat;
    auto* mpc = app.add_subcommand("mp", "Magnitude-pruning baseline mask");
    mpc->add_option("checkpoint", mp_ckpt, "Pretrained checkpoint")->required();
    mpc->add_option("--budget", mp.budget, "Budget B in (0, 1]")->required();
    mpc->add_option("--statistic", mp_stat, "Column statistic: l1_column_norm or max_abs")->capture_default_str();
    auto* mp_ffn_opt = mpc->add_option("--ffn-statistic", mp_ffn_stat, "Statistic for MLP columns (default: --statistic)");
    mpc->add_option("-o,--out", mp_out, "Output mask file")->required();

    // sweep
    SweepOptions sw;
    std::string sw_config, sw_dir;
    auto* swc = app.add_subcommand("sweep", "Sensi vs MP accuracy over budgets x seeds");
    swc->add_option("config", sw_config, "Experiment config (JSON)")->required();
    auto* sw_dir_opt = swc->add_option("--output-dir", sw_dir, "Overrides output_dir");

    // report
    ReportOptions rp;
    std::string rp_ckpt, rp_mask, rp_format = "json";
    std::size_t rp_seq = 0;
    auto* rep = app.add_subcommand("report", "Parameter and FLOPs report");
    rep->add_option("checkpoint", rp_ckpt, "Checkpoint")->required();
    auto* rp_mask_opt = rep->add_option("--mask", rp_mask, "Mask file");
    auto* rp_seq_opt = rep->add_option("--seq-len", rp_seq, "Sequence length for FLOPs");
    rep->add_option("--format", rp_format, "json or csv")->capture_default_str()->check(CLI::IsMember({"json", "csv"}));

    // compare-sensitivity
    CompareOptions cmp;
    std::string cmp_a, cmp_b;
    auto* cmpc = app.add_subcommand("compare-sensitivity", "Spearman correlation of two layer-sensitivity profiles");
    cmpc->add_option("scores_a", cmp_a, "First score file")->required();
    cmpc->add_option("scores_b", cmp_b, "Second score file")->required();
    cmpc->add_option("--budget", cmp.budget, "Budget at which layer densities are compared")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: E_ARGS: " << e.what() << "\n";
        return exit_code(ErrorCategory::Usage);
    }

    try {
        if (*pre) {
            std::cout << cmd_pretrain(pre_config, pre_out).dump() << "\n";
        } else if (*ana) {
            an.checkpoint = an_ckpt;
            if (an_data_opt->count()) an.data = an_data;
            an.learning_rate = opt_if(an_lr_opt, an_lr);
            an.mask_learning_rate = opt_if(an_mlr_opt, an_mask_lr);
            an.out = an_out;
            std::cout << cmd_analyze(an).dump() << "\n";
        } else if (*trim) {
            tr.scores = tr_scores;
            tr.seq_len = opt_if(tr_seq_opt, tr_seq);
            tr.out = tr_out;
            std::cout << cmd_trim(tr).dump() << "\n";
        } else if (*fin) {
            ft.checkpoint = ft_ckpt;
            ft.mask = ft_mask;
            if (ft_data_opt->count()) ft.data = ft_data;
            ft.mode = parse_finetune_mode(ft_mode);
            ft.out = ft_out;
            std::cout << cmd_finetune(ft).dump() << "\n";
        } else if (*mpc) {
            mp.checkpoint = mp_ckpt;
            mp.spec.attn_statistic = parse_statistic(mp_stat);
            mp.spec.ffn_statistic = parse_statistic(mp_ffn_opt->count() ? mp_ffn_stat : mp_stat);
            mp.out = mp_out;
            std::cout << cmd_mp(mp).dump() << "\n";
        } else if (*swc) {
            sw.config = sw_config;
            if (sw_dir_opt->count()) sw.output_dir = sw_dir;
            sw.threads = sweep_threads_from_env();
            std::cout << cmd_sweep(sw).dump() << "\n";
        } else if (*rep) {
            rp.checkpoint = rp_ckpt;
            if (rp_mask_opt->count()) rp.mask = rp_mask;
            rp.seq_len = opt_if(rp_seq_opt, rp_seq);
            rp.format = rp_format == "csv" ? ReportFormat::Csv : ReportFormat::Json;
            std::cout << cmd_report(rp);
        } else if (*cmpc) {
            cmp.scores_a = cmp_a;
            cmp.scores_b = cmp_b;
            std::cout << cmd_compare_sensitivity(cmp).dump(2) << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << error_tag(e.category()) << ": " << e.what() << "\n";
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: E_IO: " << e.what() << "\n";
        return exit_code(ErrorCategory::Io);
    }
    return 0;
}
