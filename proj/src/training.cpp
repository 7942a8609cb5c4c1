#include "sensitrim/training.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <random>
#include <thread>

#include "sensitrim/errors.hpp"

namespace sensitrim {

void TrainSpec::validate() const {
    if (batch_size == 0) throw InputError("train spec: batch_size must be at least 1");
    if (!(learning_rate > 0.0f)) throw InputError("train spec: learning_rate must be positive");
    if (l1_coeff < 0.0f) throw InputError("train spec: l1_coeff must be non-negative");
    if (mask_learning_rate && *mask_learning_rate < 0.0f) {
        throw InputError("train spec: mask_learning_rate must be non-negative");
    }
    if (!(grad_clip > 0.0)) throw InputError("train spec: grad_clip must be positive");
}

nlohmann::json to_json(const TrainSpec& s) {
    nlohmann::json j = {{"epochs", s.epochs},
                        {"batch_size", s.batch_size},
                        {"learning_rate", s.learning_rate},
                        {"optimizer", to_string(s.optimizer)},
                        {"l1_coeff", s.l1_coeff},
                        {"seed", s.seed},
                        {"clamp_masks", s.clamp_masks},
                        {"train_weights", s.train_weights},
                        {"grad_clip", s.grad_clip},
                        {"eval_each_epoch", s.eval_each_epoch}};
    j["mask_learning_rate"] = s.mask_learning_rate ? nlohmann::json(*s.mask_learning_rate) : nlohmann::json(nullptr);
    return j;
}

TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec s) {
    try {
        s.epochs = j.value("epochs", s.epochs);
        s.batch_size = j.value("batch_size", s.batch_size);
        s.learning_rate = j.value("learning_rate", s.learning_rate);
        if (j.contains("optimizer")) s.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
        s.l1_coeff = j.value("l1_coeff", s.l1_coeff);
        s.seed = j.value("seed", s.seed);
        s.clamp_masks = j.value("clamp_masks", s.clamp_masks);
        s.train_weights = j.value("train_weights", s.train_weights);
        s.grad_clip = j.value("grad_clip", s.grad_clip);
        s.eval_each_epoch = j.value("eval_each_epoch", s.eval_each_epoch);
        if (j.contains("mask_learning_rate")) {
            s.mask_learning_rate = j["mask_learning_rate"].is_null()
                                       ? std::nullopt
                                       : std::optional<float>(j["mask_learning_rate"].get<float>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::json to_json(const RunRecord& r) {
    return {{"epoch_losses", r.epoch_losses},
            {"eval_accuracies", r.eval_accuracies},
            {"wall_seconds", r.wall_seconds},
            {"final_metric", r.final_metric},
            {"spec", r.spec}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    try {
        RunRecord r;
        r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
        r.eval_accuracies = j.at("eval_accuracies").get<std::vector<double>>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.final_metric = j.at("final_metric").get<double>();
        r.spec = j.at("spec");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("run record: ") + e.what());
    }
}

FinetuneMode parse_finetune_mode(const std::string& name) {
    if (name == "masked") return FinetuneMode::Masked;
    if (name == "compacted") return FinetuneMode::Compacted;
    throw InputError("unknown fine-tune mode '" + name + "' (expected masked or compacted)");
}

std::string to_string(FinetuneMode mode) { return mode == FinetuneMode::Masked ? "masked" : "compacted"; }

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

void check_dataset(const ModelConfig& config, const Dataset& dataset) {
    if (dataset.train.empty()) throw InputError("dataset has no training examples");
    auto check = [&](const std::vector<Example>& split, const char* name) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const auto& ex = split[i];
            if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= config.num_classes) {
                throw InputError(std::string(name) + " example " + std::to_string(i) + " has label " +
                                 std::to_string(ex.label) + " but the model has " +
                                 std::to_string(config.num_classes) + " classes");
            }
            if (ex.ids.empty() || ex.ids.size() > config.max_seq_len) {
                throw InputError(std::string(name) + " example " + std::to_string(i) + " has length " +
                                 std::to_string(ex.ids.size()) + " outside [1, " +
                                 std::to_string(config.max_seq_len) + "]");
            }
            for (auto id : ex.ids) {
                if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
                    throw InputError(std::string(name) + " example " + std::to_string(i) + " has token id " +
                                     std::to_string(id) + " outside the vocabulary");
                }
            }
        }
    };
    check(dataset.train, "train");
    check(dataset.eval, "eval");
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eed5eedu};
    std::uint64_t out[1];
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out[0];
}

/// The shared minibatch loop. `loss_fn` builds the loss for one batch on the
/// active tape; `after_step` runs after every optimizer update; `eval_fn`
/// produces the per-epoch accuracy.
RunRecord run_training(const Dataset& dataset, const TrainSpec& spec, Optimizer& optimizer,
                       const std::function<Tensor(const TokenBatch&, const std::vector<std::int32_t>&)>& loss_fn,
                       const std::function<void()>& after_step, const std::function<double()>& eval_fn) {
    const auto start = Clock::now();
    RunRecord record;
    record.spec = to_json(spec);
    std::vector<std::size_t> order(dataset.train.size());
    for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(epoch_seed(spec.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += spec.batch_size) {
            const std::size_t end = std::min(order.size(), begin + spec.batch_size);
            std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const TokenBatch batch = make_batch(dataset.train, idx);
            const auto labels = labels_of(dataset.train, idx);
            {
                Tape tape;
                Tensor loss = loss_fn(batch, labels);
                tape.backward(loss);
                loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
            }
            optimizer.clip_grad_norm(spec.grad_clip);
            optimizer.step();
            optimizer.zero_grad();
            if (after_step) after_step();
        }
        record.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
        if (spec.eval_each_epoch || epoch + 1 == spec.epochs) {
            record.eval_accuracies.push_back(eval_fn());
        } else {
            record.eval_accuracies.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    record.final_metric = eval_fn();
    record.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return record;
}

}  // namespace

TrainResult pretrain(const ModelConfig& config, const Dataset& dataset, const TrainSpec& spec) {
    spec.validate();
    check_dataset(config, dataset);
    TrainResult result;
    result.model = EncoderModel::init(config, spec.seed);
    if (spec.epochs == 0) {
        result.record.spec = to_json(spec);
        result.record.final_metric = evaluate(result.model, dataset);
        return result;
    }
    result.model.set_requires_grad(true);
    Optimizer opt(spec.optimizer, {ParamGroup{result.model.parameters(), spec.learning_rate}});
    const EncoderModel& model = result.model;
    result.record = run_training(
        dataset, spec, opt,
        [&](const TokenBatch& batch, const std::vector<std::int32_t>& labels) {
            return cross_entropy(forward(model, batch), labels);
        },
        nullptr, [&] { return evaluate(model, dataset); });
    result.model.set_requires_grad(false);
    return result;
}

SensitivityResult sensitivity_epoch(const EncoderModel& model, const Dataset& dataset, const TrainSpec& spec) {
    spec.validate();
    check_dataset(model.config, dataset);
    EncoderModel work = model.clone();
    work.set_requires_grad(spec.train_weights);
    GateSet gates = gates_from_scores(init_masks(model.config), true);

    std::vector<Tensor> gate_params;
    for (const auto& g : gates) {
        gate_params.push_back(g.attn);
        gate_params.push_back(g.ffn);
    }
    std::vector<ParamGroup> groups;
    if (spec.train_weights) groups.push_back({work.parameters(), spec.learning_rate});
    groups.push_back({gate_params, spec.mask_learning_rate.value_or(spec.learning_rate)});
    Optimizer opt(spec.optimizer, std::move(groups));

    const float lambda = spec.l1_coeff;
    auto loss_fn = [&](const TokenBatch& batch, const std::vector<std::int32_t>& labels) {
        Tensor loss = cross_entropy(forward(work, batch, &gates), labels);
        if (lambda > 0.0f) {
            for (const auto& g : gate_params) loss = add(loss, scale(l1_norm(g), lambda));
        }
        return loss;
    };
    auto clamp = [&] {
        if (!spec.clamp_masks) return;
        for (const auto& g : gate_params) {
            for (auto& v : g.mutable_values()) v = std::max(v, 0.0f);
        }
    };
    auto eval = [&] {
        NoGradGuard guard;
        // Accuracy of the gated analysis model, for monitoring only.
        std::size_t correct = 0;
        const auto& ex = dataset.eval;
        for (std::size_t begin = 0; begin < ex.size(); begin += 256) {
            const std::size_t end = std::min(ex.size(), begin + 256);
            std::vector<std::size_t> idx(end - begin);
            std::iota(idx.begin(), idx.end(), begin);
            const Tensor logits = forward(work, make_batch(ex, idx), &gates);
            const std::size_t c = logits.dim(1);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                auto row = logits.values().subspan(r * c, c);
                const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
                correct += pred == ex[idx[r]].label ? 1 : 0;
            }
        }
        return ex.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(ex.size());
    };

    SensitivityResult result;
    result.record = run_training(dataset, spec, opt, loss_fn, clamp, eval);
    ScoreMetadata meta;
    meta.task = dataset.task.name;
    meta.epochs = spec.epochs;
    meta.l1_coeff = spec.l1_coeff;
    meta.seed = spec.seed;
    meta.source = "sensitivity";
    result.scores = scores_from_gates(gates, meta);
    return result;
}

FinetuneResult finetune(const EncoderModel& pretrained, const BinaryMask& mask, const Dataset& dataset,
                        const TrainSpec& spec, FinetuneMode mode) {
    spec.validate();
    try {
        check_mask_compatible(pretrained.config, mask);
    } catch (const ShapeError& e) {
        throw InputError(std::string("fine-tune mask incompatible with model: ") + e.what());
    }
    check_dataset(pretrained.config, dataset);

    FinetuneResult result;
    EncoderModel work = mode == FinetuneMode::Masked ? pretrained.clone() : compact(pretrained, mask);
    const BinaryMask active = mode == FinetuneMode::Masked ? mask : all_ones_mask(work.config);
    const GateSet gates = gates_from_mask(active);
    const GateSet* gate_ptr = mode == FinetuneMode::Masked ? &gates : nullptr;

    work.set_requires_grad(true);
    Optimizer opt(spec.optimizer, {ParamGroup{work.parameters(), spec.learning_rate}});
    result.record = run_training(
        dataset, spec, opt,
        [&](const TokenBatch& batch, const std::vector<std::int32_t>& labels) {
            return cross_entropy(forward(work, batch, gate_ptr), labels);
        },
        nullptr, [&] { return evaluate(work, dataset, &active); });
    work.set_requires_grad(false);

    result.model = mode == FinetuneMode::Masked ? zero_masked_weights(work, mask) : std::move(work);
    result.mask = active;
    return result;
}

double evaluate(const EncoderModel& model, std::span<const Example> examples, const BinaryMask* mask,
                std::size_t threads) {
    if (examples.empty()) return 0.0;
    std::optional<GateSet> gates;
    if (mask) gates = gates_from_mask(*mask);
    constexpr std::size_t kEvalBatch = 256;

    auto count_range = [&](std::size_t begin, std::size_t end) {
        NoGradGuard guard;
        std::size_t correct = 0;
        for (std::size_t b = begin; b < end; b += kEvalBatch) {
            const std::size_t e = std::min(end, b + kEvalBatch);
            std::vector<std::size_t> idx(e - b);
            std::iota(idx.begin(), idx.end(), b);
            const Tensor logits = forward(model, make_batch(examples, idx), gates ? &*gates : nullptr);
            const std::size_t c = logits.dim(1);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                auto row = logits.values().subspan(r * c, c);
                const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
                correct += pred == examples[idx[r]].label ? 1 : 0;
            }
        }
        return correct;
    };

    threads = std::max<std::size_t>(1, std::min(threads, examples.size()));
    std::vector<std::size_t> counts(threads, 0);
    if (threads == 1) {
        counts[0] = count_range(0, examples.size());
    } else {
        std::vector<std::jthread> workers;
        const std::size_t chunk = (examples.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = std::min(examples.size(), t * chunk);
            const std::size_t end = std::min(examples.size(), begin + chunk);
            workers.emplace_back([&, t, begin, end] { counts[t] = count_range(begin, end); });
        }
    }
    const std::size_t correct = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

double evaluate(const EncoderModel& model, const Dataset& dataset, const BinaryMask* mask, std::size_t threads) {
    return evaluate(model, std::span<const Example>(dataset.eval), mask, threads);
}

// ---------------------------------------------------------------------------

ExperimentResult sensi_experiment(const EncoderModel& pretrained, const Dataset& dataset,
                                  const std::vector<double>& budgets, const TrainSpec& analysis,
                                  const TrainSpec& finetune_spec, FinetuneMode mode) {
    ExperimentResult out;
    auto sens = sensitivity_epoch(pretrained, dataset, analysis);
    out.training_epochs += sens.record.epoch_losses.size();
    out.scores = std::move(sens.scores);
    out.analysis = std::move(sens.record);
    for (double budget : budgets) {
        auto [mask, threshold] = threshold_to_budget(out.scores, budget);
        auto ft = finetune(pretrained, mask, dataset, finetune_spec, mode);
        out.training_epochs += ft.record.epoch_losses.size();
        out.runs.push_back({budget, ft.record.final_metric, std::move(mask), std::move(ft.record)});
    }
    return out;
}

ExperimentResult mp_experiment(const EncoderModel& pretrained, const Dataset& dataset,
                               const std::vector<double>& budgets, const TrainSpec& finetune_spec, const MpSpec& mp,
                               FinetuneMode mode) {
    ExperimentResult out;
    out.scores = mp_scores(pretrained, mp);
    for (double budget : budgets) {
        auto [mask, threshold] = threshold_to_budget(out.scores, budget);
        auto ft = finetune(pretrained, mask, dataset, finetune_spec, mode);
        out.training_epochs += ft.record.epoch_losses.size();
        out.runs.push_back({budget, ft.record.final_metric, std::move(mask), std::move(ft.record)});
    }
    return out;
}

}  // namespace sensitrim
