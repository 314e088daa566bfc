// Copyright (C) 2026 The VTW Runtime Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "vtw/analytics.hpp"
#include "vtw/calibration.hpp"
#include "vtw/digest.hpp"
#include "vtw/errors.hpp"
#include "vtw/model.hpp"
#include "vtw/sequence.hpp"
#include "vtw/withdrawal.hpp"

namespace vtw::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::vector<TokenId> encode_bytes(std::string_view text, std::size_t vocab_size) {
    if (vocab_size == 0) {
        throw ValidationError("encode_bytes: vocab_size must be >= 1");
    }
    std::vector<TokenId> ids;
    for (unsigned char c : text) {
        ids.push_back(static_cast<TokenId>(c % vocab_size));
    }
    return ids;
}

namespace {

fs::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create output directory " + dir);
    }
    return fs::path(dir);
}

ojson input_entry(const std::string& path) {
    return {{"file", fs::path(path).filename().string()}, {"sha256", sha256_file(path)}};
}

/// Written next to every output; equal manifests imply byte-equal outputs.
void write_manifest(const fs::path& path, std::string_view command, ojson config, ojson seeds,
                    ojson inputs) {
    ojson m;
    m["command"] = command;
    m["config"] = std::move(config);
    m["seeds"] = std::move(seeds);
    m["inputs"] = std::move(inputs);
    m["tool_version"] = kToolVersion;
    write_file(path, m.dump(2) + "\n");
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
    return parse_dataset(read_file(path));
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : workers) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::size_t resolve_k(const std::optional<std::size_t>& k, const ModelConfig& config) {
    const std::size_t value = k.value_or(static_cast<std::size_t>(config.num_layers) + 1);
    WithdrawalPolicy::at(value).validate(config);
    return value;
}

std::string fmt_kl(double v) { return fmt::format("{:.17g}", v); }

// ---------------------------------------------------------------------------

struct InitModelArgs {
    std::string config_path;
    std::string out_path;
};

int cmd_init_model(const InitModelArgs& a, std::ostream& out) {
    const ModelConfig config = ModelConfig::parse(read_file(a.config_path));
    const ModelWeights weights = init_model(config);
    const std::string bytes = serialize_weights(weights);
    write_file(a.out_path, bytes);

    out << fmt::format("wrote {} ({} bytes, sha256 {})\n", a.out_path, bytes.size(),
                       sha256_hex(bytes));
    ojson tensors = ojson::array();
    for (const auto& t : tensor_manifest(weights)) {
        const std::string_view raw(reinterpret_cast<const char*>(t.data.data()),
                                   t.data.size() * sizeof(float));
        const std::string digest = sha256_hex(raw);
        out << fmt::format("  {:<24} {:>5} x {:<5} {}\n", t.name, t.rows, t.cols, digest);
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"sha256", digest}});
    }
    ojson cfg = ojson::parse(config.to_canonical_text());
    cfg["tensors"] = tensors;
    cfg["container_sha256"] = sha256_hex(bytes);
    write_manifest(a.out_path + ".manifest.json", "init-model", cfg, {{"weights", config.seed}},
                   {{"config", input_entry(a.config_path)}});
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct MakeDatasetArgs {
    std::string out_path;
    std::size_t count = 20;
    std::uint64_t seed = 7;
    std::size_t vocab = 256;
    SyntheticLayout layout;
    std::string instruction_text;
};

int cmd_make_dataset(const MakeDatasetArgs& a, std::ostream& out) {
    auto records = make_synthetic_dataset(a.count, a.vocab, a.seed, a.layout);
    if (!a.instruction_text.empty()) {
        const auto ids = encode_bytes(a.instruction_text, a.vocab);
        for (auto& r : records) {
            r.instruction_ids = ids;
        }
    }
    std::string text;
    for (const auto& r : records) {
        text += record_to_json(r) + "\n";
    }
    write_file(a.out_path, text);
    out << fmt::format("wrote {} records to {}\n", records.size(), a.out_path);
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string model_path;
    std::string dataset_path;
    std::string out_dir;
    std::optional<std::size_t> k;
    std::string pe = "keep";
    std::optional<std::size_t> max_new;
    std::optional<TokenId> stop_id;
    bool profile = false;
    bool count_flops = false;
    bool latency = false;
    std::size_t jobs = 1;
};

struct RecordOutput {
    std::vector<TokenId> tokens;
    AttentionProfile profile;
    ojson cost;
    bool cost_pass = true;
    double prefill_ms = 0.0;
    double decode_ms = 0.0;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const ModelWeights weights = load_weights(a.model_path);
    const auto records = load_dataset(a.dataset_path);
    const auto& config = weights.config;
    const std::size_t k = resolve_k(a.k, config);
    const PositionPolicy pe = parse_position_policy(a.pe);
    const TokenId stop_id = a.stop_id.value_or(config.vocab_size - 1);
    const WithdrawalPolicy policy = WithdrawalPolicy::at(k, pe);
    const fs::path dir = prepare_out_dir(a.out_dir);

    std::vector<RecordOutput> results(records.size());
    parallel_for(records.size(), a.jobs, [&](std::size_t i) {
        using clock = std::chrono::steady_clock;
        const auto& record = records[i];
        const auto seq = build_record_sequence(record, weights);
        OpCounter vtw_counter;
        const auto t0 = clock::now();
        DecodeState state =
            vtw_prefill(weights, seq, policy, a.profile, a.count_flops ? &vtw_counter : nullptr);
        const auto t1 = clock::now();
        RecordOutput& r = results[i];
        r.tokens = vtw_decode(weights, state, a.max_new.value_or(record.max_new_tokens), stop_id);
        const auto t2 = clock::now();
        r.prefill_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        r.decode_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        r.profile = std::move(state.profile);
        if (a.count_flops) {
            OpCounter base_counter;
            vtw_prefill(weights, seq, WithdrawalPolicy::baseline(config), false, &base_counter);
            const auto report = vtw_cost_report(config, seq.size(), seq.count(SegmentType::Vision),
                                                k, &base_counter, &vtw_counter);
            const auto summary = measured_vs_analytical(base_counter, vtw_counter, report);
            r.cost = cost_report_json(report, &summary);
            r.cost_pass = summary.pass;
        }
    });

    std::string jsonl;
    for (std::size_t i = 0; i < results.size(); ++i) {
        jsonl += ojson{{"record", i}, {"tokens", results[i].tokens}}.dump() + "\n";
    }
    write_file(dir / "generations.jsonl", jsonl);

    if (a.profile) {
        AttentionProfile merged;
        for (const auto& r : results) {
            merged.merge(r.profile);
        }
        if (!merged.empty()) {
            write_file(dir / "layer_attention.csv", layer_attention_table(merged));
            write_file(dir / "output_attention.csv", output_attention_table(merged));
        }
    }
    bool cost_pass = true;
    if (a.count_flops) {
        ojson reports = ojson::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            ojson entry = {{"record", i}};
            entry.update(results[i].cost);
            reports.push_back(std::move(entry));
            cost_pass = cost_pass && results[i].cost_pass;
        }
        write_file(dir / "cost_report.json",
                   ojson{{"records", reports}, {"per_term_pass", cost_pass}}.dump(2) + "\n");
    }
    if (a.latency) {
        std::string csv = "record,prefill_ms,decode_ms\n";
        for (std::size_t i = 0; i < results.size(); ++i) {
            csv += fmt::format("{},{:.3f},{:.3f}\n", i, results[i].prefill_ms, results[i].decode_ms);
        }
        write_file(dir / "latency.csv", csv);
    }

    ojson cfg = {{"k", k},
                 {"pe", position_policy_name(pe)},
                 {"max_new", a.max_new ? ojson(*a.max_new) : ojson("per-record")},
                 {"stop_id", stop_id},
                 {"profile", a.profile},
                 {"count_flops", a.count_flops},
                 {"latency", a.latency}};
    write_manifest(dir / "manifest.json", "generate", cfg, {{"model", config.seed}},
                   {{"model", input_entry(a.model_path)}, {"dataset", input_entry(a.dataset_path)}});
    out << fmt::format("generated {} records with K={} ({}) into {}\n", records.size(), k,
                       position_policy_name(pe), a.out_dir);
    if (a.count_flops) {
        out << (cost_pass ? "per-term MAC check: PASS\n" : "per-term MAC check: FAIL\n");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
    std::string model_path;
    std::string dataset_path;
    std::string out_dir;
    CalibrationConfig config;
    std::string pe = "keep";
};

int cmd_calibrate(CalibrateArgs a, std::ostream& out, std::ostream& err) {
    const ModelWeights weights = load_weights(a.model_path);
    const auto records = load_dataset(a.dataset_path);
    a.config.positions = parse_position_policy(a.pe);
    const fs::path dir = prepare_out_dir(a.out_dir);
    const auto report = search_withdrawal_layer(weights, records, a.config);
    write_file(dir / "calibration.json", calibration_report_json(report));
    write_file(dir / "calibration_kl.csv", calibration_report_csv(report));
    ojson cfg = {{"eta", a.config.eta},
                 {"subset_size", a.config.subset_size},
                 {"k_min", a.config.k_min},
                 {"pe", position_policy_name(a.config.positions)}};
    write_manifest(dir / "manifest.json", "calibrate", cfg,
                   {{"model", weights.config.seed}, {"sampling", a.config.sampling_seed}},
                   {{"model", input_entry(a.model_path)}, {"dataset", input_entry(a.dataset_path)}});
    if (!report.chosen_k) {
        err << fmt::format(
            "no layer in [{}, {}] reaches mean KL < {}; smallest evaluated mean KL is {}. "
            "Try a larger --eta.\n",
            a.config.k_min, weights.config.num_layers, a.config.eta,
            report.per_k.empty()
                ? std::string("n/a")
                : fmt_kl(std::min_element(report.per_k.begin(), report.per_k.end(),
                                          [](const auto& x, const auto& y) {
                                              return x.mean_kl < y.mean_kl;
                                          })->mean_kl));
        return kExitNotFound;
    }
    out << fmt::format("chosen K = {} (eta {}, {} records)\n", *report.chosen_k, a.config.eta,
                       report.subset_ids.size());
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
    std::string model_path;
    std::string dataset_path;
    std::string out_dir;
    std::string mode;
    std::optional<std::size_t> k;
    std::size_t jobs = 1;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const ModelWeights weights = load_weights(a.model_path);
    const auto records = load_dataset(a.dataset_path);
    const auto mode = parse_ablation_mode(a.mode);
    const std::size_t k = resolve_k(a.k, weights.config);
    const fs::path dir = prepare_out_dir(a.out_dir);

    std::vector<double> kls(records.size());
    parallel_for(records.size(), a.jobs, [&](std::size_t i) {
        const auto p = baseline_distribution(weights, records[i]);
        const auto q = softmax_row(run_ablation(weights, records[i], mode, k));
        kls[i] = kl_divergence(p, q);
    });
    std::string csv = "record,kl_vs_baseline\n";
    for (std::size_t i = 0; i < kls.size(); ++i) {
        csv += fmt::format("{},{}\n", i, fmt_kl(kls[i]));
    }
    write_file(dir / "ablation.csv", csv);
    write_manifest(dir / "manifest.json", "ablate", {{"mode", ablation_mode_name(mode)}, {"k", k}},
                   {{"model", weights.config.seed}},
                   {{"model", input_entry(a.model_path)}, {"dataset", input_entry(a.dataset_path)}});
    out << fmt::format("ablation {} at K={} over {} records into {}\n", ablation_mode_name(mode), k,
                       records.size(), a.out_dir);
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct CostArgs {
    std::string out_dir;
    std::uint32_t layers = 32;
    std::uint32_t hidden = 4096;
    std::uint32_t ffn_factor = 4;
    std::uint64_t s_full = 644;
    std::uint64_t n_vis = 576;
    std::size_t k = 16;
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
    ModelConfig config;
    config.num_layers = a.layers;
    config.hidden_size = a.hidden;
    config.ffn_factor = a.ffn_factor;
    const fs::path dir = prepare_out_dir(a.out_dir);
    const auto report = vtw_cost_report(config, a.s_full, a.n_vis, a.k);
    ojson j = cost_report_json(report);
    j["hardware_tflops_baseline"] = 2.0 * static_cast<double>(report.analytical_flops_baseline) / 1e12;
    j["hardware_tflops_vtw"] = 2.0 * static_cast<double>(report.analytical_flops_vtw) / 1e12;
    write_file(dir / "cost_report.json", j.dump(2) + "\n");
    write_manifest(dir / "manifest.json", "cost",
                   {{"layers", a.layers}, {"hidden", a.hidden}, {"ffn_factor", a.ffn_factor},
                    {"s_full", a.s_full}, {"n_vis", a.n_vis}, {"k", a.k}},
                   ojson::object(), ojson::object());
    out << fmt::format("K={} ratio {:.4f} ({:.2f}%), baseline {:.3f} TFLOPs, vtw {:.3f} TFLOPs\n",
                       a.k, report.ratio_vtw_over_baseline, 100.0 * report.ratio_vtw_over_baseline,
                       j["hardware_tflops_baseline"].get<double>(),
                       j["hardware_tflops_vtw"].get<double>());
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Vision-token withdrawal runtime for toy multimodal decoders", "vtw"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    InitModelArgs init_args;
    auto* init = app.add_subcommand("init-model", "Create a seeded weight container");
    init->add_option("--config", init_args.config_path, "Model config JSON")->required();
    init->add_option("--out", init_args.out_path, "Output container path")->required();

    MakeDatasetArgs ds_args;
    auto* ds = app.add_subcommand("make-dataset", "Write a synthetic JSON-lines dataset");
    ds->add_option("--out", ds_args.out_path, "Output JSONL path")->required();
    ds->add_option("--count", ds_args.count, "Number of records");
    ds->add_option("--seed", ds_args.seed, "Generator seed");
    ds->add_option("--vocab", ds_args.vocab, "Vocabulary size");
    ds->add_option("--n-sys", ds_args.layout.n_system, "System tokens per record");
    ds->add_option("--n-vis", ds_args.layout.n_vision, "Vision tokens per record");
    ds->add_option("--n-ins", ds_args.layout.n_instruction, "Instruction tokens per record");
    ds->add_option("--max-new", ds_args.layout.max_new_tokens, "max_new_tokens per record");
    ds->add_option("--instruction-text", ds_args.instruction_text,
                   "Replace instructions with byte-mapped text (demo only)");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Greedy generation with optional withdrawal");
    gen->add_option("--model", gen_args.model_path)->required();
    gen->add_option("--dataset", gen_args.dataset_path)->required();
    gen->add_option("--out", gen_args.out_dir, "Output directory")->required();
    gen->add_option("--k", gen_args.k, "Withdrawal layer (default: N+1, no withdrawal)");
    gen->add_option("--pe", gen_args.pe, "Position policy after withdrawal: keep|rearrange");
    gen->add_option("--max-new", gen_args.max_new, "Override per-record max_new_tokens");
    gen->add_option("--stop-id", gen_args.stop_id, "Stop token (default: vocab_size-1)");
    gen->add_flag("--profile", gen_args.profile, "Write attention-share tables");
    gen->add_flag("--count-flops", gen_args.count_flops, "Write instrumented cost report");
    gen->add_flag("--latency", gen_args.latency, "Write wall-clock timings (not deterministic)");
    gen->add_option("--jobs", gen_args.jobs, "Worker threads");

    CalibrateArgs cal_args;
    auto* cal = app.add_subcommand("calibrate", "Search the withdrawal layer by KL threshold");
    cal->add_option("--model", cal_args.model_path)->required();
    cal->add_option("--dataset", cal_args.dataset_path)->required();
    cal->add_option("--out", cal_args.out_dir, "Output directory")->required();
    cal->add_option("--eta", cal_args.config.eta, "KL threshold");
    cal->add_option("--subset-size", cal_args.config.subset_size, "Calibration subset size");
    cal->add_option("--seed", cal_args.config.sampling_seed, "Subset sampling seed");
    cal->add_option("--k-min", cal_args.config.k_min, "First layer to try");
    cal->add_option("--pe", cal_args.pe, "Position policy: keep|rearrange");

    AblateArgs abl_args;
    auto* abl = app.add_subcommand("ablate", "KL of an ablation setting against the baseline");
    abl->add_option("--model", abl_args.model_path)->required();
    abl->add_option("--dataset", abl_args.dataset_path)->required();
    abl->add_option("--out", abl_args.out_dir, "Output directory")->required();
    abl->add_option("--mode", abl_args.mode, "no_image|noncontent|original")->required();
    abl->add_option("--k", abl_args.k, "Withdrawal layer (default: N+1)");
    abl->add_option("--jobs", abl_args.jobs, "Worker threads");

    CostArgs cost_args;
    auto* cost = app.add_subcommand("cost", "Analytical cost split for arbitrary model sizes");
    cost->add_option("--out", cost_args.out_dir, "Output directory")->required();
    cost->add_option("--layers", cost_args.layers);
    cost->add_option("--hidden", cost_args.hidden);
    cost->add_option("--ffn-factor", cost_args.ffn_factor);
    cost->add_option("--s-full", cost_args.s_full);
    cost->add_option("--n-vis", cost_args.n_vis);
    cost->add_option("--k", cost_args.k);

    std::vector<std::string> argv_storage;
    argv_storage.emplace_back("vtw");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : argv_storage) {
        argv.push_back(s.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (*init) {
            return cmd_init_model(init_args, out);
        }
        if (*ds) {
            return cmd_make_dataset(ds_args, out);
        }
        if (*gen) {
            return cmd_generate(gen_args, out);
        }
        if (*cal) {
            return cmd_calibrate(cal_args, out, err);
        }
        if (*abl) {
            return cmd_ablate(abl_args, out);
        }
        if (*cost) {
            return cmd_cost(cost_args, out);
        }
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitValidation;
}

}  // namespace vtw::cli
