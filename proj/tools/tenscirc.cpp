// tenscirc: build region graphs, compile/train/evaluate tensorized
// probabilistic circuits, sample from them, compress Tucker blocks, and
// benchmark architectures.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tenscirc/bench.hpp"
#include "tenscirc/dataset.hpp"
#include "tenscirc/factorization.hpp"
#include "tenscirc/fold.hpp"
#include "tenscirc/inference.hpp"
#include "tenscirc/learning.hpp"
#include "tenscirc/rng.hpp"
#include "tenscirc/serialize.hpp"

using namespace tenscirc;

namespace {

std::uint64_t default_seed() {
    if (const char* env = std::getenv("TENSCIRC_SEED")) {
        return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
    }
    return 1;
}

struct DataArgs {
    std::string idx_path;
    std::string idx_labels;
    std::string csv_path;
    std::string synth_spec;  // HxW:C:M
    int limit = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--idx", idx_path, "IDX image file (big-endian, magic 0x803)");
        cmd->add_option("--idx-labels", idx_labels, "optional IDX label file (magic 0x801)");
        cmd->add_option("--csv", csv_path, "CSV of reals -> Gaussian variables");
        cmd->add_option("--synth", synth_spec,
                        "mixture-of-products generator, HxW:categories:components");
        cmd->add_option("--limit", limit, "truncate the dataset to this many rows");
    }

    Dataset load(std::uint64_t fallback_seed) const {
        if (!idx_path.empty()) {
            return load_idx(idx_path, idx_labels, limit);
        }
        if (!csv_path.empty()) {
            Dataset d = load_csv(csv_path);
            if (limit > 0 && limit < d.size()) d = d.slice(0, limit);
            return d;
        }
        if (!synth_spec.empty()) {
            SynthSpec spec;
            char x, c1, c2;
            std::istringstream is(synth_spec);
            if (!(is >> spec.height >> x >> spec.width >> c1 >> spec.categories >> c2 >>
                  spec.components) ||
                x != 'x' || c1 != ':' || c2 != ':') {
                throw CLI::ValidationError("--synth expects HxW:categories:components");
            }
            int n = limit > 0 ? limit : 1000;
            return synth(spec, n, fallback_seed).data;
        }
        throw CLI::ValidationError("provide one of --idx, --csv, --synth");
    }
};

RegionGraph build_rg_for_cli(const std::string& kind, int height, int width, int d, int delta,
                             const std::vector<int>& order, std::uint64_t seed,
                             const Dataset* data) {
    if (kind == "lt") {
        int vars = d > 0 ? d : height * width;
        if (!order.empty()) return build_lt(vars, order);
        return build_lt(vars);
    }
    if (kind == "rnd") return build_rnd(d > 0 ? d : height * width, seed);
    if (kind == "pd") return build_pd(height, width, delta);
    if (kind == "qt2") return build_qt(height, width, 2);
    if (kind == "qt4" || kind == "qt") return build_qt(height, width, 4);
    if (kind == "qg") return build_qg(height, width);
    if (kind == "cl") {
        if (!data) throw CLI::ValidationError("--kind cl needs a dataset (--idx/--csv/--synth)");
        std::vector<int> rows(static_cast<std::size_t>(data->size()) *
                              static_cast<std::size_t>(data->var_count));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i] = static_cast<int>(data->values[i]);
        }
        std::vector<int> cats = data->domains;
        if (cats.empty()) cats.assign(static_cast<std::size_t>(data->var_count), 256);
        return build_cl(rows, data->size(), data->var_count, cats);
    }
    throw CLI::ValidationError("unknown region graph kind: " + kind);
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << text;
}

std::string metrics_csv(const TrainResult& result) {
    std::ostringstream os;
    os << "epoch,train_nll,valid_nll,bpd,wall_ms\n";
    for (const EpochStats& row : result.history) {
        os << row.epoch << ',' << row.train_nll << ',' << row.valid_nll << ','
           << row.valid_bpd << ',' << row.wall_ms << '\n';
    }
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tensorized probabilistic circuits: compile, train, sample, compress"};
    app.require_subcommand(1);

    // ---- rg build ---------------------------------------------------------
    auto* rg_cmd = app.add_subcommand("rg", "region graph operations");
    auto* rg_build = rg_cmd->add_subcommand("build", "construct a region graph");
    std::string rg_kind = "qg", rg_out, rg_dot;
    int rg_height = 4, rg_width = 4, rg_d = 0, rg_delta = 0;
    std::vector<int> rg_order;
    std::uint64_t rg_seed = default_seed();
    DataArgs rg_data;
    rg_build->add_option("--kind", rg_kind, "lt, rnd, pd, qt2, qt4, qg, cl")->required();
    rg_build->add_option("--height", rg_height, "image height (pixel builders)");
    rg_build->add_option("--width", rg_width, "image width (pixel builders)");
    rg_build->add_option("-d,--vars", rg_d, "variable count (lt, rnd)");
    rg_build->add_option("--delta", rg_delta, "pd cut step; 0 = single center cut per axis");
    rg_build->add_option("--order", rg_order, "lt variable ordering (default identity)");
    rg_build->add_option("--seed", rg_seed, "seed (rnd)");
    rg_build->add_option("-o,--out", rg_out, "output path for the textual export");
    rg_build->add_option("--dot", rg_dot, "also write a DOT file here");
    rg_data.attach(rg_build);

    // ---- compile ------------------------------------------------------------
    auto* compile_cmd = app.add_subcommand("compile", "compile a region graph into a circuit");
    std::string co_rg = "qg", co_layer = "cp", co_family = "categorical", co_reparam = "clamp";
    std::string co_out = "circuit.json";
    int co_height = 4, co_width = 4, co_d = 0, co_delta = 0, co_k = 8, co_categories = 256;
    int co_binomial_n = 255;
    bool co_learn_mixing = false;
    std::uint64_t co_seed = default_seed();
    DataArgs co_data;
    compile_cmd->add_option("--rg", co_rg, "lt, rnd, pd, qt2, qt4, qg, cl")->required();
    compile_cmd->add_option("--layer", co_layer, "tucker, cp, cpt, cps, cpxs")->required();
    compile_cmd->add_option("-K,--width-k", co_k, "layer width K")->required();
    compile_cmd->add_option("--height", co_height, "image height");
    compile_cmd->add_option("--width", co_width, "image width");
    compile_cmd->add_option("-d,--vars", co_d, "variable count (lt, rnd)");
    compile_cmd->add_option("--delta", co_delta, "pd cut step");
    compile_cmd->add_option("--family", co_family, "categorical, gaussian, binomial");
    compile_cmd->add_option("--categories", co_categories, "categorical domain size");
    compile_cmd->add_option("--binomial-n", co_binomial_n, "binomial trial count");
    compile_cmd->add_option("--reparam", co_reparam, "clamp, softmax, exp");
    compile_cmd->add_flag("--learn-mixing", co_learn_mixing,
                          "learnable dense mixing sums instead of frozen uniform");
    compile_cmd->add_option("--seed", co_seed, "parameter init seed");
    compile_cmd->add_option("-o,--out", co_out, "circuit output path");
    co_data.attach(compile_cmd);

    // ---- eval ----------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "log-likelihoods of a dataset under a circuit");
    std::string ev_circuit, ev_out, ev_marginalize;
    bool ev_bpd = false;
    DataArgs ev_data;
    eval_cmd->add_option("--circuit", ev_circuit, "circuit container path")->required();
    eval_cmd->add_option("--marginalize", ev_marginalize,
                         "comma-separated variable indices to sum out");
    eval_cmd->add_flag("--bpd", ev_bpd, "print dataset bits-per-dimension instead");
    eval_cmd->add_option("-o,--out", ev_out, "output CSV (default stdout)");
    ev_data.attach(eval_cmd);

    // ---- sample ----------------------------------------------------------------
    auto* sample_cmd = app.add_subcommand("sample", "exact ancestral samples");
    std::string sa_circuit, sa_out = "samples.csv";
    int sa_n = 100;
    bool sa_no_normalize = false;
    std::uint64_t sa_seed = default_seed();
    sample_cmd->add_option("--circuit", sa_circuit, "circuit container path")->required();
    sample_cmd->add_option("-n,--num", sa_n, "sample count");
    sample_cmd->add_option("--seed", sa_seed, "sampling seed");
    sample_cmd->add_flag("--no-normalize", sa_no_normalize,
                         "fail instead of renormalizing an unnormalized circuit");
    sample_cmd->add_option("--out", sa_out, "output CSV");

    // ---- train --------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "maximum-likelihood training");
    std::string tr_rg = "qg", tr_layer = "cp", tr_reparam = "clamp", tr_out = "model.json";
    std::string tr_metrics, tr_init_circuit;
    int tr_height = 4, tr_width = 4, tr_d = 0, tr_delta = 0, tr_k = 16, tr_categories = 256;
    int tr_batch = 256, tr_epochs = 200, tr_patience = 5;
    double tr_lr = 1e-2, tr_valid_frac = 0.1;
    bool tr_learn_mixing = false, tr_verbose = false;
    std::uint64_t tr_seed = default_seed();
    DataArgs tr_data;
    train_cmd->add_option("--rg", tr_rg, "lt, rnd, pd, qt2, qt4, qg, cl");
    train_cmd->add_option("--layer", tr_layer, "tucker, cp, cpt, cps, cpxs");
    train_cmd->add_option("-K,--width-k", tr_k, "layer width K");
    train_cmd->add_option("--height", tr_height, "image height");
    train_cmd->add_option("--width", tr_width, "image width");
    train_cmd->add_option("-d,--vars", tr_d, "variable count (lt, rnd)");
    train_cmd->add_option("--delta", tr_delta, "pd cut step");
    train_cmd->add_option("--categories", tr_categories, "categorical domain size");
    train_cmd->add_option("--reparam", tr_reparam, "clamp, softmax, exp");
    train_cmd->add_option("--lr", tr_lr, "Adam learning rate");
    train_cmd->add_option("--batch", tr_batch, "batch size");
    train_cmd->add_option("--epochs", tr_epochs, "epoch cap");
    train_cmd->add_option("--patience", tr_patience, "early-stopping patience");
    train_cmd->add_option("--valid-frac", tr_valid_frac, "validation fraction of the data");
    train_cmd->add_option("--seed", tr_seed, "seed for init, shuffling, synth");
    train_cmd->add_flag("--learn-mixing", tr_learn_mixing, "unfreeze mixing sums");
    train_cmd->add_flag("-v,--verbose", tr_verbose, "per-epoch progress on stderr");
    train_cmd->add_option("--init-circuit", tr_init_circuit,
                          "fine-tune this circuit instead of compiling fresh");
    train_cmd->add_option("-o,--out", tr_out, "trained circuit output path");
    train_cmd->add_option("--metrics", tr_metrics, "metrics CSV output path");
    tr_data.attach(train_cmd);

    // ---- compress -------------------------------------------------------------
    auto* compress_cmd = app.add_subcommand("compress", "NN-CP compression of Tucker blocks");
    std::string cp_circuit, cp_mode = "cp", cp_out = "compressed.json", cp_metrics;
    int cp_rank = 8, cp_finetune_epochs = 5, cp_batch = 256;
    double cp_lr = 1e-2, cp_valid_frac = 0.1;
    bool cp_finetune = false, cp_no_collapse = false;
    std::uint64_t cp_seed = default_seed();
    DataArgs cp_data;
    compress_cmd->add_option("--circuit", cp_circuit, "trained circuit path")->required();
    compress_cmd->add_option("--rank", cp_rank, "CP rank R")->required();
    compress_cmd->add_option("--mode", cp_mode, "cp, cps, cpxs");
    compress_cmd->add_flag("--finetune", cp_finetune, "fine-tune after compression");
    compress_cmd->add_option("--finetune-epochs", cp_finetune_epochs, "fine-tuning epoch cap");
    compress_cmd->add_option("--batch", cp_batch, "fine-tuning batch size");
    compress_cmd->add_option("--lr", cp_lr, "fine-tuning learning rate");
    compress_cmd->add_option("--valid-frac", cp_valid_frac, "validation fraction");
    compress_cmd->add_flag("--no-collapse", cp_no_collapse, "keep pre-collapse sum chains");
    compress_cmd->add_option("--seed", cp_seed, "ALS and fine-tuning seed");
    compress_cmd->add_option("-o,--out", cp_out, "compressed circuit output path");
    compress_cmd->add_option("--metrics", cp_metrics, "fine-tuning metrics CSV");
    cp_data.attach(compress_cmd);

    // ---- bench ------------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "timing and size report");
    BenchSpec bench_spec;
    std::string be_layer = "cp", be_out;
    bench_cmd->add_option("--rg", bench_spec.rg_kind, "lt, rnd, pd, qt2, qt4, qg");
    bench_cmd->add_option("--layer", be_layer, "tucker, cp, cpt, cps, cpxs");
    bench_cmd->add_option("-K,--width-k", bench_spec.k, "layer width K");
    bench_cmd->add_option("--height", bench_spec.height, "image height");
    bench_cmd->add_option("--width", bench_spec.width, "image width");
    bench_cmd->add_option("--categories", bench_spec.categories, "categorical domain size");
    bench_cmd->add_option("--batch", bench_spec.batch_size, "batch size");
    bench_cmd->add_option("--reps", bench_spec.reps, "timed repetitions (after 3 warmups)");
    bench_cmd->add_option("--guard", bench_spec.memory_guard_bytes, "memory guard in bytes");
    bench_cmd->add_option("--seed", bench_spec.seed, "seed");
    bench_cmd->add_option("-o,--out", be_out, "CSV output (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*rg_build) {
            Dataset data;
            const Dataset* data_ptr = nullptr;
            if (rg_kind == "cl") {
                data = rg_data.load(rg_seed);
                data_ptr = &data;
            }
            RegionGraph rg = build_rg_for_cli(rg_kind, rg_height, rg_width, rg_d, rg_delta,
                                              rg_order, rg_seed, data_ptr);
            auto violations = rg.validate();
            if (!violations.empty()) throw std::runtime_error(violations.front());
            write_text(rg_out, rg.to_text());
            if (!rg_dot.empty()) write_text(rg_dot, rg.to_dot());
            std::cerr << "regions=" << rg.regions().size()
                      << " partitions=" << rg.partitions().size()
                      << " tree=" << (rg.is_tree() ? "yes" : "no") << "\n";
        } else if (*compile_cmd) {
            Dataset data;
            const Dataset* data_ptr = nullptr;
            if (co_rg == "cl") {
                data = co_data.load(co_seed);
                data_ptr = &data;
            }
            RegionGraph rg = build_rg_for_cli(co_rg, co_height, co_width, co_d, co_delta, {},
                                              co_seed, data_ptr);
            CompileOptions opt;
            opt.width = co_k;
            opt.block = block_kind_from_string(co_layer);
            opt.family = family_from_string(co_family);
            opt.categories = co_categories;
            opt.binomial_n = co_binomial_n;
            opt.reparam = reparam_from_string(co_reparam);
            opt.fold = true;
            opt.learn_mixing = co_learn_mixing;
            opt.seed = co_seed;
            opt.rg_name = co_rg;
            Circuit c = compile(rg, opt);
            save_circuit(c, co_out);
            std::cerr << c.nomenclature << ": layers=" << c.layers().size()
                      << " parameters=" << c.parameter_count() << " edges=" << c.edge_count()
                      << "\n";
        } else if (*eval_cmd) {
            Circuit c = load_circuit(ev_circuit);
            Dataset data = ev_data.load(default_seed());
            if (ev_bpd) {
                std::cout << bpd(c, data) << "\n";
            } else {
                Batch batch = data.full_batch();
                if (!ev_marginalize.empty()) {
                    std::istringstream is(ev_marginalize);
                    std::string item;
                    while (std::getline(is, item, ',')) {
                        int var = std::stoi(item);
                        for (int row = 0; row < batch.size; ++row) {
                            batch.marginalized[static_cast<std::size_t>(row) * batch.var_count +
                                               var] = 1;
                        }
                    }
                }
                auto out = forward_log(c, batch);
                std::ostringstream os;
                os << "log_likelihood\n";
                os.precision(17);
                for (double v : out) os << v << "\n";
                write_text(ev_out, os.str());
            }
        } else if (*sample_cmd) {
            Circuit c = load_circuit(sa_circuit);
            std::vector<std::vector<double>> rows;
            try {
                rows = sample(c, sa_n, sa_seed);
            } catch (const std::invalid_argument&) {
                if (sa_no_normalize) throw;
                rows = sample(normalize(c), sa_n, sa_seed);
            }
            std::ostringstream os;
            os.precision(17);
            for (const auto& row : rows) {
                for (std::size_t j = 0; j < row.size(); ++j) {
                    if (j > 0) os << ',';
                    os << row[j];
                }
                os << '\n';
            }
            write_text(sa_out, os.str());
        } else if (*train_cmd) {
            Dataset data = tr_data.load(tr_seed);
            int n = data.size();
            int valid_n = std::max(1, static_cast<int>(n * tr_valid_frac));
            Dataset train_set = data.slice(0, n - valid_n);
            Dataset valid_set = data.slice(n - valid_n, n);
            Circuit c;
            if (!tr_init_circuit.empty()) {
                c = load_circuit(tr_init_circuit);
            } else {
                const Dataset* data_ptr = tr_rg == "cl" ? &train_set : nullptr;
                RegionGraph rg = build_rg_for_cli(tr_rg, tr_height, tr_width, tr_d, tr_delta,
                                                  {}, tr_seed, data_ptr);
                CompileOptions opt;
                opt.width = tr_k;
                opt.block = block_kind_from_string(tr_layer);
                opt.family = data.family;
                opt.categories = tr_categories;
                opt.reparam = reparam_from_string(tr_reparam);
                opt.fold = true;
                opt.learn_mixing = tr_learn_mixing;
                opt.seed = tr_seed;
                opt.rg_name = tr_rg;
                c = compile(rg, opt);
            }
            TrainConfig cfg;
            cfg.learning_rate = tr_lr;
            cfg.batch_size = tr_batch;
            cfg.max_epochs = tr_epochs;
            cfg.patience = tr_patience;
            cfg.seed = tr_seed;
            cfg.verbose = tr_verbose;
            TrainResult result = train(c, train_set, valid_set, cfg);
            save_circuit(c, tr_out);
            write_text(tr_metrics.empty() ? "-" : tr_metrics, metrics_csv(result));
            std::cerr << c.nomenclature << ": best valid nll " << result.best_valid_nll
                      << " at epoch " << result.best_epoch
                      << (result.aborted_non_finite ? " (aborted on non-finite loss)" : "")
                      << "\n";
        } else if (*compress_cmd) {
            Circuit c = load_circuit(cp_circuit);
            CompressOptions opt;
            opt.rank = cp_rank;
            if (cp_mode == "cp") opt.share = ShareMode::None;
            else if (cp_mode == "cps") opt.share = ShareMode::CPS;
            else if (cp_mode == "cpxs") opt.share = ShareMode::CPXS;
            else throw CLI::ValidationError("--mode must be cp, cps or cpxs");
            opt.collapse = !cp_no_collapse;
            opt.als.seed = cp_seed;
            CompressReport report;
            Circuit compressed = compress_tucker_circuit(c, opt, &report);
            if (cp_finetune) {
                Dataset data = cp_data.load(cp_seed);
                int n = data.size();
                int valid_n = std::max(1, static_cast<int>(n * cp_valid_frac));
                Dataset train_set = data.slice(0, n - valid_n);
                Dataset valid_set = data.slice(n - valid_n, n);
                TrainConfig cfg;
                cfg.learning_rate = cp_lr;
                cfg.batch_size = cp_batch;
                cfg.max_epochs = cp_finetune_epochs;
                cfg.patience = cp_finetune_epochs;
                cfg.seed = cp_seed;
                TrainResult result = train(compressed, train_set, valid_set, cfg);
                if (!cp_metrics.empty()) write_text(cp_metrics, metrics_csv(result));
            }
            save_circuit(compressed, cp_out);
            double worst = 0.0;
            for (double r : report.block_residuals) worst = std::max(worst, r);
            std::cerr << "compressed " << report.block_residuals.size()
                      << " block groups at rank " << cp_rank << ", worst residual " << worst
                      << "; parameters " << c.parameter_count() << " -> "
                      << compressed.parameter_count() << "\n";
        } else if (*bench_cmd) {
            bench_spec.layer = block_kind_from_string(be_layer);
            BenchReport report = bench(bench_spec);
            std::ostringstream os;
            os << BenchReport::csv_header() << '\n' << report.csv_row() << '\n';
            write_text(be_out, os.str());
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
