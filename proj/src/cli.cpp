#include "lmmreg/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmmreg/bench.hpp"
#include "lmmreg/em.hpp"
#include "lmmreg/errors.hpp"
#include "lmmreg/io.hpp"

namespace lmmreg {

namespace {

namespace fs = std::filesystem;

std::optional<double> parse_snr(const std::string& s) {
    if (s == "none" || s.empty()) return std::nullopt;
    return std::stod(s);
}

SolverKind parse_solver(const std::string& s) {
    if (s == "lpa") return SolverKind::LPA;
    if (s == "admm") return SolverKind::ADMM;
    throw InvalidInput("unknown solver '" + s + "' (expected lpa or admm)");
}

void write_result_csv(const ResultRecord& rec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "view,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz,"
           "scale_b,iterations,converged,solver\n";
    for (std::size_t i = 0; i < rec.transforms.size(); ++i) {
        const auto& T = rec.transforms[i];
        out << i;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                out << ',' << format_double(T.rotation(r, c));
        for (int c = 0; c < 3; ++c)
            out << ',' << format_double(T.translation[c]);
        out << ',' << format_double(rec.scale_b) << ',' << rec.iterations
            << ',' << (rec.converged ? "true" : "false") << ','
            << csv_field(rec.solver) << '\n';
    }
}

int cmd_register(const std::vector<std::string>& inputs,
                 const std::string& out_path, const std::string& solver,
                 int max_iters, double tol, std::uint64_t seed, int anchor,
                 double rho, const std::string& gt_path,
                 const std::string& aligned_dir, const std::string& format,
                 bool verbose) {
    std::vector<PointCloud> clouds;
    for (const auto& path : inputs) clouds.push_back(read_cloud(path));

    EmConfig cfg;
    cfg.solver = parse_solver(solver);
    cfg.max_em_iters = max_iters;
    cfg.tol_transform = tol;
    cfg.seed = seed;
    cfg.anchor_index = anchor;
    cfg.admm_opts.rho = rho;

    ProgressCallback progress;
    if (verbose)
        progress = [](const ProgressRecord& p) {
            std::fprintf(stderr,
                         "iter %3d  -f %.6e  b %.6e  max_change %.3e\n",
                         p.iteration, p.neg_obj, p.b, p.max_change);
        };

    const auto t0 = std::chrono::steady_clock::now();
    const auto [state, table] = register_clouds(clouds, cfg, progress);
    const auto t1 = std::chrono::steady_clock::now();

    // Converged when the transform-change criterion tripped before the cap.
    const bool converged = state.iteration < cfg.max_em_iters;

    ResultRecord rec;
    rec.transforms = state.transforms;
    rec.scale_b = state.scale_b;
    rec.iterations = state.iteration;
    rec.converged = converged;
    rec.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    rec.solver = solver;

    if (!gt_path.empty()) {
        const GroundTruth gt = load_ground_truth(gt_path);
        const TrialResult scored = evaluate(state, gt, anchor);
        rec.e_R = scored.e_R;
        rec.e_t = scored.e_t;
    }

    if (format == "csv")
        write_result_csv(rec, out_path);
    else
        save_result(rec, out_path);

    if (!aligned_dir.empty()) {
        fs::create_directories(aligned_dir);
        for (std::size_t i = 0; i < clouds.size(); ++i) {
            PointCloud moved = clouds[i];
            for (auto& p : moved.points) p = apply(state.transforms[i], p);
            write_cloud(moved,
                        (fs::path(aligned_dir) /
                         ("aligned_" + std::to_string(i) + ".ply"))
                            .string(),
                        CloudFormat::PlyBinary);
        }
    }

    if (rec.e_R)
        std::printf("e_R %.6f e_t %.6f\n", *rec.e_R, *rec.e_t);
    std::printf("%s after %d iterations, b %.3e, result written to %s\n",
                converged ? "converged" : "did not converge", rec.iterations,
                rec.scale_b, out_path.c_str());
    return converged ? 0 : 2;
}

int cmd_synth(const std::string& source, const std::string& out_dir,
              PerturbSpec spec, const std::string& snr_str, bool ascii) {
    spec.snr_db = parse_snr(snr_str);
    const PointCloud base = read_cloud(source);
    const auto [views, gt] = make_views(base, spec);

    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < views.size(); ++i)
        write_cloud(views[i],
                    (fs::path(out_dir) / ("view_" + std::to_string(i) + ".ply"))
                        .string(),
                    ascii ? CloudFormat::PlyAscii : CloudFormat::PlyBinary);
    save_ground_truth(gt, (fs::path(out_dir) / "gt.json").string());
    std::printf("wrote %zu views + gt.json to %s\n", views.size(),
                out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& result_path, const std::string& gt_path,
             int anchor, bool verbose) {
    const ResultRecord rec = load_result(result_path);
    const GroundTruth gt = load_ground_truth(gt_path);
    LmmState state;
    state.transforms = rec.transforms;
    const TrialResult scored = evaluate(state, gt, anchor);
    if (verbose)
        for (std::size_t i = 0; i < scored.per_set_rot.size(); ++i)
            std::printf("view %zu  e_R %.6f  e_t %.6f\n", i,
                        scored.per_set_rot[i], scored.per_set_trans[i]);
    std::printf("e_R %.6f e_t %.6f\n", scored.e_R, scored.e_t);
    return 0;
}

int cmd_bench(const std::string& source, const std::string& sweep,
              const std::string& values_str, const std::string& solvers_str,
              int trials, std::uint64_t seed, const std::string& out_path,
              PerturbSpec base_spec, const std::string& snr_str, int max_iters,
              bool no_timing) {
    base_spec.snr_db = parse_snr(snr_str);
    const PointCloud base = read_cloud(source);

    std::vector<double> values;
    {
        std::stringstream ss(values_str);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) values.push_back(std::stod(tok));
    }
    if (values.empty()) throw InvalidInput("bench: --values is empty");

    std::vector<PerturbSpec> specs;
    for (double v : values) {
        PerturbSpec s = base_spec;
        if (sweep == "outliers")
            s.outlier_fraction = v / 100.0;  // percent, matching the tables
        else if (sweep == "noise")
            s.snr_db = v;
        else
            throw InvalidInput("bench: --sweep must be outliers or noise");
        specs.push_back(s);
    }

    std::vector<SolverKind> solvers;
    if (solvers_str == "both")
        solvers = {SolverKind::LPA, SolverKind::ADMM};
    else
        solvers = {parse_solver(solvers_str)};

    EmConfig cfg;
    cfg.max_em_iters = max_iters;
    const SweepTable table = run_sweep(base, specs, solvers, trials, seed, cfg);

    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + out_path + "'");
    out << "sweep_var,solver,trial,e_R,e_t,wall_time_s,converged\n";
    for (const auto& row : table.rows) {
        out << format_double(values[row.spec_index]) << ','
            << csv_field(row.solver) << ',' << row.trial << ','
            << (row.ok ? format_double(row.e_R) : "nan") << ','
            << (row.ok ? format_double(row.e_t) : "nan") << ','
            << format_double(no_timing ? 0.0 : row.wall_time_s) << ','
            << (row.ok ? "true" : "false") << '\n';
    }

    const fs::path summary_path =
        fs::path(out_path).replace_extension(".summary.csv");
    std::ofstream sum(summary_path, std::ios::binary);
    sum << "sweep_var,solver,median_e_R,median_e_t,completed\n";
    for (const auto& cell : table.cells)
        sum << format_double(values[cell.spec_index]) << ','
            << csv_field(cell.solver) << ',' << format_double(cell.median_e_R)
            << ',' << format_double(cell.median_e_t) << ',' << cell.completed
            << '\n';

    std::printf("wrote %zu rows to %s (summary: %s)\n", table.rows.size(),
                out_path.c_str(), summary_path.string().c_str());
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Multi-view L1 point-set registration"};
    app.require_subcommand(1);

    // register
    auto* reg = app.add_subcommand("register",
                                   "Jointly align point clouds");
    std::vector<std::string> reg_inputs;
    std::string reg_out = "result.json", reg_solver = "lpa", reg_gt,
                reg_aligned, reg_format = "json";
    int reg_max_iters = 50, reg_anchor = 0;
    double reg_tol = 1e-7, reg_rho = 1.0;
    std::uint64_t reg_seed = 0;
    bool reg_verbose = false;
    reg->add_option("inputs", reg_inputs, "Input clouds (>= 2)")
        ->required()
        ->expected(-2);
    reg->add_option("--out", reg_out, "Result record path");
    reg->add_option("--solver", reg_solver, "lpa | admm");
    reg->add_option("--max-iters", reg_max_iters, "EM iteration cap");
    reg->add_option("--tol", reg_tol, "Transform-change stopping tolerance");
    reg->add_option("--seed", reg_seed, "Random seed");
    reg->add_option("--anchor", reg_anchor, "Anchor view index");
    reg->add_option("--rho", reg_rho, "ADMM penalty");
    reg->add_option("--gt", reg_gt, "Ground-truth JSON for scoring");
    reg->add_option("--aligned-dir", reg_aligned,
                    "Directory for aligned output clouds");
    reg->add_option("--format", reg_format, "Result format: json | csv");
    reg->add_flag("--verbose", reg_verbose, "Per-iteration progress");

    // synth
    auto* synth = app.add_subcommand("synth",
                                     "Generate perturbed views + ground truth");
    std::string synth_source, synth_out = ".", synth_snr = "70";
    PerturbSpec synth_spec;
    synth_spec.outlier_fraction = 0.3;
    bool synth_ascii = false;
    synth->add_option("source", synth_source, "Source cloud")->required();
    synth->add_option("--out-dir", synth_out, "Output directory");
    synth->add_option("--views", synth_spec.views, "Number of views");
    synth->add_option("--points", synth_spec.n_points, "Downsample target");
    synth->add_option("--crop", synth_spec.crop_fraction, "Crop fraction");
    synth->add_option("--rot-range", synth_spec.rot_range_deg,
                      "Per-axis rotation range, degrees");
    synth->add_option("--trans-range", synth_spec.trans_range,
                      "Per-axis translation range");
    synth->add_option("--snr", synth_snr, "SNR in dB, or 'none'");
    synth->add_option("--outliers", synth_spec.outlier_fraction,
                      "Outlier fraction");
    synth->add_option("--seed", synth_spec.seed, "Random seed");
    synth->add_flag("--ascii", synth_ascii, "ASCII PLY output");

    // eval
    auto* eval = app.add_subcommand("eval", "Score a result against GT");
    std::string eval_result, eval_gt;
    int eval_anchor = 0;
    bool eval_verbose = false;
    eval->add_option("result", eval_result, "Result record JSON")->required();
    eval->add_option("gt", eval_gt, "Ground-truth JSON")->required();
    eval->add_option("--anchor", eval_anchor, "Anchor view index");
    eval->add_flag("--verbose", eval_verbose, "Per-view breakdown");

    // bench
    auto* bench = app.add_subcommand("bench", "Robustness sweeps");
    std::string bench_source, bench_sweep = "outliers",
                bench_values = "1,10,20,30,50,80", bench_solvers = "both",
                bench_out = "bench.csv", bench_snr = "70";
    int bench_trials = 3, bench_max_iters = 50;
    std::uint64_t bench_seed = 0;
    PerturbSpec bench_spec;
    bench_spec.outlier_fraction = 0.3;
    bool bench_no_timing = false;
    bench->add_option("source", bench_source, "Source cloud")->required();
    bench->add_option("--sweep", bench_sweep, "outliers | noise");
    bench->add_option("--values", bench_values,
                      "Comma-separated sweep values (% or dB)");
    bench->add_option("--solver", bench_solvers, "lpa | admm | both");
    bench->add_option("--trials", bench_trials, "Trials per cell");
    bench->add_option("--seed", bench_seed, "Random seed");
    bench->add_option("--out", bench_out, "Output CSV");
    bench->add_option("--views", bench_spec.views, "Number of views");
    bench->add_option("--points", bench_spec.n_points, "Downsample target");
    bench->add_option("--crop", bench_spec.crop_fraction, "Crop fraction");
    bench->add_option("--snr", bench_snr, "Baseline SNR in dB, or 'none'");
    bench->add_option("--outliers", bench_spec.outlier_fraction,
                      "Baseline outlier fraction");
    bench->add_option("--max-iters", bench_max_iters, "EM iteration cap");
    bench->add_flag("--no-timing", bench_no_timing,
                    "Zero the wall-time column for byte-identical reruns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (reg->parsed())
            return cmd_register(reg_inputs, reg_out, reg_solver, reg_max_iters,
                                reg_tol, reg_seed, reg_anchor, reg_rho, reg_gt,
                                reg_aligned, reg_format, reg_verbose);
        if (synth->parsed())
            return cmd_synth(synth_source, synth_out, synth_spec, synth_snr,
                             synth_ascii);
        if (eval->parsed())
            return cmd_eval(eval_result, eval_gt, eval_anchor, eval_verbose);
        if (bench->parsed())
            return cmd_bench(bench_source, bench_sweep, bench_values,
                             bench_solvers, bench_trials, bench_seed, bench_out,
                             bench_spec, bench_snr, bench_max_iters,
                             bench_no_timing);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace lmmreg
