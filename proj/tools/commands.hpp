#pragma once

// Subcommands of the softimpute command-line tool. run_cli() is the whole
// program minus main(), so tests can drive it in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "softimpute/softimpute.hpp"

namespace softimpute::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kNotConverged = 2 };

struct SolverFlags {
    std::string algorithm = "soft";
    double epsilon = 1e-4;
    int max_iters = 500;
    Index r_max = 0;
    std::uint64_t seed = 1;
    bool no_timing = false;
};

struct GridFlags {
    int count = 20;
    double ratio = 0.01;
    std::vector<double> lambdas;
};

inline void add_solver_flags(CLI::App* app, SolverFlags& f) {
    app->add_option("--algorithm", f.algorithm, "soft, soft+post or hard")
        ->check(CLI::IsMember({"soft", "soft+post", "hard"}))
        ->capture_default_str();
    app->add_option("--epsilon", f.epsilon, "relative-change tolerance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--max-iters", f.max_iters, "iterations per lambda")
        ->check(CLI::Range(1, 1000000))
        ->capture_default_str();
    app->add_option("--r-max", f.r_max, "rank cap for the SVDs (0: min(m, n, 500))")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--seed", f.seed, "random seed")->capture_default_str();
    app->add_flag("--no-timing", f.no_timing, "write 0 in wall-clock columns");
}

inline void add_grid_flags(CLI::App* app, GridFlags& g) {
    app->add_option("--K", g.count, "number of grid values")->check(CLI::Range(1, 100000))->capture_default_str();
    app->add_option("--ratio", g.ratio, "smallest / largest lambda")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_option("--lambdas", g.lambdas, "explicit decreasing lambda list; overrides --K/--ratio")
        ->delimiter(',');
}

namespace detail {

class InputError : public Error {
public:
    using Error::Error;
};

inline std::string fmt(double v) { return softimpute::detail::format_double(v); }

inline std::string fmt_ms(double ms, bool no_timing) {
    if (no_timing) return "0";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", ms);
    return buf;
}

inline std::string lambda_dir(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "lambda_%03zu", i + 1);
    return buf;
}

inline SolveOptions solve_options(const SolverFlags& f) {
    SolveOptions o;
    o.epsilon = f.epsilon;
    o.max_iters = f.max_iters;
    o.r_max = f.r_max;
    o.seed = f.seed;
    return o;
}

inline LambdaGrid make_grid(const ObservedMatrix& x, const GridFlags& g, std::uint64_t seed) {
    if (!g.lambdas.empty()) return LambdaGrid(g.lambdas);
    if (!(g.ratio > 0.0 && g.ratio < 1.0)) throw InputError("--ratio must lie in (0, 1)");
    return default_grid(x, g.count, g.ratio, seed);
}

inline ObservedMatrix load(const std::string& path) {
    try {
        return read_matrix_market(std::filesystem::path(path));
    } catch (const Error& e) {
        throw InputError(path + ": " + e.what());
    }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Unshrinks when there is something to refit.
inline LowRankFactors postprocessed(const LowRankFactors& z, const ObservedMatrix& x) {
    if (z.rank() == 0 || z.rank() > x.nnz()) return z;
    return unshrink(z, x).factors;
}

/// One grid point of an algorithm run.
struct Fit {
    double lambda = 0.0;
    /// The soft solution (soft and soft+post), or the Hard-Impute solution.
    LowRankFactors solution = LowRankFactors::zero(1, 1);
    /// What gets written out: solution, or its unshrunk version for soft+post.
    LowRankFactors emitted = LowRankFactors::zero(1, 1);
    /// Objective minimized at this point: f_lambda for soft, the rank-penalized
    /// objective at lambda^2 / 2 for hard.
    double objective = 0.0;
    Index iters = 0;
    bool converged = false;
    std::optional<double> kkt_core;
    double wall_ms = 0.0;
    std::string failure;
};

/// Runs `algorithm` over the grid. Hard-Impute at grid value lambda uses the
/// rank penalty lambda^2 / 2 (the same singular-value cut as soft at lambda)
/// and is warm-started from the unshrunk soft solution at lambda.
inline std::vector<Fit> run_algorithm(const ObservedMatrix& x, const LambdaGrid& grid, const std::string& algorithm,
                                      const SolveOptions& opts) {
    const PathSolution soft = solve_path(x, grid, Algorithm::Soft, opts);
    std::vector<Fit> fits;
    fits.reserve(grid.size());
    for (const PathEntry& e : soft.entries) {
        Fit f;
        f.lambda = e.lambda;
        f.solution = e.factors;
        f.emitted = e.factors;
        f.objective = objective(e.factors, x, e.lambda);
        f.iters = e.trace.iters();
        f.converged = e.converged;
        if (e.kkt) f.kkt_core = e.kkt->gap_core;
        f.wall_ms = e.wall_ms;
        f.failure = e.failure;
        fits.push_back(std::move(f));
    }
    if (algorithm == "soft") return fits;

    std::vector<LowRankFactors> warm;
    warm.reserve(fits.size());
    for (Fit& f : fits) {
        const auto t0 = std::chrono::steady_clock::now();
        warm.push_back(postprocessed(f.solution, x));
        f.wall_ms += seconds_since(t0);
        if (algorithm == "soft+post") f.emitted = warm.back();
    }
    if (algorithm == "soft+post") return fits;

    std::vector<double> hard_lambdas;
    for (const Fit& f : fits) hard_lambdas.push_back(0.5 * f.lambda * f.lambda);
    const PathSolution hard = solve_path(x, LambdaGrid(hard_lambdas), Algorithm::Hard, opts, warm);
    for (std::size_t i = 0; i < fits.size(); ++i) {
        const PathEntry& e = hard.entries[i];
        Fit& f = fits[i];
        f.solution = e.factors;
        f.emitted = e.factors;
        f.objective = penalized_objective(e.factors, x, HardThreshold{e.lambda});
        f.iters = e.trace.iters();
        f.converged = f.converged && e.converged;
        f.kkt_core.reset();
        f.wall_ms += e.wall_ms;
        if (f.failure.empty()) f.failure = e.failure;
    }
    return fits;
}

inline double rmse(const LowRankFactors& z, const ObservedMatrix& x) {
    const Vector r = x.values() - project_omega(z, x);
    return std::sqrt(r.squaredNorm() / static_cast<double>(x.nnz()));
}

/// Splits Omega into (train, validation) with round(frac * |Omega|) validation entries.
inline std::pair<ObservedMatrix, ObservedMatrix> holdout_split(const ObservedMatrix& x, double frac,
                                                               std::uint64_t seed) {
    const auto count = static_cast<std::int64_t>(std::llround(frac * static_cast<double>(x.nnz())));
    if (count < 1 || count >= x.nnz())
        throw InputError("--holdout " + fmt(frac) + " leaves an empty train or validation set");
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const auto picked = softimpute::detail::sample_without_replacement(x.nnz(), count, rng);
    std::vector<Index> val(picked.begin(), picked.end()), train;
    train.reserve(static_cast<std::size_t>(x.nnz() - count));
    std::size_t j = 0;
    for (Index k = 0; k < x.nnz(); ++k) {
        if (j < val.size() && val[j] == k)
            ++j;
        else
            train.push_back(k);
    }
    return {x.select(train), x.select(val)};
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    return out;
}

inline int report_convergence(const std::vector<Fit>& fits, std::ostream& err) {
    int code = kOk;
    for (const Fit& f : fits) {
        if (!f.failure.empty()) {
            err << "warning: lambda " << fmt(f.lambda) << " failed: " << f.failure << '\n';
            code = kNotConverged;
        } else if (!f.converged) {
            err << "warning: lambda " << fmt(f.lambda) << " did not converge in " << f.iters << " iterations\n";
            code = kNotConverged;
        }
    }
    return code;
}

}  // namespace detail

struct PathCommand {
    std::string input;
    std::string output;
    double holdout = 0.0;
    SolverFlags solver;
    GridFlags grid;

    void attach(CLI::App& app) {
        auto* sub = app.add_subcommand("path", "solve over a decreasing lambda grid with warm starts");
        sub->add_option("--input", input, "MatrixMarket coordinate file")->required();
        sub->add_option("--output", output, "output directory")->required();
        sub->add_option("--holdout", holdout, "fraction of Omega held out for validation RMSE")
            ->check(CLI::Range(0.0, 1.0));
        add_solver_flags(sub, solver);
        add_grid_flags(sub, grid);
    }

    int run(std::ostream& err) const {
        const ObservedMatrix all = detail::load(input);
        ObservedMatrix train = all;
        std::optional<ObservedMatrix> validation;
        if (holdout > 0.0) {
            auto split = detail::holdout_split(all, holdout, solver.seed);
            train = std::move(split.first);
            validation = std::move(split.second);
        }
        const LambdaGrid lambdas = detail::make_grid(train, grid, solver.seed);
        const auto fits = detail::run_algorithm(train, lambdas, solver.algorithm, detail::solve_options(solver));

        const std::filesystem::path dir(output);
        std::filesystem::create_directories(dir);
        auto csv = detail::open_out(dir / "metrics.csv");
        csv << "lambda,rank,nuclear_norm,objective,train_rmse,iters,converged,kkt_core,wall_ms";
        if (validation) csv << ",validation_rmse";
        csv << '\n';
        for (std::size_t i = 0; i < fits.size(); ++i) {
            const auto& f = fits[i];
            write_factors(dir / detail::lambda_dir(i), f.emitted);
            csv << detail::fmt(f.lambda) << ',' << f.emitted.rank() << ',' << detail::fmt(f.emitted.nuclear_norm())
                << ',' << detail::fmt(f.objective) << ',' << detail::fmt(detail::rmse(f.emitted, train)) << ','
                << f.iters << ',' << (f.converged && f.failure.empty() ? 1 : 0) << ','
                << (f.kkt_core ? detail::fmt(*f.kkt_core) : "") << ',' << detail::fmt_ms(f.wall_ms, solver.no_timing);
            if (validation) csv << ',' << detail::fmt(detail::rmse(f.emitted, *validation));
            csv << '\n';
        }
        return detail::report_convergence(fits, err);
    }
};

struct SolveCommand {
    std::string input;
    std::string output;
    std::string warm;
    double lambda = 0.0;
    SolverFlags solver;

    void attach(CLI::App& app) {
        auto* sub = app.add_subcommand("solve", "solve at a single lambda");
        sub->add_option("--input", input, "MatrixMarket coordinate file")->required();
        sub->add_option("--output", output, "output directory")->required();
        sub->add_option("--lambda", lambda, "regularization value")->required()->check(CLI::NonNegativeNumber);
        sub->add_option("--warm", warm, "directory with U.tsv, d.tsv, V.tsv to start from");
        add_solver_flags(sub, solver);
    }

    int run(std::ostream& err) const {
        const ObservedMatrix x = detail::load(input);
        LowRankFactors start = LowRankFactors::zero(x.rows(), x.cols());
        if (!warm.empty()) {
            try {
                start = read_factors(warm);
                require_same_dims(start, x, "--warm");
            } catch (const Error& e) {
                throw detail::InputError(warm + ": " + e.what());
            }
        }
        const SolveOptions opts = detail::solve_options(solver);
        const auto t0 = std::chrono::steady_clock::now();
        detail::Fit f;
        f.lambda = lambda;
        if (solver.algorithm == "hard" && !warm.empty()) {
            const auto res = hard_impute(x, 0.5 * lambda * lambda, start, opts);
            f.solution = f.emitted = res.factors;
            f.objective = penalized_objective(res.factors, x, HardThreshold{0.5 * lambda * lambda});
            f.iters = res.trace.iters();
            f.converged = res.trace.converged;
        } else {
            const auto soft = soft_impute(x, lambda, start, opts);
            f.solution = f.emitted = soft.factors;
            f.objective = objective(soft.factors, x, lambda);
            f.iters = soft.trace.iters();
            f.converged = soft.trace.converged;
            if (lambda > 0.0) f.kkt_core = kkt_residual(soft.factors, x, lambda, solver.seed).gap_core;
            if (solver.algorithm != "soft") f.emitted = detail::postprocessed(soft.factors, x);
            if (solver.algorithm == "hard") {
                const auto res = hard_impute(x, 0.5 * lambda * lambda, f.emitted, opts);
                f.solution = f.emitted = res.factors;
                f.objective = penalized_objective(res.factors, x, HardThreshold{0.5 * lambda * lambda});
                f.iters = res.trace.iters();
                f.converged = f.converged && res.trace.converged;
                f.kkt_core.reset();
            }
        }
        f.wall_ms = detail::seconds_since(t0);

        const std::filesystem::path dir(output);
        write_factors(dir, f.emitted);
        auto csv = detail::open_out(dir / "metrics.csv");
        csv << "lambda,rank,nuclear_norm,objective,train_rmse,iters,converged,kkt_core,wall_ms\n";
        csv << detail::fmt(f.lambda) << ',' << f.emitted.rank() << ',' << detail::fmt(f.emitted.nuclear_norm()) << ','
            << detail::fmt(f.objective) << ',' << detail::fmt(detail::rmse(f.emitted, x)) << ',' << f.iters << ','
            << (f.converged ? 1 : 0) << ',' << (f.kkt_core ? detail::fmt(*f.kkt_core) : "") << ','
            << detail::fmt_ms(f.wall_ms, solver.no_timing) << '\n';
        return detail::report_convergence({f}, err);
    }
};

struct SimulateCommand {
    SimSpec spec;
    bool noiseless = false;
    std::string output;
    bool write_factor_files = false;
    SolverFlags solver;
    GridFlags grid;

    void attach(CLI::App& app) {
        auto* sub = app.add_subcommand("simulate", "generate a synthetic instance and run a path on it");
        sub->add_option("--m", spec.rows, "rows")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--n", spec.cols, "columns")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--rank", spec.rank, "true rank")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--snr", spec.snr, "signal-to-noise ratio")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--missing", spec.missing_frac, "fraction of missing cells")->capture_default_str();
        sub->add_flag("--noiseless", noiseless, "no noise (infinite SNR)");
        sub->add_option("--output", output, "output directory")->required();
        sub->add_flag("--write-factors", write_factor_files, "also write per-lambda factor files");
        add_solver_flags(sub, solver);
        add_grid_flags(sub, grid);
    }

    int run(std::ostream& err) {
        SimSpec s = spec;
        s.seed = solver.seed;
        if (noiseless) s.snr = std::numeric_limits<double>::infinity();
        SimInstance inst = [&] {
            try {
                return generate(s);
            } catch (const InvalidArgument& e) {
                throw detail::InputError(e.what());
            }
        }();
        const std::filesystem::path dir(output);
        write_instance(dir, inst);

        const LambdaGrid lambdas = detail::make_grid(inst.observed, grid, solver.seed);
        const auto fits =
            detail::run_algorithm(inst.observed, lambdas, solver.algorithm, detail::solve_options(solver));
        const bool post = solver.algorithm == "soft+post";

        auto csv = detail::open_out(dir / "results.csv");
        csv << "lambda,rank,nuclear_norm,train_error,test_error,iters,wall_ms";
        if (post) csv << ",post_train_error,post_test_error";
        csv << '\n';
        for (std::size_t i = 0; i < fits.size(); ++i) {
            const auto& f = fits[i];
            const LowRankFactors& z = f.solution;
            csv << detail::fmt(f.lambda) << ',' << z.rank() << ',' << detail::fmt(z.nuclear_norm()) << ','
                << detail::fmt(train_error(z, inst)) << ',' << detail::fmt(test_error(z, inst)) << ',' << f.iters
                << ',' << detail::fmt_ms(f.wall_ms, solver.no_timing);
            if (post)
                csv << ',' << detail::fmt(train_error(f.emitted, inst)) << ','
                    << detail::fmt(test_error(f.emitted, inst));
            csv << '\n';
            if (write_factor_files) write_factors(dir / detail::lambda_dir(i), f.emitted);
        }
        return detail::report_convergence(fits, err);
    }
};

/// One row of the benchmark table: (m, n, |Omega|, true rank, SNR).
struct BenchRow {
    Index m = 0, n = 0, omega = 0, rank = 0;
    double snr = 1.0;
};

inline BenchRow parse_bench_row(const std::string& text) {
    std::string t = text;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    double m, n, omega, r, snr;
    std::string extra;
    if (!(in >> m >> n >> omega >> r >> snr) || (in >> extra))
        throw detail::InputError("bench row '" + text + "' must be 'm,n,omega,rank,snr'");
    auto as_index = [&](double v, const char* what) {
        if (!(v == std::floor(v)) || v < 0 || v > 9e15)
            throw detail::InputError(std::string("bench row '") + text + "': " + what + " must be a whole number");
        return static_cast<Index>(v);
    };
    BenchRow row{as_index(m, "m"), as_index(n, "n"), as_index(omega, "omega"), as_index(r, "rank"), snr};
    if (std::min(row.m, row.n) < 2)
        throw detail::InputError("bench row '" + text + "': min(m, n) must be at least 2");
    if (row.omega < 1 || row.omega >= row.m * row.n)
        throw detail::InputError("bench row '" + text + "': omega must lie in [1, m*n)");
    if (row.rank < 1 || row.rank > std::min(row.m, row.n))
        throw detail::InputError("bench row '" + text + "': rank must lie in [1, min(m, n)]");
    if (!(snr > 0.0)) throw detail::InputError("bench row '" + text + "': snr must be positive");
    return row;
}

struct BenchCommand {
    std::vector<std::string> rows;
    std::string spec_file;
    std::string output;
    std::vector<double> fractions{0.85, 0.75, 0.7};
    double memory_budget_mb = 4096.0;
    int parallel = 1;
    SolverFlags solver;

    void attach(CLI::App& app) {
        auto* sub = app.add_subcommand("bench", "time Soft-Impute paths on synthetic instances");
        sub->add_option("--row", rows, "instance 'm,n,omega,rank,snr' (repeatable)");
        sub->add_option("--spec", spec_file, "file with one 'm n omega rank snr' row per line");
        sub->add_option("--output", output, "CSV file (default: stdout)");
        sub->add_option("--fractions", fractions, "lambda values as fractions of sigma_1(P_Omega(X))")
            ->delimiter(',')
            ->capture_default_str();
        sub->add_option("--memory-budget-mb", memory_budget_mb, "skip rows whose estimated footprint is larger")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        sub->add_option("--parallel", parallel, "rows solved concurrently")->check(CLI::Range(1, 256));
        add_solver_flags(sub, solver);
    }

    /// Rough peak bytes: entries in several layouts plus Lanczos bases and factors at the rank cap.
    static double estimated_mb(const BenchRow& r, Index r_max) {
        const double cap = static_cast<double>(resolve_rank_cap(r_max, r.m, r.n));
        const double basis = std::max(2.0 * cap, cap + 24.0);
        const double bytes = 120.0 * static_cast<double>(r.omega) +
                             8.0 * static_cast<double>(r.m + r.n) * (basis + 3.0 * cap);
        return bytes / (1024.0 * 1024.0);
    }

    struct Outcome {
        bool skipped = false;
        std::vector<Index> ranks, iters;
        std::vector<double> seconds;
        bool converged = true;
        std::string note;
    };

    Outcome run_row(const BenchRow& row, std::size_t index) const {
        Outcome out;
        SimSpec s;
        s.rows = row.m;
        s.cols = row.n;
        s.rank = row.rank;
        s.snr = row.snr;
        s.observed_count = row.omega;
        s.seed = solver.seed + index;
        const SimInstance inst = generate(s);
        const double top = top_singular_value(inst.observed, solver.seed);
        std::vector<double> grid;
        for (double f : fractions) grid.push_back(f * top);
        const PathSolution path = solve_path(inst.observed, LambdaGrid(grid), Algorithm::Soft,
                                             detail::solve_options(solver));
        for (const auto& e : path.entries) {
            out.ranks.push_back(e.factors.rank());
            out.iters.push_back(e.trace.iters());
            out.seconds.push_back(e.wall_ms / 1000.0);
            if (!e.converged || !e.failure.empty()) {
                out.converged = false;
                out.note += e.failure.empty() ? "not converged at lambda " + detail::fmt(e.lambda) + "; "
                                              : e.failure + "; ";
            }
        }
        return out;
    }

    template <class T, class F>
    static std::string tuple(const std::vector<T>& v, F&& fmt) {
        if (v.size() == 1) return fmt(v[0]);
        std::string s = "\"(";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
        return s + ")\"";
    }

    int run(std::ostream& out_stream, std::ostream& err) const {
        std::vector<std::string> texts = rows;
        if (!spec_file.empty()) {
            std::ifstream in(spec_file);
            if (!in) throw detail::InputError("cannot open '" + spec_file + "'");
            std::string line;
            while (std::getline(in, line)) {
                const auto hash = line.find('#');
                if (hash != std::string::npos) line.resize(hash);
                if (!softimpute::detail::is_blank(line)) texts.push_back(line);
            }
        }
        if (texts.empty()) throw detail::InputError("bench needs at least one --row or a --spec file");
        std::vector<BenchRow> parsed;
        for (const auto& t : texts) parsed.push_back(parse_bench_row(t));
        if (fractions.empty()) throw detail::InputError("--fractions must not be empty");
        for (std::size_t i = 0; i < fractions.size(); ++i)
            if (!(fractions[i] > 0.0) || (i > 0 && !(fractions[i] < fractions[i - 1])))
                throw detail::InputError("--fractions must be positive and strictly decreasing");

        std::vector<Outcome> outcomes(parsed.size());
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < parsed.size(); ++i) {
            const double mb = estimated_mb(parsed[i], solver.r_max);
            if (mb > memory_budget_mb) {
                err << "warning: skipping row '" << texts[i] << "': estimated " << static_cast<long long>(mb)
                    << " MB exceeds the " << static_cast<long long>(memory_budget_mb) << " MB budget\n";
                outcomes[i].skipped = true;
            } else {
                todo.push_back(i);
            }
        }

        std::mutex lock;
        std::size_t next = 0;
        std::vector<std::string> errors(parsed.size());
        auto worker = [&] {
            while (true) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> g(lock);
                    if (next == todo.size()) return;
                    i = todo[next++];
                }
                try {
                    outcomes[i] = run_row(parsed[i], i);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        };
        const int threads = std::max(1, std::min<int>(parallel, static_cast<int>(todo.size())));
        std::vector<std::thread> pool;
        for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();

        std::ofstream file;
        if (!output.empty()) {
            file.open(output);
            if (!file) throw detail::InputError("cannot write '" + output + "'");
        }
        std::ostream& csv = output.empty() ? out_stream : file;
        csv << "m,n,omega,true_rank,snr,effective_rank,iters,time_s\n";
        int code = kOk;
        for (std::size_t i = 0; i < parsed.size(); ++i) {
            const auto& r = parsed[i];
            const auto& o = outcomes[i];
            if (o.skipped) continue;
            if (!errors[i].empty()) {
                err << "warning: row '" << texts[i] << "' failed: " << errors[i] << '\n';
                code = kNotConverged;
                continue;
            }
            if (!o.converged) {
                err << "warning: row '" << texts[i] << "': " << o.note << '\n';
                code = kNotConverged;
            }
            auto whole = [](Index v) { return std::to_string(v); };
            auto secs = [&](double v) {
                if (solver.no_timing) return std::string("0");
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.2f", v);
                return std::string(buf);
            };
            char snr[32];
            std::snprintf(snr, sizeof snr, "%g", r.snr);
            csv << r.m << ',' << r.n << ',' << r.omega << ',' << r.rank << ',' << snr << ','
                << tuple(o.ranks, whole) << ',' << tuple(o.iters, whole) << ',' << tuple(o.seconds, secs) << '\n';
        }
        return code;
    }
};

/// Parses argv, runs the chosen subcommand, and maps failures to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Matrix completion by spectral regularization (Soft-Impute / Hard-Impute)", "softimpute"};
    app.require_subcommand(1);
    SolveCommand solve;
    PathCommand path;
    SimulateCommand simulate;
    BenchCommand bench;
    solve.attach(app);
    path.attach(app);
    simulate.attach(app);
    bench.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }

    try {
        if (app.got_subcommand("solve")) return solve.run(err);
        if (app.got_subcommand("path")) return path.run(err);
        if (app.got_subcommand("simulate")) return simulate.run(err);
        return bench.run(out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }
}

}  // namespace softimpute::cli
