// regpinn command-line tool: ingest, synth, fit, mcmc, train, eval, sweep, grid.
//
// Exit codes: 0 success, 1 numerical failure, 2 usage or input failure.

#include <regpinn/regpinn.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace regpinn;

namespace {

constexpr int kExitNumerical = 1;
constexpr int kExitUsage = 2;

struct Globals {
    std::uint64_t seed = 7;
    bool verbose = false;
};

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ParseError(path.string(), 0, "cannot open for writing");
    return out;
}

void report_warnings(const std::vector<Diagnostic>& warnings, const std::string& file, bool verbose) {
    if (warnings.empty()) return;
    if (verbose)
        for (const auto& w : warnings) std::cerr << file << ':' << w.line << ": warning: " << w.message << '\n';
    else
        std::cerr << file << ": " << warnings.size() << " warning(s); rerun with --verbose for details\n";
}

std::vector<CrossingRecord> load_dataset(const std::string& path, bool verbose) {
    auto parsed = parse_crossings(path);
    report_warnings(parsed.warnings, path, verbose);
    for (const auto& r : parsed.rows)
        if (!r.drivers) throw ParseError(path, 0, "dataset has no bz_nt,dp_npa columns; run 'ingest' first");
    return std::move(parsed.rows);
}

std::vector<std::size_t> load_indices(const std::string& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::vector<std::size_t> idx;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc{} || v >= n) throw ParseError(path, lineno, "bad record index '" + line + "'");
        idx.push_back(v);
    }
    return idx;
}

enum class ModelFile { Unknown, FitReport, Network };

ModelFile sniff(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    std::string first;
    in >> first;
    if (first == kMlpMagic) return ModelFile::Network;
    if (first == "model") return ModelFile::FitReport;
    return ModelFile::Unknown;
}

EmpiricalForm load_form(const std::string& spec) {
    if (spec == ShueForm::id || spec == OverfitForm::id) return default_form(spec);
    std::ifstream in(spec);
    if (!in) throw ParseError(spec, 0, "not a model id and cannot open as a fit report");
    return read_fit_report(in, spec);
}

/// `shue`, `overfit`, a fit report or a network artifact.
ModelHandle load_model(const std::string& spec) {
    if (spec == ShueForm::id || spec == OverfitForm::id) return make_handle(default_form(spec));
    switch (sniff(spec)) {
    case ModelFile::Network: {
        std::ifstream in(spec);
        return make_handle(load_mlp(in), fs::path(spec).stem().string());
    }
    case ModelFile::FitReport: return make_handle(load_form(spec), fs::path(spec).stem().string());
    case ModelFile::Unknown: break;
    }
    throw ParseError(spec, 1, "neither a fit report nor a network artifact");
}

std::vector<bool> free_mask(const EmpiricalForm& form, const std::vector<std::string>& names) {
    const auto all = coefficient_names(form);
    if (names.empty()) return std::vector<bool>(all.size(), true);
    std::vector<bool> mask(all.size(), false);
    for (const auto& n : names) {
        auto it = std::find(all.begin(), all.end(), n);
        if (it == all.end()) throw DomainError("unknown coefficient '" + n + "' for model " + std::string(form_id(form)));
        mask[static_cast<std::size_t>(it - all.begin())] = true;
    }
    return mask;
}

PenaltyKind parse_penalty(const std::string& kind, double strength, double mix) {
    PenaltyKind p;
    p.strength = strength;
    p.mix = mix;
    if (kind == "none") p.kind = PenaltyKind::Kind::None;
    else if (kind == "l1") p.kind = PenaltyKind::Kind::L1;
    else if (kind == "l2") p.kind = PenaltyKind::Kind::L2;
    else if (kind == "elastic") p.kind = PenaltyKind::Kind::Elastic;
    else throw DomainError("unknown penalty '" + kind + "'");
    return p;
}

// Options shared by every command that trains networks.
struct TrainOptions {
    double lambda = 1.0;
    double eta = TrainConfig{}.eta;
    std::size_t epochs = 500;
    double split = 0.8;
    double threshold = 0.0;
    std::size_t batch = 256;
    std::string reg = "shue";
    std::string penalty = "none";
    double strength = 0.0;
    double mix = 0.5;

    void add_to(CLI::App* cmd, bool with_lambda_and_split) {
        if (with_lambda_and_split) {
            cmd->add_option("--lambda", lambda, "Weight of the regression loss")->capture_default_str();
            cmd->add_option("--split", split, "Training share of the records, in (0,1)")->capture_default_str();
        }
        cmd->add_option("--epochs", epochs, "Maximum number of epochs")->capture_default_str();
        cmd->add_option("--eta", eta, "RMSProp learning rate")->capture_default_str();
        cmd->add_option("--threshold", threshold, "Stop once training l_total <= threshold")->capture_default_str();
        cmd->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
        cmd->add_option("--reg", reg, "Regularizer: none, shue, overfit or a fit report")->capture_default_str();
        cmd->add_option("--penalty", penalty, "Weight penalty: none, l1, l2, elastic")
            ->check(CLI::IsMember({"none", "l1", "l2", "elastic"}))
            ->capture_default_str();
        cmd->add_option("--strength", strength, "Weight penalty strength")->capture_default_str();
        cmd->add_option("--mix", mix, "Elastic mix (L1 share)")->capture_default_str();
    }

    TrainConfig config(std::uint64_t seed) const {
        TrainConfig c;
        c.lambda = lambda;
        c.eta = eta;
        c.max_epochs = epochs;
        c.split_fraction = split;
        c.epsilon_threshold = threshold;
        c.seed = seed;
        c.batch_size = batch;
        c.penalty = parse_penalty(penalty, strength, mix);
        if (reg == "none")
            c.regularizer.reset();
        else
            c.regularizer = load_form(reg);
        return c;
    }
};

void write_losses(const fs::path& path, const std::vector<LossBreakdown>& h) {
    auto out = open_output(path);
    out.precision(17);
    out << "epoch,l_data,l_reg,penalty,l_total\n";
    for (std::size_t e = 0; e < h.size(); ++e)
        out << e + 1 << ',' << h[e].l_data << ',' << h[e].l_reg << ',' << h[e].penalty << ',' << h[e].l_total << '\n';
}

void write_indices(const fs::path& path, const std::vector<std::size_t>& idx) {
    auto out = open_output(path);
    for (auto i : idx) out << i << '\n';
}

std::vector<Protocol> parse_protocols(const std::vector<double>& fractions) {
    std::vector<Protocol> p;
    for (double f : fractions) p.push_back({f});
    return p;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Empirical magnetopause models and regression-regularized networks"};
    app.require_subcommand(1);
    app.fallthrough();
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "Read options from a key = value file (sections per subcommand)");

    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random stream of the command")->capture_default_str();
    app.add_flag("--verbose", g.verbose, "Print per-row warnings");

    // ingest
    std::string crossings_path, solarwind_path, ingest_out;
    bool do_filter = false;
    double fill_value = FillValues{}.bz;
    auto* ingest = app.add_subcommand("ingest", "Merge crossings with 5-minute solar wind data");
    ingest->add_option("--crossings", crossings_path, "Crossings CSV")->required();
    ingest->add_option("--solarwind", solarwind_path, "Solar wind CSV")->required();
    ingest->add_option("--out", ingest_out, "Merged dataset CSV")->required();
    ingest->add_flag("--filter-range", do_filter, "Keep only -18 < Bz < 15 nT and 0.5 < Dp < 8.5 nPa");
    ingest->add_option("--fill-value", fill_value, "Magnitude treated as a missing solar wind value")
        ->capture_default_str();

    // synth
    std::string synth_model = "shue", synth_out;
    SynthSpec synth;
    double theta_lo_deg = 0.0, theta_hi_deg = 120.0;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset from a model");
    synth_cmd->add_option("--model", synth_model, "shue, overfit, fit report or network file")->capture_default_str();
    synth_cmd->add_option("--n", synth.n, "Number of records")->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise_sigma, "Gaussian noise on r, Re")->capture_default_str();
    synth_cmd->add_option("--bz-min", synth.bz.lo)->capture_default_str();
    synth_cmd->add_option("--bz-max", synth.bz.hi)->capture_default_str();
    synth_cmd->add_option("--dp-min", synth.dp.lo)->capture_default_str();
    synth_cmd->add_option("--dp-max", synth.dp.hi)->capture_default_str();
    synth_cmd->add_option("--theta-min", theta_lo_deg, "degrees")->capture_default_str();
    synth_cmd->add_option("--theta-max", theta_hi_deg, "degrees")->capture_default_str();
    synth_cmd->add_option("--out", synth_out, "Output dataset CSV")->required();

    // fit / mcmc
    std::string fit_data, fit_form = "shue", fit_init, fit_out;
    std::vector<std::string> fit_free;
    FitOptions fit_opt;
    auto* fit = app.add_subcommand("fit", "Levenberg-Marquardt fit of an empirical model");
    fit->add_option("--data", fit_data, "Merged dataset CSV")->required();
    fit->add_option("--form", fit_form, "shue or overfit")->check(CLI::IsMember({"shue", "overfit"}))->capture_default_str();
    fit->add_option("--init", fit_init, "Fit report holding the initial guess (default: printed coefficients)");
    fit->add_option("--free", fit_free, "Comma-separated free coefficients (default: all)")->delimiter(',');
    fit->add_option("--tol", fit_opt.tol)->capture_default_str();
    fit->add_option("--max-iters", fit_opt.max_iters)->capture_default_str();
    fit->add_option("--out", fit_out, "Fit report")->required();

    std::string mc_data, mc_form = "shue", mc_init, mc_out, mc_report;
    std::vector<std::string> mc_free;
    McmcConfig mc;
    double proposal_scale = 0.002;
    double likelihood_sigma = 0.0;
    auto* mcmc = app.add_subcommand("mcmc", "Random-walk Metropolis sampling of an empirical model");
    mcmc->add_option("--data", mc_data, "Merged dataset CSV")->required();
    mcmc->add_option("--form", mc_form, "shue or overfit")->check(CLI::IsMember({"shue", "overfit"}))->capture_default_str();
    mcmc->add_option("--init", mc_init, "Fit report holding the starting point");
    mcmc->add_option("--free", mc_free, "Comma-separated free coefficients (default: all)")->delimiter(',');
    mcmc->add_option("--steps", mc.n_steps)->capture_default_str();
    mcmc->add_option("--burn-in", mc.burn_in)->capture_default_str();
    mcmc->add_option("--proposal-scale", proposal_scale, "Proposal sigma relative to |start|")->capture_default_str();
    mcmc->add_option("--likelihood-sigma", likelihood_sigma, "Re; 0 = residual std at the start")->capture_default_str();
    mcmc->add_option("--out", mc_out, "Chain CSV")->required();
    mcmc->add_option("--report", mc_report, "Posterior-mean fit report");
    mcmc->add_flag("--adapt", mc.adapt_burn_in, "Tune a full proposal covariance during burn-in");

    // train
    std::string train_data, train_dir = "run";
    TrainOptions topt;
    auto* train = app.add_subcommand("train", "Train a vanilla or regression-regularized network");
    train->add_option("--data", train_data, "Merged dataset CSV")->required();
    topt.add_to(train, true);
    train->add_option("--out-dir", train_dir, "Run directory")->capture_default_str();

    // eval
    std::string eval_data, eval_model = "shue", eval_indices, eval_csv, eval_id;
    bool eval_table = false;
    std::vector<double> table_fractions{0.8, 0.2};
    TrainOptions eopt;
    auto* eval = app.add_subcommand("eval", "RMSE report for a model, or a model-comparison table");
    eval->add_option("--data", eval_data, "Merged dataset CSV")->required();
    eval->add_option("--model", eval_model, "shue, overfit, fit report or network file")->capture_default_str();
    eval->add_option("--indices", eval_indices, "Only score these record indices (one per line)");
    eval->add_option("--csv", eval_csv, "Also write the report as CSV");
    eval->add_option("--dataset-id", eval_id, "Label for the report (default: file name)");
    eval->add_flag("--table", eval_table, "Train and compare baseline, overfit, NN and Reg-PINN variants");
    eval->add_option("--protocols", table_fractions, "Training fractions for --table")->delimiter(',')->capture_default_str();
    eopt.add_to(eval, false);

    // sweep
    std::string sweep_data, sweep_out = "sweep.csv";
    std::vector<double> lambdas{0.1, 0.5, 1.0, 2.0, 5.0};
    std::vector<double> sweep_fractions{0.8, 0.2};
    TrainOptions sopt;
    auto* sweep = app.add_subcommand("sweep", "Masked-split RMSE over a grid of lambda values");
    sweep->add_option("--data", sweep_data, "Merged dataset CSV")->required();
    sweep->add_option("--lambdas", lambdas, "Comma-separated lambda values")->delimiter(',')->capture_default_str();
    sweep->add_option("--protocols", sweep_fractions, "Training fractions")->delimiter(',')->capture_default_str();
    sopt.add_to(sweep, false);
    sweep->add_option("--out", sweep_out, "Sweep CSV")->capture_default_str();

    // grid
    std::string grid_model = "shue", grid_out, grid_meta;
    AxisRange grid_bz{-18.0, 15.0}, grid_dp{0.5, 18.0};
    std::size_t n_bz = 100, n_dp = 100;
    auto* grid = app.add_subcommand("grid", "Standoff distance over the (Bz, Dp) plane");
    grid->add_option("--model", grid_model, "shue, overfit, fit report or network file")->capture_default_str();
    grid->add_option("--bz-min", grid_bz.lo)->capture_default_str();
    grid->add_option("--bz-max", grid_bz.hi)->capture_default_str();
    grid->add_option("--dp-min", grid_dp.lo)->capture_default_str();
    grid->add_option("--dp-max", grid_dp.hi)->capture_default_str();
    grid->add_option("--n-bz", n_bz)->capture_default_str();
    grid->add_option("--n-dp", n_dp)->capture_default_str();
    grid->add_option("--out", grid_out, "Grid CSV")->required();
    grid->add_option("--meta", grid_meta, "Axis metadata JSON (default: <out>.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*ingest) {
            const FillValues fill{fill_value, fill_value};
            auto cr = parse_crossings(crossings_path);
            report_warnings(cr.warnings, crossings_path, g.verbose);
            auto sw = parse_solarwind(solarwind_path, fill);
            report_warnings(sw.warnings, solarwind_path, g.verbose);
            const auto flagged = std::count_if(sw.rows.begin(), sw.rows.end(), [](const auto& s) { return s.flagged; });
            auto merged = merge(cr.rows, sw.rows);
            std::size_t out_of_range = 0;
            if (do_filter) {
                auto kept = filter_range(merged.records, BinSpec{});
                out_of_range = merged.records.size() - kept.size();
                merged.records = std::move(kept);
            }
            auto out = open_output(ingest_out);
            write_dataset(out, merged.records);
            std::cout << "crossings read " << cr.rows.size() << " (rejected " << cr.warnings.size()
                      << "), solar wind samples " << sw.rows.size() << " (flagged " << flagged << ")\n"
                      << "merged " << merged.records.size() + out_of_range << ", dropped unmatched " << merged.dropped
                      << ", dropped out of range " << out_of_range << ", written " << merged.records.size() << '\n';
        } else if (*synth_cmd) {
            synth.seed = g.seed;
            synth.theta = {theta_lo_deg * kDegToRad, theta_hi_deg * kDegToRad};
            const auto recs = synth_generate(load_model(synth_model), synth);
            auto out = open_output(synth_out);
            write_dataset(out, recs);
            std::cout << "wrote " << recs.size() << " records to " << synth_out << '\n';
        } else if (*fit) {
            const auto recs = load_dataset(fit_data, g.verbose);
            FitProblem p;
            p.records = recs;
            p.initial = fit_init.empty() ? default_form(fit_form) : load_form(fit_init);
            if (form_id(p.initial) != fit_form) throw DomainError("--init holds a different model than --form");
            p.free = free_mask(p.initial, fit_free);
            const auto res = least_squares_fit(p, fit_opt);
            auto out = open_output(fit_out);
            write_fit_report(out, res);
            write_fit_report(std::cout, res);
            if (!std::isfinite(res.sse)) return kExitNumerical;
        } else if (*mcmc) {
            const auto recs = load_dataset(mc_data, g.verbose);
            FitProblem p;
            p.records = recs;
            p.initial = mc_init.empty() ? default_form(mc_form) : load_form(mc_init);
            if (form_id(p.initial) != mc_form) throw DomainError("--init holds a different model than --form");
            p.free = free_mask(p.initial, mc_free);
            const auto x0 = to_vector(p.initial);
            mc.proposal_sigma.clear();
            for (auto i : p.free_indices()) mc.proposal_sigma.push_back(proposal_scale * std::max(std::abs(x0[i]), 1e-6));
            mc.seed = g.seed;
            if (likelihood_sigma > 0.0) mc.likelihood_sigma = likelihood_sigma;
            const auto chain = mcmc_sample(p, mc);
            auto out = open_output(mc_out);
            write_chain_csv(out, chain);
            if (chain.acceptance_rate == 0.0) std::cerr << "warning: every post-burn-in proposal was rejected\n";
            std::ostringstream acc, sig;
            acc << chain.acceptance_rate;
            sig.precision(17);
            sig << chain.likelihood_sigma;
            const auto mean = posterior_mean(p, chain);
            const std::vector<std::pair<std::string, std::string>> extras{
                {"acceptance_rate", acc.str()}, {"likelihood_sigma", sig.str()}};
            write_fit_report(std::cout, mean, extras);
            if (!mc_report.empty()) {
                auto rep = open_output(mc_report);
                write_fit_report(rep, mean, extras);
            }
        } else if (*train) {
            const auto recs = load_dataset(train_data, g.verbose);
            const auto cfg = topt.config(g.seed);
            const auto res = train_reg_pinn(recs, cfg);
            const fs::path dir(train_dir);
            fs::create_directories(dir);
            {
                auto echo = open_output(dir / "config.ini");
                // Globals plus this command's section; enough to rerun it.
                std::istringstream all(app.config_to_str(true, false));
                for (std::string line; std::getline(all, line);) {
                    const auto key = line.substr(0, line.find('='));
                    if (key.find('.') == std::string::npos || key.rfind("train.", 0) == 0) echo << line << '\n';
                }
            }
            write_losses(dir / "loss.csv", res.history);
            write_losses(dir / "test_loss.csv", res.test_history);
            {
                auto m = open_output(dir / "model.txt");
                save_mlp(m, res.model);
            }
            write_indices(dir / "train_indices.txt", res.split.train);
            write_indices(dir / "test_indices.txt", res.split.test);
            if (res.stop == StopReason::NonFinite) {
                std::cerr << "error: " << res.message << '\n';
                return kExitNumerical;
            }
            std::cout << "epochs " << res.epochs_run << " (stop: " << to_string(res.stop) << "), final l_total "
                      << res.history.back().l_total << ", masked rmse " << masked_rmse(recs, res) << " Re\n";
        } else if (*eval) {
            const auto recs = load_dataset(eval_data, g.verbose);
            if (eval_table) {
                std::vector<ModelEntry> entries;
                entries.push_back({"Overfitting", make_handle(OverfitForm{})});
                TrainOptions vanilla = eopt;
                vanilla.reg = "none";
                vanilla.lambda = 0.0;
                entries.push_back({"Vanilla NN", vanilla.config(g.seed)});
                TrainOptions shue = eopt;
                shue.reg = "shue";
                entries.push_back({"Reg-PINN (Shue)", shue.config(g.seed)});
                TrainOptions of = eopt;
                of.reg = "overfit";
                entries.push_back({"Reg-PINN (O.F.)", of.config(g.seed)});
                const auto t = comparison_table(recs, entries, parse_protocols(table_fractions), g.seed);
                write_table_text(std::cout, t);
                if (!eval_csv.empty()) {
                    auto out = open_output(eval_csv);
                    write_table_csv(out, t);
                }
            } else {
                const auto model = load_model(eval_model);
                const auto scored = eval_indices.empty() ? recs : subset(recs, load_indices(eval_indices, recs.size()));
                const auto rep = evaluate(model, scored, eval_id.empty() ? fs::path(eval_data).filename().string() : eval_id);
                write_report_text(std::cout, rep);
                if (!eval_csv.empty()) {
                    auto out = open_output(eval_csv);
                    write_report_csv(out, rep);
                }
            }
        } else if (*sweep) {
            const auto recs = load_dataset(sweep_data, g.verbose);
            const auto res = lambda_sweep(recs, sopt.config(g.seed), lambdas, parse_protocols(sweep_fractions));
            auto out = open_output(sweep_out);
            write_sweep_csv(out, res);
            write_sweep_csv(std::cout, res);
        } else if (*grid) {
            const auto g2 = standoff_grid(load_model(grid_model), grid_bz, grid_dp, n_bz, n_dp);
            auto out = open_output(grid_out);
            write_grid_csv(out, g2);
            auto meta = open_output(grid_meta.empty() ? grid_out + ".json" : grid_meta);
            write_grid_meta(meta, g2);
            std::cout << "wrote " << g2.values.size() << " grid nodes to " << grid_out << '\n';
        }
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return 0;
}
