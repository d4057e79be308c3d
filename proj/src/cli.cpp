#include "bvmdesign/cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"
#include "bvmdesign/mc_oracle.hpp"
#include "bvmdesign/parallel.hpp"
#include "bvmdesign/pipeline.hpp"
#include "bvmdesign/service.hpp"

namespace fs = std::filesystem;

namespace bvmdesign {

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::string out = ".";
    std::string training;
    std::string ensemble;
    std::vector<std::string> designs;
    std::string grid;
    std::string objective = "min-iec";
    double target = 0.8;
    std::string theta;
    std::size_t nsim = 0;
    std::size_t prior_draws = 0;
    std::size_t mvn_draws = 0;
    bool interactive = false;
    bool no_cost = false;
    std::string host = "127.0.0.1";
    int port = 8787;
};

/// A loaded study document plus where its relative paths point.
struct Study {
    StudyConfig config;
    fs::path dir;

    const nlohmann::json& doc() const { return config.document; }

    std::string artifact(const std::string& key, const std::string& flag, const std::string& fallback) const {
        if (!flag.empty()) return flag;
        if (doc().contains("artifacts") && doc()["artifacts"].contains(key)) {
            return (dir / doc()["artifacts"][key].get<std::string>()).string();
        }
        return fallback;
    }
};

Study load_study(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    Study s{load_study_config(o.config), fs::path(o.config).parent_path()};
    return s;
}

fs::path out_dir(const Options& o) {
    const fs::path p(o.out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p)) throw ConfigError("cannot create output directory '" + o.out + "'");
    return p;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

TrainingSettings training_settings(const Study& s, const Options& o) {
    auto t = s.doc().contains("training") ? TrainingSettings::from_json(s.doc()["training"]) : TrainingSettings{};
    if (o.seed) t.seed = *o.seed;
    return t;
}

BartConfig bart_config(const Study& s, const Options& o) {
    auto b = s.doc().contains("bart") ? BartConfig::from_json(s.doc()["bart"]) : BartConfig{};
    if (o.seed) b.seed = *o.seed;
    return b;
}

EvaluationSettings evaluation_settings(const Study& s, const Options& o) {
    auto e = s.doc().contains("evaluation") ? EvaluationSettings::from_json(s.doc()["evaluation"])
                                            : EvaluationSettings{};
    if (o.interactive) e = EvaluationSettings::interactive(e);
    if (o.prior_draws) e.prior_draws = o.prior_draws;
    if (o.mvn_draws) e.mvn.draws = o.mvn_draws;
    if (o.seed) {
        e.prior_seed = *o.seed;
        e.mvn.seed = *o.seed;
    }
    e.mvn.validate();
    return e;
}

std::optional<CostSpec> study_cost(const Study& s, const Options& o) {
    if (o.no_cost || !s.doc().contains("cost")) return std::nullopt;
    return CostSpec::from_json(s.doc()["cost"]);
}

std::vector<TrialDesign> designs(const Study& s, const Options& o) {
    std::vector<std::string> paths = o.designs;
    if (paths.empty() && s.doc().contains("artifacts") && s.doc()["artifacts"].contains("designs")) {
        for (const auto& p : s.doc()["artifacts"]["designs"]) paths.push_back((s.dir / p.get<std::string>()).string());
    }
    if (paths.empty()) throw ConfigError("no design given (use --design PATH)");
    std::vector<TrialDesign> out;
    for (const auto& p : paths) {
        auto ds = load_designs(p, s.config.spec.psi0());
        for (auto& d : ds) {
            if (d.name.empty()) d.name = fs::path(p).stem().string();
            out.push_back(std::move(d));
        }
    }
    return out;
}

std::vector<double> parse_list(const std::string& text, const std::string& what) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(what + ": '" + item + "' is not a number");
        }
    }
    return v;
}

std::unique_ptr<Evaluator> make_evaluator(const Study& s, const Options& o) {
    const auto path = s.artifact("ensemble", o.ensemble, (fs::path(o.out) / "ensemble.json").string());
    auto ensemble = std::make_shared<const BartPosterior>(load_ensemble(path));
    return std::make_unique<Evaluator>(s.config, std::move(ensemble), evaluation_settings(s, o));
}

// ------------------------------------------------------------ commands

int cmd_train(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto settings = training_settings(s, o);
    const auto set = train(s.config, settings);
    const auto dir = out_dir(o);
    std::ostringstream csv;
    set.write_csv(csv);
    write_text_file((dir / "training.csv").string(), csv.str());
    auto prov = set.provenance();
    prov["settings"] = settings.to_json();
    prov["config"] = fs::absolute(o.config).string();
    write_json(dir / "training.provenance.json", prov);
    out << "wrote " << (dir / "training.csv").string() << " (" << set.rows.size() << " rows)\n";
    return exit_ok;
}

int cmd_fit(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto set = TrainingSet::read_csv(s.artifact("training", o.training, (fs::path(o.out) / "training.csv").string()));
    const auto post = fit_ensemble(set, bart_config(s, o));
    const auto dir = out_dir(o);
    write_json(dir / "ensemble.json", post.to_json());
    out << "wrote " << (dir / "ensemble.json").string() << " (" << post.state_count() << " states, mean depth "
        << post.mean_tree_depth() << ")\n";
    return exit_ok;
}

int cmd_loocv(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto set = TrainingSet::read_csv(s.artifact("training", o.training, (fs::path(o.out) / "training.csv").string()));
    const auto rows = loocv_lambda(set, bart_config(s, o));
    std::ostringstream csv;
    for (const auto& n : set.parameter_names) csv << n << ',';
    csv << "lambda_hat,mc_se,lambda_loocv,lo,hi\n";
    std::size_t covered = 0;
    for (const auto& r : rows) {
        for (double v : r.theta.values) csv << format_double(v) << ',';
        csv << format_double(r.lambda_hat) << ',' << format_double(r.mc_se) << ',' << format_double(r.predicted) << ','
            << format_double(r.lo) << ',' << format_double(r.hi) << '\n';
        covered += r.lo <= r.lambda_hat && r.lambda_hat <= r.hi ? 1 : 0;
    }
    const auto dir = out_dir(o);
    write_text_file((dir / "loocv.csv").string(), csv.str());
    out << "wrote " << (dir / "loocv.csv").string() << "; " << covered << "/" << rows.size()
        << " held-out intervals cover lambda_hat\n";
    return exit_ok;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto ds = designs(s, o);
    const auto ev = make_evaluator(s, o);
    const auto cost = study_cost(s, o);
    const auto dir = out_dir(o);
    std::vector<OcReport> reports;
    for (const auto& d : ds) {
        reports.push_back(ev->evaluate(d, cost));
        write_json(dir / (d.name + ".report.json"), reports.back().to_json());
        std::ostringstream csv;
        reports.back().write_csv(csv);
        write_text_file((dir / (d.name + ".report.csv")).string(), csv.str());
        for (const auto& w : reports.back().warnings) out << "warning: " << d.name << ": " << w << '\n';
    }
    out << comparison_table(reports);
    return exit_ok;
}

int cmd_curve(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto ds = designs(s, o);
    const auto ev = make_evaluator(s, o);
    const auto grid = o.grid.empty() ? default_psi_grid(s.config.spec, s.config.design_prior)
                                     : parse_list(o.grid, "--grid");
    if (grid.empty()) throw ConfigError("--grid: no values");
    const auto dir = out_dir(o);
    for (const auto& d : ds) {
        std::ostringstream csv;
        write_curve_csv(csv, d, ev->curve(grid, d));
        write_text_file((dir / (d.name + ".curve.csv")).string(), csv.str());
        out << "wrote " << (dir / (d.name + ".curve.csv")).string() << '\n';
    }
    return exit_ok;
}

int cmd_compare(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto ds = designs(s, o);
    const auto ev = make_evaluator(s, o);
    const auto cost = study_cost(s, o);
    std::vector<OcReport> reports;
    for (const auto& d : ds) reports.push_back(ev->evaluate(d, cost));
    const auto dir = out_dir(o);
    std::ostringstream csv;
    write_comparison_csv(csv, reports);
    write_text_file((dir / "compare.csv").string(), csv.str());
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(r.to_json());
    write_json(dir / "compare.json", j);
    out << comparison_table(reports);
    for (const auto& r : reports) {
        if (r.reference_check.is_object()) out << r.design.name << " reference check: " << r.reference_check.dump() << '\n';
    }
    return exit_ok;
}

int cmd_optimize(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto ds = designs(s, o);
    const auto ev = make_evaluator(s, o);
    const auto cost = study_cost(s, o);
    const auto objective = parse_objective(o.objective);
    if (!cost && objective == Objective::min_iec) throw ConfigError("min-iec needs a cost section in the config");
    const auto result = ev->optimize(ds, objective, cost.value_or(CostSpec{0.0, 0.0, 1.0}), o.target);
    const auto dir = out_dir(o);
    std::ostringstream csv;
    result.write_csv(csv);
    write_text_file((dir / "optimize.csv").string(), csv.str());
    write_json(dir / "optimize.json", result.to_json());
    if (result.ranking.empty()) {
        out << result.diagnostic << '\n';
    } else {
        for (const auto& r : result.ranking) out << r.rank << ". " << r.name << "  score " << r.score << '\n';
    }
    return exit_ok;
}

int cmd_oracle(const Options& o, std::ostream& out) {
    const auto s = load_study(o);
    const auto ds = designs(s, o);
    auto oc = s.doc().contains("oracle") ? OracleConfig::from_json(s.doc()["oracle"]) : OracleConfig{};
    if (o.seed) oc.seed = *o.seed;
    if (o.nsim) oc.nsim = o.nsim;
    const auto cost = study_cost(s, o);
    const auto& spec = s.config.spec;
    const auto prior = spec->default_analysis_prior();
    const auto dir = out_dir(o);
    std::vector<OcReport> reports;
    for (const auto& d : ds) {
        OcReport r = o.theta.empty() ? mc_gsd(spec, prior, s.config.design_prior, d, oc, cost)
                                     : mc_gsd(spec, prior, spec->make_point(parse_list(o.theta, "--theta")), d, oc, cost);
        write_json(dir / (d.name + ".oracle.json"), r.to_json());
        std::ostringstream csv;
        r.write_csv(csv);
        write_text_file((dir / (d.name + ".oracle.csv")).string(), csv.str());
        reports.push_back(std::move(r));
    }
    out << comparison_table(reports);
    return exit_ok;
}

int cmd_serve(const Options& o, std::ostream& out) {
    ServiceOptions so;
    if (!o.config.empty()) so.base_dir = fs::path(o.config).parent_path().string();
    Service service(so);
    HttpServer server(service);
    const int port = server.bind(o.host, o.port);
    out << "listening on http://" << o.host << ':' << port << std::endl;
    server.listen();
    return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian design engine: training, surrogate fitting and operating characteristics", "bvmdesign"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Study document (model, design prior, settings)");
        sub->add_option("--seed", o.seed, "Override every seed in the study document");
        sub->add_option("--threads", o.threads, "Worker threads (default: all cores)");
        sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    };
    auto evaluation = [&](CLI::App* sub) {
        sub->add_option("--ensemble", o.ensemble, "Ensemble JSON from `fit`");
        sub->add_option("--design", o.designs, "Design JSON (repeatable)");
        sub->add_option("--prior-draws", o.prior_draws, "Design-prior sample size");
        sub->add_option("--mvn-draws", o.mvn_draws, "MVN draws per design");
        sub->add_flag("--interactive", o.interactive, "Use the service's reduced sample sizes");
        sub->add_flag("--no-cost", o.no_cost, "Skip the cost section");
    };

    auto* train = app.add_subcommand("train", "Build the lambda training set");
    common(train);
    auto* fit = app.add_subcommand("fit", "Fit the BART ensemble to log lambda");
    common(fit);
    fit->add_option("--training", o.training, "Training CSV");
    auto* cv = app.add_subcommand("loocv", "Leave-one-out predictions of lambda");
    common(cv);
    cv->add_option("--training", o.training, "Training CSV");
    auto* evaluate = app.add_subcommand("evaluate", "Operating characteristics of designs");
    common(evaluate);
    evaluation(evaluate);
    auto* curve = app.add_subcommand("curve", "Stopping probabilities over a psi grid");
    common(curve);
    evaluation(curve);
    curve->add_option("--grid", o.grid, "Comma-separated psi values");
    auto* compare = app.add_subcommand("compare", "Side-by-side table of designs");
    common(compare);
    evaluation(compare);
    auto* optimize = app.add_subcommand("optimize", "Rank candidate designs");
    common(optimize);
    evaluation(optimize);
    optimize->add_option("--objective", o.objective, "min-iec or min-iess")->capture_default_str();
    optimize->add_option("--target", o.target, "Assurance target for min-iess")->capture_default_str();
    auto* oracle = app.add_subcommand("oracle", "Full-simulation operating characteristics");
    common(oracle);
    oracle->add_option("--design", o.designs, "Design JSON (repeatable)");
    oracle->add_option("--theta", o.theta, "Comma-separated parameter values (default: design-prior means)");
    oracle->add_option("--nsim", o.nsim, "Replicates");
    oracle->add_flag("--no-cost", o.no_cost, "Skip the cost section");
    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    common(serve);
    serve->add_option("--host", o.host)->capture_default_str();
    serve->add_option("--port", o.port)->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (o.threads) set_thread_count(o.threads);
        if (train->parsed()) return cmd_train(o, out);
        if (fit->parsed()) return cmd_fit(o, out);
        if (cv->parsed()) return cmd_loocv(o, out);
        if (evaluate->parsed()) return cmd_evaluate(o, out);
        if (curve->parsed()) return cmd_curve(o, out);
        if (compare->parsed()) return cmd_compare(o, out);
        if (optimize->parsed()) return cmd_optimize(o, out);
        if (oracle->parsed()) return cmd_oracle(o, out);
        if (serve->parsed()) return cmd_serve(o, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return exit_numerical;
    } catch (const std::exception& e) {
        err << "failure: " << e.what() << '\n';
        return exit_numerical;
    }
    return exit_usage;
}

}  // namespace bvmdesign
