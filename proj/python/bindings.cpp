#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bvmdesign/bart.hpp"
#include "bvmdesign/cli.hpp"
#include "bvmdesign/error.hpp"
#include "bvmdesign/oc_engine.hpp"
#include "bvmdesign/pipeline.hpp"

namespace py = pybind11;
using namespace bvmdesign;

namespace {

using Json = nlohmann::json;

Json parse(const std::string& s) { return s.empty() ? Json::object() : Json::parse(s); }

// Evaluator bound to one study document and one fitted ensemble.
class PyEvaluator {
  public:
    PyEvaluator(const std::string& config_path, const std::string& ensemble_path, bool interactive,
                const std::string& evaluation_json) {
        auto study = load_study_config(config_path);
        auto settings = study.document.contains("evaluation")
                            ? EvaluationSettings::from_json(study.document["evaluation"])
                            : EvaluationSettings{};
        if (interactive) settings = EvaluationSettings::interactive(settings);
        if (!evaluation_json.empty()) settings = EvaluationSettings::from_json(parse(evaluation_json), settings);
        if (study.document.contains("cost")) cost_ = CostSpec::from_json(study.document["cost"]);
        auto ensemble = std::make_shared<const BartPosterior>(load_ensemble(ensemble_path));
        evaluator_ = std::make_unique<Evaluator>(std::move(study), std::move(ensemble), settings);
    }

    std::string evaluate(const std::string& design_json, const std::string& cost_json) const {
        const auto design = TrialDesign::from_json(parse(design_json), psi0());
        auto cost = cost_;
        if (cost_json == "null") {
            cost.reset();
        } else if (!cost_json.empty()) {
            cost = CostSpec::from_json(parse(cost_json));
        }
        py::gil_scoped_release release;
        return evaluator_->evaluate(design, cost).to_json().dump();
    }

    std::string curve(const std::string& design_json, std::vector<double> grid) const {
        const auto design = TrialDesign::from_json(parse(design_json), psi0());
        const auto& study = evaluator_->study();
        if (grid.empty()) grid = default_psi_grid(study.spec, study.design_prior);
        py::gil_scoped_release release;
        return curve_to_json(design, evaluator_->curve(grid, design)).dump();
    }

    std::string settings() const { return evaluator_->settings().to_json().dump(); }
    double psi0() const { return evaluator_->study().spec.psi0(); }

  private:
    std::unique_ptr<Evaluator> evaluator_;
    std::optional<CostSpec> cost_;
};

struct PyEnsemble {
    BartPosterior posterior;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of bvmdesign";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
    // Registered after its base so it is matched first.
    py::register_exception<DesignError>(m, "DesignError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("power_fixed", &power_fixed, py::arg("psi"), py::arg("psi0"), py::arg("n"), py::arg("u"), py::arg("lam"));

    m.def(
        "stop_probs",
        [](const std::string& design_json, double psi, double lambda, std::size_t draws, std::uint64_t seed) {
            MvnConfig mvn;
            mvn.draws = draws;
            mvn.seed = seed;
            const auto design = TrialDesign::from_json(parse(design_json));
            const auto p = stop_probs(design, psi, lambda, mvn);
            return Json{{"efficacy", p.efficacy},
                        {"futility", p.futility},
                        {"no_success", p.no_success},
                        {"efficacy_cumulative", p.cumulative_efficacy()},
                        {"efficacy_se", p.efficacy_se}}
                .dump();
        },
        py::arg("design_json"), py::arg("psi"), py::arg("lam"), py::arg("draws") = 100000, py::arg("seed") = 1);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));

    py::class_<PyEvaluator>(m, "Evaluator")
        .def(py::init<const std::string&, const std::string&, bool, const std::string&>(), py::arg("config_path"),
             py::arg("ensemble_path"), py::arg("interactive") = false, py::arg("evaluation_json") = "")
        .def("evaluate", &PyEvaluator::evaluate, py::arg("design_json"), py::arg("cost_json") = "")
        .def("curve", &PyEvaluator::curve, py::arg("design_json"), py::arg("grid") = std::vector<double>{})
        .def("settings", &PyEvaluator::settings)
        .def_property_readonly("psi0", &PyEvaluator::psi0);

    py::class_<PyEnsemble>(m, "Ensemble")
        .def_static(
            "fit",
            [](const Matrix& X, const std::vector<double>& y, const std::string& config_json) {
                const auto config = config_json.empty() ? BartConfig{} : BartConfig::from_json(parse(config_json));
                py::gil_scoped_release release;
                return PyEnsemble{bart_fit(X, y, config)};
            },
            py::arg("X"), py::arg("y"), py::arg("config_json") = "")
        .def_static(
            "from_json", [](const std::string& s) { return PyEnsemble{BartPosterior::from_json(parse(s))}; },
            py::arg("text"))
        .def("to_json", [](const PyEnsemble& e) { return e.posterior.to_json().dump(); })
        .def(
            "predict",
            [](const PyEnsemble& e, const Matrix& X) {
                const auto p = bart_predict(e.posterior, X);
                return py::make_tuple(p.mean, p.lo, p.hi);
            },
            py::arg("X"))
        .def("inclusion_proportions", [](const PyEnsemble& e) { return e.posterior.inclusion_proportions(); })
        .def_property_readonly("state_count", [](const PyEnsemble& e) { return e.posterior.state_count(); })
        .def_property_readonly("dimension", [](const PyEnsemble& e) { return e.posterior.dimension(); })
        .def("__eq__", [](const PyEnsemble& a, const PyEnsemble& b) { return a.posterior == b.posterior; });
}
