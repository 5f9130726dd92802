#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cotfaith/analysis/cma.hpp"
#include "cotfaith/analysis/logit_lens.hpp"
#include "cotfaith/corpus.hpp"
#include "cotfaith/judge.hpp"
#include "cotfaith/metrics/faithful_at_k.hpp"
#include "cotfaith/metrics/fur.hpp"
#include "cotfaith/report.hpp"
#include "cotfaith/run_store.hpp"
#include "cotfaith/stats.hpp"

namespace py = pybind11;
using namespace cotfaith;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core operations of the cotfaith toolkit";

  py::register_exception<Error>(m, "CotfaithError");

  // --- corpus ---------------------------------------------------------------
  py::enum_<HintKind>(m, "HintKind")
      .value("professor", HintKind::Professor)
      .value("metadata", HintKind::Metadata)
      .value("black_squares", HintKind::BlackSquares);

  py::class_<Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("id", &Example::id)
      .def_readwrite("question", &Example::question)
      .def_readwrite("options", &Example::options)
      .def_readwrite("gold", &Example::gold)
      .def_readwrite("dataset", &Example::dataset)
      .def("labels", &Example::labels)
      .def("validate", &Example::validate);

  py::class_<HintSpec>(m, "HintSpec")
      .def(py::init<>())
      .def_readwrite("kind", &HintSpec::kind)
      .def_readwrite("hinted_label", &HintSpec::hinted_label)
      .def_readwrite("seed", &HintSpec::seed);

  py::class_<HintedPrompt>(m, "HintedPrompt")
      .def_readonly("text", &HintedPrompt::text)
      .def_readonly("hint", &HintedPrompt::hint)
      .def_readonly("fewshot_ids", &HintedPrompt::fewshot_ids)
      .def_readonly("example_id", &HintedPrompt::example_id);

  m.def("load_corpus",
        [](const std::filesystem::path& p) { return load_corpus(p); },
        py::arg("path"));
  m.def("make_hint", &make_hint, py::arg("example"), py::arg("baseline_pred"),
        py::arg("kind"), py::arg("seed"));
  m.def(
      "render_prompt",
      [](const Example& ex, const std::optional<HintSpec>& hint,
         const std::vector<Example>& fewshot) { return render_prompt(ex, hint, fewshot); },
      py::arg("example"), py::arg("hint") = std::nullopt,
      py::arg("fewshot") = std::vector<Example>{});

  // --- estimators and statistics ---------------------------------------------
  py::class_<EffectEstimate>(m, "EffectEstimate")
      .def_readonly("effect", &EffectEstimate::effect)
      .def_readonly("target", &EffectEstimate::target)
      .def_readonly("point", &EffectEstimate::point)
      .def_readonly("ci_low", &EffectEstimate::ci_low)
      .def_readonly("ci_high", &EffectEstimate::ci_high)
      .def_readonly("resamples", &EffectEstimate::resamples)
      .def_readonly("n", &EffectEstimate::n);

  m.def("faithful_at_k", &faithful_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
  m.def("faithful_at_k_rational", &faithful_at_k_rational, py::arg("n"), py::arg("c"),
        py::arg("k"));

  py::class_<SampleTally>(m, "SampleTally")
      .def(py::init([](std::string id, long n, long c, long total) {
             SampleTally t;
             t.example_id = std::move(id);
             t.n = n;
             t.c = c;
             t.total_drawn = total;
             return t;
           }),
           py::arg("example_id"), py::arg("n"), py::arg("c"), py::arg("total_drawn") = 0)
      .def_readwrite("example_id", &SampleTally::example_id)
      .def_readwrite("n", &SampleTally::n)
      .def_readwrite("c", &SampleTally::c)
      .def_readwrite("total_drawn", &SampleTally::total_drawn);

  m.def(
      "faithful_at_k_curve",
      [](const std::vector<SampleTally>& tallies, const std::vector<int>& ks, int resamples,
         uint64_t seed) {
        BootstrapConfig cfg;
        cfg.resamples = resamples;
        cfg.seed = seed;
        return faithful_at_k_curve(tallies, ks, cfg);
      },
      py::arg("tallies"), py::arg("ks"), py::arg("resamples") = 10000, py::arg("seed") = 0);

  m.def(
      "bca_interval",
      [](std::vector<double> sample, double level, int resamples, uint64_t seed) {
        BootstrapConfig cfg;
        cfg.level = level;
        cfg.resamples = resamples;
        cfg.seed = seed;
        return bca_interval(std::move(sample), cfg);
      },
      py::arg("sample"), py::arg("level") = 0.95, py::arg("resamples") = 10000,
      py::arg("seed") = 0);
  m.def(
      "percentile_interval",
      [](std::vector<double> sample, double level, int resamples, uint64_t seed) {
        BootstrapConfig cfg;
        cfg.level = level;
        cfg.resamples = resamples;
        cfg.seed = seed;
        return percentile_bootstrap_mean(std::move(sample), cfg);
      },
      py::arg("sample"), py::arg("level") = 0.95, py::arg("resamples") = 10000,
      py::arg("seed") = 0);

  // --- judge arithmetic -------------------------------------------------------
  py::class_<AgreementReport>(m, "AgreementReport")
      .def_readonly("accuracy", &AgreementReport::accuracy)
      .def_readonly("precision", &AgreementReport::precision)
      .def_readonly("recall", &AgreementReport::recall)
      .def_readonly("false_positive_rate", &AgreementReport::false_positive_rate)
      .def_readonly("tp", &AgreementReport::tp)
      .def_readonly("fp", &AgreementReport::fp)
      .def_readonly("fn", &AgreementReport::fn)
      .def_readonly("tn", &AgreementReport::tn);

  m.def(
      "agreement",
      [](const std::vector<bool>& predicted, const std::vector<bool>& human) {
        return agreement(predicted, human);
      },
      py::arg("predicted"), py::arg("human"));
  m.def(
      "lexical_match",
      [](const std::string& cot, HintKind kind) {
        HintSpec spec;
        spec.kind = kind;
        spec.hinted_label = "A";
        return lexical_match(cot, spec);
      },
      py::arg("cot"), py::arg("kind"));

  // --- fur helpers -------------------------------------------------------------
  m.def(
      "segment_steps",
      [](const std::string& cot) { return segment_steps(cot).steps; }, py::arg("cot"));
  m.def("efficacy", &efficacy, py::arg("p_base"), py::arg("p_unlearned"));

  py::class_<LrGridPoint>(m, "LrGridPoint")
      .def(py::init([](double lr, double eff, double spec, double ff) {
             LrGridPoint p;
             p.lr = lr;
             p.mean_efficacy = eff;
             p.mean_specificity = spec;
             p.faithful_fraction = ff;
             return p;
           }),
           py::arg("lr"), py::arg("mean_efficacy"), py::arg("mean_specificity"),
           py::arg("faithful_fraction") = 0.0)
      .def_readonly("lr", &LrGridPoint::lr)
      .def_readonly("mean_efficacy", &LrGridPoint::mean_efficacy)
      .def_readonly("mean_specificity", &LrGridPoint::mean_specificity)
      .def_readonly("faithful_fraction", &LrGridPoint::faithful_fraction);

  m.def(
      "select_learning_rate",
      [](std::vector<LrGridPoint> grid, double floor) {
        auto result = select_learning_rate(std::move(grid), floor);
        return result.chosen_lr;
      },
      py::arg("grid"), py::arg("specificity_floor") = 0.95);

  // --- lens helpers -------------------------------------------------------------
  py::class_<LensParams>(m, "LensParams")
      .def(py::init<>())
      .def_readwrite("vocab", &LensParams::vocab)
      .def_readwrite("dim", &LensParams::dim)
      .def_readwrite("unembed", &LensParams::unembed)
      .def_readwrite("ln_gamma", &LensParams::ln_gamma)
      .def_readwrite("ln_beta", &LensParams::ln_beta)
      .def_readwrite("ln_eps", &LensParams::ln_eps);

  m.def("lens_decode", &lens_decode, py::arg("z"), py::arg("lens"));
  m.def(
      "classify_pattern",
      [](const std::vector<std::string>& window) -> std::optional<std::string> {
        auto p = classify_pattern(window);
        if (!p) return std::nullopt;
        return std::string(to_string(*p));
      },
      py::arg("window"));

  // --- store / report ------------------------------------------------------------
  m.def(
      "table_counts",
      [](const std::filesystem::path& run_dir) {
        const RunStore store = RunStore::open(run_dir);
        const CountsRow row = table_counts(store);
        return py::make_tuple(row.unfaithful, row.changed, row.total);
      },
      py::arg("run_dir"), "Unfaithful/Changed/Total counts from a run directory");
}
