#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "famarl/cli/commands.hpp"
#include "famarl/errors.hpp"

namespace py = pybind11;
using namespace famarl;

namespace {

std::optional<std::filesystem::path> opt(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "famarl core bindings";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<env::WorldConfig>(m, "WorldConfig")
      .def(py::init<>())
      .def_property(
          "task", [](const env::WorldConfig& c) { return env::to_string(c.task); },
          [](env::WorldConfig& c, const std::string& s) { c.task = env::task_from_string(s); })
      .def_readwrite("map_size", &env::WorldConfig::map_size)
      .def_readwrite("min_map_size", &env::WorldConfig::min_map_size)
      .def_readwrite("max_map_size", &env::WorldConfig::max_map_size)
      .def_readwrite("max_steps", &env::WorldConfig::max_steps)
      .def_readwrite("num_walls", &env::WorldConfig::num_walls)
      .def_readwrite("gap_width_frac", &env::WorldConfig::gap_width_frac)
      .def_readwrite("seed", &env::WorldConfig::seed)
      .def("validate", &env::WorldConfig::validate);

  py::class_<env::AgentState>(m, "AgentState")
      .def_property_readonly("position", [](const env::AgentState& s) { return std::pair{s.position.x, s.position.y}; })
      .def_property_readonly("velocity", [](const env::AgentState& s) { return std::pair{s.velocity.x, s.velocity.y}; })
      .def_property_readonly("goal", [](const env::AgentState& s) { return std::pair{s.goal.x, s.goal.y}; })
      .def_property_readonly("walls",
                             [](const env::AgentState& s) {
                               std::vector<std::tuple<double, double, double>> w;
                               for (const auto& x : s.walls) w.emplace_back(x.y, x.gap_lo, x.gap_hi);
                               return w;
                             })
      .def_readonly("step_count", &env::AgentState::step_count)
      .def_readonly("map_size", &env::AgentState::map_size)
      .def_readonly("done", &env::AgentState::done)
      .def("__eq__", [](const env::AgentState& a, const env::AgentState& b) { return a == b; });

  m.def("reset", &env::reset, py::arg("config"), py::arg("episode_seed"));
  m.def(
      "step",
      [](const env::AgentState& s, double ax, double ay, const env::WorldConfig& c) {
        const auto r = env::step(s, {ax, ay}, c);
        return py::make_tuple(r.next_state, r.reward, r.done);
      },
      py::arg("state"), py::arg("ax"), py::arg("ay"), py::arg("config"),
      "Returns (next_state, reward, done).");
  m.def("observe", [](const env::AgentState& s) {
    const auto o = env::observe(s);
    return std::vector<double>(o.begin(), o.end());
  });

  m.def(
      "demo_actions",
      [](const std::string& script, const env::WorldConfig& c, std::uint64_t seed) {
        std::vector<std::pair<double, double>> out;
        for (const auto& a : scripts::generate_demo(scripts::script_from_string(script), c, seed).actions())
          out.emplace_back(a.ax, a.ay);
        return out;
      },
      py::arg("script"), py::arg("config"), py::arg("seed"));

  py::class_<cli::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &cli::RunConfig::parse)
      .def_static("load", &cli::RunConfig::load)
      .def_static("keys", &cli::RunConfig::keys)
      .def("__getitem__", &cli::RunConfig::get)
      .def("__setitem__", &cli::RunConfig::set)
      .def("to_text", &cli::RunConfig::to_text)
      .def("save", &cli::RunConfig::save)
      .def("validate", &cli::RunConfig::validate)
      .def("__eq__", [](const cli::RunConfig& a, const cli::RunConfig& b) { return a == b; });

  m.def("gen_demos", &cli::gen_demos);
  m.def("segment", &cli::segment);
  m.def("calibrate_c", &cli::calibrate_c);
  m.def("train_favae", &cli::train_favae);
  m.def("traverse", &cli::traverse);
  m.def(
      "train_policy", [](const cli::RunConfig& c, const std::string& favae) { cli::train_policy(c, opt(favae)); },
      py::arg("config"), py::arg("favae") = "");
  m.def(
      "evaluate",
      [](const cli::RunConfig& c, const std::string& policy, const std::string& favae, const std::string& script) {
        std::optional<scripts::ScriptKind> k;
        if (!script.empty()) k = scripts::script_from_string(script);
        return cli::evaluate(c, opt(policy), opt(favae), k).dump();
      },
      py::arg("config"), py::arg("policy") = "", py::arg("favae") = "", py::arg("script") = "");
  m.def(
      "check",
      [](const cli::RunConfig& c, const std::string& corpus, const std::string& segments) {
        return cli::check(c, opt(corpus), opt(segments)).dump();
      },
      py::arg("config"), py::arg("corpus") = "", py::arg("segments") = "");
}
