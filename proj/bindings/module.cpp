#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kdqn/agent.hpp"
#include "kdqn/harness.hpp"

namespace py = pybind11;
using namespace kdqn;

namespace {

env::RoundaboutEnv::Config config_from_optional_json(const std::string& json_text,
                                                     const std::string& mode, uint64_t seed) {
  harness::RunConfig rc;
  if (!json_text.empty()) rc = harness::config_from_json(json_text);
  rc.scenario = mode == "hard" ? env::Scenario::hard(seed) : env::Scenario::normal(seed);
  env::RoundaboutEnv::Config ec;
  ec.scenario = rc.scenario;
  ec.planner = rc.planner;
  ec.inspector = rc.inspector;
  ec.mpc = rc.mpc;
  ec.ablation = rc.ablation;
  return ec;
}

}  // namespace

PYBIND11_MODULE(_kdqn, m) {
  m.doc() = "Roundabout driving simulator with a KAN-backed DQN stack";

  py::enum_<Action>(m, "Action")
      .value("FASTER", Action::Faster)
      .value("SLOWER", Action::Slower)
      .value("IDLE", Action::Idle)
      .value("TURN_RIGHT", Action::TurnRight)
      .value("TURN_LEFT", Action::TurnLeft);

  // B-spline surface, handy for quick numeric checks from Python.
  py::class_<kan::SplineGrid>(m, "SplineGrid")
      .def(py::init([](double lo, double hi, int G, int k) {
             kan::SplineGrid g;
             g.lo = lo;
             g.hi = hi;
             g.G = G;
             g.k = k;
             return g;
           }),
           py::arg("lo") = -1.0, py::arg("hi") = 1.0, py::arg("G") = 5, py::arg("k") = 3)
      .def_readonly("G", &kan::SplineGrid::G)
      .def_readonly("k", &kan::SplineGrid::k)
      .def("basis_count", &kan::SplineGrid::basis_count);
  m.def("bspline_basis", &kan::bspline_basis, py::arg("x"), py::arg("grid"));
  m.def("silu", &kan::silu, py::arg("x"));

  py::class_<kan::QNetwork>(m, "QNetwork")
      .def(py::init([](std::vector<int> widths, int out_dim, int G, int k, uint64_t seed) {
             kan::KanConfig c;
             c.widths = std::move(widths);
             c.out_dim = out_dim;
             c.grid.G = G;
             c.grid.k = k;
             return kan::QNetwork(kan::KanNetwork(c, seed));
           }),
           py::arg("widths"), py::arg("out_dim") = 5, py::arg("G") = 5, py::arg("k") = 3,
           py::arg("seed") = 0)
      .def("forward",
           [](const kan::QNetwork& net, const std::vector<double>& obs) {
             return net.forward(obs);
           })
      .def("num_params", &kan::QNetwork::num_params)
      .def("input_width", &kan::QNetwork::input_width)
      .def("output_width", &kan::QNetwork::output_width)
      .def("regularization", &kan::QNetwork::regularization)
      .def("save", [](const kan::QNetwork& net, const std::string& path) {
        kan::save_checkpoint(net, path);
      })
      .def_static("load", [](const std::string& path) { return kan::load_checkpoint(path); });

  m.def("ttc", [](double gap, double v_ev, double v_nv) { return planner::ttc(gap, v_ev, v_nv).value; },
        py::arg("gap"), py::arg("v_ev"), py::arg("v_nv"),
        "Time to collision; inf when the gap is not closing");

  py::class_<env::StepInfo>(m, "StepInfo")
      .def_readonly("collision", &env::StepInfo::collision)
      .def_readonly("arrived", &env::StepInfo::arrived)
      .def_readonly("truncated", &env::StepInfo::truncated)
      .def_readonly("lane_changed", &env::StepInfo::lane_changed)
      .def_property_readonly("executed",
                             [](const env::StepInfo& i) { return i.executed; })
      .def_property_readonly("mode", [](const env::StepInfo& i) {
        return i.mode == inspector::Mode::Direct ? "direct" : "idm_follow";
      });

  py::class_<env::RoundaboutEnv>(m, "Env")
      .def(py::init([](const std::string& mode, uint64_t seed, const std::string& config_json) {
             return new env::RoundaboutEnv(config_from_optional_json(config_json, mode, seed));
           }),
           py::arg("mode") = "normal", py::arg("seed") = 0, py::arg("config_json") = "")
      .def("reset", [](env::RoundaboutEnv& e) { return e.reset(); })
      .def("reset", [](env::RoundaboutEnv& e, uint64_t seed) { return e.reset(seed); })
      .def(
          "step",
          [](env::RoundaboutEnv& e, Action a) {
            const env::StepResult r = e.step(a);
            return py::make_tuple(r.obs, r.reward, r.done, r.info);
          },
          py::arg("action"))
      .def("observation_size", &env::RoundaboutEnv::observation_size)
      .def("done", &env::RoundaboutEnv::done)
      .def("steps", &env::RoundaboutEnv::steps)
      .def("world_fingerprint", &env::RoundaboutEnv::world_fingerprint)
      .def("write_trace", &env::RoundaboutEnv::write_trace)
      .def("ev_speed",
           [](const env::RoundaboutEnv& e) { return e.world().ev().state.speed; })
      .def("num_vehicles", [](const env::RoundaboutEnv& e) { return e.world().vehicles.size(); });

  m.def("greedy_action", [](const kan::QNetwork& net, const std::vector<double>& obs) {
    return static_cast<Action>(agent::argmax_action(net.forward(obs)));
  });

  m.def(
      "train",
      [](const std::string& config_json, const std::string& out_dir) {
        harness::RunConfig rc = harness::config_from_json(config_json);
        if (!out_dir.empty()) rc.output_dir = out_dir;
        const harness::TrainResult tr = harness::train(rc);
        py::list out;
        for (const auto& s : tr.seeds) {
          py::dict d;
          d["seed"] = s.seed;
          d["episodes"] = s.metrics.rows.size();
          d["collision_rate_last100"] = s.metrics.collision_rate(100);
          d["mean_return_last100"] = s.metrics.mean_return(100);
          d["checkpoint"] = s.checkpoint_path;
          d["metrics_csv"] = s.metrics_csv;
          out.append(d);
        }
        return out;
      },
      py::arg("config_json"), py::arg("out_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& mode, uint64_t seed, int episodes,
         const std::string& out_csv) {
        harness::RunConfig rc;
        const env::Scenario sc =
            mode == "hard" ? env::Scenario::hard(seed) : env::Scenario::normal(seed);
        const harness::Metrics m2 = harness::evaluate(checkpoint, sc, episodes, rc, out_csv);
        py::dict d;
        d["episodes"] = m2.rows.size();
        d["collision_rate"] = m2.collision_rate();
        d["mean_speed"] = m2.mean_speed();
        d["mean_return"] = m2.mean_return();
        return d;
      },
      py::arg("checkpoint"), py::arg("mode") = "normal", py::arg("seed") = 0,
      py::arg("episodes") = 10, py::arg("out_csv") = "");

  m.def("default_config_json", []() {
    return harness::config_to_json(harness::RunConfig{});
  });
}
