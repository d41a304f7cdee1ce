#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "beamforge/archive.hpp"
#include "beamforge/beamio.hpp"
#include "beamforge/clientloop.hpp"
#include "beamforge/clustersim.hpp"
#include "beamforge/dedisp.hpp"
#include "beamforge/error.hpp"
#include "beamforge/periodsearch.hpp"
#include "beamforge/sensitivity.hpp"
#include "beamforge/workqueue.hpp"

namespace py = pybind11;
using namespace beamforge;

namespace {

py::array_t<double> to_array(const std::vector<double> &v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
  return out;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast> &a) {
  return {a.data(), a.data() + a.size()};
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "beamforge core bindings";

  static py::exception<Error> error_type(m, "BeamforgeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error &e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(error_name(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  // beamio
  py::class_<ObservationParams>(m, "ObservationParams")
      .def(py::init<>())
      .def_readwrite("n_channels", &ObservationParams::n_channels)
      .def_readwrite("channel_bw_mhz", &ObservationParams::channel_bw_mhz)
      .def_readwrite("f_top_mhz", &ObservationParams::f_top_mhz)
      .def_readwrite("t_samp_ms", &ObservationParams::t_samp_ms)
      .def_readwrite("n_samples", &ObservationParams::n_samples)
      .def_readwrite("bits_per_sample", &ObservationParams::bits_per_sample)
      .def_readwrite("beam_id", &ObservationParams::beam_id)
      .def_readwrite("ra_deg", &ObservationParams::ra_deg)
      .def_readwrite("dec_deg", &ObservationParams::dec_deg)
      .def("validate", &ObservationParams::validate)
      .def("duration_s", &ObservationParams::duration_s)
      .def("payload_bytes", &ObservationParams::payload_bytes)
      .def(py::self == py::self);

  py::class_<PulsarSpec>(m, "PulsarSpec")
      .def(py::init<>())
      .def(py::init([](double period_ms, double dm, double duty_cycle, double amplitude) {
             return PulsarSpec{period_ms, dm, duty_cycle, amplitude};
           }),
           py::arg("period_ms"), py::arg("dm"), py::arg("duty_cycle") = 0.05, py::arg("amplitude") = 0.1)
      .def_readwrite("period_ms", &PulsarSpec::period_ms)
      .def_readwrite("dm", &PulsarSpec::dm)
      .def_readwrite("duty_cycle", &PulsarSpec::duty_cycle)
      .def_readwrite("amplitude", &PulsarSpec::amplitude);

  py::class_<FilterbankBlock>(m, "FilterbankBlock")
      .def(py::init<ObservationParams>())
      .def_property_readonly("params", &FilterbankBlock::params)
      .def("sample", &FilterbankBlock::sample)
      .def("set_sample", &FilterbankBlock::set_sample)
      .def("payload", [](const FilterbankBlock &b) {
        const auto p = b.payload();
        return py::bytes(reinterpret_cast<const char *>(p.data()), p.size());
      });

  m.def("synthesize_beam", &synthesize_beam, py::arg("params"), py::arg("pulsar") = std::nullopt,
        py::arg("seed") = 1);
  m.def("decimate", &decimate, py::arg("block"), py::arg("chan_factor") = 4, py::arg("time_factor") = 16);
  m.def("convert_to_timeseries_format", &convert_to_timeseries_format);
  m.def("encode_block", [](const FilterbankBlock &b) {
    const auto v = encode_block(b);
    return py::bytes(reinterpret_cast<const char *>(v.data()), v.size());
  });
  m.def("decode_block", [](py::bytes data) {
    const std::string s = data;
    return decode_block(std::span(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
  });
  m.def("read_block", py::overload_cast<const std::filesystem::path &>(&read_block));
  m.def("write_block", py::overload_cast<const FilterbankBlock &, const std::filesystem::path &>(&write_block));

  // dedisp
  py::class_<DmTrialGrid>(m, "DmTrialGrid")
      .def_readonly("dm_values", &DmTrialGrid::dm_values)
      .def_readonly("dm_min", &DmTrialGrid::dm_min)
      .def_readonly("dm_max", &DmTrialGrid::dm_max)
      .def("__len__", &DmTrialGrid::n_trials);
  m.def("make_dm_grid", &make_dm_grid, py::arg("n_trials") = 450, py::arg("dm_min") = 0.0,
        py::arg("dm_max") = 700.0);
  m.def("dm_delay", &dm_delay);
  m.def("channel_shifts", &channel_shifts);
  m.def("dedisperse", [](const FilterbankBlock &b, double dm) { return to_array(dedisperse(b, dm).values); });

  // periodsearch
  py::class_<Candidate>(m, "Candidate")
      .def_readonly("period_ms", &Candidate::period_ms)
      .def_readonly("freq_hz", &Candidate::freq_hz)
      .def_readonly("dm", &Candidate::dm)
      .def_readonly("snr", &Candidate::snr)
      .def_readonly("fourier_bin", &Candidate::fourier_bin)
      .def_readonly("dm_index", &Candidate::dm_index)
      .def("__repr__", [](const Candidate &c) {
        return "<Candidate P=" + std::to_string(c.period_ms) + " ms DM=" + std::to_string(c.dm) +
               " snr=" + std::to_string(c.snr) + ">";
      });

  py::class_<SearchOptions>(m, "SearchOptions")
      .def(py::init<>())
      .def_readwrite("snr_threshold", &SearchOptions::snr_threshold)
      .def_readwrite("max_candidates", &SearchOptions::max_candidates)
      .def_readwrite("fft_padding", &SearchOptions::fft_padding)
      .def_readwrite("threads", &SearchOptions::threads);

  py::class_<Birdie>(m, "Birdie")
      .def(py::init([](double c, double w) { return Birdie{c, w}; }), py::arg("center_hz"),
           py::arg("half_width_hz"))
      .def_readwrite("center_hz", &Birdie::center_hz)
      .def_readwrite("half_width_hz", &Birdie::half_width_hz);

  m.def(
      "fft_power",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast> &x, double t_samp_ms,
         std::size_t n_fft) {
        TimeSeries ts;
        ts.values = from_array(x);
        ts.t_samp_ms = t_samp_ms;
        const auto spec = fft_power(ts, n_fft);
        return py::make_tuple(to_array(spec.powers), spec.freq_resolution_hz);
      },
      py::arg("values"), py::arg("t_samp_ms"), py::arg("n_fft"));
  m.def("search_all_dms", &search_all_dms, py::arg("block"), py::arg("grid"), py::arg("birdies") = BirdieList{},
        py::arg("opts") = SearchOptions{}, py::call_guard<py::gil_scoped_release>());

  // sensitivity
  py::class_<SensitivityParams>(m, "SensitivityParams")
      .def(py::init<>())
      .def_readwrite("duty_cycle", &SensitivityParams::duty_cycle)
      .def_readwrite("snr_min", &SensitivityParams::snr_min)
      .def_readwrite("t_obs_s", &SensitivityParams::t_obs_s)
      .def_readwrite("bandwidth_mhz", &SensitivityParams::bandwidth_mhz)
      .def_readwrite("n_pol", &SensitivityParams::n_pol)
      .def_readwrite("t_sys_k", &SensitivityParams::t_sys_k)
      .def_readwrite("gain_k_per_jy", &SensitivityParams::gain_k_per_jy)
      .def_readwrite("t_samp_ms", &SensitivityParams::t_samp_ms)
      .def_readwrite("channel_bw_mhz", &SensitivityParams::channel_bw_mhz)
      .def_readwrite("f_center_mhz", &SensitivityParams::f_center_mhz)
      .def_readwrite("dm_step", &SensitivityParams::dm_step);
  m.def("min_flux_density", &min_flux_density);
  m.def("effective_width_ms", &effective_width_ms);

  // clustersim
  py::class_<MachineProfile>(m, "MachineProfile")
      .def(py::init<>())
      .def_readwrite("name", &MachineProfile::name)
      .def_readwrite("download_s", &MachineProfile::download_s)
      .def_readwrite("decimate_s", &MachineProfile::decimate_s)
      .def_readwrite("sc_td_s", &MachineProfile::sc_td_s)
      .def_readwrite("filterbank_s", &MachineProfile::filterbank_s)
      .def_readwrite("hunt_trial_s", &MachineProfile::hunt_trial_s)
      .def_readwrite("best_s", &MachineProfile::best_s)
      .def_readwrite("n_trials", &MachineProfile::n_trials)
      .def("total_min", &MachineProfile::total_min);
  py::class_<SimResult>(m, "SimResult")
      .def_readonly("makespan_s", &SimResult::makespan_s)
      .def_readonly("beams_per_machine", &SimResult::beams_per_machine)
      .def_readonly("link_busy_fraction", &SimResult::link_busy_fraction)
      .def_readonly("download_overlaps", &SimResult::download_overlaps)
      .def("aggregate_rate_per_min", &SimResult::aggregate_rate_per_min)
      .def("total_beams", &SimResult::total_beams);
  m.def("table1_profiles", &table1_profiles);
  m.def("simulate", &simulate, py::arg("profiles"), py::arg("n_beams"), py::arg("stagger") = true);
  m.def("rate_sum_per_min", &rate_sum_per_min);
  m.def("parallel_efficiency", &parallel_efficiency);
  m.def("download_fraction", &download_fraction);

  // archive
  py::class_<MediaSpec>(m, "MediaSpec")
      .def_readonly("name", &MediaSpec::name)
      .def_readonly("capacity_gb", &MediaSpec::capacity_gb)
      .def_readonly("unit_cost", &MediaSpec::unit_cost);
  py::class_<CostReport>(m, "CostReport")
      .def_readonly("n_units", &CostReport::n_units)
      .def_readonly("cost_per_gb_max", &CostReport::cost_per_gb_max)
      .def_readonly("cost_per_gb_actual", &CostReport::cost_per_gb_actual)
      .def_readonly("total_cost", &CostReport::total_cost)
      .def_readonly("fill_fraction", &CostReport::fill_fraction);
  m.def("dvd_june2003", &dvd_june2003);
  m.def("dlt_iv_june2003", &dlt_iv_june2003);
  m.def("cost_report", &cost_report);
  m.def("render_cost_table", &render_cost_table);
  m.def("equatorial_to_galactic", &equatorial_to_galactic);
  m.def("galactic_to_equatorial", &galactic_to_equatorial);
  m.def("format_ra_hms", &format_ra_hms);
  m.def("format_dec_dms", &format_dec_dms);
  m.attr("SURVEY_DATA_GB") = kSurveyDataGb;

  // workqueue
  py::enum_<BeamStatus>(m, "BeamStatus")
      .value("AVAILABLE", BeamStatus::Available)
      .value("CLAIMED", BeamStatus::Claimed)
      .value("DONE", BeamStatus::Done)
      .value("FAILED", BeamStatus::Failed);
  py::class_<BeamRecord>(m, "BeamRecord")
      .def_readonly("beam_id", &BeamRecord::beam_id)
      .def_readonly("status", &BeamRecord::status)
      .def_readonly("data_path", &BeamRecord::data_path)
      .def_readonly("claimant", &BeamRecord::claimant)
      .def_readonly("attempts", &BeamRecord::attempts);
  py::class_<QueueDatabase>(m, "QueueDatabase")
      .def_readonly("version", &QueueDatabase::version)
      .def_readonly("records", &QueueDatabase::records)
      .def("count", &QueueDatabase::count)
      .def("serialize", &QueueDatabase::serialize)
      .def_static("parse", &QueueDatabase::parse);
  py::class_<WorkQueue>(m, "WorkQueue")
      .def(py::init([](std::filesystem::path dir) { return WorkQueue(std::move(dir)); }))
      .def("init", &WorkQueue::init)
      .def("read", &WorkQueue::read)
      .def("claim_next", &WorkQueue::claim_next)
      .def("mark_done", &WorkQueue::mark_done)
      .def("mark_failed", &WorkQueue::mark_failed)
      .def("requeue_stale", &WorkQueue::requeue_stale)
      .def("requeue_failed", &WorkQueue::requeue_failed, py::arg("max_attempts") = 3, py::arg("all") = false)
      .def("snapshot_text", [](const WorkQueue &q) { return format_snapshot(q.snapshot()); });

  // clientloop
  py::class_<StageTiming>(m, "StageTiming")
      .def_readonly("beam_id", &StageTiming::beam_id)
      .def_readonly("total_min", &StageTiming::total_min)
      .def_readonly("n_trials", &StageTiming::n_trials)
      .def("identity_holds", &StageTiming::identity_holds, py::arg("rel_tol") = 0.01)
      .def("to_line", &StageTiming::to_line);
}
