#pragma once

#include <string>

#include "gmmct/experiment.hpp"

namespace gmmct {

/// Sinogram text format: "# key = value" header lines carrying every
/// geometry field, then num_times rows of num_detectors space-separated
/// values printed with 17 significant digits (write-read-write is
/// byte-identical).
std::string sinogram_to_string(const Sinogram& g);
Sinogram sinogram_from_string(const std::string& text);
void save_sinogram(const Sinogram& g, const std::string& path);
Sinogram load_sinogram(const std::string& path);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

void save_config(const ExperimentConfig& cfg, const std::string& path);
ExperimentConfig load_config(const std::string& path);

void save_trajectory_estimate(const TrajectoryEstimate& est,
                              const std::string& path);
TrajectoryEstimate load_trajectory_estimate(const std::string& path);

void save_morphology_estimate(const MorphologyEstimate& est,
                              const std::string& path);
MorphologyEstimate load_morphology_estimate(const std::string& path);

void save_metrics(const MetricsReport& report, const std::string& path);

/// Flat mode table: time_index, detector_index, refined_index, position
/// components, value. Tab separated with one header line.
void save_modes_tsv(const ModeSet& modes, const std::string& path);

void save_stage1_trace(const Stage1Trace& trace, const std::string& path);
void save_stage2_trace(const Stage2Trace& trace, const std::string& path);

}  // namespace gmmct
