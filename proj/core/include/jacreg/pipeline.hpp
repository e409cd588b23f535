#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jacreg/analysis.hpp"
#include "jacreg/phantom.hpp"
#include "jacreg/registrar.hpp"

namespace jacreg {

struct AnalysisConfig {
  FcmConfig fcm;
  double min_dice = 0.1;
  std::string sdlogj_region = "whole";  // "whole" or "tumour" (baseline tumour voxels)
  int connectivity = 26;
  // Names for the labels of the site mask (organ mask, or the baseline tumour
  // labels when no organ mask is given).
  std::map<int, std::string> site_names;

  void validate() const;
};

// Image A of the registration is the follow-up, B the baseline: field_ab is
// defined on the baseline grid and detJ(field_ab) is the follow-up/baseline
// volume ratio.
struct IoConfig {
  std::string baseline_image;
  std::string followup_image;
  std::string baseline_tumour;
  std::string followup_tumour;
  std::string baseline_organs;  // optional
  std::string followup_organs;  // optional
  std::string output_dir;
};

struct PipelineConfig {
  RegistrationConfig registration;
  AnalysisConfig analysis;
  IoConfig io;
  std::vector<std::string> report_formats{"csv", "json"};
  int threads = 1;

  // Parameters only; throws ConfigError.
  void validate() const;
};

// Unknown keys and wrong types raise ConfigError. Relative io paths are
// resolved against base_dir.
PipelineConfig parse_pipeline_config(const std::string& json_text, const std::string& base_dir = ".");
PipelineConfig load_pipeline_config(const std::string& path);
// Every field, defaults included.
std::string pipeline_config_json(const PipelineConfig& cfg);

// Checks that the inputs exist and the output directory is writable,
// creating it when needed. With registration_outputs the field and trace
// files of a previous register run must be present too. Throws ConfigError.
void check_pipeline_paths(const PipelineConfig& cfg, bool registration_outputs);

std::string loss_trace_json(const RegistrationResult& result);

// Registers follow-up onto baseline and writes field_ab.nii.gz,
// field_ba.nii.gz, jacobian.nii.gz, loss_trace.json and config_echo.json.
RegistrationResult run_register(const PipelineConfig& cfg);

// Report cell values; empty optionals serialise as blank (CSV) or null (JSON).
struct ReportRow {
  std::string lesion_id;  // baseline lesion id, or "global"
  std::string site;
  std::optional<double> baseline_mm3;
  std::string match_kind;
  std::optional<double> median_detj;
  std::optional<double> mean_detj;
  std::optional<double> pct_change;
  std::string subregion;  // "all", "hypo", "intermediate", "hyper", "tumour", "organ"
  std::optional<double> dsc_pre;
  std::optional<double> dsc_post;
  std::optional<double> sdlogj;
  std::optional<double> folding_frac;
  std::optional<double> runtime_s;
};

struct ResponseReport {
  std::vector<ReportRow> rows;
  std::vector<LesionMatch> matches;
  std::string sdlogj_region;
  std::string config_echo;  // pipeline_config_json of the run
};

extern const std::vector<std::string> kReportColumns;

// Numbers carry 6 significant digits; both formats hold the same values.
std::string report_csv(const ResponseReport& report);
std::string report_json(const ResponseReport& report);
std::string lesion_matches_json(const std::vector<LesionMatch>& matches);

// Reads the register outputs and writes the reports selected by
// report_formats, subseg_baseline.nii.gz, subseg_followup.nii.gz,
// lesions_baseline.nii.gz, lesion_matches.json and config_echo.json.
ResponseReport run_analyze(const PipelineConfig& cfg);

struct PhantomConfig {
  PhantomSpec spec;
  AnalyticDeformation deformation;
};

PhantomConfig parse_phantom_config(const std::string& json_text);
PhantomConfig load_phantom_config(const std::string& path);
std::string phantom_config_json(const PhantomConfig& cfg);

// Writes baseline/followup images, tumour and subregion masks, truth_ab.nii.gz
// (the true field_ab), truth_jacobian.nii.gz, manifest.json and a
// pipeline.json whose io points at these files with out_dir as output.
PhantomPair run_phantom(const PhantomConfig& cfg, const std::string& out_dir);

struct EvalInputs {
  std::string truth;      // true field_ab
  std::string estimated;  // estimated field_ab
  std::string inverse;           // optional estimated field_ba
  std::string baseline_mask;     // optional
  std::string followup_mask;     // optional
};

// Deterministic JSON summary: displacement error against truth, Dice before
// and after warping the follow-up mask, SDlogJ, folding and, with inverse,
// the inverse-consistency error. Throws DataError on grid mismatch.
std::string run_eval(const EvalInputs& in);

}  // namespace jacreg
