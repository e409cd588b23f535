#include "jacreg/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "jacreg/errors.hpp"
#include "jacreg/nifti.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads typed members of one JSON object and rejects keys it never asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  void read(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  template <std::size_t N>
  void read(const char* key, std::array<double, N>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) fail(key, "an array of " + std::to_string(N) + " numbers");
      for (std::size_t i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) fail(key, "an array of numbers");
        out[i] = (*v)[i].get<double>();
      }
    }
  }
  void read(const char* key, Index3& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 3) fail(key, "an array of 3 integers");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!(*v)[i].is_number_integer()) fail(key, "an array of 3 integers");
        out[i] = (*v)[i].get<int>();
      }
    }
  }
  void read(const char* key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) fail(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  void read(const char* key, std::map<int, std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_object()) fail(key, "an object of label -> name");
      out.clear();
      for (const auto& [k, name] : v->items()) {
        int label = 0;
        try {
          std::size_t used = 0;
          label = std::stoi(k, &used);
          if (used != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
          fail(key, "an object keyed by integer labels");
        }
        if (!name.is_string()) fail(key, "an object of label -> name strings");
        out[label] = name.get<std::string>();
      }
    }
  }

  // Child object or array; nullptr when absent.
  const json* child(const char* key) { return find(key); }
  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const std::string& expected) const {
    throw ConfigError(where_ + "." + key + " must be " + expected);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw ConfigError("cannot write " + path.string());
}

std::string resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return fs::absolute(path).lexically_normal().string();
}

// Registration config

void read_unit(const json& j, const std::string& where, RegistrationUnit& u) {
  ObjectReader r(j, where);
  r.read("level_factor", u.level_factor);
  r.read("smoothing_sigma", u.smoothing_sigma);
  r.read("iterations", u.iterations);
  r.read("step_size", u.step_size);
  r.finish();
}

json unit_json(const RegistrationUnit& u) {
  return {{"level_factor", u.level_factor},
          {"smoothing_sigma", u.smoothing_sigma},
          {"iterations", u.iterations},
          {"step_size", u.step_size}};
}

void read_registration(const json& j, RegistrationConfig& cfg) {
  ObjectReader r(j, "registration");
  if (const json* s1 = r.child("stage1")) {
    if (!s1->is_array() || s1->size() != cfg.stage1.size())
      throw ConfigError("registration.stage1 must be an array of 3 units");
    for (std::size_t i = 0; i < cfg.stage1.size(); ++i)
      read_unit((*s1)[i], "registration.stage1[" + std::to_string(i) + "]", cfg.stage1[i]);
  }
  if (const json* s2 = r.child("stage2")) read_unit(*s2, "registration.stage2", cfg.stage2);
  if (const json* l = r.child("loss")) {
    ObjectReader lr(*l, "registration.loss");
    lr.read("lncc_sigma", cfg.loss.lncc_sigma);
    lr.read("eps", cfg.loss.eps);
    lr.read("lambda", cfg.loss.lambda);
    lr.read("reg_subsample", cfg.loss.reg_subsample);
    lr.finish();
  }
  r.read("seed", cfg.seed);
  r.read("convergence_tol", cfg.convergence_tol);
  r.finish();
}

json registration_json(const RegistrationConfig& cfg) {
  json stage1 = json::array();
  for (const auto& u : cfg.stage1) stage1.push_back(unit_json(u));
  return {{"stage1", stage1},
          {"stage2", unit_json(cfg.stage2)},
          {"loss",
           {{"lncc_sigma", cfg.loss.lncc_sigma},
            {"eps", cfg.loss.eps},
            {"lambda", cfg.loss.lambda},
            {"reg_subsample", cfg.loss.reg_subsample}}},
          {"seed", cfg.seed},
          {"convergence_tol", cfg.convergence_tol}};
}

json breakdown_json(const LossBreakdown& b) {
  return {{"sim_ab", b.sim_ab}, {"sim_ba", b.sim_ba}, {"reg", b.reg}, {"total", b.total}};
}

// Report formatting

std::string format6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? format6(*v) : std::string(); }

json cell_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return std::stod(format6(*v));
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> row_cells(const ReportRow& r) {
  return {r.lesion_id,       r.site,           cell(r.baseline_mm3), r.match_kind,
          cell(r.median_detj), cell(r.mean_detj), cell(r.pct_change),  r.subregion,
          cell(r.dsc_pre),   cell(r.dsc_post), cell(r.sdlogj),       cell(r.folding_frac),
          cell(r.runtime_s)};
}

json row_json(const ReportRow& r) {
  return {{"lesion_id", r.lesion_id},
          {"site", r.site},
          {"baseline_mm3", cell_json(r.baseline_mm3)},
          {"match_kind", r.match_kind},
          {"median_detj", cell_json(r.median_detj)},
          {"mean_detj", cell_json(r.mean_detj)},
          {"pct_change", cell_json(r.pct_change)},
          {"subregion", r.subregion},
          {"dsc_pre", cell_json(r.dsc_pre)},
          {"dsc_post", cell_json(r.dsc_post)},
          {"sdlogj", cell_json(r.sdlogj)},
          {"folding_frac", cell_json(r.folding_frac)},
          {"runtime_s", cell_json(r.runtime_s)}};
}

std::string subregion_name(int k, int clusters) {
  if (clusters == 3) {
    static const char* names[] = {"hypo", "intermediate", "hyper"};
    return names[k - 1];
  }
  return "class" + std::to_string(k);
}

void fill_stats(ReportRow& row, const RoiJacobianStats& s) {
  row.median_detj = s.median_detj;
  row.mean_detj = s.mean_detj;
  if (s.median_detj) row.pct_change = percent_volume_change(*s.median_detj);
  row.folding_frac = s.folding_fraction;
}

void require_dims(const Grid3& a, const Grid3& b, const std::string& what) {
  if (a.dims != b.dims)
    throw DataError(what + ": grid " + describe(a) + " does not match " + describe(b));
}

const char* kFieldAb = "field_ab.nii.gz";
const char* kFieldBa = "field_ba.nii.gz";
const char* kLossTrace = "loss_trace.json";

// Phantom config

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json deformation_json(const AnalyticDeformation& d) {
  json m = json::array();
  for (const auto& row : d.matrix) m.push_back(vec_json(row));
  return {{"kind", d.kind_name()},       {"translation", vec_json(d.translation)},
          {"matrix", m},                 {"center", vec_json(d.center)},
          {"core_radius", d.core_radius}, {"rim_width", d.rim_width},
          {"alpha", d.alpha}};
}

AnalyticDeformation read_deformation(const json& j) {
  ObjectReader r(j, "deformation");
  AnalyticDeformation d;
  std::string kind = d.kind_name();
  r.read("kind", kind);
  if (kind == "translation") d.kind = AnalyticDeformation::Kind::translation;
  else if (kind == "linear") d.kind = AnalyticDeformation::Kind::linear;
  else if (kind == "radial_contraction") d.kind = AnalyticDeformation::Kind::radial_contraction;
  else throw ConfigError("deformation.kind must be translation, linear or radial_contraction");
  r.read("translation", d.translation);
  if (const json* m = r.child("matrix")) {
    if (!m->is_array() || m->size() != 3) throw ConfigError("deformation.matrix must be 3x3");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& row = (*m)[i];
      if (!row.is_array() || row.size() != 3) throw ConfigError("deformation.matrix must be 3x3");
      for (std::size_t k = 0; k < 3; ++k) {
        if (!row[k].is_number()) throw ConfigError("deformation.matrix entries must be numbers");
        d.matrix[i][k] = row[k].get<double>();
      }
    }
  }
  r.read("center", d.center);
  r.read("core_radius", d.core_radius);
  r.read("rim_width", d.rim_width);
  r.read("alpha", d.alpha);
  r.finish();
  return d;
}

}  // namespace

const std::vector<std::string> kReportColumns{
    "lesion_id", "site",     "baseline_mm3", "match_kind", "median_detj",  "mean_detj", "pct_change",
    "subregion", "dsc_pre",  "dsc_post",     "sdlogj",     "folding_frac", "runtime_s"};

void AnalysisConfig::validate() const {
  fcm.validate();
  if (!(min_dice > 0.0 && min_dice <= 1.0)) throw ConfigError("analysis.min_dice must lie in (0, 1]");
  if (sdlogj_region != "whole" && sdlogj_region != "tumour")
    throw ConfigError("analysis.sdlogj_region must be \"whole\" or \"tumour\"");
  if (connectivity != 6 && connectivity != 26)
    throw ConfigError("analysis.connectivity must be 6 or 26");
}

void PipelineConfig::validate() const {
  registration.validate();
  analysis.validate();
  if (report_formats.empty()) throw ConfigError("report_formats must not be empty");
  for (const auto& f : report_formats)
    if (f != "csv" && f != "json") throw ConfigError("report_formats entries must be csv or json, got " + f);
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

PipelineConfig parse_pipeline_config(const std::string& json_text, const std::string& base_dir) {
  const json j = parse_json_text(json_text, "pipeline config");
  PipelineConfig cfg;
  ObjectReader r(j, "config");
  if (const json* reg = r.child("registration")) read_registration(*reg, cfg.registration);
  if (const json* a = r.child("analysis")) {
    ObjectReader ar(*a, "analysis");
    if (const json* f = ar.child("fcm")) {
      ObjectReader fr(*f, "analysis.fcm");
      fr.read("clusters", cfg.analysis.fcm.clusters);
      fr.read("fuzziness", cfg.analysis.fcm.fuzziness);
      fr.read("tol", cfg.analysis.fcm.tol);
      fr.read("max_iter", cfg.analysis.fcm.max_iter);
      fr.read("seed", cfg.analysis.fcm.seed);
      fr.finish();
    }
    ar.read("min_dice", cfg.analysis.min_dice);
    ar.read("sdlogj_region", cfg.analysis.sdlogj_region);
    ar.read("connectivity", cfg.analysis.connectivity);
    ar.read("site_names", cfg.analysis.site_names);
    ar.finish();
  }
  if (const json* io = r.child("io")) {
    ObjectReader ir(*io, "io");
    ir.read("baseline_image", cfg.io.baseline_image);
    ir.read("followup_image", cfg.io.followup_image);
    ir.read("baseline_tumour", cfg.io.baseline_tumour);
    ir.read("followup_tumour", cfg.io.followup_tumour);
    ir.read("baseline_organs", cfg.io.baseline_organs);
    ir.read("followup_organs", cfg.io.followup_organs);
    ir.read("output_dir", cfg.io.output_dir);
    ir.finish();
  }
  r.read("report_formats", cfg.report_formats);
  r.read("threads", cfg.threads);
  r.finish();

  const fs::path base(base_dir);
  for (std::string* p : {&cfg.io.baseline_image, &cfg.io.followup_image, &cfg.io.baseline_tumour,
                         &cfg.io.followup_tumour, &cfg.io.baseline_organs, &cfg.io.followup_organs,
                         &cfg.io.output_dir})
    *p = resolve(*p, base);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  const std::string text = read_text(path);
  return parse_pipeline_config(text, fs::absolute(fs::path(path)).parent_path().string());
}

std::string pipeline_config_json(const PipelineConfig& cfg) {
  json names = json::object();
  for (const auto& [label, name] : cfg.analysis.site_names) names[std::to_string(label)] = name;
  const json j = {
      {"registration", registration_json(cfg.registration)},
      {"analysis",
       {{"fcm",
         {{"clusters", cfg.analysis.fcm.clusters},
          {"fuzziness", cfg.analysis.fcm.fuzziness},
          {"tol", cfg.analysis.fcm.tol},
          {"max_iter", cfg.analysis.fcm.max_iter},
          {"seed", cfg.analysis.fcm.seed}}},
        {"min_dice", cfg.analysis.min_dice},
        {"sdlogj_region", cfg.analysis.sdlogj_region},
        {"connectivity", cfg.analysis.connectivity},
        {"site_names", names}}},
      {"io",
       {{"baseline_image", cfg.io.baseline_image},
        {"followup_image", cfg.io.followup_image},
        {"baseline_tumour", cfg.io.baseline_tumour},
        {"followup_tumour", cfg.io.followup_tumour},
        {"baseline_organs", cfg.io.baseline_organs},
        {"followup_organs", cfg.io.followup_organs},
        {"output_dir", cfg.io.output_dir}}},
      {"report_formats", cfg.report_formats},
      {"threads", cfg.threads}};
  return j.dump(2) + "\n";
}

void check_pipeline_paths(const PipelineConfig& cfg, bool registration_outputs) {
  const std::pair<const char*, const std::string*> required[] = {
      {"io.baseline_image", &cfg.io.baseline_image},
      {"io.followup_image", &cfg.io.followup_image},
      {"io.baseline_tumour", &cfg.io.baseline_tumour},
      {"io.followup_tumour", &cfg.io.followup_tumour}};
  for (const auto& [key, p] : required) {
    if (p->empty()) throw ConfigError(std::string(key) + " is required");
    if (!fs::is_regular_file(*p)) throw ConfigError(std::string(key) + " not found: " + *p);
  }
  const std::pair<const char*, const std::string*> optional[] = {
      {"io.baseline_organs", &cfg.io.baseline_organs},
      {"io.followup_organs", &cfg.io.followup_organs}};
  for (const auto& [key, p] : optional)
    if (!p->empty() && !fs::is_regular_file(*p))
      throw ConfigError(std::string(key) + " not found: " + *p);

  if (cfg.io.output_dir.empty()) throw ConfigError("io.output_dir is required");
  const fs::path out(cfg.io.output_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw ConfigError("cannot create output directory " + out.string());
  const fs::path probe = out / ".jacreg_write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw ConfigError("output directory is not writable: " + out.string());
  }
  fs::remove(probe, ec);

  if (registration_outputs)
    for (const char* name : {kFieldAb, kFieldBa, kLossTrace})
      if (!fs::is_regular_file(out / name))
        throw ConfigError("registration output missing (run register first): " + (out / name).string());
}

std::string loss_trace_json(const RegistrationResult& result) {
  json units = json::array();
  for (const auto& t : result.loss_trace) {
    json accepted = json::array();
    for (const auto& b : t.accepted) accepted.push_back(breakdown_json(b));
    units.push_back({{"label", t.label},
                     {"level_factor", t.level_factor},
                     {"stop_reason", t.stop_reason},
                     {"rejected", t.rejected},
                     {"initial", breakdown_json(t.initial)},
                     {"final", breakdown_json(t.final_loss())},
                     {"accepted", accepted}});
  }
  const json j = {{"runtime_seconds", result.runtime_seconds}, {"units", units}};
  return j.dump(2) + "\n";
}

RegistrationResult run_register(const PipelineConfig& cfg) {
  cfg.validate();
  check_pipeline_paths(cfg, false);
  set_thread_count(cfg.threads);

  const Volume3 baseline = nifti::load_volume(cfg.io.baseline_image, IntensityUnits::hounsfield);
  const Volume3 followup = nifti::load_volume(cfg.io.followup_image, IntensityUnits::hounsfield);
  if (!same_shape(baseline.grid(), followup.grid()))
    throw DataError("baseline and follow-up grids differ: " + describe(baseline.grid()) + " vs " +
                    describe(followup.grid()));

  RegistrationResult result = register_images(followup, baseline, cfg.registration);
  try {
    result.field_ab.check_finite();
    result.field_ba.check_finite();
  } catch (const DataError& e) {
    throw NumericalError(std::string("registration diverged: ") + e.what());
  }
  const JacobianMap jac = jacobian_determinant(result.field_ab);

  const fs::path out(cfg.io.output_dir);
  nifti::save(result.field_ab, (out / kFieldAb).string());
  nifti::save(result.field_ba, (out / kFieldBa).string());
  nifti::save(jac.to_volume(), (out / "jacobian.nii.gz").string());
  write_text(out / kLossTrace, loss_trace_json(result));
  write_text(out / "config_echo.json", pipeline_config_json(cfg));
  return result;
}

std::string report_csv(const ResponseReport& report) {
  std::string out;
  for (std::size_t i = 0; i < kReportColumns.size(); ++i)
    out += (i ? "," : "") + kReportColumns[i];
  out += "\n";
  for (const auto& row : report.rows) {
    const auto cells = row_cells(row);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_escape(cells[i]);
    out += "\n";
  }
  return out;
}

std::string report_json(const ResponseReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) rows.push_back(row_json(row));
  json j = {{"columns", kReportColumns}, {"sdlogj_region", report.sdlogj_region}, {"rows", rows}};
  if (!report.config_echo.empty()) j["config"] = json::parse(report.config_echo);
  return j.dump(2) + "\n";
}

std::string lesion_matches_json(const std::vector<LesionMatch>& matches) {
  json arr = json::array();
  for (const auto& m : matches) {
    json overlaps = json::array();
    for (const auto& e : m.overlaps)
      overlaps.push_back({{"baseline_id", e.baseline_id}, {"followup_id", e.followup_id}, {"dice", e.dice}});
    arr.push_back({{"kind", to_string(m.kind)},
                   {"baseline_ids", m.baseline_ids},
                   {"followup_ids", m.followup_ids},
                   {"overlaps", overlaps}});
  }
  return json{{"matches", arr}}.dump(2) + "\n";
}

ResponseReport run_analyze(const PipelineConfig& cfg) {
  cfg.validate();
  check_pipeline_paths(cfg, true);
  set_thread_count(cfg.threads);
  const fs::path out(cfg.io.output_dir);

  const Volume3 baseline = nifti::load_volume(cfg.io.baseline_image, IntensityUnits::hounsfield);
  const Volume3 followup = nifti::load_volume(cfg.io.followup_image, IntensityUnits::hounsfield);
  const LabelMask base_tumour = nifti::load_mask(cfg.io.baseline_tumour);
  const LabelMask follow_tumour = nifti::load_mask(cfg.io.followup_tumour);
  require_dims(base_tumour.grid(), baseline.grid(), "baseline tumour mask");
  require_dims(follow_tumour.grid(), followup.grid(), "follow-up tumour mask");
  require_dims(followup.grid(), baseline.grid(), "follow-up image");
  LabelMask base_organs, follow_organs;
  if (!cfg.io.baseline_organs.empty()) {
    base_organs = nifti::load_mask(cfg.io.baseline_organs);
    require_dims(base_organs.grid(), baseline.grid(), "baseline organ mask");
  }
  if (!cfg.io.followup_organs.empty()) {
    follow_organs = nifti::load_mask(cfg.io.followup_organs);
    require_dims(follow_organs.grid(), followup.grid(), "follow-up organ mask");
  }

  const DisplacementField field_ab = nifti::load_field((out / kFieldAb).string());
  require_dims(field_ab.grid, baseline.grid(), "field_ab");
  double runtime = 0.0;
  {
    const json trace = parse_json_text(read_text((out / kLossTrace).string()), kLossTrace);
    if (!trace.contains("runtime_seconds") || !trace["runtime_seconds"].is_number())
      throw DataError(std::string(kLossTrace) + " lacks runtime_seconds");
    runtime = trace["runtime_seconds"].get<double>();
  }

  const auto& acfg = cfg.analysis;
  const JacobianMap jac = jacobian_determinant(field_ab);
  LesionSet base_lesions = connected_components(base_tumour, acfg.connectivity);
  LesionSet follow_lesions = connected_components(follow_tumour, acfg.connectivity);
  assign_sites(base_lesions, cfg.io.baseline_organs.empty() ? base_tumour : base_organs, acfg.site_names);
  assign_sites(follow_lesions, cfg.io.followup_organs.empty() ? follow_tumour : follow_organs,
               acfg.site_names);
  const auto matches = match_lesions(base_lesions, follow_lesions, field_ab, acfg.min_dice);
  std::map<int, std::string> kind_of;
  for (const auto& m : matches)
    for (int id : m.baseline_ids) kind_of[id] = to_string(m.kind);

  const int clusters = acfg.fcm.clusters;
  const auto subsegment = [&](const Volume3& img, const LabelMask& tumour) {
    if (tumour.count_nonzero() == 0) return LabelMask(tumour.grid());
    return fcm_subsegment(img, tumour, acfg.fcm).class_map;
  };
  const LabelMask base_classes = subsegment(baseline, base_tumour);
  const LabelMask follow_classes = subsegment(followup, follow_tumour);

  ResponseReport report;
  report.sdlogj_region = acfg.sdlogj_region;
  report.matches = matches;
  report.config_echo = pipeline_config_json(cfg);

  const int k_lesions = base_lesions.count();
  const auto lesion_stats = roi_jacobian_stats(jac, base_lesions);
  LabelMask combined(base_tumour.grid());
  for (std::int64_t i = 0; i < combined.size(); ++i) {
    const int id = base_lesions.mask[i];
    if (id > 0 && base_classes[i] > 0) combined[i] = (id - 1) * clusters + base_classes[i];
  }
  const auto sub_stats = roi_jacobian_stats(jac, combined, k_lesions * clusters);
  const double voxel_mm3 = baseline.grid().voxel_volume();

  for (int id = 1; id <= k_lesions; ++id) {
    ReportRow row;
    row.lesion_id = std::to_string(id);
    row.site = base_lesions.site(id);
    row.baseline_mm3 = base_lesions.volumes_mm3.at(id);
    row.match_kind = kind_of.at(id);
    row.subregion = "all";
    fill_stats(row, lesion_stats[static_cast<std::size_t>(id - 1)]);
    report.rows.push_back(row);
    for (int k = 1; k <= clusters; ++k) {
      const auto& s = sub_stats[static_cast<std::size_t>((id - 1) * clusters + k - 1)];
      ReportRow sub;
      sub.lesion_id = row.lesion_id;
      sub.site = row.site;
      sub.baseline_mm3 = static_cast<double>(s.voxel_count) * voxel_mm3;
      sub.match_kind = row.match_kind;
      sub.subregion = subregion_name(k, clusters);
      fill_stats(sub, s);
      report.rows.push_back(sub);
    }
  }

  const LabelMask base_bin = binarize(base_tumour);
  const LabelMask follow_bin = binarize(follow_tumour);
  ReportRow global;
  global.lesion_id = "global";
  global.subregion = "tumour";
  global.dsc_pre = dice(base_bin, follow_bin, 1);
  global.dsc_post = dice(base_bin, warp(follow_bin, field_ab), 1);
  global.sdlogj = sdlogj(jac, acfg.sdlogj_region == "tumour" ? &base_tumour : nullptr).value;
  global.folding_frac = static_cast<double>(jac.folding_count) / static_cast<double>(jac.det.size());
  global.runtime_s = runtime;
  report.rows.push_back(global);

  if (!cfg.io.baseline_organs.empty() && !cfg.io.followup_organs.empty()) {
    const LabelMask follow_warped = warp(follow_organs, field_ab);
    const int max_label = std::max(base_organs.max_label(), follow_organs.max_label());
    for (int label = 1; label <= max_label; ++label) {
      if (base_organs.count(label) == 0 && follow_organs.count(label) == 0) continue;
      ReportRow organ;
      organ.lesion_id = "global";
      const auto it = acfg.site_names.find(label);
      organ.site = it == acfg.site_names.end() ? "label_" + std::to_string(label) : it->second;
      organ.subregion = "organ";
      organ.dsc_pre = dice(base_organs, follow_organs, label);
      organ.dsc_post = dice(base_organs, follow_warped, label);
      report.rows.push_back(organ);
    }
  }

  for (const auto& f : cfg.report_formats) {
    if (f == "csv") write_text(out / "report.csv", report_csv(report));
    if (f == "json") write_text(out / "report.json", report_json(report));
  }
  nifti::save(base_classes, (out / "subseg_baseline.nii.gz").string());
  nifti::save(follow_classes, (out / "subseg_followup.nii.gz").string());
  nifti::save(base_lesions.mask, (out / "lesions_baseline.nii.gz").string());
  write_text(out / "lesion_matches.json", lesion_matches_json(matches));
  write_text(out / "config_echo.json", report.config_echo);
  return report;
}

PhantomConfig parse_phantom_config(const std::string& json_text) {
  const json j = parse_json_text(json_text, "phantom config");
  PhantomConfig cfg;
  auto& s = cfg.spec;
  ObjectReader r(j, "phantom");
  if (const json* g = r.child("grid")) {
    ObjectReader gr(*g, "phantom.grid");
    gr.read("dims", s.grid.dims);
    gr.read("spacing", s.grid.spacing);
    gr.read("origin", s.grid.origin);
    gr.finish();
  }
  if (const json* ls = r.child("lesions")) {
    if (!ls->is_array()) throw ConfigError("phantom.lesions must be an array");
    for (std::size_t i = 0; i < ls->size(); ++i) {
      ObjectReader lr((*ls)[i], "phantom.lesions[" + std::to_string(i) + "]");
      LesionSpec l;
      lr.read("center_mm", l.center_mm);
      lr.read("radius_mm", l.radius_mm);
      lr.read("site", l.site);
      lr.read("composition", l.composition);
      lr.read("intensities", l.intensities);
      lr.finish();
      s.lesions.push_back(l);
    }
  }
  r.read("background", s.background);
  r.read("anatomy_amplitude", s.anatomy_amplitude);
  r.read("anatomy_blobs", s.anatomy_blobs);
  r.read("anatomy_sigma", s.anatomy_sigma);
  r.read("noise_sigma", s.noise_sigma);
  r.read("seed", s.seed);
  if (const json* d = r.child("deformation")) cfg.deformation = read_deformation(*d);
  r.finish();
  return cfg;
}

PhantomConfig load_phantom_config(const std::string& path) { return parse_phantom_config(read_text(path)); }

std::string phantom_config_json(const PhantomConfig& cfg) {
  const auto& s = cfg.spec;
  json lesions = json::array();
  for (const auto& l : s.lesions)
    lesions.push_back({{"center_mm", vec_json(l.center_mm)},
                       {"radius_mm", l.radius_mm},
                       {"site", l.site},
                       {"composition", l.composition},
                       {"intensities", l.intensities}});
  const json j = {{"grid",
                   {{"dims", s.grid.dims}, {"spacing", vec_json(s.grid.spacing)}, {"origin", vec_json(s.grid.origin)}}},
                  {"lesions", lesions},
                  {"background", s.background},
                  {"anatomy_amplitude", s.anatomy_amplitude},
                  {"anatomy_blobs", s.anatomy_blobs},
                  {"anatomy_sigma", s.anatomy_sigma},
                  {"noise_sigma", s.noise_sigma},
                  {"seed", s.seed},
                  {"deformation", deformation_json(cfg.deformation)}};
  return j.dump(2) + "\n";
}

PhantomPair run_phantom(const PhantomConfig& cfg, const std::string& out_dir) {
  cfg.spec.validate();
  cfg.deformation.validate();
  if (out_dir.empty()) throw ConfigError("phantom output directory is required");
  const fs::path out = fs::absolute(fs::path(out_dir)).lexically_normal();
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out.string());

  PhantomPair pair = make_phantom_pair(cfg.spec, cfg.deformation);
  const JacobianMap truth_jac = jacobian_determinant(pair.truth);

  const auto file = [&](const char* name) { return (out / name).string(); };
  nifti::save(pair.baseline, file("baseline.nii.gz"));
  nifti::save(pair.followup, file("followup.nii.gz"));
  nifti::save(pair.baseline_tumour, file("baseline_tumour.nii.gz"));
  nifti::save(pair.followup_tumour, file("followup_tumour.nii.gz"));
  nifti::save(pair.baseline_subregions, file("baseline_subregions.nii.gz"));
  nifti::save(pair.followup_subregions, file("followup_subregions.nii.gz"));
  nifti::save(pair.truth, file("truth_ab.nii.gz"));
  nifti::save(truth_jac.to_volume(), file("truth_jacobian.nii.gz"));

  json base_vol = json::array(), follow_vol = json::array();
  const double voxel_mm3 = cfg.spec.grid.voxel_volume();
  for (std::size_t k = 0; k < cfg.spec.lesions.size(); ++k) {
    const auto label = static_cast<std::int32_t>(k + 1);
    base_vol.push_back(static_cast<double>(pair.baseline_tumour.count(label)) * voxel_mm3);
    follow_vol.push_back(static_cast<double>(pair.followup_tumour.count(label)) * voxel_mm3);
  }
  const double core = cfg.deformation.core_detj();
  const json manifest = {
      {"phantom", json::parse(phantom_config_json(cfg))},
      {"truth",
       {{"kind", cfg.deformation.kind_name()},
        {"core_detj", core},
        {"pct_change", percent_volume_change(core)},
        {"field", "truth_ab.nii.gz"},
        {"jacobian", "truth_jacobian.nii.gz"},
        {"folding_count", truth_jac.folding_count}}},
      {"lesion_volumes_mm3", {{"baseline", base_vol}, {"followup", follow_vol}}},
      {"orientation", "followup o truth ~ baseline; detJ(truth) = followup/baseline volume ratio"}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  PipelineConfig pipe;
  pipe.io.baseline_image = file("baseline.nii.gz");
  pipe.io.followup_image = file("followup.nii.gz");
  pipe.io.baseline_tumour = file("baseline_tumour.nii.gz");
  pipe.io.followup_tumour = file("followup_tumour.nii.gz");
  pipe.io.output_dir = out.string();
  for (std::size_t k = 0; k < cfg.spec.lesions.size(); ++k)
    pipe.analysis.site_names[static_cast<int>(k + 1)] = cfg.spec.lesions[k].site;
  write_text(out / "pipeline.json", pipeline_config_json(pipe));
  return pair;
}

std::string run_eval(const EvalInputs& in) {
  if (in.truth.empty() || in.estimated.empty())
    throw ConfigError("eval needs a truth field and an estimated field");
  for (const std::string* p : {&in.truth, &in.estimated, &in.inverse, &in.baseline_mask, &in.followup_mask})
    if (!p->empty() && !fs::is_regular_file(*p)) throw ConfigError("eval input not found: " + *p);

  const DisplacementField truth = nifti::load_field(in.truth);
  const DisplacementField est = nifti::load_field(in.estimated);
  require_dims(est.grid, truth.grid, "estimated field");
  LabelMask base_mask, follow_mask;
  if (!in.baseline_mask.empty()) {
    base_mask = binarize(nifti::load_mask(in.baseline_mask));
    require_dims(base_mask.grid(), truth.grid, "baseline mask");
  }
  if (!in.followup_mask.empty()) {
    follow_mask = binarize(nifti::load_mask(in.followup_mask));
    require_dims(follow_mask.grid(), truth.grid, "follow-up mask");
  }

  const auto stats_json = [](const ErrorStats& s) {
    return json{{"mean", s.mean}, {"median", s.median}, {"max", s.max}, {"count", s.count}};
  };
  json j;
  j["grid"] = describe(truth.grid);
  j["error_voxels"] = stats_json(displacement_error(est, truth));
  const JacobianMap jac = jacobian_determinant(est);
  j["sdlogj"] = sdlogj(jac).value;
  j["folding_fraction"] = static_cast<double>(jac.folding_count) / static_cast<double>(jac.det.size());

  if (!in.baseline_mask.empty() && base_mask.count_nonzero() > 0) {
    j["error_voxels_baseline_mask"] = stats_json(displacement_error(est, truth, &base_mask));
    const auto roi = roi_jacobian_stats(jac, base_mask, 1).front();
    j["median_detj_baseline_mask"] = roi.median_detj ? json(*roi.median_detj) : json(nullptr);
    const auto truth_roi = roi_jacobian_stats(jacobian_determinant(truth), base_mask, 1).front();
    j["truth_median_detj_baseline_mask"] =
        truth_roi.median_detj ? json(*truth_roi.median_detj) : json(nullptr);
  }
  if (!in.followup_mask.empty()) {
    // Reference contour: the baseline mask, or the follow-up mask carried by the truth.
    const LabelMask reference = in.baseline_mask.empty() ? warp(follow_mask, truth) : base_mask;
    j["dsc_pre"] = dice(reference, follow_mask, 1);
    j["dsc_post"] = dice(reference, warp(follow_mask, est), 1);
  }
  if (!in.inverse.empty()) {
    const DisplacementField inv = nifti::load_field(in.inverse);
    require_dims(inv.grid, truth.grid, "inverse field");
    j["inverse_consistency"] = stats_json(inverse_consistency_error(est, inv));
  }
  return j.dump(2) + "\n";
}

}  // namespace jacreg
