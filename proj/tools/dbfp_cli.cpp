// Command line front end: tensor encode/decode, table builds, the softmax,
// matmul and attention kernels, the sweep harnesses, and the pipeline timing
// model.  Every JSON report embeds a schema_version, the fully resolved
// configuration and the seed, so identical invocations produce identical
// bytes.
//
// Exit codes: 0 success, 2 command line misuse, 3 unreadable or malformed
// data file, 1 anything else.

#include <dbfp/dbfp.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace {

using json = nlohmann::ordered_json;

constexpr int kSchemaVersion = 1;

json shape_json(const std::vector<std::size_t>& shape) {
  json a = json::array();
  for (std::size_t d : shape) a.push_back(d);
  return a;
}

json bfp_json(const dbfp::BfpConfig& c) {
  return json{{"mantissa_bits", c.mantissa_bits},
              {"exponent_bits", c.exponent_bits},
              {"rounding", "nearest_even"},
              {"pivot_policy", dbfp::to_string(c.pivot_policy)}};
}

json grouping_json(const dbfp::GroupingConfig& g) {
  json j{{"k", g.k}, {"beta", g.beta}};
  j["delta"] = g.delta ? json(*g.delta) : json("auto");
  j["max_iters"] = g.max_iters;
  j["tol"] = g.tol;
  return j;
}

json lut_config_json(const dbfp::LutConfig& c) {
  return json{{"table_size", c.table_size},
              {"index_bits", c.index_bits},
              {"domain_lo", c.domain_lo},
              {"domain_hi", c.domain_hi},
              {"target", "exp"},
              {"entry_format", bfp_json(c.entry_format)},
              {"build_grid_bits", c.build_grid_bits}};
}

json divider_json(const dbfp::DividerConfig& d) {
  return json{{"index_bits", d.index_bits},
              {"out_fraction_bits", d.out_fraction_bits}};
}

json pipeline_json(const dbfp::PipelineConfig& p) {
  json depths;
  for (std::size_t i = 0; i < dbfp::pipeline_stages.size(); ++i)
    depths[std::string(dbfp::to_string(dbfp::pipeline_stages[i]))] =
        p.stage_depths[i];
  return json{{"bandwidth", p.bandwidth},
              {"stage_depths", depths},
              {"lut_swap_penalty", p.lut_swap_penalty},
              {"adder_tree_levels", p.adder_tree_levels()}};
}

json sim_report_json(const dbfp::SimReport& r) {
  json stages, fractions;
  for (dbfp::PipelineStage s : dbfp::pipeline_stages) {
    stages[std::string(dbfp::to_string(s))] = r.stage_cycles(s);
    fractions[std::string(dbfp::to_string(s))] = r.stage_fraction(s);
  }
  return json{{"total_cycles", r.total_cycles},
              {"beats", r.beats},
              {"swaps", r.swaps},
              {"stages", stages},
              {"fractions", fractions}};
}

// seed is null for commands that consume no randomness.
json report_skeleton(const char* command, json config, json seed = json()) {
  return json{{"schema_version", kSchemaVersion},
              {"command", command},
              {"seed", std::move(seed)},
              {"config", std::move(config)}};
}

void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw dbfp::IoError("cannot open " + p.string() + " for writing");
  os << text;
  os.flush();
  if (!os) throw dbfp::IoError("short write to " + p.string());
}

// Empty path: print to stdout instead.
void emit_report(const std::string& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) std::cout << text;
  else write_text_file(path, text);
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::vector<double>> gaussian_rows(std::size_t rows, std::size_t length,
                                               double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<std::vector<double>> out(rows);
  for (auto& r : out) {
    r.resize(length);
    for (double& x : r) x = dist(rng);
  }
  return out;
}

// ---- shared option bundles ----

struct FormatOptions {
  dbfp::BfpConfig cfg;

  void attach(CLI::App& app) {
    app.add_option("--m", cfg.mantissa_bits, "magnitude bits per element (sign separate)")
        ->capture_default_str();
    app.add_option("--e", cfg.exponent_bits, "shared exponent width in bits")
        ->capture_default_str();
  }
};

struct GroupingOptions {
  dbfp::GroupingConfig cfg;
  double delta = 0.0;
  CLI::Option* delta_opt = nullptr;

  void attach(CLI::App& app) {
    app.add_option("--groups", cfg.k, "exponent clusters per block")->capture_default_str();
    app.add_option("--beta", cfg.beta, "membership fuzzifier, > 1")->capture_default_str();
    delta_opt = app.add_option("--delta", delta,
                               "outlier distance; fitted from the data when omitted");
    app.add_option("--max-iters", cfg.max_iters, "optimizer iteration cap")
        ->capture_default_str();
    app.add_option("--tol", cfg.tol, "centroid movement stopping threshold")
        ->capture_default_str();
  }

  dbfp::GroupingConfig resolve() const {
    dbfp::GroupingConfig g = cfg;
    if (delta_opt != nullptr && delta_opt->count() > 0) g.delta = delta;
    return g;
  }
};

struct DividerOptions {
  dbfp::DividerConfig cfg;

  void attach(CLI::App& app) {
    app.add_option("--div-bits", cfg.index_bits, "reciprocal table index bits")
        ->capture_default_str();
    app.add_option("--div-frac", cfg.out_fraction_bits, "quotient fraction bits")
        ->capture_default_str();
  }
};

// Either loads a table from --lut or builds one from the shape flags.
struct LutOptions {
  dbfp::LutConfig cfg;
  std::string path;

  void attach_shape(CLI::App& app) {
    app.add_option("--table-size", cfg.table_size, "breakpoints (intervals + 1)")
        ->capture_default_str();
    app.add_option("--lo", cfg.domain_lo, "domain lower edge")->capture_default_str();
    app.add_option("--hi", cfg.domain_hi, "domain upper edge")->capture_default_str();
    app.add_option("--entry-m", cfg.entry_format.mantissa_bits, "entry magnitude bits")
        ->capture_default_str();
    app.add_option("--entry-e", cfg.entry_format.exponent_bits, "entry exponent bits")
        ->capture_default_str();
    app.add_option("--grid-bits", cfg.build_grid_bits, "build/certification grid resolution")
        ->capture_default_str();
  }

  void attach_index(CLI::App& app) {
    app.add_option("--lut-bits", cfg.index_bits, "index bits; 2^k entries")
        ->capture_default_str();
  }

  void attach_load(CLI::App& app) {
    app.add_option("--lut", path, "table file; built from the shape flags when omitted");
  }

  dbfp::DhLut resolve() const {
    if (!path.empty()) return dbfp::load_dlt(path);
    return dbfp::build_dh_lut(cfg);
  }

  json to_json(const dbfp::DhLut& lut) const {
    json j{{"source", path.empty() ? std::string("built") : path}};
    j.update(lut_config_json(lut.config));
    j["build_mae"] = lut.build_mae;
    j["certified_max_error"] = lut.certified_max_error;
    j["common_exponent"] = lut.common_exponent();
    return j;
  }
};

std::size_t lut_memory_bits(const dbfp::LutConfig& c) {
  // sign + magnitude bits per entry, 2^k entries
  return (std::size_t{1} << c.index_bits) *
         static_cast<std::size_t>(c.entry_format.mantissa_bits + 1);
}

// ---- subcommands ----

struct EncodeOpts {
  std::string in, out, report;
  FormatOptions fmt;
  GroupingOptions grp;
  std::size_t block = 128;
  std::string pivot = "median";
};

void run_encode(const EncodeOpts& o) {
  const dbfp::RealTensor t = dbfp::load_dbt(o.in);
  const dbfp::GroupingConfig grp = o.grp.resolve();
  const dbfp::DbfpTensor enc =
      dbfp::build_dbfp(t, o.fmt.cfg, grp, o.block, dbfp::pivot_policy_from_string(o.pivot));
  dbfp::save_dbf(o.out, enc);
  if (o.report.empty()) return;

  int exp_lo = 0, exp_hi = 0;
  if (!enc.groups.empty()) {
    exp_lo = exp_hi = enc.groups.front().block.shared_exponent;
    for (const auto& g : enc.groups) {
      exp_lo = std::min(exp_lo, g.block.shared_exponent);
      exp_hi = std::max(exp_hi, g.block.shared_exponent);
    }
  }
  json rep = report_skeleton("encode", json{{"format", bfp_json(enc.config)},
                                            {"grouping", grouping_json(grp)},
                                            {"block_size", o.block},
                                            {"group_pivot", o.pivot}});
  rep["input"] = json{{"path", o.in},
                      {"shape", shape_json(t.shape)},
                      {"elements", t.element_count()}};
  rep["output"] = json{{"path", o.out},
                       {"groups", enc.groups.size()},
                       {"saturations", enc.total_saturations()},
                       {"shared_exponent_min", exp_lo},
                       {"shared_exponent_max", exp_hi}};
  emit_report(o.report, rep);
}

struct DecodeOpts {
  std::string in, out;
  std::string dtype = "f64";
};

void run_decode(const DecodeOpts& o) {
  const dbfp::DbfpTensor enc = dbfp::load_dbf(o.in);
  const dbfp::RealTensor t = dbfp::decode_tensor(enc);
  dbfp::save_dbt(o.out, t,
                 o.dtype == "f32" ? dbfp::TensorDtype::f32 : dbfp::TensorDtype::f64);
}

struct BuildLutOpts {
  std::string out, report;
  LutOptions lut;
};

void run_build_lut(const BuildLutOpts& o) {
  const dbfp::DhLut lut = dbfp::build_dh_lut(o.lut.cfg);
  dbfp::save_dlt(o.out, lut);
  if (o.report.empty()) return;

  json intervals = json::array();
  for (const auto& iv : lut.intervals)
    intervals.push_back(json{{"lo", iv.lo},
                             {"hi", iv.hi},
                             {"shared_exponent", iv.shared_exponent},
                             {"cells", iv.mantissas.size()}});
  json rep = report_skeleton("build-lut", lut_config_json(lut.config));
  rep["output"] = json{{"path", o.out},
                       {"breakpoints", lut.partition.points},
                       {"intervals", intervals},
                       {"common_exponent", lut.common_exponent()},
                       {"build_mae", lut.build_mae},
                       {"certified_max_error", lut.certified_max_error},
                       {"memory_bits", lut_memory_bits(lut.config)}};
  emit_report(o.report, rep);
}

struct SoftmaxOpts {
  std::string in, out;
  LutOptions lut;
  FormatOptions fmt;
  GroupingOptions grp;
  DividerOptions div;
  bool no_grouping = false;
  std::string pivot = "max";
};

void run_softmax(const SoftmaxOpts& o) {
  const dbfp::RealTensor t = dbfp::load_dbt(o.in);
  const dbfp::DhLut lut = o.lut.resolve();
  dbfp::SoftmaxConfig cfg;
  cfg.value_format = o.fmt.cfg;
  cfg.grouping = o.grp.resolve();
  cfg.use_grouping = !o.no_grouping;
  cfg.ungrouped_pivot = dbfp::pivot_policy_from_string(o.pivot);
  cfg.divider = o.div.cfg;

  const std::size_t len = t.row_length();
  const std::size_t rows = t.row_count();
  json row_reports = json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    const dbfp::SoftmaxOutput so =
        dbfp::softmax_dbfp(std::span(t.data.data() + r * len, len), lut, cfg);
    json quotients = json::array();
    for (const dbfp::DbfpValue& q : so.quotients) quotients.push_back(q.decode());
    row_reports.push_back(json{{"probabilities", so.probabilities},
                               {"quotients", quotients},
                               {"numerators", so.numerators},
                               {"denominator", so.denominator},
                               {"common_exponent", so.common_exponent},
                               {"saturations", so.saturation_count},
                               {"shared_exponent_cancelled", so.shared_exponent_cancelled},
                               {"max_input", so.max_input}});
  }

  json rep = report_skeleton(
      "softmax", json{{"value_format", bfp_json(cfg.value_format)},
                      {"grouping", grouping_json(cfg.grouping)},
                      {"use_grouping", cfg.use_grouping},
                      {"ungrouped_pivot", o.pivot},
                      {"divider", divider_json(cfg.divider)},
                      {"lut", o.lut.to_json(lut)}});
  rep["input"] = json{{"path", o.in}, {"shape", shape_json(t.shape)}};
  if (rows == 1) rep["probabilities"] = row_reports.front()["probabilities"];
  rep["rows"] = std::move(row_reports);
  emit_report(o.out, rep);
}

struct MatmulOpts {
  std::string a, b, out, report;
  FormatOptions fmt;
  GroupingOptions grp;
  std::size_t block = 128;
  std::string pivot = "median";
  std::string out_pivot = "max";
};

void run_matmul(const MatmulOpts& o) {
  const dbfp::RealTensor a = dbfp::load_dbt(o.a);
  const dbfp::RealTensor b = dbfp::load_dbt(o.b);
  const dbfp::GroupingConfig grp = o.grp.resolve();
  const dbfp::PivotPolicy pivot = dbfp::pivot_policy_from_string(o.pivot);
  const dbfp::DbfpTensor ad = dbfp::build_dbfp(a, o.fmt.cfg, grp, o.block, pivot);
  const dbfp::DbfpTensor btd =
      dbfp::build_dbfp(dbfp::transpose(b), o.fmt.cfg, grp, o.block, pivot);
  dbfp::MatmulConfig mc;
  mc.out_pivot = dbfp::pivot_policy_from_string(o.out_pivot);
  mc.out_block_size = o.block;
  const dbfp::DbfpTensor cd = dbfp::matmul_dbfp(ad, btd, mc);
  dbfp::save_dbt(o.out, dbfp::decode_tensor(cd));
  if (o.report.empty()) return;

  json rep = report_skeleton("matmul", json{{"format", bfp_json(o.fmt.cfg)},
                                            {"grouping", grouping_json(grp)},
                                            {"block_size", o.block},
                                            {"group_pivot", o.pivot},
                                            {"out_pivot", o.out_pivot}});
  rep["input"] = json{{"a", o.a},
                      {"b", o.b},
                      {"a_shape", shape_json(a.shape)},
                      {"b_shape", shape_json(b.shape)}};
  rep["output"] = json{{"path", o.out},
                       {"shape", shape_json(cd.shape)},
                       {"a_saturations", ad.total_saturations()},
                       {"b_saturations", btd.total_saturations()},
                       {"out_saturations", cd.total_saturations()}};
  emit_report(o.report, rep);
}

struct AttentionOpts {
  std::string q, k, v, out, report;
  LutOptions lut;
  FormatOptions fmt;
  GroupingOptions grp;
  DividerOptions div;
  bool no_grouping = false;
  std::size_t block = 128;
  int scale_bits = 14;
};

void run_attention(const AttentionOpts& o) {
  const dbfp::RealTensor q = dbfp::load_dbt(o.q);
  const dbfp::RealTensor k = dbfp::load_dbt(o.k);
  const dbfp::RealTensor v = dbfp::load_dbt(o.v);
  const dbfp::DhLut lut = o.lut.resolve();
  dbfp::AttentionConfig cfg;
  cfg.softmax.value_format = o.fmt.cfg;
  cfg.softmax.grouping = o.grp.resolve();
  cfg.softmax.use_grouping = !o.no_grouping;
  cfg.softmax.divider = o.div.cfg;
  cfg.block_size = o.block;
  cfg.scale_fixed_bits = o.scale_bits;

  const dbfp::AttentionResult res = dbfp::attention_forward(q, k, v, lut, cfg);
  dbfp::save_dbt(o.out, res.output);
  if (o.report.empty()) return;

  json rep = report_skeleton(
      "attention", json{{"value_format", bfp_json(cfg.softmax.value_format)},
                        {"grouping", grouping_json(cfg.softmax.grouping)},
                        {"use_grouping", cfg.softmax.use_grouping},
                        {"divider", divider_json(cfg.softmax.divider)},
                        {"lut", o.lut.to_json(lut)},
                        {"block_size", o.block},
                        {"scale_fixed_bits", o.scale_bits}});
  rep["input"] = json{{"q", o.q}, {"k", o.k}, {"v", o.v},
                      {"q_shape", shape_json(q.shape)},
                      {"k_shape", shape_json(k.shape)},
                      {"v_shape", shape_json(v.shape)}};
  rep["output"] = json{{"path", o.out},
                       {"shape", shape_json(res.output.shape)},
                       {"conversions", res.conversions},
                       {"score_saturations", res.score_saturations},
                       {"scale_saturations", res.scale_saturations},
                       {"softmax_saturations", res.softmax_saturations},
                       {"output_saturations", res.output_saturations}};
  emit_report(o.report, rep);
}

struct SweepParetoOpts {
  int k_lo = 4, k_hi = 9;
  std::size_t rows = 100, length = 128;
  double stddev = 2.0;
  std::uint64_t seed = 20240814;
  std::string out, csv;
  LutOptions lut;
  FormatOptions fmt;
  GroupingOptions grp;
  DividerOptions div;
};

void run_sweep_pareto(const SweepParetoOpts& o) {
  const auto sample = gaussian_rows(o.rows, o.length, o.stddev, o.seed);
  dbfp::SoftmaxConfig cfg;
  cfg.value_format = o.fmt.cfg;
  cfg.grouping = o.grp.resolve();
  cfg.divider = o.div.cfg;
  const std::vector<dbfp::ParetoPoint> points =
      dbfp::pareto_sweep(o.k_lo, o.k_hi, sample, o.lut.cfg, cfg);

  json jpoints = json::array();
  for (const dbfp::ParetoPoint& p : points)
    jpoints.push_back(json{{"index_bits", p.index_bits},
                           {"mae", p.mae},
                           {"memory_bits", p.memory_bits},
                           {"softmax_max_err", p.softmax_max_err}});
  json rep = report_skeleton(
      "sweep-pareto",
      json{{"k_lo", o.k_lo},
           {"k_hi", o.k_hi},
           {"lut_base", lut_config_json(o.lut.cfg)},
           {"value_format", bfp_json(cfg.value_format)},
           {"grouping", grouping_json(cfg.grouping)},
           {"divider", divider_json(cfg.divider)},
           {"generator", json{{"distribution", "normal"},
                              {"mean", 0.0},
                              {"stddev", o.stddev},
                              {"rows", o.rows},
                              {"length", o.length}}}},
      json(o.seed));
  rep["points"] = std::move(jpoints);
  emit_report(o.out, rep);

  if (!o.csv.empty()) {
    std::string csv = "index_bits,mae,memory_bits,softmax_max_err\n";
    for (const dbfp::ParetoPoint& p : points)
      csv += std::to_string(p.index_bits) + "," + fmt17(p.mae) + "," +
             std::to_string(p.memory_bits) + "," + fmt17(p.softmax_max_err) + "\n";
    write_text_file(o.csv, csv);
  }
}

struct CompareAlignmentOpts {
  std::size_t rows = 1000, length = 128;
  double sigma = 2.0;
  std::uint64_t seed = 20240814;
  std::string out, csv;
  LutOptions lut;
  FormatOptions fmt;
  DividerOptions div;
};

void run_compare_alignment(const CompareAlignmentOpts& o) {
  const auto sample = dbfp::heavy_tailed_rows(o.rows, o.length, o.sigma, o.seed);
  const dbfp::DhLut lut = o.lut.resolve();
  dbfp::SoftmaxConfig base;
  base.value_format = o.fmt.cfg;
  base.divider = o.div.cfg;
  const dbfp::AlignmentComparison cmp =
      dbfp::compare_alignment_policies(sample, lut, base);

  double mean_max = 0.0, mean_median = 0.0;
  for (const dbfp::AlignmentRow& r : cmp.rows) {
    mean_max += r.err_max;
    mean_median += r.err_median;
  }
  mean_max /= static_cast<double>(cmp.rows.size());
  mean_median /= static_cast<double>(cmp.rows.size());

  json rep = report_skeleton(
      "compare-alignment",
      json{{"value_format", bfp_json(base.value_format)},
           {"divider", divider_json(base.divider)},
           {"lut", o.lut.to_json(lut)},
           {"generator", json{{"distribution", "lognormal_exponent"},
                              {"mantissa", "uniform [1,2)"},
                              {"exponent_sigma", o.sigma},
                              {"rows", o.rows},
                              {"length", o.length}}}},
      json(o.seed));
  rep["summary"] = json{{"rows", cmp.rows.size()},
                        {"median_not_worse", cmp.median_not_worse},
                        {"median_not_worse_fraction", cmp.median_not_worse_fraction},
                        {"max_ratio", cmp.max_ratio},
                        {"mean_err_max_pivot", mean_max},
                        {"mean_err_median_pivot", mean_median}};
  emit_report(o.out, rep);

  if (!o.csv.empty()) {
    std::string csv = "err_max_pivot,err_median_pivot\n";
    for (const dbfp::AlignmentRow& r : cmp.rows)
      csv += fmt17(r.err_max) + "," + fmt17(r.err_median) + "\n";
    write_text_file(o.csv, csv);
  }
}

struct SimulateOpts {
  std::int64_t seq_len = 64;
  dbfp::PipelineConfig pipe;
  std::vector<int> trace;
  std::vector<std::int64_t> sweep;
  std::string out;
};

void run_simulate(const SimulateOpts& o) {
  json rep = report_skeleton("simulate", pipeline_json(o.pipe));
  if (o.sweep.empty()) {
    rep["seq_len"] = o.seq_len;
    rep.update(sim_report_json(dbfp::simulate_softmax_pipeline(o.seq_len, o.pipe, o.trace)));
  } else {
    json entries = json::array();
    for (const dbfp::SweepEntry& e : dbfp::sweep_sequence_lengths(o.sweep, o.pipe)) {
      json je = sim_report_json(e.report);
      je["seq_len"] = e.seq_len;
      je["attention_cycles"] = e.attention_cycles;
      entries.push_back(std::move(je));
    }
    rep["sweep"] = std::move(entries);
  }
  emit_report(o.out, rep);
}

struct FomOpts {
  double fmax = 0, n = 0, w = 0, lut = 0, ff = 0;
  std::string out;
};

void run_fom(const FomOpts& o) {
  const dbfp::FomRecord rec = dbfp::compute_fom(o.fmax, o.n, o.w, o.lut, o.ff);
  std::printf("%.3f\n", rec.fom);
  if (o.out.empty()) return;
  json rep = report_skeleton("fom", json{{"fmax_mhz", rec.fmax_mhz},
                                         {"inputs", rec.inputs},
                                         {"width_bits", rec.width_bits},
                                         {"lut_count", rec.lut_count},
                                         {"ff_count", rec.ff_count}});
  rep["fom"] = rec.fom;
  emit_report(o.out, rep);
}

struct ErrorReportOpts {
  std::string in, out;
  FormatOptions fmt;
  GroupingOptions grp;
};

void run_error_report(const ErrorReportOpts& o) {
  const dbfp::RealTensor t = dbfp::load_dbt(o.in);
  const dbfp::GroupingConfig grp = o.grp.resolve();
  const dbfp::ErrorReport r = dbfp::empirical_error_report(t, o.fmt.cfg, grp);

  json pmf;
  for (const auto& [e, p] : r.exponent_pmf) pmf[std::to_string(e)] = p;
  json rep = report_skeleton("error-report", json{{"format", bfp_json(o.fmt.cfg)},
                                                  {"grouping", grouping_json(grp)}});
  rep["input"] = json{{"path", o.in}, {"shape", shape_json(t.shape)}};
  rep["report"] = json{{"predicted_variance", r.predicted_variance},
                       {"measured_variance", r.measured_variance},
                       {"ratio", std::isfinite(r.ratio) ? json(r.ratio) : json()},
                       {"exponent_pmf", pmf},
                       {"element_count", r.element_count},
                       {"saturation_count", r.saturation_count}};
  emit_report(o.out, rep);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block floating point encode/decode, kernels and timing model"};
  app.require_subcommand(1);
  const std::vector<std::string> pivots = {"max", "median", "min"};

  auto enc = std::make_shared<EncodeOpts>();
  {
    CLI::App* c = app.add_subcommand("encode", "encode a real tensor into grouped block-float");
    c->add_option("--in", enc->in, "input tensor")->required();
    c->add_option("--out", enc->out, "encoded output")->required();
    c->add_option("--report", enc->report, "JSON encode report");
    enc->fmt.attach(*c);
    enc->grp.attach(*c);
    c->add_option("--block", enc->block, "elements per block")->capture_default_str();
    c->add_option("--pivot", enc->pivot, "group alignment statistic")
        ->check(CLI::IsMember(pivots))
        ->capture_default_str();
    c->callback([enc] { run_encode(*enc); });
  }

  auto dec = std::make_shared<DecodeOpts>();
  {
    CLI::App* c = app.add_subcommand("decode", "decode block-float back to a real tensor");
    c->add_option("--in", dec->in, "encoded input")->required();
    c->add_option("--out", dec->out, "output tensor")->required();
    c->add_option("--dtype", dec->dtype, "output element type")
        ->check(CLI::IsMember(std::vector<std::string>{"f32", "f64"}))
        ->capture_default_str();
    c->callback([dec] { run_decode(*dec); });
  }

  auto bl = std::make_shared<BuildLutOpts>();
  {
    CLI::App* c = app.add_subcommand("build-lut", "build and store an exp lookup table");
    c->add_option("--out", bl->out, "table output")->required();
    c->add_option("--report", bl->report, "JSON build report");
    bl->lut.attach_shape(*c);
    bl->lut.attach_index(*c);
    c->callback([bl] { run_build_lut(*bl); });
  }

  auto sm = std::make_shared<SoftmaxOpts>();
  {
    CLI::App* c = app.add_subcommand("softmax", "integer softmax over each input row");
    c->add_option("--in", sm->in, "input tensor; last axis is the row")->required();
    c->add_option("--out", sm->out, "JSON result; stdout when omitted");
    sm->lut.attach_load(*c);
    sm->lut.attach_shape(*c);
    sm->lut.attach_index(*c);
    sm->fmt.attach(*c);
    sm->grp.attach(*c);
    sm->div.attach(*c);
    c->add_flag("--no-grouping", sm->no_grouping, "single shared exponent per row");
    c->add_option("--pivot", sm->pivot, "alignment statistic when grouping is off")
        ->check(CLI::IsMember(pivots))
        ->capture_default_str();
    c->callback([sm] { run_softmax(*sm); });
  }

  auto mm = std::make_shared<MatmulOpts>();
  {
    CLI::App* c = app.add_subcommand("matmul", "block-float matrix product of two tensors");
    c->add_option("--a", mm->a, "left operand [r, k]")->required();
    c->add_option("--b", mm->b, "right operand [k, c]")->required();
    c->add_option("--out", mm->out, "decoded product tensor")->required();
    c->add_option("--report", mm->report, "JSON matmul report");
    mm->fmt.attach(*c);
    mm->grp.attach(*c);
    c->add_option("--block", mm->block, "elements per block")->capture_default_str();
    c->add_option("--pivot", mm->pivot, "input group alignment statistic")
        ->check(CLI::IsMember(pivots))
        ->capture_default_str();
    c->add_option("--out-pivot", mm->out_pivot, "product block alignment statistic")
        ->check(CLI::IsMember(pivots))
        ->capture_default_str();
    c->callback([mm] { run_matmul(*mm); });
  }

  auto at = std::make_shared<AttentionOpts>();
  {
    CLI::App* c = app.add_subcommand("attention", "scaled dot-product attention, block-float throughout");
    c->add_option("--q", at->q, "queries [n, d]")->required();
    c->add_option("--k", at->k, "keys [n_k, d]")->required();
    c->add_option("--v", at->v, "values [n_k, d_v]")->required();
    c->add_option("--out", at->out, "output tensor")->required();
    c->add_option("--report", at->report, "JSON attention report");
    at->lut.attach_load(*c);
    at->lut.attach_shape(*c);
    at->lut.attach_index(*c);
    at->fmt.attach(*c);
    at->grp.attach(*c);
    at->div.attach(*c);
    c->add_flag("--no-grouping", at->no_grouping, "single shared exponent per score row");
    c->add_option("--block", at->block, "elements per block")->capture_default_str();
    c->add_option("--scale-bits", at->scale_bits, "fixed-point bits for the 1/sqrt(d) scale")
        ->capture_default_str();
    c->callback([at] { run_attention(*at); });
  }

  auto sp = std::make_shared<SweepParetoOpts>();
  {
    CLI::App* c = app.add_subcommand("sweep-pareto", "table precision vs accuracy vs memory sweep");
    c->add_option("--k-lo", sp->k_lo, "first index width")->capture_default_str();
    c->add_option("--k-hi", sp->k_hi, "last index width")->capture_default_str();
    c->add_option("--rows", sp->rows, "sample row count")->capture_default_str();
    c->add_option("--length", sp->length, "sample row length")->capture_default_str();
    c->add_option("--stddev", sp->stddev, "normal sample spread")->capture_default_str();
    c->add_option("--seed", sp->seed, "sample generator seed")->capture_default_str();
    c->add_option("--out", sp->out, "JSON report; stdout when omitted");
    c->add_option("--csv", sp->csv, "CSV points for plotting");
    sp->lut.attach_shape(*c);
    sp->fmt.attach(*c);
    sp->grp.attach(*c);
    sp->div.attach(*c);
    c->callback([sp] { run_sweep_pareto(*sp); });
  }

  auto ca = std::make_shared<CompareAlignmentOpts>();
  {
    CLI::App* c = app.add_subcommand("compare-alignment", "max vs median alignment on heavy-tailed rows");
    c->add_option("--rows", ca->rows, "sample row count")->capture_default_str();
    c->add_option("--length", ca->length, "sample row length")->capture_default_str();
    c->add_option("--sigma", ca->sigma, "log-normal exponent spread")->capture_default_str();
    c->add_option("--seed", ca->seed, "sample generator seed")->capture_default_str();
    c->add_option("--out", ca->out, "JSON report; stdout when omitted");
    c->add_option("--csv", ca->csv, "CSV per-row errors for plotting");
    ca->lut.attach_load(*c);
    ca->lut.attach_shape(*c);
    ca->lut.attach_index(*c);
    ca->fmt.attach(*c);
    ca->div.attach(*c);
    c->callback([ca] { run_compare_alignment(*ca); });
  }

  auto si = std::make_shared<SimulateOpts>();
  {
    CLI::App* c = app.add_subcommand("simulate", "beat-accurate softmax pipeline timing");
    CLI::Option* seq = c->add_option("--seq-len", si->seq_len, "row length in elements")
                           ->capture_default_str();
    c->add_option("--bandwidth", si->pipe.bandwidth, "elements per beat")->capture_default_str();
    c->add_option("--depth-max", si->pipe.stage_depths[0], "max-search stage depth")
        ->capture_default_str();
    c->add_option("--depth-se", si->pipe.stage_depths[1], "subtract/encode stage depth")
        ->capture_default_str();
    c->add_option("--depth-exp", si->pipe.stage_depths[2], "exp lookup stage depth")
        ->capture_default_str();
    c->add_option("--depth-div", si->pipe.stage_depths[3], "divider stage depth")
        ->capture_default_str();
    c->add_option("--swap-penalty", si->pipe.lut_swap_penalty, "cycles per table reload")
        ->capture_default_str();
    CLI::Option* trace = c->add_option("--trace", si->trace,
                                       "shared exponent per group, comma separated")
                             ->delimiter(',');
    c->add_option("--sweep", si->sweep, "sequence lengths to sweep, comma separated")
        ->delimiter(',')
        ->excludes(seq)
        ->excludes(trace);
    c->add_option("--out", si->out, "JSON report; stdout when omitted");
    c->callback([si] { run_simulate(*si); });
  }

  auto fm = std::make_shared<FomOpts>();
  {
    CLI::App* c = app.add_subcommand("fom", "throughput-per-resource figure of merit");
    c->add_option("--fmax", fm->fmax, "clock in MHz")->required();
    c->add_option("--n", fm->n, "inputs per pass")->required();
    c->add_option("--w", fm->w, "bits per input")->required();
    c->add_option("--lut", fm->lut, "LUT count")->required();
    c->add_option("--ff", fm->ff, "flip-flop count")->required();
    c->add_option("--out", fm->out, "JSON report");
    c->callback([fm] { run_fom(*fm); });
  }

  auto er = std::make_shared<ErrorReportOpts>();
  {
    CLI::App* c = app.add_subcommand("error-report", "predicted vs measured quantization error");
    c->add_option("--in", er->in, "input tensor")->required();
    c->add_option("--out", er->out, "JSON report; stdout when omitted");
    er->fmt.attach(*c);
    er->grp.attach(*c);
    c->callback([er] { run_error_report(*er); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const dbfp::IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
