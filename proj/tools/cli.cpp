#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mplnbc/data.hpp"
#include "mplnbc/error.hpp"
#include "mplnbc/evaluate.hpp"
#include "mplnbc/seed.hpp"
#include "mplnbc/select.hpp"
#include "mplnbc/simulate.hpp"
#include "mplnbc/textio.hpp"
#include "mplnbc/vem.hpp"

namespace mpln::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Failures caused by what the user passed in (files, flags, values) map to
// the usage exit code; numerical breakdowns map to the runtime one.
int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_positive_definite:
    case ErrorCode::zero_variance:
    case ErrorCode::empty_component:
    case ErrorCode::all_restarts_failed:
    case ErrorCode::all_cells_failed:
    case ErrorCode::exhausted_redraws:
      return runtime_failure;
    default:
      return usage_error;
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& doc) { textio::write_file(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(textio::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

struct Common {
  std::string config;
  bool no_timestamp = false;
};

void stamp(json& doc, const Common& common) {
  if (!common.no_timestamp) doc["created"] = utc_timestamp();
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  int preset = 0;
  std::string spec_file;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, const Common& common, std::ostream& out) {
  if ((a.preset == 0) == a.spec_file.empty()) throw Error(ErrorCode::invalid_argument, "give exactly one of --preset or --spec");
  sim::SimSpec spec = a.preset != 0 ? sim::preset(a.preset) : sim::spec_from_json(read_json(a.spec_file));
  if (a.replicates < 1) throw Error(ErrorCode::invalid_argument, "--replicates must be at least 1");

  const fs::path root(a.out);
  for (std::size_t r = 0; r < a.replicates; ++r) {
    sim::SimSpec rep = spec;
    rep.seed = derive_seed(a.seed, r);
    const auto ds = sim::sample_dataset(rep);
    fs::path dir = root;
    if (a.replicates > 1) {
      std::ostringstream name;
      name << "rep" << std::setw(3) << std::setfill('0') << (r + 1);
      dir /= name.str();
    }
    data::save_counts(ds.counts, dir / "counts.csv");
    data::save_offsets(ds.offsets, dir / "offsets.txt");
    json truth = sim::to_json(ds.truth);
    truth["spec"] = sim::to_json(rep);
    write_json(dir / "truth.json", truth);
  }

  json config;
  config["command"] = "simulate";
  if (a.preset != 0) config["preset"] = a.preset;
  if (!a.spec_file.empty()) config["spec"] = a.spec_file;
  config["seed"] = a.seed;
  config["replicates"] = a.replicates;
  config["out"] = a.out;
  stamp(config, common);
  write_json(root / "config.json", config);

  out << "simulated " << spec.name << ": " << a.replicates << " x (" << spec.n << " x " << spec.d << ", G=" << spec.G()
      << ") -> " << a.out << "\n";
  return ok;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string counts;
  std::string offsets;
  std::string offset_method = "unit";
  std::string mode = "equal-k";
  std::size_t gmax = 3;
  std::size_t kmax = 3;
  std::size_t top = 0;
  std::size_t max_em_iter = 500;
  double tol = 1e-6;
  std::size_t inner_iter = 10;
  double inner_tol = 1e-6;
  std::size_t starts = 5;
  std::uint64_t seed = 0;
  std::string linkage = "average";
  std::string singleton = "zero-score";
  std::size_t jobs = 1;
  std::string out;
};

int cmd_fit(const FitArgs& a, const Common& common, std::ostream& out) {
  vem::FitConfig config;
  config.max_em_iter = a.max_em_iter;
  config.elbo_rel_tol = a.tol;
  config.inner_iter = a.inner_iter;
  config.inner_tol = a.inner_tol;
  config.n_starts = a.starts;
  config.seed = a.seed;
  config.linkage = colgroup::parse_linkage(a.linkage);
  config.singleton_rule = a.singleton == "zero-cohesion" ? colgroup::SingletonRule::zero_cohesion : colgroup::SingletonRule::zero_score;
  config.validate();
  if (a.jobs < 1) throw Error(ErrorCode::invalid_argument, "--jobs must be at least 1");

  data::CountMatrix counts = data::load_counts(a.counts);
  if (a.top > 0) counts = data::filter_top_variable(counts, a.top);
  const data::OffsetVector offsets = !a.offsets.empty()
                                         ? data::load_offsets(a.offsets, counts.n())
                                         : data::compute_offsets(counts, a.offset_method == "libsize" ? data::OffsetMethod::libsize
                                                                                                      : data::OffsetMethod::unit);

  const bool varying = a.mode == "varying-k";
  const auto selection = varying ? select::fit_varying_k(counts, offsets, a.gmax, a.kmax, config, a.jobs)
                                 : select::grid_search_equal_k(counts, offsets, a.gmax, a.kmax, config, a.jobs);
  const auto& best = selection.best;
  const auto& cell = selection.grid.cells[selection.best_cell];

  const fs::path dir(a.out);
  json model = vem::to_json(best, counts.sample_ids());
  model["mode"] = a.mode;
  model["var_names"] = counts.var_names();
  model["selected"] = {{"G", cell.G}, {"K", cell.k_label()}, {"cell", selection.best_cell + 1}};
  stamp(model, common);
  write_json(dir / "model.json", model);
  textio::write_file(dir / "labels.csv", vem::labels_csv(best, counts.sample_ids()));
  textio::write_file(dir / "grid.csv", select::grid_csv(selection.grid, !common.no_timestamp));
  textio::write_file(dir / "trace.csv", vem::trace_csv(best));
  textio::write_file(dir / "partition.csv", vem::partition_csv(best.model, counts.var_names()));

  json archived;
  archived["command"] = "fit";
  archived["counts"] = a.counts;
  if (!a.offsets.empty()) archived["offsets"] = a.offsets; else archived["offset-method"] = a.offset_method;
  archived["mode"] = a.mode;
  archived["gmax"] = a.gmax;
  archived["kmax"] = a.kmax;
  archived["top"] = a.top;
  archived["max-em-iter"] = a.max_em_iter;
  archived["tol"] = a.tol;
  archived["inner-iter"] = a.inner_iter;
  archived["inner-tol"] = a.inner_tol;
  archived["starts"] = a.starts;
  archived["seed"] = a.seed;
  archived["linkage"] = a.linkage;
  archived["singleton"] = a.singleton;
  archived["out"] = a.out;
  stamp(archived, common);
  write_json(dir / "config.json", archived);

  out << "best G=" << cell.G << " K=" << cell.k_label() << " BIC=" << textio::format_double(best.bic)
      << (best.converged ? "" : " (not converged)") << " -> " << a.out << "\n";
  return ok;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::vector<std::string> truth;
  std::vector<std::string> fit;
  std::string dir;
  std::string name;
  std::string out;
};

std::optional<fs::path> find_model(const fs::path& dir) {
  for (const auto& candidate : {dir / "model.json", dir / "fit" / "model.json"}) {
    if (fs::is_regular_file(candidate)) return candidate;
  }
  return std::nullopt;
}

int cmd_evaluate(const EvaluateArgs& a, const Common& common, std::ostream& out) {
  if (a.truth.size() != a.fit.size()) throw Error(ErrorCode::invalid_argument, "--truth and --fit must be given in pairs");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (std::size_t i = 0; i < a.truth.size(); ++i) pairs.emplace_back(a.truth[i], a.fit[i]);
  if (!a.dir.empty()) {
    if (!fs::is_directory(a.dir)) throw Error(ErrorCode::invalid_argument, "not a directory: " + a.dir);
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(a.dir)) {
      if (entry.is_directory()) subdirs.push_back(entry.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& sub : subdirs) {
      const auto model = find_model(sub);
      if (fs::is_regular_file(sub / "truth.json") && model) pairs.emplace_back(sub / "truth.json", *model);
    }
  }
  if (pairs.empty()) throw Error(ErrorCode::empty_input, "nothing to evaluate");

  std::vector<eval::ReplicateEval> reps;
  json first_truth;
  for (const auto& [truth_path, fit_path] : pairs) {
    json truth_doc;
    try {
      truth_doc = read_json(truth_path);
      const auto truth = sim::truth_from_json(truth_doc);
      const auto fit = vem::fit_result_from_json(read_json(fit_path));
      reps.push_back(eval::evaluate_fit(truth, fit, fit_path.parent_path().filename().string()));
    } catch (const Error& e) {
      throw Error(e.code(), truth_path.string() + " vs " + fit_path.string() + ": " + e.what());
    }
    if (first_truth.is_null()) first_truth = truth_doc;
  }
  const std::string name = !a.name.empty() ? a.name
                         : first_truth.contains("spec") ? first_truth["spec"].value("name", std::string("study"))
                                                        : std::string("study");
  const auto report = eval::aggregate(reps, name);

  const fs::path dir(a.out);
  json doc = eval::to_json(report);
  const auto truth_model = model_from_json(first_truth.at("model"));
  doc["n"] = first_truth.at("labels").size();
  doc["d"] = truth_model.d();
  doc["true_G"] = truth_model.G();
  std::vector<std::size_t> true_groups;
  for (const auto& p : truth_model.grouping) true_groups.push_back(p.K());
  doc["true_groups"] = true_groups;
  stamp(doc, common);
  write_json(dir / "report.json", doc);
  for (std::size_t g = 0; g < truth_model.G(); ++g) {
    const auto d = static_cast<Eigen::Index>(truth_model.d());
    const eval::CountGrid grid = g < report.support_counts.size() ? report.support_counts[g] : eval::CountGrid::Zero(d, d);
    const auto stem = "support_g" + std::to_string(g + 1);
    textio::write_file(dir / (stem + ".csv"), eval::count_grid_csv(grid));
    textio::write_file(dir / (stem + ".pgm"), eval::count_grid_pgm(grid));
  }

  out << name << ": " << report.n_replicates << " replicate(s), structure correct in " << report.structure_correct
      << ", mean ARI " << textio::format_double(report.row_ari.mean) << " -> " << a.out << "\n";
  return ok;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int cmd_report(const ReportArgs& a, const Common& common, std::ostream& out) {
  std::vector<json> docs;
  for (const auto& input : a.inputs) {
    fs::path p(input);
    if (fs::is_directory(p)) p /= "report.json";
    docs.push_back(read_json(p));
  }
  if (docs.empty()) throw Error(ErrorCode::empty_input, "no evaluation reports given");

  const std::vector<std::string> header = {"study", "N", "d", "G", "K", "replicates", "G selected", "structure selected",
                                           "modal fit", "ARI mean (sd)", "col misclass % mean (sd)", "mu MSE", "pi MSE"};
  std::vector<std::vector<std::string>> rows;
  std::string csv = "study,N,d,G,K,replicates,g_selected,structure_selected,modal_fit,ari_mean,ari_sd,"
                    "col_misclass_pct_mean,col_misclass_pct_sd,mu_mse_mean,pi_mse_mean\n";
  for (const auto& doc : docs) {
    const auto report = eval::report_from_json(doc);
    std::string true_k;
    const auto groups = doc.value("true_groups", std::vector<std::size_t>{});
    for (std::size_t g = 0; g < groups.size(); ++g) true_k += (g ? ";" : "") + std::to_string(groups[g]);
    std::string modal;
    std::size_t modal_count = 0;
    for (const auto& [key, count] : report.structure_counts) {
      if (count > modal_count) {
        modal = key;
        modal_count = count;
      }
    }
    const auto n_str = std::to_string(doc.value("n", 0));
    const auto d_str = std::to_string(doc.value("d", 0));
    const auto g_str = std::to_string(doc.value("true_G", 0));
    const auto reps = std::to_string(report.n_replicates);
    rows.push_back({report.name, n_str, d_str, g_str, true_k, reps,
                    std::to_string(report.g_correct) + "/" + reps, std::to_string(report.structure_correct) + "/" + reps,
                    modal + " (" + std::to_string(modal_count) + ")",
                    fixed(report.row_ari.mean, 3) + " (" + fixed(report.row_ari.sd, 3) + ")",
                    fixed(100.0 * report.col_misclass.mean, 1) + " (" + fixed(100.0 * report.col_misclass.sd, 1) + ")",
                    fixed(report.mu_mse.mean, 4), fixed(report.pi_mse.mean, 5)});
    auto num = [](double v) { return std::isfinite(v) ? textio::format_double(v) : std::string(); };
    csv += textio::quote_field(report.name) + "," + n_str + "," + d_str + "," + g_str + "," + textio::quote_field(true_k) +
           "," + reps + "," + std::to_string(report.g_correct) + "," + std::to_string(report.structure_correct) + "," +
           textio::quote_field(modal) + "," + num(report.row_ari.mean) + "," + num(report.row_ari.sd) + "," +
           num(100.0 * report.col_misclass.mean) + "," + num(100.0 * report.col_misclass.sd) + "," +
           num(report.mu_mse.mean) + "," + num(report.pi_mse.mean) + "\n";
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      s += cells[c] + std::string(width[c] - cells[c].size(), ' ');
      if (c + 1 < cells.size()) s += "  ";
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string text = line(header);
  for (const auto& row : rows) text += line(row);

  out << text;
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    textio::write_file(dir / "summary.txt", text);
    textio::write_file(dir / "summary.csv", csv);
    json config;
    config["command"] = "report";
    config["inputs"] = a.inputs;
    config["out"] = a.out;
    stamp(config, common);
    write_json(dir / "config.json", config);
  }
  return ok;
}

// ---------------------------------------------------------------------------
// Config-file handling: a flat JSON object whose keys are long option names
// of the chosen subcommand. Values become command-line tokens placed before
// the user's own flags; options the user set explicitly are skipped, so flags
// always win.

bool given_on_command_line(const CLI::Option* opt, const std::vector<std::string>& args) {
  for (const auto& token : args) {
    for (const auto& name : opt->get_lnames()) {
      if (token == "--" + name || token.rfind("--" + name + "=", 0) == 0) return true;
    }
    for (const auto& name : opt->get_snames()) {
      if (token.rfind("-" + name, 0) == 0 && token.rfind("--", 0) != 0) return true;
    }
  }
  return false;
}

std::vector<std::string> config_tokens(CLI::App& sub, const std::string& path, const std::vector<std::string>& args) {
  json cfg;
  try {
    cfg = json::parse(textio::read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
  if (!cfg.is_object()) throw Error(ErrorCode::parse_error, path + ": config must be a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : cfg.items()) {
    const CLI::Option* opt = key == "config" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw Error(ErrorCode::invalid_argument, path + ": unknown key '" + key + "'");
    if (given_on_command_line(opt, args)) continue;
    auto scalar = [&](const json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_number() || v.is_boolean()) return v.dump();
      throw Error(ErrorCode::invalid_argument, path + ": unsupported value for '" + key + "'");
    };
    if (opt->get_expected_max() == 0) {
      if (!value.is_boolean()) throw Error(ErrorCode::invalid_argument, path + ": '" + key + "' must be true or false");
      if (value.get<bool>()) tokens.push_back("--" + key);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        tokens.push_back("--" + key);
        tokens.push_back(scalar(v));
      }
    } else {
      tokens.push_back("--" + key);
      tokens.push_back(scalar(value));
    }
  }
  return tokens;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Biclustering of count data with block-diagonal Poisson-lognormal mixtures", "mplnbc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mplnbc 0.1.0");

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Flat JSON file of option values (flags override it)")->check(CLI::ExistingFile);
    sub->add_flag("--no-timestamp", common.no_timestamp, "Omit timestamps and timings so reruns are byte-identical");
  };

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "Generate a dataset from a built-in study or a JSON spec");
  sim->add_option("--preset", sim_args.preset, "Built-in study 1..12");
  sim->add_option("--spec", sim_args.spec_file, "Simulation spec JSON")->check(CLI::ExistingFile);
  sim->add_option("--seed", sim_args.seed, "Random seed");
  sim->add_option("--replicates", sim_args.replicates, "Number of datasets (written to rep001, rep002, ...)");
  sim->add_option("-o,--out", sim_args.out, "Output directory")->required();
  add_common(sim);

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "Fit mixtures over a (G, K) grid and keep the best by BIC");
  fit->add_option("--counts", fit_args.counts, "Count matrix (CSV or TSV)")->required()->check(CLI::ExistingFile);
  fit->add_option("--offsets", fit_args.offsets, "Offsets file, one positive value per line")->check(CLI::ExistingFile);
  fit->add_option("--offset-method", fit_args.offset_method, "Offsets when no file is given")
      ->check(CLI::IsMember({"unit", "libsize"}));
  fit->add_option("--mode", fit_args.mode, "equal-k or varying-k")->check(CLI::IsMember({"equal-k", "varying-k"}));
  fit->add_option("--gmax", fit_args.gmax, "Largest number of row clusters");
  fit->add_option("--kmax", fit_args.kmax, "Largest number of column groups");
  fit->add_option("--top", fit_args.top, "Keep only the N most variable columns (log-scale IQR)");
  fit->add_option("--max-em-iter", fit_args.max_em_iter, "EM iteration cap");
  fit->add_option("--tol", fit_args.tol, "Relative objective change that stops EM");
  fit->add_option("--inner-iter", fit_args.inner_iter, "Variational sweeps per observation and iteration");
  fit->add_option("--inner-tol", fit_args.inner_tol, "Variational sweep tolerance");
  fit->add_option("--starts", fit_args.starts, "Starts per grid cell");
  fit->add_option("--seed", fit_args.seed, "Random seed");
  fit->add_option("--linkage", fit_args.linkage, "average, complete or single")
      ->check(CLI::IsMember({"average", "complete", "single"}));
  fit->add_option("--singleton", fit_args.singleton, "Silhouette of a one-variable group: zero-score or zero-cohesion")
      ->check(CLI::IsMember({"zero-score", "zero-cohesion"}));
  fit->add_option("--jobs", fit_args.jobs, "Grid cells fitted concurrently");
  fit->add_option("-o,--out", fit_args.out, "Output directory")->required();
  add_common(fit);

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Score fitted models against simulation truth");
  evaluate->add_option("--truth", eval_args.truth, "truth.json (repeatable, paired with --fit)")->check(CLI::ExistingFile);
  evaluate->add_option("--fit", eval_args.fit, "model.json (repeatable)")->check(CLI::ExistingFile);
  evaluate->add_option("--dir", eval_args.dir, "Directory of replicates holding truth.json and model.json")
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--name", eval_args.name, "Study label");
  evaluate->add_option("-o,--out", eval_args.out, "Output directory")->required();
  add_common(evaluate);

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Tabulate evaluation reports");
  report->add_option("inputs", report_args.inputs, "report.json files or directories containing one");
  report->add_option("-o,--out", report_args.out, "Output directory for summary.txt and summary.csv");
  add_common(report);

  try {
    std::vector<std::string> full = args;
    // Expand --config before parsing so the values pass the same validators.
    if (!full.empty()) {
      CLI::App* sub = app.get_subcommand_no_throw(full.front());
      if (sub != nullptr) {
        std::optional<std::string> config_path;
        for (std::size_t i = 1; i < full.size(); ++i) {
          if (full[i] == "--config" && i + 1 < full.size()) config_path = full[i + 1];
          if (full[i].rfind("--config=", 0) == 0) config_path = full[i].substr(9);
        }
        if (config_path) {
          if (!fs::is_regular_file(*config_path)) throw Error(ErrorCode::invalid_argument, "config file not found: " + *config_path);
          const std::vector<std::string> rest(full.begin() + 1, full.end());
          auto tokens = config_tokens(*sub, *config_path, rest);
          full.insert(full.begin() + 1, tokens.begin(), tokens.end());
        }
      }
    }
    std::vector<std::string> reversed(full.rbegin(), full.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args, common, out);
    if (fit->parsed()) return cmd_fit(fit_args, common, out);
    if (evaluate->parsed()) return cmd_evaluate(eval_args, common, out);
    if (report->parsed()) return cmd_report(report_args, common, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return runtime_failure;
  }
  return usage_error;
}

}  // namespace mpln::cli
