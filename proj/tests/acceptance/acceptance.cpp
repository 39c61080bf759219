// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   acceptance [--work DIR] [--only 1,5,8]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "instances.hpp"
#include "mplnbc/colgroup.hpp"
#include "mplnbc/data.hpp"
#include "mplnbc/evaluate.hpp"
#include "mplnbc/model.hpp"
#include "mplnbc/simulate.hpp"
#include "mplnbc/textio.hpp"
#include "mplnbc/vem.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mpln;

namespace {

constexpr std::uint64_t kStudySeed = 2024;
constexpr int kReplicates = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string rep_name(int r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "rep%03d", r + 1);
  return buf;
}

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) {
    std::string joined;
    for (const auto& a : args) joined += " " + a;
    throw std::runtime_error("mplnbc" + joined + " exited " + std::to_string(code) + ": " + err.str());
  }
}

json read_json(const fs::path& p) { return json::parse(textio::read_file(p)); }

std::size_t line_count(const fs::path& p) {
  const auto text = textio::read_file(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string first_line(const fs::path& p) {
  const auto text = textio::read_file(p);
  return text.substr(0, text.find('\n'));
}

// Simulate a preset through the CLI and fit every replicate.
struct StudyRun {
  fs::path data;
  std::vector<fs::path> fits;
  std::vector<sim::GroundTruth> truths;
  std::vector<vem::FitResult> results;
  std::vector<eval::ReplicateEval> evals;
  double seconds = 0.0;
};

StudyRun run_study(const fs::path& root, int preset, const std::vector<std::string>& fit_flags, const std::string& tag,
                   int jobs) {
  StudyRun run;
  const Clock clock;
  run.data = root / "data";
  cli({"simulate", "--preset", std::to_string(preset), "--seed", std::to_string(kStudySeed), "--replicates",
       std::to_string(kReplicates), "-o", run.data.string(), "--no-timestamp"});
  for (int r = 0; r < kReplicates; ++r) {
    const auto rep = run.data / rep_name(r);
    const auto out = root / tag / rep_name(r);
    std::vector<std::string> args{"fit",    "--counts", (rep / "counts.csv").string(), "--offsets", (rep / "offsets.txt").string(),
                                  "--seed", std::to_string(kStudySeed), "--jobs", std::to_string(jobs), "--no-timestamp",
                                  "-o",     out.string()};
    args.insert(args.end(), fit_flags.begin(), fit_flags.end());
    cli(args);
    run.fits.push_back(out);
    run.truths.push_back(sim::truth_from_json(read_json(rep / "truth.json")));
    run.results.push_back(vem::fit_result_from_json(read_json(out / "model.json")));
    run.evals.push_back(eval::evaluate_fit(run.truths.back(), run.results.back(), rep_name(r)));
  }
  run.seconds = clock.seconds();
  return run;
}

const std::vector<std::string> kEqualKFlags = {"--mode", "equal-k", "--gmax", "3", "--kmax", "3"};
const std::vector<std::string> kVaryingKFlags = {"--mode", "varying-k", "--gmax", "3", "--kmax", "5"};

bool selected_two_by_two(const eval::ReplicateEval& e) {
  return e.fitted_G == 2 && e.fitted_groups == std::vector<std::size_t>{2, 2};
}

// --- criteria ---------------------------------------------------------------

Outcome study_one_selection(const StudyRun& run) {
  int chosen = 0, exact_columns = 0;
  std::vector<double> aris;
  for (const auto& e : run.evals) {
    chosen += selected_two_by_two(e);
    exact_columns += e.fitted_G == e.true_G && e.col_misclass_mean == 0.0;
    aris.push_back(e.row_ari);
  }
  const double ari = eval::summarize(aris).mean;
  Outcome o;
  o.pass = chosen >= 9 && ari >= 0.95 && exact_columns >= 9 && run.seconds <= 900.0;
  o.detail = "(G,K)=(2,2) in " + std::to_string(chosen) + "/10, mean ARI " + fmt("%.4f", ari) + ", 0% column misclassification in " +
             std::to_string(exact_columns) + "/10, " + fmt("%.0f", run.seconds) + " s (limit 900 s)";
  return o;
}

Outcome study_eleven_selection(const StudyRun& run) {
  int correct = 0;
  std::vector<double> aris;
  for (const auto& e : run.evals) {
    correct += e.structure_correct;
    aris.push_back(e.row_ari);
  }
  const double ari = eval::summarize(aris).mean;
  Outcome o;
  o.pass = correct >= 8 && ari >= 0.90;
  o.detail = "(G; K1,K2)=(2; 2,3) in " + std::to_string(correct) + "/10, mean ARI " + fmt("%.4f", ari) + ", " +
             fmt("%.0f", run.seconds) + " s";
  return o;
}

Outcome support_recovery(const StudyRun& run) {
  int checked = 0, exact = 0;
  for (std::size_t r = 0; r < run.evals.size(); ++r) {
    const auto& e = run.evals[r];
    if (!selected_two_by_two(e)) continue;
    ++checked;
    bool ok = true;
    for (std::size_t g = 0; g < e.true_G; ++g) {
      const auto truth = eval::support_count_heatmap({run.truths[r].model.sigma[g]});
      const auto fitted = eval::support_count_heatmap({run.results[r].model.sigma[e.mse->alignment[g]]});
      ok = ok && truth == fitted && truth == e.support[g];
    }
    exact += ok;
  }
  Outcome o;
  o.pass = checked > 0 && exact == checked;
  o.detail = "exact block support in " + std::to_string(exact) + "/" + std::to_string(checked) + " replicates selecting (2,2)";
  return o;
}

Outcome parameter_recovery(const StudyRun& run) {
  std::vector<double> mu, pi;
  int missing = 0;
  for (const auto& e : run.evals) {
    if (!e.mse) {
      ++missing;
      continue;
    }
    for (double v : e.mse->mu_mse) mu.push_back(v);
    for (double v : e.mse->pi_mse) pi.push_back(v);
  }
  Outcome o;
  if (mu.empty()) {
    o.detail = "no replicate selected G=2";
    return o;
  }
  const double mu_mse = eval::summarize(mu).mean, pi_mse = eval::summarize(pi).mean;
  o.pass = missing == 0 && mu_mse <= 0.05 && pi_mse <= 5e-3;
  o.detail = "mean mu-MSE " + fmt("%.3e", mu_mse) + " (limit 0.05), mean pi-MSE " + fmt("%.3e", pi_mse) + " (limit 5e-3)";
  if (missing) o.detail += ", " + std::to_string(missing) + " replicate(s) with wrong G";
  return o;
}

Outcome elbo_below_marginal() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(-1.0, 1.5);
  std::uniform_int_distribution<int> cnt(0, 15);
  double worst = INFINITY, tightest = INFINITY, worst_quadrature = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 1 + rep % 2;
    Eigen::VectorXd y(d), m(d), mu(d);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = cnt(rng);
      mu[j] = u(rng);
      m[j] = std::log(y[j] + 0.5) + 0.3 * u(rng);
    }
    const auto sigma = oracle::random_pd(d, rng, 0.2, 1.5);
    const auto s = oracle::random_pd(d, rng, 0.02, 0.5);
    const double log_c = 0.2 * u(rng);
    const std::size_t nodes = d == 1 ? 200 : 100;
    const double marginal = oracle::log_marginal(y, log_c, mu, sigma, nodes);
    worst_quadrature = std::max(worst_quadrature, std::abs(marginal - oracle::log_marginal(y, log_c, mu, sigma, nodes - 40)));
    worst = std::min(worst, marginal - elbo_observation(y, log_c, m, s, mu, sigma));
    // The bound is tightest at the optimised variational parameters.
    const auto [m_opt, s_opt] = vem::update_variational(y, log_c, m, s, mu, sigma, 200, 1e-12);
    const double gap = marginal - elbo_observation(y, log_c, m_opt, s_opt, mu, sigma);
    worst = std::min(worst, gap);
    tightest = std::min(tightest, gap);
  }
  Outcome o;
  o.pass = worst >= -1e-9 && worst_quadrature <= 1e-11;
  o.detail = "50 cases, smallest marginal - F = " + fmt("%.3e", worst) + " (limit -1e-9, " + fmt("%.3e", tightest) +
             " at optimised q), quadrature drift " +
             fmt("%.1e", worst_quadrature);
  return o;
}

Outcome em_monotone() {
  std::mt19937_64 rng(606);
  double worst = 0.0;
  int violations = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 20 + rng() % 41;
    const std::size_t d = 1 + rng() % 6;
    const std::size_t G = 1 + rng() % 2;
    const auto ds = test_util::random_dataset(700 + static_cast<std::uint64_t>(rep), n, d, G);
    vem::FitConfig cfg;
    cfg.seed = 60 + static_cast<std::uint64_t>(rep);
    cfg.n_starts = 2;
    const std::size_t k = 1 + rng() % d;
    const auto res = vem::fit(ds.counts, ds.offsets, G, vem::EqualK{k}, cfg);
    const auto& t = res.elbo_trace;
    for (std::size_t i = 1; i < t.size(); ++i) worst = std::max(worst, (t[i - 1] - t[i]) / std::abs(t[i - 1]));
    violations += !test_util::nondecreasing(t, 1e-8);
  }
  Outcome o;
  o.pass = violations == 0;
  o.detail = "20 instances, " + std::to_string(violations) + " with a decrease, largest relative drop " + fmt("%.2e", worst) +
             " (slack 1e-8)";
  return o;
}

Outcome stationarity() {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> mu_d(-1.0, 3.0), sig_d(0.2, 2.0), lc_d(-0.5, 0.5);
  std::uniform_int_distribution<int> y_d(0, 60);
  double grad = 0.0, fixed = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const double y = y_d(rng), mu = mu_d(rng), sigma = sig_d(rng), log_c = lc_d(rng);
    const auto [m, s] = vem::update_variational(Eigen::VectorXd::Constant(1, y), log_c,
                                                Eigen::VectorXd::Constant(1, std::log(y + 0.5) - log_c),
                                                Eigen::MatrixXd::Constant(1, 1, 0.1), Eigen::VectorXd::Constant(1, mu),
                                                Eigen::MatrixXd::Constant(1, 1, sigma), 500, 1e-12);
    const double mm = m[0], ss = s(0, 0);
    grad = std::max(grad, std::abs(y - std::exp(log_c + mm + 0.5 * ss) - (mm - mu) / sigma));
    fixed = std::max(fixed, std::abs(ss - 1.0 / (1.0 / sigma + std::exp(log_c + mm + 0.5 * ss))));
  }
  Outcome o;
  o.pass = grad <= 1e-5 && fixed <= 1e-6;
  o.detail = "100 cases at d=1, max |dF/dm| " + fmt("%.2e", grad) + " (limit 1e-5), max S residual " + fmt("%.2e", fixed) +
             " (limit 1e-6)";
  return o;
}

Outcome metric_oracles() {
  double ari_err = 0.0;
  std::size_t ari_pairs = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int G = 1; G <= 3; ++G) {
      const auto labs = oracle::all_labelings(n, G);
      for (const auto& x : labs) {
        for (const auto& y : labs) {
          ari_err = std::max(ari_err, std::abs(eval::ari(x, y) - oracle::ari_pairs(x, y)));
          ++ari_pairs;
        }
      }
    }
  }

  std::mt19937_64 rng(808);
  double sil_err = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 2 + rng() % 7;
    const auto dist = test_util::random_distances(d, rng);
    const auto assign = test_util::random_partition(d, 1 + rng() % d, rng);
    for (auto rule : {colgroup::SingletonRule::zero_score, colgroup::SingletonRule::zero_cohesion}) {
      const double got = colgroup::silhouette(dist, ColumnPartition(assign), rule);
      sil_err = std::max(sil_err, std::abs(got - oracle::silhouette_oracle(dist, assign, rule == colgroup::SingletonRule::zero_score)));
    }
  }

  double mis_err = 0.0;
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t d = 5 + rng() % 8;
    const auto t = test_util::random_partition(d, 1 + rng() % 5, rng);
    const auto e = test_util::random_partition(d, 1 + rng() % 5, rng);
    mis_err = std::max(mis_err, std::abs(eval::column_misclassification(ColumnPartition(t), ColumnPartition(e)) -
                                         oracle::misclass_oracle(t, e)));
  }

  Outcome o;
  o.pass = ari_err <= 1e-12 && sil_err <= 1e-12 && mis_err <= 1e-12;
  o.detail = "ARI max error " + fmt("%.1e", ari_err) + " over " + std::to_string(ari_pairs) + " labeling pairs; silhouette " +
             fmt("%.1e", sil_err) + " on 100 instances; column misclassification " + fmt("%.1e", mis_err) + " on 300 pairs";
  return o;
}

std::vector<std::string> missing_keys(const json& doc, const std::vector<std::string>& keys) {
  std::vector<std::string> out;
  for (const auto& k : keys)
    if (!doc.contains(k)) out.push_back(k);
  return out;
}

Outcome pseudo_tcga_pipeline(const fs::path& root) {
  const fs::path bundle = fs::path(MPLNBC_SOURCE_DIR) / "data" / "pseudo_tcga";
  const Clock clock;
  const auto data = root / "data", fit = root / "fit", evald = root / "eval", report = root / "report";
  cli({"simulate", "--spec", (bundle / "spec.json").string(), "-o", data.string(), "--no-timestamp"});
  cli({"fit", "--counts", (data / "counts.csv").string(), "--offsets", (data / "offsets.txt").string(), "--mode", "varying-k",
       "--gmax", "3", "--kmax", "8", "--seed", "11", "-o", fit.string()});
  cli({"evaluate", "--truth", (data / "truth.json").string(), "--fit", (fit / "model.json").string(), "-o", evald.string()});
  cli({"report", evald.string(), "-o", report.string()});
  const double seconds = clock.seconds();

  std::vector<std::string> problems;
  for (const char* f : {"counts.csv", "offsets.txt", "truth.json"})
    if (textio::read_file(data / f) != textio::read_file(bundle / f)) problems.push_back(std::string(f) + " differs from bundle");
  const auto counts = data::load_counts(data / "counts.csv");
  if (counts.n() != 120 || counts.d() != 30) problems.push_back("counts not 120x30");
  const auto offsets = data::load_offsets(data / "offsets.txt", counts.n());
  if ((offsets.values().array() == 1.0).all()) problems.push_back("offsets are not explicit");

  const auto model = read_json(fit / "model.json");
  for (const auto& k : missing_keys(model, {"model", "labels", "groups_per_component", "elbo_trace", "lower_bound", "bic",
                                            "free_parameters", "converged", "iterations", "mode", "var_names", "selected",
                                            "created"}))
    problems.push_back("model.json lacks " + k);
  if (model.contains("labels") && model["labels"].size() != 120) problems.push_back("model.json labels length");
  const auto expect_header = [&](const fs::path& p, const std::string& header, std::size_t rows) {
    if (first_line(p) != header) problems.push_back(p.filename().string() + " header");
    if (rows && line_count(p) != rows + 1) problems.push_back(p.filename().string() + " row count");
  };
  expect_header(fit / "labels.csv", "sample_id,cluster", 120);
  expect_header(fit / "grid.csv", "G,K-spec,lower_bound,p,BIC,converged,iterations,wall_time_ms,status", 3);
  expect_header(fit / "trace.csv", "iteration,objective", 0);
  if (model.contains("selected"))
    expect_header(fit / "partition.csv", "variable,component,group", 30 * model["selected"]["G"].get<std::size_t>());
  if (!fs::exists(fit / "config.json")) problems.push_back("fit config.json missing");

  const auto rep = read_json(evald / "report.json");
  for (const auto& k : missing_keys(rep, {"name", "n_replicates", "structure_counts", "row_ari", "col_misclass", "mu_mse",
                                          "pi_mse", "support_counts", "replicates"}))
    problems.push_back("report.json lacks " + k);
  for (int g = 1; g <= 2; ++g) {
    const auto pgm = textio::read_file(evald / ("support_g" + std::to_string(g) + ".pgm"));
    if (pgm.rfind("P5\n30 30\n255\n", 0) != 0 || pgm.size() != 13 + 900) problems.push_back("support PGM " + std::to_string(g));
    if (line_count(evald / ("support_g" + std::to_string(g) + ".csv")) != 30) problems.push_back("support CSV " + std::to_string(g));
  }
  if (line_count(report / "summary.csv") != 2 || line_count(report / "summary.txt") != 2) problems.push_back("summary rows");

  Outcome o;
  o.pass = problems.empty() && seconds < 300.0;
  o.detail = "simulate->fit->evaluate->report in " + fmt("%.1f", seconds) + " s (limit 300 s), selected " +
             (model.contains("selected") ? "G=" + model["selected"]["G"].dump() + " K=" + model["selected"]["K"].get<std::string>() : "?") +
             ", " + std::to_string(problems.size()) + " schema problem(s)";
  for (const auto& p : problems) o.detail += "; " + p;
  return o;
}

Outcome determinism(const fs::path& root, const StudyRun& reference) {
  // Fresh simulation and two refits with different --jobs against the
  // criterion-1 outputs.
  const auto again = run_study(root / "jobs1", 1, kEqualKFlags, "fit", 1);
  const auto four = run_study(root / "jobs4", 1, kEqualKFlags, "fit", 4);
  int identical = 0;
  std::vector<std::string> diffs;
  for (int r = 0; r < kReplicates; ++r) {
    bool same = true;
    for (const char* f : {"counts.csv", "offsets.txt", "truth.json"}) {
      const auto a = textio::read_file(reference.data / rep_name(r) / f);
      same = same && a == textio::read_file(again.data / rep_name(r) / f) && a == textio::read_file(four.data / rep_name(r) / f);
    }
    for (const char* f : {"grid.csv", "model.json", "labels.csv", "trace.csv", "partition.csv"}) {
      const auto a = textio::read_file(reference.fits[static_cast<std::size_t>(r)] / f);
      const bool ok = a == textio::read_file(again.fits[static_cast<std::size_t>(r)] / f) &&
                      a == textio::read_file(four.fits[static_cast<std::size_t>(r)] / f);
      if (!ok) diffs.push_back(rep_name(r) + "/" + f);
      same = same && ok;
    }
    identical += same;
  }
  Outcome o;
  o.pass = identical == kReplicates;
  o.detail = "byte-identical outputs in " + std::to_string(identical) + "/10 replicates across --jobs 1, 1, 4 (" +
             fmt("%.0f", again.seconds) + " s, " + fmt("%.0f", four.seconds) + " s)";
  for (const auto& d : diffs) o.detail += "; differs: " + d;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  std::set<int> only;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg == "--work" && a + 1 < argc) {
      work = argv[++a];
    } else if (arg == "--only" && a + 1 < argc) {
      std::stringstream list(argv[++a]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  const auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  fs::remove_all(work);
  fs::create_directories(work);

  const std::map<int, std::string> titles = {
      {1, "study 1 grid selection"},      {2, "study 11 varying-K selection"}, {3, "block support recovery"},
      {4, "parameter recovery"},          {5, "ELBO below log-marginal"},      {6, "EM monotonicity"},
      {7, "variational stationarity"},    {8, "metric oracles"},               {9, "pseudo-TCGA pipeline"},
      {10, "determinism across --jobs"}};

  int failed = 0;
  const auto report = [&](int c, const std::function<Outcome()>& body) {
    if (!wanted(c)) return;
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c << ". " << titles.at(c) << ": " << o.detail << std::endl;
  };

  std::optional<StudyRun> study1;
  const auto need_study1 = [&]() -> const StudyRun& {
    if (!study1) study1 = run_study(work / "study1", 1, kEqualKFlags, "fit", 1);
    return *study1;
  };

  report(1, [&] { return study_one_selection(need_study1()); });
  report(2, [&] { return study_eleven_selection(run_study(work / "study11", 11, kVaryingKFlags, "fit", 1)); });
  report(3, [&] { return support_recovery(need_study1()); });
  report(4, [&] { return parameter_recovery(need_study1()); });
  report(5, elbo_below_marginal);
  report(6, em_monotone);
  report(7, stationarity);
  report(8, metric_oracles);
  report(9, [&] { return pseudo_tcga_pipeline(work / "pseudo_tcga"); });
  report(10, [&] { return determinism(work / "determinism", need_study1()); });

  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion/criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
