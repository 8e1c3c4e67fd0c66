#pragma once

// Command-line front end. `run` is the whole program; tools/embedgt.cpp only
// forwards argv.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include "embedgt/analysis.hpp"
#include "embedgt/em.hpp"
#include "embedgt/error.hpp"
#include "embedgt/io.hpp"
#include "embedgt/kernels.hpp"
#include "embedgt/simulate.hpp"
#include "embedgt/types.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace embedgt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

namespace fs = std::filesystem;

/// Thrown for flag values that parse but make no sense together.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> split_list(const std::string &s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    out.emplace_back(io::trim(item));
  return out;
}

inline std::vector<double> parse_doubles(const std::string &s, const std::string &flag) {
  std::vector<double> out;
  for (const auto &item : split_list(s)) {
    const auto v = io::parse_double(item);
    if (!v)
      throw UsageError(flag + ": '" + item + "' is not a number");
    out.push_back(*v);
  }
  return out;
}

/// "514@100,500@25,500@5"
inline std::vector<CohortPlan> parse_groups(const std::string &s) {
  std::vector<CohortPlan> plan;
  for (const auto &item : split_list(s)) {
    const auto at = item.find('@');
    const auto n = at == std::string::npos ? std::nullopt : io::parse_int(item.substr(0, at));
    const auto j = at == std::string::npos ? std::nullopt : io::parse_int(item.substr(at + 1));
    if (!n || !j || *n < 0 || *j < 1)
      throw UsageError("--groups: expected n@J entries, got '" + item + "'");
    plan.push_back({static_cast<std::size_t>(*n), static_cast<int>(*j)});
  }
  if (plan.empty())
    throw UsageError("--groups is empty");
  return plan;
}

/// "start:stop:step"
inline GridRange parse_range(const std::string &s, const std::string &flag) {
  const auto parts = split_list(s, ':');
  if (parts.size() != 3)
    throw UsageError(flag + ": expected start:stop:step, got '" + s + "'");
  const auto a = io::parse_double(parts[0]);
  const auto b = io::parse_double(parts[1]);
  const auto c = io::parse_double(parts[2]);
  if (!a || !b || !c || !(*c > 0.0) || *b < *a)
    throw UsageError(flag + ": expected start <= stop and step > 0, got '" + s + "'");
  return {*a, *b, *c};
}

inline std::optional<std::vector<std::string>> labels_or_none(const std::string &s) {
  if (s.empty())
    return std::nullopt;
  return split_list(s);
}

inline std::string format_vector(const Eigen::VectorXd &v) {
  std::string s = "(";
  for (Eigen::Index k = 0; k < v.size(); ++k)
    s += (k ? ", " : "") + io::format_double(v[k]);
  return s + ")";
}

// ---------------------------------------------------------------------------

struct FitFlags {
  std::string config_path;
  io::RunConfig rc;
  std::string m_step = "paper";
  std::string proposal = "laplace";
  std::string labels;
  std::size_t workers = 1;
  bool no_adapt = false;
  bool quiet = false;
};

inline int do_fit(CLI::App &cmd, FitFlags &f, std::ostream &out, std::ostream &err) {
  io::RunConfig rc = f.config_path.empty() ? io::RunConfig{} : io::load_run_config(f.config_path);
  auto given = [&](const char *name) { return cmd.get_option(name)->count() > 0; };
  // Flags given on the command line override a loaded config.
  if (f.config_path.empty() || given("--input"))
    rc.input = f.rc.input;
  if (f.config_path.empty() || given("--format"))
    rc.format = f.rc.format;
  if (f.config_path.empty() || given("--out"))
    rc.out = f.rc.out;
  if (f.config_path.empty() || given("--labels"))
    rc.labels = f.labels.empty() ? std::vector<std::string>{} : split_list(f.labels);
  if (f.config_path.empty() || given("--em-iters"))
    rc.em.max_iterations = f.rc.em.max_iterations;
  if (f.config_path.empty() || given("--min-iters"))
    rc.em.min_iterations = f.rc.em.min_iterations;
  if (f.config_path.empty() || given("--rel-tol"))
    rc.em.rel_tol = f.rc.em.rel_tol;
  if (f.config_path.empty() || given("--stable-iters"))
    rc.em.stable_iterations = f.rc.em.stable_iterations;
  if (f.config_path.empty() || given("--m-step"))
    rc.em.m_step = io::parse_m_step(f.m_step);
  if (f.config_path.empty() || given("--proposal"))
    rc.em.proposal = io::parse_proposal(f.proposal);
  if (f.config_path.empty() || given("--mcmc"))
    rc.em.mcmc.n_retained = f.rc.em.mcmc.n_retained;
  if (f.config_path.empty() || given("--burnin"))
    rc.em.mcmc.burn_in = f.rc.em.mcmc.burn_in;
  if (f.config_path.empty() || given("--thin"))
    rc.em.mcmc.thin = f.rc.em.mcmc.thin;
  if (f.config_path.empty() || given("--proposal-scale"))
    rc.em.mcmc.proposal_scale = f.rc.em.mcmc.proposal_scale;
  if (f.config_path.empty() || given("--no-adapt"))
    rc.em.mcmc.adapt = !f.no_adapt;
  if (f.config_path.empty() || given("--seed"))
    rc.em.mcmc.seed = f.rc.em.mcmc.seed;
  if (f.config_path.empty() || given("--pca-scale"))
    rc.pca_scale = f.rc.pca_scale;
  if (f.config_path.empty() || given("--coverage"))
    rc.coverage = f.rc.coverage;
  if (f.config_path.empty() || given("--group-by"))
    rc.group_by = f.rc.group_by;
  if (f.config_path.empty() || given("--save-draws"))
    rc.save_draws = f.rc.save_draws;
  rc.command = "fit";
  if (rc.input.empty())
    throw UsageError("fit: --input is required");
  if (rc.out.empty())
    throw UsageError("fit: --out is required");
  if (rc.em.min_iterations > rc.em.max_iterations)
    rc.em.min_iterations = rc.em.max_iterations;

  std::vector<std::string> warnings;
  const auto labels = rc.labels.empty() ? std::nullopt : std::optional(rc.labels);
  const auto data = io::load_dataset(rc.input, io::parse_format(rc.format), labels, &warnings);
  for (const auto &w : warnings)
    err << "warning: " << w << '\n';

  EmConfig em = rc.em;
  em.workers = f.workers;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = fit(data, em, [&](const IterationRecord &h) {
    if (f.quiet)
      return;
    err << "iter " << h.iteration << "  mu=" << format_vector(h.mu) << "  |Sigma|=" << h.sigma_frobenius
        << "  accept=" << h.mean_acceptance << "  dmu=" << h.mu_change << "  dSigma=" << h.sigma_change << '\n';
    if (h.acceptance_warnings > 0)
      err << "warning: " << h.acceptance_warnings << " chains outside the [0.05, 0.95] acceptance band\n";
    if (h.clamp_events > 0)
      err << "warning: " << h.clamp_events << " kernel evaluations clamped |z| to " << kZClamp << '\n';
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto reports = io::compute_reports(result, io::group_labels(data, rc.group_by), rc.pca_scale, rc.coverage);
  for (const auto &w : reports.warnings)
    err << "warning: " << w << '\n';
  const auto manifest = io::write_outputs(result, reports, rc.out, rc, rc.save_draws);

  out << "instances " << result.size() << ", patterns " << result.patterns.size() << ", iterations "
      << result.iterations_run << (result.converged ? " (converged)" : " (max iterations reached)") << ", "
      << secs << " s\n";
  out << "mu " << format_vector(result.final_prior.mu()) << '\n';
  out << "wrote " << manifest.files.size() << " files to " << rc.out << '\n';
  if (!result.converged)
    err << "warning: EM stopped at the iteration cap without meeting the tolerance\n";
  return kOk;
}

struct AnalyzeFlags {
  std::string fit_dir;
  std::string input;
  std::string format = "wide";
  std::string labels;
  std::string group_by = "majority";
  std::string out;
  bool pca_scale = false;
  double coverage = 0.95;
};

inline int do_analyze(const AnalyzeFlags &f, std::ostream &out, std::ostream &err) {
  const fs::path dir = f.fit_dir;
  const auto saved = io::read_embeddings(dir / "embeddings.csv");
  const std::size_t n = saved.ids.size();

  io::AnalysisReports reports;
  if (!f.input.empty()) {
    const auto data = io::load_dataset(f.input, io::parse_format(f.format), labels_or_none(f.labels));
    if (data.size() != n)
      throw DomainError("dataset has " + std::to_string(data.size()) + " instances but the fit has " +
                        std::to_string(n));
    for (std::size_t i = 0; i < n; ++i)
      if (data[i].id != saved.ids[i])
        throw DomainError("instance " + std::to_string(i + 1) + " is '" + data[i].id + "' in the dataset but '" +
                          saved.ids[i] + "' in the fit");
    reports.groups = io::group_labels(data, f.group_by);
  } else {
    reports.groups.assign(n, "all");
  }

  try {
    reports.correlation = correlation_matrix(saved.z);
  } catch (const DomainError &e) {
    reports.warnings.emplace_back(std::string("correlation skipped: ") + e.what());
  }
  if (fs::is_directory(dir / "draws")) {
    std::vector<Eigen::MatrixXd> draws;
    std::map<std::string, std::size_t> used;
    for (const auto &id : saved.ids) {
      std::string stem = io::safe_file_stem(id);
      if (const auto c = used[stem]++; c > 0)
        stem += "~" + std::to_string(c);
      draws.push_back(io::read_draws(dir / "draws" / (stem + ".csv"), saved.labels.size()));
    }
    try {
      reports.correlation_std = correlation_std(draws);
    } catch (const DomainError &e) {
      reports.warnings.emplace_back(std::string("correlation_std skipped: ") + e.what());
    }
  } else {
    reports.warnings.emplace_back("no draws/ directory; correlation_std needs a fit run with --save-draws");
  }
  try {
    reports.pca = pca_biplot(saved.z, f.pca_scale);
    reports.ellipses = group_ellipses(reports.pca->scores, reports.groups, f.coverage);
  } catch (const DomainError &e) {
    reports.warnings.emplace_back(std::string("PCA skipped: ") + e.what());
  }
  for (const auto &w : reports.warnings)
    err << "warning: " << w << '\n';

  io::OutputWriter w(f.out.empty() ? dir : fs::path(f.out));
  io::add_reports(w, saved.ids, saved.labels, reports);
  const auto manifest = w.finish("analysis_manifest.json");
  out << "wrote " << manifest.files.size() << " analysis files\n";
  if (reports.correlation) {
    out << "correlation:\n" << io::matrix_csv(*reports.correlation, saved.labels);
  }
  if (reports.pca)
    out << "explained variance pc1 " << reports.pca->explained_variance_ratio[0] << ", pc2 "
        << reports.pca->explained_variance_ratio[1] << '\n';
  return kOk;
}

struct SubsampleFlags {
  std::string input;
  std::string format = "wide";
  std::string labels;
  std::string groups;
  std::uint64_t seed = 0;
  std::string out;
};

inline int do_subsample(const SubsampleFlags &f, std::ostream &out, std::ostream &err) {
  std::vector<std::string> warnings;
  const auto data = io::load_dataset(f.input, io::parse_format(f.format), labels_or_none(f.labels), &warnings);
  for (const auto &w : warnings)
    err << "warning: " << w << '\n';
  const auto plan = parse_groups(f.groups);
  const auto thinned = subsample_annotations(data, plan, f.seed);
  io::save_dataset(f.out, thinned);
  std::map<std::string, std::size_t> sizes;
  for (const auto &inst : thinned.instances())
    ++sizes[inst.metadata.at("J_group")];
  for (const auto &c : plan)
    out << "J=" << c.j_target << ": " << sizes[std::to_string(c.j_target)] << " instances\n";
  out << "wrote " << f.out << '\n';
  return kOk;
}

struct SimulateFlags {
  std::size_t n = 0;
  std::string votes = "50";
  std::string mu;
  std::string sigma = "1";
  std::string labels;
  std::uint64_t seed = 0;
  std::string out;
  std::string truth;
};

inline int do_simulate(const SimulateFlags &f, std::ostream &out, std::ostream &) {
  const auto mu_v = parse_doubles(f.mu, "--mu");
  const auto k = static_cast<Eigen::Index>(mu_v.size());
  if (k < 2)
    throw UsageError("--mu needs at least two entries");
  const auto s = parse_doubles(f.sigma, "--sigma");
  Eigen::MatrixXd sigma;
  if (s.size() == 1) {
    sigma = s[0] * Eigen::MatrixXd::Identity(k, k);
  } else if (s.size() == mu_v.size()) {
    sigma = Eigen::Map<const Eigen::VectorXd>(s.data(), k).asDiagonal();
  } else if (s.size() == mu_v.size() * mu_v.size()) {
    sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s.data(), k, k);
  } else {
    throw UsageError("--sigma takes 1, K or K*K values");
  }
  SimSpec spec{f.n, {}, GaussianPrior(Eigen::Map<const Eigen::VectorXd>(mu_v.data(), k), sigma), f.seed, std::nullopt};
  for (const auto &item : split_list(f.votes)) {
    const auto j = io::parse_int(item);
    if (!j)
      throw UsageError("--votes: '" + item + "' is not an integer");
    spec.votes_per_instance.push_back(static_cast<int>(*j));
  }
  if (!f.labels.empty())
    spec.labels = ClassLabels(split_list(f.labels));
  const auto sim = sample_dataset(spec);
  io::save_dataset(f.out, sim.dataset);
  if (!f.truth.empty()) {
    std::ostringstream t;
    t << "instance_id";
    for (const auto &c : sim.dataset.labels().names())
      t << ',' << io::csv_field("z_" + c);
    t << '\n';
    for (std::size_t i = 0; i < sim.dataset.size(); ++i) {
      t << io::csv_field(sim.dataset[i].id);
      for (Eigen::Index c = 0; c < k; ++c)
        t << ',' << io::format_double(sim.true_embeddings(static_cast<Eigen::Index>(i), c));
      t << '\n';
    }
    io::write_text_file(f.truth, t.str());
  }
  out << "simulated " << sim.dataset.size() << " instances, K=" << k << ", wrote " << f.out << '\n';
  return kOk;
}

inline int do_moment_surface(const std::string &z1, const std::string &z2, const std::string &path,
                             std::ostream &out) {
  const auto rows = moment_surface(parse_range(z1, "--z1"), parse_range(z2, "--z2"));
  std::ostringstream s;
  s << "z1,z2,mean,log_variance\n";
  for (const auto &r : rows)
    s << io::format_double(r.z1) << ',' << io::format_double(r.z2) << ',' << io::format_double(r.mean) << ','
      << io::format_double(r.log_variance) << '\n';
  if (path.empty())
    out << s.str();
  else
    io::write_text_file(path, s.str());
  return kOk;
}

inline int do_validate(const std::string &input, const std::string &format, const std::string &labels,
                       std::ostream &out, std::ostream &err) {
  std::vector<std::string> warnings;
  const auto data = io::load_dataset(input, io::parse_format(format), labels_or_none(labels), &warnings);
  for (const auto &w : warnings)
    err << "warning: " << w << '\n';
  int jmin = data[0].votes.total();
  int jmax = jmin;
  for (const auto &inst : data.instances()) {
    jmin = std::min(jmin, inst.votes.total());
    jmax = std::max(jmax, inst.votes.total());
  }
  const auto stats = agreement_stats(data);
  out << "ok: " << data.size() << " instances, K=" << data.num_classes() << " (";
  for (std::size_t k = 0; k < data.num_classes(); ++k)
    out << (k ? ", " : "") << data.labels()[k];
  out << "), J in [" << jmin << ", " << jmax << "]\n";
  out << "unanimous fraction " << stats.full_agreement_fraction << ", distinct patterns " << stats.distinct_patterns
      << '\n';
  out << "majority counts:";
  for (std::size_t k = 0; k < data.num_classes(); ++k)
    out << ' ' << data.labels()[k] << '=' << stats.majority_counts[k];
  out << " (ties " << stats.majority_ties << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  CLI::App app{"Embedded ground truth: Dirichlet-multinomial embeddings of annotation votes", "embedgt"};
  app.require_subcommand(1);

  const std::vector<std::string> formats{"wide", "long"};

  // fit
  FitFlags ff;
  auto *fit_cmd = app.add_subcommand("fit", "Fit embeddings and the shared prior by stochastic EM");
  fit_cmd->add_option("--config", ff.config_path, "Replay a saved run_config.json (other flags override it)");
  fit_cmd->add_option("--input", ff.rc.input, "Dataset CSV");
  fit_cmd->add_option("--format", ff.rc.format, "Dataset layout")->check(CLI::IsMember(formats))->capture_default_str();
  fit_cmd->add_option("--labels", ff.labels, "Comma-separated class order");
  fit_cmd->add_option("--out", ff.rc.out, "Output directory");
  fit_cmd->add_option("--em-iters", ff.rc.em.max_iterations, "Maximum EM iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_option("--min-iters", ff.rc.em.min_iterations, "Minimum EM iterations")->capture_default_str();
  fit_cmd->add_option("--rel-tol", ff.rc.em.rel_tol, "Relative tolerance on mu and ||Sigma||_F")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_option("--stable-iters", ff.rc.em.stable_iterations, "Consecutive stable iterations to stop")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_option("--m-step", ff.m_step, "Prior update: moments of posterior means or of all draws")
      ->check(CLI::IsMember({"paper", "full-draws"}))
      ->capture_default_str();
  fit_cmd->add_option("--proposal", ff.proposal, "Random-walk proposal shape")
      ->check(CLI::IsMember({"laplace", "isotropic"}))
      ->capture_default_str();
  fit_cmd->add_option("--mcmc", ff.rc.em.mcmc.n_retained, "Retained MCMC draws per instance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_option("--burnin", ff.rc.em.mcmc.burn_in, "Burn-in steps")->capture_default_str();
  fit_cmd->add_option("--thin", ff.rc.em.mcmc.thin, "Thinning interval")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_option("--proposal-scale", ff.rc.em.mcmc.proposal_scale, "Initial proposal scale")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  fit_cmd->add_flag("--no-adapt", ff.no_adapt, "Keep the proposal scale fixed during burn-in");
  fit_cmd->add_option("--seed", ff.rc.em.mcmc.seed, "Random seed")->capture_default_str();
  fit_cmd->add_flag("--pca-scale", ff.rc.pca_scale, "Correlation (standardized) PCA instead of covariance PCA");
  fit_cmd->add_option("--coverage", ff.rc.coverage, "Concentration ellipse coverage")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  fit_cmd->add_option("--group-by", ff.rc.group_by, "Biplot groups: majority, gold, none or a meta column")
      ->capture_default_str();
  fit_cmd->add_flag("--save-draws", ff.rc.save_draws, "Write draws/<id>.csv per instance");
  fit_cmd->add_option("--workers", ff.workers, "E-step threads (0 = all cores); never changes results")
      ->envname("EMBEDGT_WORKERS")
      ->capture_default_str();
  fit_cmd->add_flag("--quiet", ff.quiet, "No per-iteration progress");

  // analyze
  AnalyzeFlags af;
  auto *an_cmd = app.add_subcommand("analyze", "Correlation, PCA biplot and ellipses for a saved fit");
  an_cmd->add_option("--fit-dir", af.fit_dir, "Directory written by fit")->required();
  an_cmd->add_option("--input", af.input, "Dataset CSV (for grouping)");
  an_cmd->add_option("--format", af.format, "Dataset layout")->check(CLI::IsMember(formats))->capture_default_str();
  an_cmd->add_option("--labels", af.labels, "Comma-separated class order");
  an_cmd->add_option("--group-by", af.group_by, "majority, gold, none or a meta column")->capture_default_str();
  an_cmd->add_option("--out", af.out, "Output directory (default: the fit directory)");
  an_cmd->add_flag("--pca-scale", af.pca_scale, "Correlation PCA");
  an_cmd->add_option("--coverage", af.coverage, "Ellipse coverage")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  // subsample
  SubsampleFlags sf;
  auto *ss_cmd = app.add_subcommand("subsample", "Thin annotations into cohorts with different J");
  ss_cmd->add_option("--input", sf.input, "Dataset CSV")->required();
  ss_cmd->add_option("--format", sf.format, "Dataset layout")->check(CLI::IsMember(formats))->capture_default_str();
  ss_cmd->add_option("--labels", sf.labels, "Comma-separated class order");
  ss_cmd->add_option("--groups", sf.groups, "Cohorts as n@J,n@J,...")->required();
  ss_cmd->add_option("--seed", sf.seed, "Random seed")->capture_default_str();
  ss_cmd->add_option("--out", sf.out, "Output CSV (wide)")->required();

  // simulate
  SimulateFlags mf;
  auto *sim_cmd = app.add_subcommand("simulate", "Sample a dataset from the generative model");
  sim_cmd->add_option("--n", mf.n, "Number of instances")->required()->check(CLI::PositiveNumber);
  sim_cmd->add_option("--votes", mf.votes, "J, or one J per instance (comma-separated)")->capture_default_str();
  sim_cmd->add_option("--mu", mf.mu, "Prior mean, comma-separated (sets K)")->required();
  sim_cmd->add_option("--sigma", mf.sigma, "Prior covariance: 1 (scaled I), K (diagonal) or K*K (row-major) values")
      ->capture_default_str();
  sim_cmd->add_option("--labels", mf.labels, "Comma-separated class names");
  sim_cmd->add_option("--seed", mf.seed, "Random seed")->capture_default_str();
  sim_cmd->add_option("--out", mf.out, "Output CSV (wide)")->required();
  sim_cmd->add_option("--truth", mf.truth, "Also write the latent embeddings here");

  // moment-surface
  std::string z1;
  std::string z2;
  std::string surface_out;
  auto *ms_cmd = app.add_subcommand("moment-surface", "Beta mean and log-variance over a (z1, z2) grid");
  ms_cmd->add_option("--z1", z1, "start:stop:step")->required()->allow_extra_args(false);
  ms_cmd->add_option("--z2", z2, "start:stop:step")->required()->allow_extra_args(false);
  ms_cmd->add_option("--out", surface_out, "Output CSV (default: stdout)");

  // validate
  std::string v_input;
  std::string v_format = "wide";
  std::string v_labels;
  auto *val_cmd = app.add_subcommand("validate", "Parse and check a dataset without fitting");
  val_cmd->add_option("--input", v_input, "Dataset CSV")->required();
  val_cmd->add_option("--format", v_format, "Dataset layout")->check(CLI::IsMember(formats))->capture_default_str();
  val_cmd->add_option("--labels", v_labels, "Comma-separated class order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App *sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kUsage;
  }

  try {
    if (*fit_cmd)
      return do_fit(*fit_cmd, ff, out, err);
    if (*an_cmd)
      return do_analyze(af, out, err);
    if (*ss_cmd)
      return do_subsample(sf, out, err);
    if (*sim_cmd)
      return do_simulate(mf, out, err);
    if (*ms_cmd)
      return do_moment_surface(z1, z2, surface_out, out);
    if (*val_cmd)
      return do_validate(v_input, v_format, v_labels, out, err);
  } catch (const UsageError &e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError &e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const ParseError &e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const IoError &e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const DomainError &e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

} // namespace embedgt::cli
