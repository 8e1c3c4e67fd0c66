#pragma once

// Dataset ingestion (wide / long CSV), result serialization and run manifests.
//
// Wide format:  instance_id,<class1>,...,<classK>[,gold][,meta:<key>...]
// Long format:  instance_id,vote[,annotator_id]
//
// Floating-point values are written in shortest round-trip form.

#include "embedgt/analysis.hpp"
#include "embedgt/em.hpp"
#include "embedgt/error.hpp"
#include "embedgt/kernels.hpp"
#include "embedgt/types.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

namespace embedgt::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char *kFormatVersion = "1";

enum class DatasetFormat { Wide, Long };

inline DatasetFormat parse_format(const std::string &s) {
  if (s == "wide")
    return DatasetFormat::Wide;
  if (s == "long")
    return DatasetFormat::Long;
  throw DomainError("unknown dataset format '" + s + "' (expected wide or long)");
}

// ---------------------------------------------------------------------------
// text helpers

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{})
    throw IoError("failed to format floating-point value");
  return std::string(buf, end);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

/// Comma split with optional double-quoted fields ("" escapes a quote).
inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.emplace_back(was_quoted ? field : std::string(trim(field)));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  out.emplace_back(was_quoted ? field : std::string(trim(field)));
  return out;
}

inline std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + '"';
}

inline std::optional<long long> parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
    return std::nullopt;
  return v;
}

/// Lines of a stream with 1-based numbers; blank lines and '#' comments skipped.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(std::istream &in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (number == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
      line.erase(0, 3);
    const auto t = trim(line);
    if (t.empty() || t.front() == '#')
      continue;
    out.emplace_back(number, std::string(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset ingestion

inline AnnotationDataset read_wide(std::istream &in, const std::string &name,
                                   const std::optional<std::vector<std::string>> &labels = std::nullopt) {
  const auto lines = read_lines(in);
  if (lines.empty())
    throw ParseError(name, 0, "file is empty");
  const auto header = split_csv(lines.front().second);
  const std::size_t hl = lines.front().first;
  if (header.empty() || header.front() != "instance_id")
    throw ParseError(name, hl, "header must start with 'instance_id'");

  std::vector<std::string> classes;
  std::optional<std::size_t> gold_col;
  std::vector<std::pair<std::size_t, std::string>> meta_cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto &h = header[c];
    if (h == "gold") {
      if (gold_col)
        throw ParseError(name, hl, "duplicate 'gold' column");
      gold_col = c;
    } else if (h.rfind("meta:", 0) == 0 && h.size() > 5) {
      meta_cols.emplace_back(c, h.substr(5));
    } else {
      if (gold_col || !meta_cols.empty())
        throw ParseError(name, hl, "class column '" + h + "' must precede gold/meta columns");
      classes.push_back(h);
    }
  }

  ClassLabels file_labels;
  try {
    file_labels = ClassLabels(classes);
  } catch (const DomainError &e) {
    throw ParseError(name, hl, e.what());
  }
  // Optional explicit order: a permutation of the header's classes.
  std::vector<std::size_t> column_of(classes.size());
  ClassLabels out_labels = file_labels;
  if (labels) {
    if (labels->size() != classes.size())
      throw ParseError(name, hl, "--labels lists " + std::to_string(labels->size()) +
                                     " classes but the header has " + std::to_string(classes.size()));
    try {
      out_labels = ClassLabels(*labels);
    } catch (const DomainError &e) {
      throw ParseError(name, 0, e.what());
    }
    for (std::size_t k = 0; k < labels->size(); ++k) {
      const auto idx = file_labels.index_of((*labels)[k]);
      if (!idx)
        throw ParseError(name, hl, "class '" + (*labels)[k] + "' from --labels is not in the header");
      column_of[k] = *idx;
    }
  } else {
    for (std::size_t k = 0; k < classes.size(); ++k)
      column_of[k] = k;
  }

  std::vector<Instance> instances;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto &[ln, text] = lines[r];
    const auto fields = split_csv(text);
    if (fields.size() != header.size())
      throw ParseError(name, ln, "expected " + std::to_string(header.size()) + " fields, found " +
                                     std::to_string(fields.size()));
    Instance inst;
    inst.id = fields[0];
    if (inst.id.empty())
      throw ParseError(name, ln, "empty instance_id");
    if (auto [it, ok] = seen.emplace(inst.id, ln); !ok)
      throw ParseError(name, ln, "duplicate instance_id '" + inst.id + "' (first seen on line " +
                                     std::to_string(it->second) + ")");
    std::vector<int> counts(classes.size());
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const auto &cell = fields[1 + column_of[k]];
      const auto v = parse_int(cell);
      if (!v)
        throw ParseError(name, ln, "count '" + cell + "' for class '" + out_labels[k] + "' is not an integer");
      if (*v < 0)
        throw ParseError(name, ln, "negative count for class '" + out_labels[k] + "'");
      if (*v > 100000000)
        throw ParseError(name, ln, "count for class '" + out_labels[k] + "' is implausibly large");
      counts[k] = static_cast<int>(*v);
    }
    try {
      inst.votes = VoteCounts(std::move(counts));
    } catch (const DomainError &e) {
      throw ParseError(name, ln, std::string("instance '") + inst.id + "': " + e.what());
    }
    if (gold_col && !fields[*gold_col].empty()) {
      const auto g = out_labels.index_of(fields[*gold_col]);
      if (!g)
        throw ParseError(name, ln, "gold label '" + fields[*gold_col] + "' is not a class");
      inst.gold = *g;
    }
    for (const auto &[c, key] : meta_cols)
      if (!fields[c].empty())
        inst.metadata[key] = fields[c];
    instances.push_back(std::move(inst));
  }
  if (instances.empty())
    throw ParseError(name, hl, "no instances after the header");
  return AnnotationDataset(std::move(out_labels), std::move(instances));
}

inline AnnotationDataset read_long(std::istream &in, const std::string &name,
                                   const std::optional<std::vector<std::string>> &labels = std::nullopt,
                                   std::vector<std::string> *warnings = nullptr) {
  const auto lines = read_lines(in);
  if (lines.empty())
    throw ParseError(name, 0, "file is empty");
  const auto header = split_csv(lines.front().second);
  const std::size_t hl = lines.front().first;
  if (header.size() < 2 || header.size() > 3 || header[0] != "instance_id" || header[1] != "vote" ||
      (header.size() == 3 && header[2] != "annotator_id"))
    throw ParseError(name, hl, "header must be 'instance_id,vote[,annotator_id]'");

  std::vector<std::string> classes;
  if (labels) {
    try {
      classes = ClassLabels(*labels).names();
    } catch (const DomainError &e) {
      throw ParseError(name, 0, e.what());
    }
  } else if (warnings) {
    warnings->push_back(name + ": class order taken from first appearance; pass --labels to fix it");
  }

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<int>> tallies;
  std::unordered_map<std::string, std::size_t> first_line;
  std::vector<std::pair<std::string, std::size_t>> raw;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto &[ln, text] = lines[r];
    const auto fields = split_csv(text);
    if (fields.size() != header.size())
      throw ParseError(name, ln, "expected " + std::to_string(header.size()) + " fields, found " +
                                     std::to_string(fields.size()));
    if (fields[0].empty())
      throw ParseError(name, ln, "empty instance_id");
    if (fields[1].empty())
      throw ParseError(name, ln, "empty vote");
    std::size_t k;
    auto it = std::find(classes.begin(), classes.end(), fields[1]);
    if (it == classes.end()) {
      if (labels)
        throw ParseError(name, ln, "vote '" + fields[1] + "' is not one of the given classes");
      classes.push_back(fields[1]);
      k = classes.size() - 1;
    } else {
      k = static_cast<std::size_t>(it - classes.begin());
    }
    if (!first_line.count(fields[0])) {
      first_line[fields[0]] = ln;
      order.push_back(fields[0]);
    }
    raw.emplace_back(fields[0], k);
  }
  if (order.empty())
    throw ParseError(name, hl, "no annotations after the header");
  ClassLabels out_labels;
  try {
    out_labels = ClassLabels(classes);
  } catch (const DomainError &e) {
    throw ParseError(name, 0, e.what());
  }
  for (const auto &[id, k] : raw) {
    auto &t = tallies[id];
    t.resize(classes.size(), 0);
    ++t[k];
  }
  std::vector<Instance> instances;
  instances.reserve(order.size());
  for (const auto &id : order) {
    auto counts = tallies[id];
    counts.resize(classes.size(), 0);
    instances.push_back({id, VoteCounts(std::move(counts)), std::nullopt, {}});
  }
  return AnnotationDataset(std::move(out_labels), std::move(instances));
}

inline AnnotationDataset load_dataset(const fs::path &path, DatasetFormat format,
                                      const std::optional<std::vector<std::string>> &labels = std::nullopt,
                                      std::vector<std::string> *warnings = nullptr) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  return format == DatasetFormat::Wide ? read_wide(in, path.string(), labels)
                                       : read_long(in, path.string(), labels, warnings);
}

inline void write_dataset(std::ostream &out, const AnnotationDataset &data) {
  std::vector<std::string> meta_keys;
  bool any_gold = false;
  for (const auto &inst : data.instances()) {
    any_gold = any_gold || inst.gold.has_value();
    for (const auto &[key, _] : inst.metadata)
      if (std::find(meta_keys.begin(), meta_keys.end(), key) == meta_keys.end())
        meta_keys.push_back(key);
  }
  std::sort(meta_keys.begin(), meta_keys.end());

  out << "instance_id";
  for (const auto &c : data.labels().names())
    out << ',' << csv_field(c);
  if (any_gold)
    out << ",gold";
  for (const auto &key : meta_keys)
    out << ',' << csv_field("meta:" + key);
  out << '\n';
  for (const auto &inst : data.instances()) {
    out << csv_field(inst.id);
    for (int c : inst.votes.counts())
      out << ',' << c;
    if (any_gold)
      out << ',' << (inst.gold ? csv_field(data.labels()[*inst.gold]) : std::string{});
    for (const auto &key : meta_keys) {
      auto it = inst.metadata.find(key);
      out << ',' << (it == inst.metadata.end() ? std::string{} : csv_field(it->second));
    }
    out << '\n';
  }
}

inline void write_text_file(const fs::path &path, const std::string &content) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  out << content;
  out.close();
  if (!out)
    throw IoError("failed writing '" + path.string() + "'");
}

inline void save_dataset(const fs::path &path, const AnnotationDataset &data) {
  std::ostringstream s;
  write_dataset(s, data);
  write_text_file(path, s.str());
}

// ---------------------------------------------------------------------------
// run configuration

/// Everything that determines a run's outputs. Worker count is deliberately
/// absent: it never changes results.
struct RunConfig {
  std::string command = "fit";
  std::string input;
  std::string format = "wide";
  std::vector<std::string> labels;
  std::string out;
  EmConfig em;
  bool pca_scale = false;
  double coverage = 0.95;
  std::string group_by = "majority";
  bool save_draws = false;
};

inline const char *to_string(MStep m) { return m == MStep::PosteriorMeans ? "paper" : "full-draws"; }
inline const char *to_string(ProposalShape p) { return p == ProposalShape::Laplace ? "laplace" : "isotropic"; }

inline MStep parse_m_step(const std::string &s) {
  if (s == "paper")
    return MStep::PosteriorMeans;
  if (s == "full-draws")
    return MStep::FullDraws;
  throw DomainError("unknown M-step '" + s + "'");
}

inline ProposalShape parse_proposal(const std::string &s) {
  if (s == "laplace")
    return ProposalShape::Laplace;
  if (s == "isotropic")
    return ProposalShape::Isotropic;
  throw DomainError("unknown proposal shape '" + s + "'");
}

inline json to_json(const RunConfig &c) {
  json j;
  j["format_version"] = kFormatVersion;
  j["command"] = c.command;
  j["input"] = c.input;
  j["format"] = c.format;
  j["labels"] = c.labels;
  j["out"] = c.out;
  j["em"] = {{"max_iterations", c.em.max_iterations},
             {"min_iterations", c.em.min_iterations},
             {"rel_tol", c.em.rel_tol},
             {"stable_iterations", c.em.stable_iterations},
             {"m_step", to_string(c.em.m_step)},
             {"proposal", to_string(c.em.proposal)}};
  j["mcmc"] = {{"n_retained", c.em.mcmc.n_retained},
               {"burn_in", c.em.mcmc.burn_in},
               {"thin", c.em.mcmc.thin},
               {"proposal_scale", c.em.mcmc.proposal_scale},
               {"adapt", c.em.mcmc.adapt},
               {"seed", c.em.mcmc.seed}};
  j["analysis"] = {{"pca_scale", c.pca_scale}, {"coverage", c.coverage}, {"group_by", c.group_by}};
  j["save_draws"] = c.save_draws;
  return j;
}

inline RunConfig run_config_from_json(const json &j) {
  try {
    RunConfig c;
    c.command = j.at("command").get<std::string>();
    c.input = j.at("input").get<std::string>();
    c.format = j.at("format").get<std::string>();
    c.labels = j.value("labels", std::vector<std::string>{});
    c.out = j.at("out").get<std::string>();
    const auto &em = j.at("em");
    c.em.max_iterations = em.at("max_iterations").get<std::size_t>();
    c.em.min_iterations = em.at("min_iterations").get<std::size_t>();
    c.em.rel_tol = em.at("rel_tol").get<double>();
    c.em.stable_iterations = em.value("stable_iterations", std::size_t{2});
    c.em.m_step = parse_m_step(em.at("m_step").get<std::string>());
    c.em.proposal = parse_proposal(em.value("proposal", std::string("laplace")));
    const auto &mc = j.at("mcmc");
    c.em.mcmc.n_retained = mc.at("n_retained").get<std::size_t>();
    c.em.mcmc.burn_in = mc.at("burn_in").get<std::size_t>();
    c.em.mcmc.thin = mc.at("thin").get<std::size_t>();
    c.em.mcmc.proposal_scale = mc.at("proposal_scale").get<double>();
    c.em.mcmc.adapt = mc.at("adapt").get<bool>();
    c.em.mcmc.seed = mc.at("seed").get<std::uint64_t>();
    const auto &an = j.at("analysis");
    c.pca_scale = an.at("pca_scale").get<bool>();
    c.coverage = an.at("coverage").get<double>();
    c.group_by = an.at("group_by").get<std::string>();
    c.save_draws = j.value("save_draws", false);
    return c;
  } catch (const json::exception &e) {
    throw DomainError(std::string("invalid run config: ") + e.what());
  }
}

inline RunConfig load_run_config(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception &e) {
    throw ParseError(path.string(), 0, e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// reports

/// Optional analysis products attached to a fit; absent members are not written.
struct AnalysisReports {
  std::optional<Eigen::MatrixXd> correlation;
  std::optional<Eigen::MatrixXd> correlation_std;
  std::optional<PcaResult> pca;
  std::vector<std::string> groups;
  std::vector<EllipseSpec> ellipses;
  std::vector<std::string> warnings;
};

/// Per-instance group label for biplots: "majority", "gold", "J_group" or "none".
inline std::vector<std::string> group_labels(const AnnotationDataset &data, const std::string &group_by) {
  std::vector<std::string> out;
  out.reserve(data.size());
  for (const auto &inst : data.instances()) {
    if (group_by == "majority") {
      out.push_back(data.labels()[majority_vote(inst.votes).index]);
    } else if (group_by == "gold") {
      out.push_back(inst.gold ? data.labels()[*inst.gold] : std::string("unknown"));
    } else if (group_by == "none") {
      out.emplace_back("all");
    } else {
      auto it = inst.metadata.find(group_by);
      out.push_back(it == inst.metadata.end() ? std::string("unknown") : it->second);
    }
  }
  return out;
}

inline AnalysisReports compute_reports(const FitResult &fit, const std::vector<std::string> &groups, bool pca_scale,
                                       double coverage) {
  AnalysisReports r;
  r.groups = groups;
  try {
    r.correlation = correlation_report(fit).corr;
  } catch (const DomainError &e) {
    r.warnings.emplace_back(std::string("correlation skipped: ") + e.what());
  }
  try {
    r.correlation_std = correlation_std(fit);
  } catch (const DomainError &e) {
    r.warnings.emplace_back(std::string("correlation_std skipped: ") + e.what());
  }
  try {
    r.pca = pca_biplot(fit.embeddings, pca_scale);
    if (!groups.empty())
      r.ellipses = group_ellipses(r.pca->scores, groups, coverage);
  } catch (const DomainError &e) {
    r.warnings.emplace_back(std::string("PCA skipped: ") + e.what());
  }
  return r;
}

inline std::string matrix_csv(const Eigen::MatrixXd &m, const ClassLabels &labels) {
  std::ostringstream s;
  s << "class";
  for (const auto &c : labels.names())
    s << ',' << csv_field(c);
  s << '\n';
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    s << csv_field(labels[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < m.cols(); ++b)
      s << ',' << format_double(m(a, b));
    s << '\n';
  }
  return s.str();
}

inline std::string embeddings_csv(const FitResult &fit) {
  std::ostringstream s;
  s << "instance_id";
  for (const auto &c : fit.labels.names())
    s << ',' << csv_field("z_" + c);
  for (const auto &c : fit.labels.names())
    s << ',' << csv_field("p_" + c);
  s << ",cov_trace\n";
  for (std::size_t i = 0; i < fit.size(); ++i) {
    const Embedding z = fit.embedding(i);
    const auto m = dirichlet_moments(z);
    s << csv_field(fit.instance_ids[i]);
    for (Eigen::Index k = 0; k < z.size(); ++k)
      s << ',' << format_double(z[k]);
    for (Eigen::Index k = 0; k < z.size(); ++k)
      s << ',' << format_double(m.mean[k]);
    s << ',' << format_double(fit.covariance(i).trace()) << '\n';
  }
  return s.str();
}

inline json prior_json(const FitResult &fit) {
  const auto &mu = fit.final_prior.mu();
  const auto &sigma = fit.final_prior.sigma();
  json j;
  j["format_version"] = kFormatVersion;
  j["classes"] = fit.labels.names();
  j["mu"] = std::vector<double>(mu.data(), mu.data() + mu.size());
  json rows = json::array();
  for (Eigen::Index a = 0; a < sigma.rows(); ++a) {
    std::vector<double> row(static_cast<std::size_t>(sigma.cols()));
    for (Eigen::Index b = 0; b < sigma.cols(); ++b)
      row[static_cast<std::size_t>(b)] = sigma(a, b);
    rows.push_back(row);
  }
  j["sigma"] = rows;
  j["jitter"] = fit.final_prior.jitter();
  j["iterations"] = fit.iterations_run;
  j["converged"] = fit.converged;
  j["n_instances"] = fit.size();
  j["n_patterns"] = fit.patterns.size();
  json hist = json::array();
  for (const auto &h : fit.history) {
    hist.push_back({{"iteration", h.iteration},
                    {"mu", std::vector<double>(h.mu.data(), h.mu.data() + h.mu.size())},
                    {"sigma_frobenius", h.sigma_frobenius},
                    {"mean_acceptance", h.mean_acceptance},
                    {"mu_change", h.mu_change},
                    {"sigma_change", h.sigma_change},
                    {"clamp_events", h.clamp_events},
                    {"acceptance_warnings", h.acceptance_warnings}});
  }
  j["history"] = hist;
  return j;
}

inline std::string biplot_csv(const std::vector<std::string> &ids, const PcaResult &pca,
                              const std::vector<std::string> &groups) {
  std::ostringstream s;
  s << "instance_id,pc1,pc2,group\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    s << csv_field(ids[i]) << ',' << format_double(pca.scores(r, 0)) << ',' << format_double(pca.scores(r, 1)) << ','
      << (groups.empty() ? std::string("all") : csv_field(groups[i])) << '\n';
  }
  return s.str();
}

inline std::string loadings_csv(const ClassLabels &labels, const PcaResult &pca) {
  std::ostringstream s;
  s << "class,pc1,pc2\n";
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    s << csv_field(labels[k]) << ',' << format_double(pca.loadings(r, 0)) << ',' << format_double(pca.loadings(r, 1))
      << '\n';
  }
  return s.str();
}

inline std::string explained_variance_csv(const PcaResult &pca) {
  std::ostringstream s;
  s << "component,eigenvalue,ratio\n";
  for (Eigen::Index c = 0; c < pca.explained_variance_ratio.size(); ++c)
    s << "pc" << (c + 1) << ',' << format_double(pca.eigenvalues[c]) << ','
      << format_double(pca.explained_variance_ratio[c]) << '\n';
  return s.str();
}

inline std::string ellipses_csv(const std::vector<EllipseSpec> &ellipses) {
  std::ostringstream s;
  s << "group,center_pc1,center_pc2,semi_major,semi_minor,angle,coverage\n";
  for (const auto &e : ellipses)
    s << csv_field(e.group) << ',' << format_double(e.center[0]) << ',' << format_double(e.center[1]) << ','
      << format_double(e.axes[0]) << ',' << format_double(e.axes[1]) << ',' << format_double(e.angle) << ','
      << format_double(e.coverage) << '\n';
  return s.str();
}

inline std::string draws_csv(const ClassLabels &labels, const Eigen::MatrixXd &draws) {
  std::ostringstream s;
  for (std::size_t k = 0; k < labels.size(); ++k)
    s << (k ? "," : "") << csv_field(labels[k]);
  s << '\n';
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    for (Eigen::Index k = 0; k < draws.cols(); ++k)
      s << (k ? "," : "") << format_double(draws(r, k));
    s << '\n';
  }
  return s.str();
}

/// File-system safe name for an instance id.
inline std::string safe_file_stem(const std::string &id) {
  std::string out;
  for (char c : id)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (out.empty() || out == "." || out == "..")
    out = "_" + out;
  return out;
}

// ---------------------------------------------------------------------------
// manifest

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i)
    s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return s.str();
}

struct ManifestEntry {
  std::string path;
  std::string sha256;
  std::size_t bytes = 0;
};

struct Manifest {
  std::vector<ManifestEntry> files;

  [[nodiscard]] json to_json() const {
    json j;
    j["format_version"] = kFormatVersion;
    json arr = json::array();
    for (const auto &f : files)
      arr.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    j["files"] = arr;
    return j;
  }
};

/// Collects files, writes them and records their hashes.
class OutputWriter {
public:
  explicit OutputWriter(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec)
      throw IoError("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  void add(const std::string &relative, const std::string &content) {
    write_text_file(root_ / relative, content);
    manifest_.files.push_back({relative, sha256_hex(content), content.size()});
  }

  /// Writes `name` listing every added file, sorted by path.
  Manifest finish(const std::string &name = "manifest.json") {
    std::sort(manifest_.files.begin(), manifest_.files.end(),
              [](const ManifestEntry &a, const ManifestEntry &b) { return a.path < b.path; });
    write_text_file(root_ / name, manifest_.to_json().dump(2) + "\n");
    return manifest_;
  }

private:
  fs::path root_;
  Manifest manifest_;
};

inline void add_reports(OutputWriter &w, const std::vector<std::string> &ids, const ClassLabels &labels,
                        const AnalysisReports &reports) {
  if (reports.correlation)
    w.add("correlation.csv", matrix_csv(*reports.correlation, labels));
  if (reports.correlation_std)
    w.add("correlation_std.csv", matrix_csv(*reports.correlation_std, labels));
  if (reports.pca) {
    w.add("biplot.csv", biplot_csv(ids, *reports.pca, reports.groups));
    w.add("loadings.csv", loadings_csv(labels, *reports.pca));
    w.add("explained_variance.csv", explained_variance_csv(*reports.pca));
    if (!reports.ellipses.empty())
      w.add("ellipses.csv", ellipses_csv(reports.ellipses));
  }
}

/// Writes the fit, any available reports, optional raw draws and the run
/// config into `out_dir`; returns the manifest (also written as manifest.json).
inline Manifest write_outputs(const FitResult &fit, const AnalysisReports &reports, const fs::path &out_dir,
                              const std::optional<RunConfig> &config = std::nullopt, bool save_draws = false) {
  OutputWriter w(out_dir);
  w.add("embeddings.csv", embeddings_csv(fit));
  w.add("prior.json", prior_json(fit).dump(2) + "\n");
  add_reports(w, fit.instance_ids, fit.labels, reports);
  if (save_draws) {
    std::map<std::string, std::size_t> used;
    for (std::size_t i = 0; i < fit.size(); ++i) {
      std::string stem = safe_file_stem(fit.instance_ids[i]);
      if (const auto n = used[stem]++; n > 0)
        stem += "~" + std::to_string(n);
      w.add("draws/" + stem + ".csv", draws_csv(fit.labels, fit.draws(i).draws));
    }
  }
  if (config)
    w.add("run_config.json", to_json(*config).dump(2) + "\n");
  return w.finish();
}

// ---------------------------------------------------------------------------
// reading saved fits back

struct SavedEmbeddings {
  ClassLabels labels;
  std::vector<std::string> ids;
  Eigen::MatrixXd z;
};

inline SavedEmbeddings read_embeddings(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  const auto lines = read_lines(in);
  const std::string name = path.string();
  if (lines.empty())
    throw ParseError(name, 0, "file is empty");
  const auto header = split_csv(lines.front().second);
  std::vector<std::string> classes;
  for (std::size_t c = 1; c < header.size(); ++c)
    if (header[c].rfind("z_", 0) == 0)
      classes.push_back(header[c].substr(2));
  if (header.empty() || header[0] != "instance_id" || classes.size() < 2)
    throw ParseError(name, lines.front().first, "not an embeddings.csv header");
  SavedEmbeddings out{ClassLabels(classes), {}, Eigen::MatrixXd(static_cast<Eigen::Index>(lines.size() - 1),
                                                                static_cast<Eigen::Index>(classes.size()))};
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_csv(lines[r].second);
    if (fields.size() != header.size())
      throw ParseError(name, lines[r].first, "wrong number of fields");
    out.ids.push_back(fields[0]);
    for (std::size_t k = 0; k < classes.size(); ++k) {
      const auto v = parse_double(fields[1 + k]);
      if (!v)
        throw ParseError(name, lines[r].first, "bad number '" + fields[1 + k] + "'");
      out.z(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(k)) = *v;
    }
  }
  return out;
}

inline Eigen::MatrixXd read_draws(const fs::path &path, std::size_t k) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  const auto lines = read_lines(in);
  if (lines.size() < 2)
    throw ParseError(path.string(), 0, "no draws");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(lines.size() - 1), static_cast<Eigen::Index>(k));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_csv(lines[r].second);
    if (fields.size() != k)
      throw ParseError(path.string(), lines[r].first, "wrong number of fields");
    for (std::size_t c = 0; c < k; ++c) {
      const auto v = parse_double(fields[c]);
      if (!v)
        throw ParseError(path.string(), lines[r].first, "bad number '" + fields[c] + "'");
      out(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = *v;
    }
  }
  return out;
}

} // namespace embedgt::io
