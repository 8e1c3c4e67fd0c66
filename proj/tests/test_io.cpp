#include "embedgt/cli.hpp"
#include "embedgt/io.hpp"
#include "embedgt/simulate.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace embedgt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / "embedgt_test_io";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_file(const std::string &name, const std::string &content) {
  const auto p = scratch(name);
  std::ofstream(p) << content;
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(std::vector<std::string> args, std::string *out_text = nullptr, std::string *err_text = nullptr) {
  args.insert(args.begin(), "embedgt");
  std::vector<const char *> argv;
  for (const auto &a : args)
    argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text)
    *out_text = out.str();
  if (err_text)
    *err_text = err.str();
  return rc;
}

} // namespace

TEST(LoadWide, TableRow) {
  std::istringstream in("instance_id,C,N,E\ns1,0,0,100\n");
  const auto d = io::read_wide(in, "mem");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].votes, (VoteCounts{0, 0, 100}));
  EXPECT_EQ(d[0].votes.total(), 100);
  EXPECT_EQ(d.labels().names(), (std::vector<std::string>{"C", "N", "E"}));
}

TEST(LoadWide, GoldMetaAndReorderedLabels) {
  std::istringstream in("instance_id,a,b,gold,meta:src\nx,1,2,b,web\ny,3,0,,\n");
  const auto d = io::read_wide(in, "mem", std::vector<std::string>{"b", "a"});
  EXPECT_EQ(d[0].votes, (VoteCounts{2, 1}));
  EXPECT_EQ(d[0].gold, 0u);
  EXPECT_EQ(d[0].metadata.at("src"), "web");
  EXPECT_FALSE(d[1].gold.has_value());
  EXPECT_TRUE(d[1].metadata.empty());
}

TEST(LoadLong, AggregatesBallots) {
  std::string text = "instance_id,vote,annotator_id\n";
  for (int i = 0; i < 9; ++i)
    text += "img1,C,a" + std::to_string(i) + "\n";
  text += "img1,B,b1\nimg1,B,b2\nimg2,A,a1\n";
  std::istringstream in(text);
  const auto d = io::read_long(in, "mem", std::vector<std::string>{"A", "B", "C"});
  EXPECT_EQ(d[0].id, "img1");
  EXPECT_EQ(d[0].votes, (VoteCounts{0, 2, 9}));
  EXPECT_EQ(d[0].votes.total(), 11);
  EXPECT_EQ(d[1].votes, (VoteCounts{1, 0, 0}));
}

TEST(LoadLong, FirstAppearanceOrderWarns) {
  std::istringstream in("instance_id,vote\nx,C\nx,B\ny,C\n");
  std::vector<std::string> warnings;
  const auto d = io::read_long(in, "mem", std::nullopt, &warnings);
  EXPECT_EQ(d.labels().names(), (std::vector<std::string>{"C", "B"}));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  const auto sim = sample_dataset(
      {25, {7}, GaussianPrior(Eigen::Vector3d(0.5, 0, -0.5), Eigen::Matrix3d::Identity()), 4, ClassLabels({"x", "y,z", "w"})});
  std::vector<Instance> inst = sim.dataset.instances();
  inst[0].gold = 2;
  inst[3].metadata["J_group"] = "7";
  inst[4].metadata["note"] = "has \"quotes\"";
  const AnnotationDataset data(sim.dataset.labels(), inst);
  const auto path = scratch("roundtrip.csv");
  io::save_dataset(path, data);
  EXPECT_EQ(io::load_dataset(path, io::DatasetFormat::Wide), data);
}

TEST(Dataset, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.718281828459045, 1e-300, 6.02214076e23}) {
    const auto s = io::format_double(v);
    EXPECT_EQ(io::parse_double(s).value(), v) << s;
  }
}

TEST(Dataset, MalformedCorpusRejectedWithLineNumbers) {
  struct Case {
    const char *name;
    const char *text;
    io::DatasetFormat format;
    std::size_t line;
  };
  using F = io::DatasetFormat;
  const std::vector<Case> corpus{
      {"negative", "instance_id,a,b\nx,1,-2\n", F::Wide, 2},
      {"zero_total", "instance_id,a,b\nx,1,1\ny,0,0\n", F::Wide, 3},
      {"duplicate_id", "instance_id,a,b\nx,1,1\ny,2,0\nx,0,2\n", F::Wide, 4},
      {"non_integer", "instance_id,a,b\nx,1.5,2\n", F::Wide, 2},
      {"text_count", "instance_id,a,b\nx,one,2\n", F::Wide, 2},
      {"too_few_fields", "instance_id,a,b\nx,1\n", F::Wide, 2},
      {"too_many_fields", "instance_id,a,b\nx,1,2,3\n", F::Wide, 2},
      {"bad_header", "id,a,b\nx,1,2\n", F::Wide, 1},
      {"one_class", "instance_id,a\nx,3\n", F::Wide, 1},
      {"duplicate_class", "instance_id,a,a\nx,1,2\n", F::Wide, 1},
      {"unknown_gold", "instance_id,a,b,gold\nx,1,2,c\n", F::Wide, 2},
      {"empty_id", "instance_id,a,b\n,1,2\n", F::Wide, 2},
      {"header_only", "instance_id,a,b\n", F::Wide, 1},
      {"class_after_gold", "instance_id,a,gold,b\nx,1,a,2\n", F::Wide, 1},
      {"overflow", "instance_id,a,b\nx,99999999999,1\n", F::Wide, 2},
      {"blank_comment_then_bad", "instance_id,a,b\n\n# note\nx,1,x\n", F::Wide, 4},
      {"long_bad_header", "instance,vote\nx,a\n", F::Long, 1},
      {"long_empty_vote", "instance_id,vote\nx,a\nx,\n", F::Long, 3},
      {"long_unknown_class", "instance_id,vote\nx,a\nx,b\ny,zz\n", F::Long, 4},
      {"long_wrong_fields", "instance_id,vote,annotator_id\nx,a,1\nx,b\n", F::Long, 3},
  };
  ASSERT_EQ(corpus.size(), 20u);
  for (const auto &c : corpus) {
    const auto path = write_file(std::string("bad_") + c.name + ".csv", c.text);
    const auto labels = c.format == F::Long ? std::optional(std::vector<std::string>{"a", "b"}) : std::nullopt;
    try {
      io::load_dataset(path, c.format, labels);
      ADD_FAILURE() << c.name << " was accepted";
    } catch (const ParseError &e) {
      EXPECT_EQ(e.line(), c.line) << c.name << ": " << e.what();
      EXPECT_NE(std::string(e.what()).find(path.string() + ":" + std::to_string(c.line)), std::string::npos)
          << e.what();
    }
  }
  EXPECT_THROW(io::load_dataset(scratch("missing.csv"), F::Wide), IoError);
}

TEST(RunConfigJson, RoundTrip) {
  io::RunConfig c;
  c.input = "a.csv";
  c.out = "runs/x";
  c.labels = {"C", "N", "E"};
  c.em.max_iterations = 17;
  c.em.rel_tol = 1.0 / 3.0;
  c.em.m_step = MStep::FullDraws;
  c.em.proposal = ProposalShape::Isotropic;
  c.em.mcmc.seed = 0xFFFFFFFFFFFFFFF1ULL;
  c.em.mcmc.proposal_scale = 0.123456789012345678;
  c.coverage = 0.9;
  c.pca_scale = true;
  c.group_by = "J_group";
  const auto back = io::run_config_from_json(io::json::parse(io::to_json(c).dump()));
  EXPECT_EQ(io::to_json(back), io::to_json(c));
  EXPECT_EQ(back.em.mcmc.seed, c.em.mcmc.seed);
  EXPECT_EQ(back.em.rel_tol, c.em.rel_tol);
  EXPECT_EQ(back.em.mcmc.proposal_scale, c.em.mcmc.proposal_scale);
  EXPECT_THROW(io::run_config_from_json(io::json::object()), DomainError);
}

TEST(Outputs, ManifestListsOnlyProducedFiles) {
  std::istringstream in("instance_id,a,b,c\nr1,0,0,10\nr2,5,5,0\n");
  const auto data = io::read_wide(in, "mem");
  EmConfig cfg;
  cfg.max_iterations = 2;
  cfg.min_iterations = 1;
  cfg.mcmc.n_retained = 50;
  const auto result = fit(data, cfg);
  const auto dir = scratch("outputs_min");
  fs::remove_all(dir);
  const auto reports = io::compute_reports(result, io::group_labels(data, "majority"), false, 0.95);
  EXPECT_FALSE(reports.correlation.has_value());
  EXPECT_FALSE(reports.warnings.empty());
  const auto m = io::write_outputs(result, reports, dir);
  std::vector<std::string> paths;
  for (const auto &f : m.files) {
    paths.push_back(f.path);
    EXPECT_EQ(io::sha256_hex(slurp(dir / f.path)), f.sha256);
  }
  EXPECT_EQ(paths, (std::vector<std::string>{"embeddings.csv", "prior.json"}));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));

  const auto saved = io::read_embeddings(dir / "embeddings.csv");
  EXPECT_EQ(saved.ids, result.instance_ids);
  EXPECT_EQ(saved.z, result.embeddings);
}

TEST(Outputs, UnanimousRowHasHighSoftmaxMean) {
  std::istringstream in("instance_id,a,b,c\nu,0,0,100\nv,30,40,30\nw,50,50,0\n");
  const auto data = io::read_wide(in, "mem");
  EmConfig cfg;
  cfg.max_iterations = 5;
  cfg.mcmc.seed = 2;
  const auto result = fit(data, cfg);
  const auto csv = io::embeddings_csv(result);
  std::istringstream rows(csv);
  const auto lines = io::read_lines(rows);
  EXPECT_EQ(lines[0].second, "instance_id,z_a,z_b,z_c,p_a,p_b,p_c,cov_trace");
  const auto fields = io::split_csv(lines[1].second);
  EXPECT_EQ(fields[0], "u");
  EXPECT_GT(io::parse_double(fields[6]).value(), 0.9);
}

TEST(Cli, ExitCodes) {
  std::string out, err;
  EXPECT_EQ(run_cli({}, &out, &err), cli::kUsage);
  EXPECT_EQ(run_cli({"fit", "--definitely-not-a-flag"}, &out, &err), cli::kUsage);
  EXPECT_NE(err.find("--em-iters"), std::string::npos);
  EXPECT_EQ(run_cli({"--help"}, &out, &err), cli::kOk);
  EXPECT_EQ(run_cli({"fit", "--out", scratch("x").string()}, &out, &err), cli::kUsage);
  const auto bad = write_file("cli_bad.csv", "instance_id,a,b\nx,0,0\n");
  EXPECT_EQ(run_cli({"validate", "--input", bad.string()}, &out, &err), cli::kDataError);
  EXPECT_NE(err.find(":2:"), std::string::npos);
  EXPECT_EQ(run_cli({"validate", "--input", scratch("nope.csv").string()}, &out, &err), cli::kDataError);
  EXPECT_EQ(run_cli({"moment-surface", "--z1", "1:0:0.1", "--z2", "0:1:0.1"}, &out, &err), cli::kUsage);
  EXPECT_EQ(run_cli({"subsample", "--input", bad.string(), "--groups", "1@x", "--out", "y"}, &out, &err),
            cli::kDataError);
}

TEST(Cli, DataAndNumericalFailures) {
  const auto one = write_file("cli_one.csv", "instance_id,a,b\nx,1,2\n");
  std::string out, err;
  EXPECT_EQ(run_cli({"fit", "--input", one.string(), "--out", scratch("single").string(), "--quiet"}, &out, &err),
            cli::kDataError);
  EXPECT_NE(err.find("at least two"), std::string::npos);
  // A covariance that no jitter can repair is a numerical failure.
  EXPECT_EQ(run_cli({"simulate", "--n", "3", "--mu", "0,0", "--sigma=-1", "--out", scratch("neg.csv").string()},
                    &out, &err),
            cli::kNumericalFailure);
}

TEST(Cli, MomentSurfaceTable) {
  std::string out;
  ASSERT_EQ(run_cli({"moment-surface", "--z1", "-3:3:0.1", "--z2", "-3:3:0.1"}, &out), cli::kOk);
  std::istringstream in(out);
  const auto lines = io::read_lines(in);
  EXPECT_EQ(lines.size(), 3722u);
  bool origin = false;
  for (const auto &[n, l] : lines)
    if (l.rfind("0,0,", 0) == 0) {
      origin = true;
      EXPECT_EQ(io::split_csv(l)[2], "0.5");
    }
  EXPECT_TRUE(origin);
}

TEST(Cli, SimulateSubsampleValidate) {
  const auto data = scratch("cli_sim.csv");
  const auto truth = scratch("cli_truth.csv");
  std::string out, err;
  ASSERT_EQ(run_cli({"simulate", "--n", "1514", "--mu", "0.5,0,-0.5", "--votes", "100", "--seed", "3", "--out",
                     data.string(), "--truth", truth.string()},
                    &out, &err),
            cli::kOk)
      << err;
  const auto thinned = scratch("cli_thin.csv");
  ASSERT_EQ(run_cli({"subsample", "--input", data.string(), "--groups", "514@100,500@25,500@5", "--seed", "1",
                     "--out", thinned.string()},
                    &out, &err),
            cli::kOk)
      << err;
  EXPECT_NE(out.find("J=100: 514 instances"), std::string::npos);
  EXPECT_NE(out.find("J=25: 500 instances"), std::string::npos);
  EXPECT_NE(out.find("J=5: 500 instances"), std::string::npos);
  const auto d = io::load_dataset(thinned, io::DatasetFormat::Wide);
  std::map<std::string, int> tags;
  for (const auto &inst : d.instances())
    ++tags[inst.metadata.at("J_group")];
  EXPECT_EQ(tags["100"], 514);
  EXPECT_EQ(run_cli({"validate", "--input", thinned.string()}, &out, &err), cli::kOk);
  EXPECT_NE(out.find("1514 instances"), std::string::npos);
}

TEST(Cli, FitIsReproducibleAndReplayable) {
  const auto data = write_file("cli_fit.csv", "instance_id,C,N,E\nrow1,0,0,30\nrow2,12,4,14\nrow3,14,15,1\n"
                                              "row4,10,9,11\nrow5,2,25,3\nrow6,20,5,5\n");
  const auto dir = scratch("cli_fit_run");
  fs::remove_all(dir);
  const std::vector<std::string> args{"fit",    "--input", data.string(), "--out",  dir.string(),
                                      "--seed", "7",       "--em-iters",  "3",      "--mcmc",
                                      "100",    "--quiet", "--save-draws"};
  std::string out, err;
  auto a = args;
  a.insert(a.end(), {"--workers", "1"});
  ASSERT_EQ(run_cli(a, &out, &err), cli::kOk) << err;
  const auto first = slurp(dir / "manifest.json");
  auto b = args;
  b.insert(b.end(), {"--workers", "3"});
  ASSERT_EQ(run_cli(b, &out, &err), cli::kOk) << err;
  EXPECT_EQ(slurp(dir / "manifest.json"), first);
  ASSERT_EQ(run_cli({"fit", "--config", (dir / "run_config.json").string(), "--quiet"}, &out, &err), cli::kOk)
      << err;
  EXPECT_EQ(slurp(dir / "manifest.json"), first);
  for (const char *f : {"embeddings.csv", "prior.json", "correlation.csv", "correlation_std.csv", "biplot.csv",
                        "loadings.csv", "ellipses.csv", "run_config.json", "draws/row1.csv"})
    EXPECT_NE(first.find(std::string("\"") + f + "\""), std::string::npos) << f;
  EXPECT_EQ(slurp(dir / "run_config.json").find("workers"), std::string::npos);

  // analyze over the saved fit reproduces the fit-time correlation reports.
  const auto an = scratch("cli_analyze");
  fs::remove_all(an);
  ASSERT_EQ(run_cli({"analyze", "--fit-dir", dir.string(), "--input", data.string(), "--out", an.string()}, &out,
                    &err),
            cli::kOk)
      << err;
  EXPECT_EQ(slurp(an / "correlation.csv"), slurp(dir / "correlation.csv"));
  EXPECT_EQ(slurp(an / "biplot.csv"), slurp(dir / "biplot.csv"));
  EXPECT_TRUE(fs::exists(an / "correlation_std.csv"));
}
