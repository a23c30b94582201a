#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "rspnet/analysis.hpp"
#include "rspnet/cell.hpp"

using namespace rspnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rspnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run cli(const std::string& args) {
  static const fs::path dir = scratch_dir("io");
  const std::string cmd = std::string(RSPNET_CLI) + " " + args + " >" + (dir / "out").string() + " 2>" +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "out"), slurp(dir / "err")};
}

const char* kTinyRun = " --set layers=2 --set channels=8 --set stack_n=1 --set epochs_cell=1 --set epochs_path=1"
                       " --set epochs_train=1 --set batch_size=4 --set crop_h=32 --set crop_w=32";

}  // namespace

// ---------------------------------------------------------------- gradient flow

TEST(GradFlow, PlainSigmoidVanishes) {
  const auto r = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Plain);
  ASSERT_EQ(r.weight_grad_norms.size(), 20u);
  EXPECT_LE(r.first_last_ratio, std::pow(0.25, 19));
}

TEST(GradFlow, ResidualKeepsTheDirectPath) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto plain = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Plain, seed);
    const auto res = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Residual, seed);
    EXPECT_LT(plain.first_last_ratio, 1e-8);
    EXPECT_GT(res.first_last_ratio, 1e-8);
    EXPECT_GE(res.first_last_ratio, 1e-3);
  }
}

TEST(GradFlow, CspBypassIsBitExactAtAnyDepth) {
  for (int depth : {2, 5, 20, 40}) {
    for (auto act : {FlowActivation::Sigmoid, FlowActivation::Relu}) {
      EXPECT_TRUE(grad_flow_report(depth, act, FlowArch::Csp, 3).bypass_exact) << depth;
    }
  }
  EXPECT_FALSE(grad_flow_report(5, FlowActivation::Sigmoid, FlowArch::Plain).bypass_exact);
}

TEST(GradFlow, FirstLayerNormNonIncreasingInDepth) {
  double prev = INFINITY;
  for (int depth : {5, 10, 20, 40}) {
    const auto r = grad_flow_report(depth, FlowActivation::Sigmoid, FlowArch::Plain, 1);
    EXPECT_LE(r.weight_grad_norms.front(), prev) << depth;
    prev = r.weight_grad_norms.front();
  }
}

TEST(GradFlow, NormsFiniteAndNonNegative) {
  for (auto arch : {FlowArch::Plain, FlowArch::Residual, FlowArch::Csp}) {
    for (auto act : {FlowActivation::Sigmoid, FlowActivation::Relu}) {
      for (double n : grad_flow_report(12, act, arch, 2).weight_grad_norms) {
        EXPECT_TRUE(std::isfinite(n));
        EXPECT_GE(n, 0.0);
      }
    }
  }
}

TEST(GradFlow, RejectsShallowChainsAndUnknownTags) {
  EXPECT_THROW(grad_flow_report(1, FlowActivation::Relu, FlowArch::Plain), ValidationError);
  EXPECT_THROW(parse_flow_arch("dense"), ValidationError);
  EXPECT_THROW(parse_flow_activation("tanh"), ValidationError);
  EXPECT_EQ(parse_flow_arch("csp"), FlowArch::Csp);
}

// ---------------------------------------------------------------- parameter counts

TEST(CountParams, AllIdentityHasNoEdgeParameters) {
  const auto rep = count_params_report(uniform_genotype(PrimitiveKind::Identity, 16, false), SearchConfig{});
  EXPECT_EQ(rep.plain.total, rep.plain.non_edge);
  EXPECT_EQ(rep.rsp.total, rep.rsp.non_edge);
  EXPECT_EQ(rep.plain.total, rep.rsp.total);
  EXPECT_EQ(rep.ratio, 1.0);
}

TEST(CountParams, QuadraticKindsGiveExactlyAQuarter) {
  for (auto k : {PrimitiveKind::Conv3x3, PrimitiveKind::Conv5x5, PrimitiveKind::DilatedConv3x3}) {
    for (std::int64_t c : {8, 16, 32}) {
      SearchConfig cfg;
      cfg.channels = c;
      const auto rep = count_params_report(uniform_genotype(k, c, true), cfg);
      EXPECT_EQ(rep.rsp.edge_conv * 4, rep.plain.edge_conv) << primitive_name(k) << " C=" << c;
      EXPECT_EQ(rep.edge_ratio, 0.25);
    }
  }
}

TEST(CountParams, FullDefaultModelRatio) {
  const auto rep = count_params_report(uniform_genotype(PrimitiveKind::Conv3x3, 16, true), SearchConfig{});
  EXPECT_LE(rep.ratio, 0.30);
  EXPECT_GT(rep.ratio, 0.25);
}

TEST(CountParams, EnumerationAgreesWithAnalyticCount) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto rep = count_params_report(random_genotype(rng, 16, trial % 2 == 0), SearchConfig{});
    EXPECT_EQ(rep.plain.total, rep.plain.analytic_total);
    EXPECT_EQ(rep.rsp.total, rep.rsp.analytic_total);
    std::int64_t per_kind = 0;
    for (auto n : rep.rsp.per_primitive) per_kind += n;
    EXPECT_EQ(per_kind + rep.rsp.non_edge, rep.rsp.total);
  }
}

TEST(CountParams, RecentMacroShape) {
  const auto m = recent_macro(4, 2, AttentionMode::PathNormalized);
  EXPECT_EQ(m.inputs[0], std::vector<int>{0});
  EXPECT_EQ(m.inputs[3], (std::vector<int>{3, 2}));
}

// ---------------------------------------------------------------- command line

TEST(Cli, UnknownSubcommandPrintsUsageAndExitsOne) {
  const auto r = cli("frobnicate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, UnknownFlagExitsOne) {
  const auto r = cli("grad-flow --no-such-flag");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, ValidationErrorsExitOne) {
  EXPECT_EQ(cli("grad-flow --set bogus=1").code, 1);
  EXPECT_EQ(cli("grad-flow --depth 1").code, 1);
  EXPECT_EQ(cli("count-params --genotype /nonexistent/g.txt").code, 1);
  EXPECT_EQ(cli("search-cell --data /nonexistent --out g.txt").code, 1);
  EXPECT_EQ(cli("grad-flow --config /nonexistent.cfg").code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  const auto dir = scratch_dir("diverge");
  ASSERT_EQ(cli("synth-data --count 8 --size 32 --out " + (dir / "d").string()).code, 0);
  std::ofstream(dir / "g.txt") << serialize_genotype(uniform_genotype(PrimitiveKind::Conv3x3, 8, true));
  save_macro(recent_macro(2, 2, AttentionMode::PathNormalized), (dir / "m.txt").string());
  const auto d = (dir / "d").string();
  const auto r = cli("train --data " + d + " --val " + d + " --genotype " + (dir / "g.txt").string() + " --macro " +
                     (dir / "m.txt").string() + kTinyRun + " --set lr_w=1e30 --set epochs_train=3");
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, GradFlowAndCountParamsPrintReports) {
  const auto flow = cli("grad-flow --arch csp --depth 6");
  EXPECT_EQ(flow.code, 0);
  EXPECT_NE(flow.out.find("bypass_exact=1"), std::string::npos) << flow.out;

  const auto dir = scratch_dir("count");
  save_genotype(uniform_genotype(PrimitiveKind::Conv5x5, 16, true), (dir / "g.txt").string());
  const auto count = cli("count-params --genotype " + (dir / "g.txt").string());
  EXPECT_EQ(count.code, 0);
  EXPECT_NE(count.out.find("edge_ratio=0.250000"), std::string::npos) << count.out;
  EXPECT_NE(count.out.find("variant,conv3x3"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ConfigFileWithFlagOverrides) {
  const auto dir = scratch_dir("config");
  std::ofstream(dir / "run.cfg") << "# comment\nchannels = 8\nseed = 1\n";
  save_genotype(uniform_genotype(PrimitiveKind::Conv3x3, 8, true), (dir / "g.txt").string());
  const auto ok = cli("count-params --config " + (dir / "run.cfg").string() + " --genotype " + (dir / "g.txt").string());
  EXPECT_EQ(ok.code, 0) << ok.err;
  // A later --set wins over the file.
  const auto bad = cli("count-params --config " + (dir / "run.cfg").string() + " --set channels=7 --genotype " +
                       (dir / "g.txt").string());
  EXPECT_EQ(bad.code, 1);
  fs::remove_all(dir);
}

TEST(Cli, EndToEndDeterministicAndEvalIdempotent) {
  const auto dir = scratch_dir("e2e");
  const auto d = (dir / "data").string(), v = (dir / "val").string();
  ASSERT_EQ(cli("synth-data --seed 4 --count 16 --size 32 --out " + d).code, 0);
  ASSERT_EQ(cli("synth-data --seed 5 --count 8 --size 32 --out " + v).code, 0);
  std::string summary;
  for (int run = 0; run < 2; ++run) {
    const auto tag = std::to_string(run);
    const auto g = (dir / ("g" + tag)).string(), m = (dir / ("m" + tag)).string();
    const auto gl = (dir / ("gl" + tag)).string(), ml = (dir / ("ml" + tag)).string();
    ASSERT_EQ(cli("search-cell --seed 7 --data " + d + " --out " + g + " --log " + gl + kTinyRun).code, 0);
    ASSERT_EQ(cli("search-paths --seed 7 --data " + d + " --genotype " + g + " --out " + m + " --log " + ml +
                  kTinyRun).code, 0);
    const auto t = cli("train --seed 7 --data " + d + " --val " + v + " --genotype " + g + " --macro " + m +
                       " --model " + (dir / ("model" + tag)).string() + " --log " + (dir / ("t" + tag)).string() +
                       kTinyRun);
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_EQ(t.out.rfind("params=", 0), 0u) << t.out;
    summary = t.out;
  }
  for (const char* f : {"g", "gl", "m", "ml", "t", "model"}) {
    const std::string a = slurp(dir / (std::string(f) + "0")), b = slurp(dir / (std::string(f) + "1"));
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  EXPECT_EQ(slurp(dir / "gl0").rfind("epoch,phase,loss,miou\n", 0), 0u);
  const auto e1 = cli("eval --model " + (dir / "model0").string() + " --data " + v);
  const auto e2 = cli("eval --model " + (dir / "model0").string() + " --data " + v);
  EXPECT_EQ(e1.code, 0) << e1.err;
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(e1.out, summary);
  fs::remove_all(dir);
}
