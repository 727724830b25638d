// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//   acceptance <work dir>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "llmscale/cfa.hpp"
#include "llmscale/error.hpp"
#include "llmscale/pipeline.hpp"
#include "llmscale/reliability.hpp"
#include "oracles/ordinal.hpp"
#include "unit/support.hpp"

using namespace llmscale;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects sub-check results for one criterion.
struct Checks {
  bool ok = true;
  std::vector<std::string> notes;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << std::fixed << x;
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sci(double x) {
  std::ostringstream ss;
  ss.precision(2);
  ss << std::scientific << x;
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

Eigen::MatrixXd compound(int k, double rho) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(k, k, rho);
  m.diagonal().setOnes();
  return m;
}

CfaSpec spec_of(const std::vector<int>& item_factor, int q) {
  CfaSpec s;
  for (std::size_t i = 0; i < item_factor.size(); ++i) s.item_ids.push_back("i" + std::to_string(i + 1));
  for (int f = 0; f < q; ++f) s.factor_ids.push_back("f" + std::to_string(f + 1));
  s.item_factor = item_factor;
  return s;
}

Eigen::MatrixXd block_sigma(double phi) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(6, 6, 0.5 * phi);
  s.topLeftCorner(3, 3).setConstant(0.5);
  s.bottomRightCorner(3, 3).setConstant(0.5);
  s.diagonal().setOnes();
  return s;
}

// ---------------------------------------------------------------------------

Checks criterion1() {
  Checks c;
  const auto cs = compound(3, 0.5);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 3);
  const auto t0 = Clock::now();
  const double a_cs = cronbach_alpha(cs);
  const double a_id = cronbach_alpha(id);
  const double a_one = cronbach_alpha(ones);
  const double elapsed = seconds_since(t0);
  c.expect(std::abs(a_cs - 0.75) <= 1e-12, "alpha(compound symmetry) = 0.75");
  c.expect(std::abs(a_id) <= 1e-12, "alpha(identity) = 0");
  c.expect(std::abs(a_one - 1.0) <= 1e-12, "alpha(all ones) = 1");
  c.expect(elapsed < 1e-3, "runtime < 1 ms");
  c.note("alpha = " + fmt(a_cs, 12) + ", " + fmt(a_id, 12) + ", " + fmt(a_one, 12) + "; " + fmt(elapsed * 1e6, 1) + " us");
  return c;
}

Checks criterion2() {
  Checks c;
  FactorModel m;
  m.item_ids = {"i1", "i2", "i3", "i4"};
  m.factor_ids = {"f"};
  m.loadings = Eigen::MatrixXd::Constant(4, 1, 0.7);
  m.residual_variances = Eigen::VectorXd::Constant(4, 0.51);
  m.factor_correlations = Eigen::MatrixXd::Identity(1, 1);
  const double w = mcdonald_omega(m, "f");
  c.expect(std::abs(w - 7.84 / 9.88) <= 1e-9, "omega = 7.84/9.88");
  c.expect(std::abs(w - 0.793522) <= 1e-6, "omega = 0.793522");

  const auto fit = cfa_fit(compound(3, 0.5), spec_of({0, 0, 0}, 1), 500);
  const double w_fit = mcdonald_omega(fit.model, "f1");
  const double a = cronbach_alpha(compound(3, 0.5));
  c.expect(std::abs(w_fit - 0.75) <= 1e-6 && std::abs(w_fit - a) <= 1e-6, "fitted equal-loading omega = alpha = 0.75");
  c.note("omega = " + fmt(w, 9) + "; fitted omega = " + fmt(w_fit, 9));
  return c;
}

Checks criterion3() {
  Checks c;
  Eigen::VectorXd l(4);
  l << 0.8, 0.7, 0.6, 0.5;
  Eigen::MatrixXd s = l * l.transpose();
  s.diagonal().setOnes();
  auto t0 = Clock::now();
  const auto fit = cfa_fit(s, spec_of({0, 0, 0, 0}, 1), 500);
  const double t1 = seconds_since(t0);
  const double err = (fit.model.loadings.col(0) - l).cwiseAbs().maxCoeff();
  c.expect(fit.discrepancy < 1e-8, "F_ML < 1e-8");
  c.expect(err < 1e-3, "|lambda_hat - lambda| < 1e-3");
  c.expect(t1 < 1.0, "one-factor runtime < 1 s");

  t0 = Clock::now();
  const auto fit2 = cfa_fit(block_sigma(0.3), spec_of({0, 0, 0, 1, 1, 1}, 2), 500);
  const double t2 = seconds_since(t0);
  const double phi = fit2.model.factor_correlations(0, 1);
  c.expect(std::abs(phi - 0.3) < 1e-3, "Phi_12 = 0.3");
  c.expect(t2 < 1.0, "two-factor runtime < 1 s");
  c.note("F_ML = " + sci(fit.discrepancy) + ", max loading error = " + sci(err) + ", Phi_12 = " +
         fmt(phi, 6) + "; " + fmt(t1 * 1e3, 1) + " ms, " + fmt(t2 * 1e3, 1) + " ms");
  return c;
}

Checks criterion4() {
  Checks c;
  Eigen::MatrixXd s = block_sigma(0.3);
  s(0, 4) = s(4, 0) = 0.25;
  s(1, 2) = s(2, 1) = 0.42;
  const MlDiscrepancy f(s, spec_of({0, 0, 0, 1, 1, 1}, 2));
  std::mt19937_64 gen(20240501);
  std::uniform_real_distribution<double> load(0.3, 0.9), resid(0.3, 1.0), phi(-0.3, 0.3);
  double worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    Eigen::VectorXd theta(f.parameter_count());
    for (int i = 0; i < 6; ++i) theta(i) = load(gen);
    for (int i = 6; i < 12; ++i) theta(i) = resid(gen);
    theta(12) = phi(gen);
    Eigen::VectorXd g;
    f.value_and_gradient(theta, &g);
    Eigen::VectorXd fd(theta.size());
    for (Eigen::Index a = 0; a < theta.size(); ++a) {
      Eigen::VectorXd up = theta, down = theta;
      up(a) += 1e-6;
      down(a) -= 1e-6;
      fd(a) = (f.value(up) - f.value(down)) / 2e-6;
    }
    worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-8));
  }
  c.expect(worst < 1e-5, "relative gradient error < 1e-5 at 10 points");
  c.note("worst relative error = " + sci(worst));
  return c;
}

struct StudyRun {
  RunConfig config;
  double seconds = 0.0;
};

StudyRun run_study(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  RunConfig sim;
  sim.seed = 7;
  sim.base_dir = dir;
  SimulationConfig sc;
  sc.bundle_dir = dir / "bundle";
  sc.n_texts = 500;
  sc.factors = 2;
  sc.items_per_factor = 4;
  sc.loading = 0.8;
  sc.criterion_correlation = 0.6;
  sim.simulation = sc;
  cmd_simulate(sim);
  StudyRun run{load_run_config(dir / "bundle" / "run.yaml"), 0.0};
  cmd_score(run.config);
  cmd_reliability(run.config);
  cmd_validity(run.config);
  cmd_report(run.config);
  run.seconds = seconds_since(t0);
  return run;
}

Checks criterion5(const fs::path& work, RunConfig* out_config) {
  Checks c;
  const auto a = run_study(work / "study_a");
  *out_config = a.config;
  const auto& out = a.config.output_dir;
  const auto population = oracle::block_population(4, 0.8);

  const auto retention = read_json(out / artifacts::kRetention);
  const int retained = retention.at("retained").get<int>();
  c.expect(retained == 2, "parallel analysis retains 2 factors (got " + std::to_string(retained) + ")");

  const auto fit = read_json(out / artifacts::kCfaFit);
  const auto model = factor_model_from_json(fit.at("standardized_model"));
  double lo = 1e9, hi = -1e9;
  for (Eigen::Index i = 0; i < model.item_count(); ++i) {
    const double l = model.loadings.row(i).cwiseAbs().maxCoeff();
    lo = std::min(lo, l);
    hi = std::max(hi, l);
    c.expect(std::abs(l - 0.8) <= 0.10, "loading of " + model.item_ids[static_cast<std::size_t>(i)] + " = " + fmt(l) +
                                            " within 0.10 of 0.8");
  }
  c.note("standardized loadings in [" + fmt(lo) + ", " + fmt(hi) + "]; population coded loading " +
         fmt(population.std_loading));

  const auto rel = reliability_report_from_json(read_json(out / artifacts::kReliabilityReport));
  for (const auto& f : rel.factors) {
    c.expect(f.alpha && std::abs(*f.alpha - population.alpha) <= 0.05,
             "alpha(" + f.factor_id + ") within 0.05 of " + fmt(population.alpha));
    c.expect(f.omega && std::abs(*f.omega - population.alpha) <= 0.05,
             "omega(" + f.factor_id + ") within 0.05 of " + fmt(population.alpha));
    c.note(f.factor_id + ": alpha " + fmt(f.alpha.value_or(NAN)) + ", omega " + fmt(f.omega.value_or(NAN)));
  }
  c.expect(rel.factors.size() == 2, "two factors reported");

  const auto val = validity_report_from_json(read_json(out / artifacts::kValidityReport));
  int matched = 0;
  for (const auto& e : val.entries) {
    if (e.criterion != "criterion_" + e.factor_id) continue;
    ++matched;
    const double predicted = 0.6 * std::sqrt(e.score_reliability.value_or(NAN));
    c.expect(std::abs(e.r_raw - predicted) <= 0.10, "r_raw(" + e.factor_id + ") within 0.10 of " + fmt(predicted));
    c.expect(e.sign_consistent == std::optional<bool>(true), "sign_consistent(" + e.factor_id + ")");
    c.note(e.factor_id + ": r_raw " + fmt(e.r_raw) + ", predicted " + fmt(predicted));
  }
  c.expect(matched == 2, "one validity entry per factor criterion");

  const auto b = run_study(work / "study_b");
  c.expect(tree(a.config.output_dir) == tree(b.config.output_dir), "byte-identical output tree on rerun");
  c.expect(a.seconds < 60.0 && b.seconds < 60.0, "runtime < 60 s");
  c.note("runtimes " + fmt(a.seconds, 2) + " s, " + fmt(b.seconds, 2) + " s");
  return c;
}

Checks criterion6(const RunConfig& config) {
  Checks c;
  const auto before = tree(config.output_dir / "score");
  testing::ScriptedProvider never([](const RatingRequest&) -> ProviderReply { throw std::runtime_error("called"); },
                                  "simulated-rater");
  const auto again = cmd_score(config, never);
  c.expect(again.provider_calls == 0 && never.calls() == 0, "zero provider calls on a warm cache");
  c.expect(tree(config.output_dir / "score") == before, "byte-identical score exports");
  c.note("provider calls: " + std::to_string(never.calls()));
  return c;
}

Checks criterion7() {
  Checks c;
  const auto scale = ResponseScale::agreement4();
  int tried = 0, passed = 0;
  auto expect_code = [&](const std::string& raw, int code) {
    ++tried;
    const auto r = parse_response(raw, scale);
    if (r.code == std::optional<int>(code)) {
      ++passed;
    } else {
      c.expect(false, "'" + raw + "' -> " + std::to_string(code));
    }
  };
  for (std::size_t i = 0; i < scale.labels().size(); ++i) {
    const auto& label = scale.labels()[i];
    const int code = static_cast<int>(i) + 1;
    std::string upper = label;
    for (auto& ch : upper) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    std::string title = label;
    title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
    for (const auto& v : {label, upper, title, "  " + label + ".", "\"" + title + "!\"", "\t" + label + " \n",
                          "**" + title + "**", "I " + label + " with this statement."}) {
      expect_code(v, code);
    }
  }
  for (const auto& [alias, label] : scale.aliases()) {
    expect_code(alias, *scale.code_of(label));
    expect_code(" " + alias + ". ", *scale.code_of(label));
  }
  expect_code("Strongly agree", 4);
  expect_code("  disagree.", 2);
  const auto amb = parse_response("I would say the author agrees, even strongly agrees", scale);
  c.expect(!amb.ok() && amb.failure == ParseFailure::ambiguous, "ambiguous two-label response");

  // Unparseable replies and transport failures end up as missing cells.
  const auto inst = testing::small_instrument(3);
  const auto corpus = testing::make_corpus(6);
  testing::ScriptedProvider provider([](const RatingRequest& r) -> ProviderReply {
    if (r.item_id == "i2" && r.text_id == "t0002") return testing::reply("no opinion, sorry");
    if (r.item_id == "i3" && r.text_id == "t0004") throw std::runtime_error("connection reset");
    if (r.item_id == "i1" && r.text_id == "t0005") return {false, "", "HTTP 500"};
    return testing::reply("Agree");
  });
  BatchOptions opts;
  opts.retry.backoff = std::chrono::milliseconds(0);
  try {
    const auto records = batch_score(inst, corpus, provider, nullptr, opts);
    const auto m = assemble_matrix(records, inst);
    c.expect(m.missing_count() == 3, "three failed cells are missing");
    c.expect(m.missing(1, 1) && m.missing(3, 2) && m.missing(4, 0), "missing cells at the failed positions");
  } catch (const std::exception& e) {
    c.expect(false, std::string("failure surfaced as an exception: ") + e.what());
  }
  c.note(std::to_string(passed) + "/" + std::to_string(tried) + " label and variant strings parsed");
  return c;
}

Checks criterion8() {
  Checks c;
  Eigen::MatrixXd s = compound(3, 0.4);
  const auto sat = cfa_fit(s, spec_of({0, 0, 0}, 1), 200);
  c.expect(sat.df == 0.0, "3-item single factor df = 0");
  c.expect(!sat.indices.rmsea && !sat.indices.cfi && !sat.indices.tli && !sat.indices.srmr, "indices undefined");

  Eigen::MatrixXd v(6, 3);
  v << 1, 3, 2, 2, 3, 1, 3, 3, 4, 4, 3, 3, 2, 3, 2, 1, 3, 1;
  const RatingMatrix m({"a", "b", "c", "d", "e", "f"}, {"i1", "i2", "i3"}, v, 4);
  const auto cov = covariance(m);
  c.expect(cov.zero_variance_items == std::vector<std::string>{"i2"}, "zero-variance item detected");
  c.expect(cov.correlation_item_ids == std::vector<std::string>{"i1", "i3"}, "zero-variance item excluded");
  c.expect(!cov.warnings.empty(), "zero-variance warning");

  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  Eigen::MatrixXd d(30, 3);
  const double lambdas[3] = {0.9, 0.2, 0.2};
  for (int r = 0; r < 30; ++r) {
    const double theta = z(gen);
    for (int k = 0; k < 3; ++k) d(r, k) = lambdas[k] * theta + std::sqrt(1 - lambdas[k] * lambdas[k]) * z(gen);
  }
  try {
    const auto hey = cfa_fit(sample_covariance(d), spec_of({0, 0, 0}, 1), 30);
    c.expect(!hey.bounded_residuals.empty(), "Heywood bound activity reported");
    std::string bounded;
    for (const auto& id : hey.bounded_residuals) bounded += id + " ";
    c.note("bounded residuals: " + bounded);
  } catch (const std::exception& e) {
    c.expect(false, std::string("Heywood sample failed: ") + e.what());
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "llmscale_acceptance";
  fs::create_directories(work);

  RunConfig study;
  const std::vector<std::pair<std::string, std::function<Checks()>>> criteria{
      {"closed-form alpha oracle", criterion1},
      {"omega oracle", criterion2},
      {"CFA population recovery", criterion3},
      {"CFA gradient check", criterion4},
      {"end-to-end simulation study", [&] { return criterion5(work, &study); }},
      {"cache replay", [&] { return criterion6(study); }},
      {"response parsing suite", criterion7},
      {"degenerate inputs", criterion8},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Checks result;
    try {
      result = criteria[i].second();
    } catch (const std::exception& e) {
      result.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    std::cout << (result.ok ? "[PASS] " : "[FAIL] ") << (i + 1) << ". " << criteria[i].first << " (" << fmt(secs, 3)
              << " s)\n";
    for (const auto& n : result.notes) std::cout << "       " << n << "\n";
    if (!result.ok) ++failures;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
