#include <cmath>
#include <cstdio>
#include <set>

#include "llmscale/error.hpp"
#include "llmscale/pipeline.hpp"
#include "llmscale/random.hpp"
#include "llmscale/text_io.hpp"

namespace llmscale {

namespace fs = std::filesystem;

LatentScores parse_latent_csv(std::string_view document, const std::vector<std::string>& factor_ids,
                              std::string_view source_name) {
  const std::string src(source_name);
  const auto rows = parse_csv(document);
  if (rows.empty() || rows.front().empty() || trim(rows.front().front()) != "text_id") {
    throw ValidationError(src + ": latent score file must start with a text_id header");
  }
  std::vector<std::size_t> column(factor_ids.size());
  for (std::size_t f = 0; f < factor_ids.size(); ++f) {
    const auto& header = rows.front();
    const auto it = std::find(header.begin(), header.end(), factor_ids[f]);
    if (it == header.end()) throw ValidationError(src + ": no column for factor '" + factor_ids[f] + "'");
    column[f] = static_cast<std::size_t>(it - header.begin());
  }
  LatentScores out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    const std::string where = src + ":" + std::to_string(r + 1);
    if (row.size() != rows.front().size()) throw ValidationError(where + ": wrong number of fields");
    std::vector<double> theta;
    for (auto c : column) {
      try {
        theta.push_back(std::stod(row[c]));
      } catch (const std::exception&) {
        throw ValidationError(where + ": '" + row[c] + "' is not a number");
      }
    }
    if (!out.emplace(trim(row[0]), std::move(theta)).second) {
      throw ValidationError(where + ": duplicate text_id '" + row[0] + "'");
    }
  }
  return out;
}

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pad(int i, int width) {
  std::string s = std::to_string(i);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

StageOutput cmd_simulate(const RunConfig& config) {
  if (!config.simulation) throw ValidationError("config: no 'simulation' section");
  const auto& sc = *config.simulation;
  if (sc.bundle_dir.empty()) throw ValidationError("config: 'simulation.bundle_dir' is not set");
  if (sc.n_texts < 4) throw ValidationError("simulation: n_texts must be at least 4");
  if (sc.factors < 1) throw ValidationError("simulation: factors must be at least 1");
  if (sc.items_per_factor < 3) throw ValidationError("simulation: items_per_factor must be at least 3");
  if (!(std::abs(sc.loading) <= 1.0)) throw ValidationError("simulation: loading must lie in [-1, 1]");
  if (!(std::abs(sc.criterion_correlation) <= 1.0)) {
    throw ValidationError("simulation: criterion_correlation must lie in [-1, 1]");
  }
  if (sc.zero_loading_items < 0) throw ValidationError("simulation: zero_loading_items must be >= 0");
  const double residual = sc.residual.value_or(1.0 - sc.loading * sc.loading);
  if (!(residual >= 0.0)) throw ValidationError("simulation: residual variance must be >= 0");

  const int q = sc.factors;
  Instrument inst;
  inst.name = "simulated study";
  inst.scale = ResponseScale::agreement4();
  inst.prompt = PromptTemplate::standard();

  SimulatedRaterSpec spec;
  spec.labels = inst.scale.labels();
  spec.thresholds = equal_probability_thresholds(inst.scale.max_code());
  spec.seed = derive_seed(config.seed, "simulate.rater");
  spec.factor_correlations = Eigen::MatrixXd::Constant(q, q, sc.factor_correlation);
  spec.factor_correlations.diagonal().setOnes();

  for (int f = 0; f < q; ++f) {
    const std::string fid = "f" + std::to_string(f + 1);
    spec.factor_ids.push_back(fid);
    inst.constructs.push_back({fid, "Factor " + std::to_string(f + 1),
                               "Synthetic construct " + std::to_string(f + 1) + ".",
                               {{"criterion_" + fid, Sign::positive}}});
    auto add_item = [&](const std::string& id, double loading, double psi) {
      inst.items.push_back({id, fid, "Synthetic statement " + id + ".", false, std::nullopt});
      spec.item_ids.push_back(id);
      spec.item_factor.push_back(f);
      spec.loadings.push_back(loading);
      spec.residual_variances.push_back(psi);
    };
    for (int i = 0; i < sc.items_per_factor; ++i) add_item(fid + "_i" + std::to_string(i + 1), sc.loading, residual);
    if (f == 0) {
      for (int z = 0; z < sc.zero_loading_items; ++z) add_item(fid + "_z" + std::to_string(z + 1), 0.0, 1.0);
    }
  }
  if (const auto v = validate_instrument(inst); !v.empty()) {
    throw ValidationError("simulation: generated instrument is invalid\n" + describe(v));
  }
  if (const auto v = simulated_spec_violations(spec); !v.empty()) {
    std::string msg = "simulation: invalid generating model";
    for (const auto& s : v) msg += "\n  " + s;
    throw ValidationError(msg);
  }

  Eigen::LLT<Eigen::MatrixXd> llt(spec.factor_correlations);
  if (llt.info() != Eigen::Success) throw ValidationError("simulation: factor correlation matrix is not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();

  Rng latent_rng(derive_seed(config.seed, "simulate.latent"));
  Rng criterion_rng(derive_seed(config.seed, "simulate.criterion"));
  const int width = std::max(4, static_cast<int>(std::to_string(sc.n_texts).size()));
  const double rho = sc.criterion_correlation;
  const double noise = std::sqrt(1.0 - rho * rho);

  std::string corpus, latent = "text_id", criteria = "text_id";
  for (const auto& fid : spec.factor_ids) {
    latent += "," + fid;
    criteria += ",criterion_" + fid;
  }
  latent += "\n";
  criteria += "\n";
  for (int t = 0; t < sc.n_texts; ++t) {
    const std::string id = "t" + pad(t + 1, width);
    Eigen::VectorXd z(q);
    for (int f = 0; f < q; ++f) z(f) = latent_rng.normal();
    const Eigen::VectorXd theta = chol * z;
    corpus += nlohmann::json({{"id", id}, {"text", "Synthetic text " + std::to_string(t + 1) + "."}}).dump() + "\n";
    latent += id;
    criteria += id;
    for (int f = 0; f < q; ++f) {
      latent += "," + g17(theta(f));
      criteria += "," + g17(rho * theta(f) + noise * criterion_rng.normal());
    }
    latent += "\n";
    criteria += "\n";
  }

  // The criterion is observed without error, so its reliability is 1.
  std::string sidecar = "criteria:\n";
  for (const auto& fid : spec.factor_ids) sidecar += "  - name: criterion_" + fid + "\n    reliability: 1.0\n";

  std::string run = "seed: " + std::to_string(config.seed) +
                    "\n"
                    "instrument: instrument.yaml\n"
                    "corpus: corpus.jsonl\n"
                    "criteria: criteria.csv\n"
                    "criteria_sidecar: criteria.yaml\n"
                    "output_dir: out\n"
                    "cache: cache/responses.jsonl\n"
                    "provider:\n"
                    "  kind: simulated\n"
                    "  simulated_spec: rater.json\n"
                    "  latent_scores: latent_scores.csv\n"
                    "  concurrency: 4\n"
                    "  retry_cap: 2\n"
                    "split:\n"
                    "  holdout_fraction: 0.5\n"
                    "analysis:\n"
                    "  retention: parallel\n"
                    "  extraction: principal_axis\n"
                    "  rotation: oblimin\n";

  const auto& dir = sc.bundle_dir;
  write_file(dir / "instrument.yaml", emit_scale_spec(inst));
  write_file(dir / "corpus.jsonl", corpus);
  write_file(dir / "latent_scores.csv", latent);
  write_file(dir / "rater.json", to_json(spec).dump(2) + "\n");
  write_file(dir / "criteria.csv", criteria);
  write_file(dir / "criteria.yaml", sidecar);
  write_file(dir / "run.yaml", run);

  StageOutput out;
  out.lines.push_back("wrote simulated study to " + dir.string() + " (" + std::to_string(sc.n_texts) + " texts, " +
                      std::to_string(inst.items.size()) + " items)");
  for (const auto& w : simulated_spec_warnings(spec)) out.warnings.push_back(w);
  return out;
}

}  // namespace llmscale
