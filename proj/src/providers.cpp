#include "llmscale/providers.hpp"

#include <httplib.h>

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdlib>

#include "llmscale/error.hpp"
#include "llmscale/random.hpp"

namespace llmscale {

ChatCompletionProvider::ChatCompletionProvider(ChatProviderSettings settings) : settings_(std::move(settings)) {
  const auto scheme_end = settings_.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("provider base_url must start with http:// or https://: '" + settings_.base_url + "'");
  }
  const auto path_begin = settings_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = settings_.base_url.substr(0, path_begin);
  path_prefix_ = path_begin == std::string::npos ? std::string() : settings_.base_url.substr(path_begin);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (const char* key = std::getenv(settings_.api_key_env.c_str())) api_key_ = key;
}

nlohmann::json ChatCompletionProvider::request_body(const std::string& prompt) const {
  return {{"model", settings_.model},
          {"temperature", settings_.temperature},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
}

ProviderReply ChatCompletionProvider::complete(const RatingRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(settings_.timeout_seconds, 0);
  client.set_read_timeout(settings_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto body = request_body(request.prompt).dump();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res) return {false, {}, "transport error: " + httplib::to_string(res.error())};
  if (res->status != 200) return {false, {}, "HTTP " + std::to_string(res->status)};
  try {
    const auto j = nlohmann::json::parse(res->body);
    return {true, j.at("choices").at(0).at("message").at("content").get<std::string>(), {}};
  } catch (const nlohmann::json::exception& e) {
    return {false, {}, std::string("malformed completion response: ") + e.what()};
  }
}

// ---------------------------------------------------------------------------

std::vector<double> equal_probability_thresholds(int m) {
  const boost::math::normal_distribution<double> standard;
  std::vector<double> out;
  for (int j = 1; j < m; ++j) out.push_back(boost::math::quantile(standard, static_cast<double>(j) / m));
  return out;
}

std::vector<std::string> simulated_spec_violations(const SimulatedRaterSpec& spec) {
  std::vector<std::string> out;
  const auto k = spec.item_ids.size();
  if (spec.item_factor.size() != k || spec.loadings.size() != k || spec.residual_variances.size() != k) {
    out.push_back("per-item lists (item_factor, loadings, residual_variances) must match item_ids in length");
    return out;
  }
  const auto q = static_cast<Eigen::Index>(spec.factor_ids.size());
  for (std::size_t i = 0; i < k; ++i) {
    if (spec.item_factor[i] < 0 || spec.item_factor[i] >= q) out.push_back("item " + spec.item_ids[i] + ": bad factor index");
    if (spec.loadings[i] < -1.0 || spec.loadings[i] > 1.0) out.push_back("item " + spec.item_ids[i] + ": loading outside [-1, 1]");
    if (!(spec.residual_variances[i] >= 0.0)) out.push_back("item " + spec.item_ids[i] + ": negative residual variance");
  }
  if (spec.factor_correlations.rows() != q || spec.factor_correlations.cols() != q) {
    out.push_back("factor correlation matrix must be q x q");
  } else {
    const Eigen::MatrixXd& phi = spec.factor_correlations;
    if (!phi.isApprox(phi.transpose(), 1e-12)) out.push_back("factor correlation matrix is not symmetric");
    for (Eigen::Index f = 0; f < q; ++f) {
      if (std::abs(phi(f, f) - 1.0) > 1e-12) out.push_back("factor correlation matrix needs a unit diagonal");
    }
    if (q > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(phi);
      if (eig.eigenvalues().minCoeff() < -1e-10) out.push_back("factor correlation matrix is not positive semidefinite");
    }
  }
  if (spec.labels.size() < 2) out.push_back("simulated rater needs at least 2 response labels");
  if (spec.thresholds.size() + 1 != spec.labels.size()) out.push_back("need exactly m - 1 thresholds");
  for (std::size_t j = 1; j < spec.thresholds.size(); ++j) {
    if (!(spec.thresholds[j] > spec.thresholds[j - 1])) out.push_back("thresholds must be strictly increasing");
  }
  return out;
}

std::vector<std::string> simulated_spec_warnings(const SimulatedRaterSpec& spec) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < spec.item_ids.size() && i < spec.loadings.size() && i < spec.residual_variances.size(); ++i) {
    const double total = spec.loadings[i] * spec.loadings[i] + spec.residual_variances[i];
    if (std::abs(total - 1.0) > 0.5) {
      out.push_back("item " + spec.item_ids[i] + ": loading^2 + residual = " + std::to_string(total) +
                    " is far from 1; thresholds assume a unit-variance latent response");
    }
  }
  return out;
}

nlohmann::json to_json(const SimulatedRaterSpec& spec) {
  nlohmann::json phi = nlohmann::json::array();
  for (Eigen::Index r = 0; r < spec.factor_correlations.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < spec.factor_correlations.cols(); ++c) row.push_back(spec.factor_correlations(r, c));
    phi.push_back(std::move(row));
  }
  return {{"factor_ids", spec.factor_ids},
          {"item_ids", spec.item_ids},
          {"item_factor", spec.item_factor},
          {"loadings", spec.loadings},
          {"residual_variances", spec.residual_variances},
          {"factor_correlations", phi},
          {"thresholds", spec.thresholds},
          {"labels", spec.labels},
          {"seed", spec.seed},
          {"model_id", spec.model_id}};
}

SimulatedRaterSpec simulated_spec_from_json(const nlohmann::json& j) {
  SimulatedRaterSpec spec;
  try {
    spec.factor_ids = j.at("factor_ids").get<std::vector<std::string>>();
    spec.item_ids = j.at("item_ids").get<std::vector<std::string>>();
    spec.item_factor = j.at("item_factor").get<std::vector<int>>();
    spec.loadings = j.at("loadings").get<std::vector<double>>();
    spec.residual_variances = j.at("residual_variances").get<std::vector<double>>();
    const auto& phi = j.at("factor_correlations");
    const auto q = static_cast<Eigen::Index>(phi.size());
    spec.factor_correlations.resize(q, q);
    for (Eigen::Index r = 0; r < q; ++r) {
      for (Eigen::Index c = 0; c < q; ++c) spec.factor_correlations(r, c) = phi.at(r).at(c).get<double>();
    }
    spec.labels = j.at("labels").get<std::vector<std::string>>();
    spec.thresholds = j.contains("thresholds") ? j.at("thresholds").get<std::vector<double>>()
                                               : equal_probability_thresholds(static_cast<int>(spec.labels.size()));
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.model_id = j.value("model_id", std::string("simulated-rater"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("simulated rater spec: ") + e.what());
  }
  return spec;
}

SimulatedRater::SimulatedRater(SimulatedRaterSpec spec, LatentScores latent)
    : spec_(std::move(spec)), latent_(std::move(latent)) {
  if (const auto v = simulated_spec_violations(spec_); !v.empty()) {
    std::string msg = "invalid simulated rater spec:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ValidationError(msg);
  }
  for (std::size_t i = 0; i < spec_.item_ids.size(); ++i) item_index_.emplace(spec_.item_ids[i], i);
}

double SimulatedRater::latent_response(const std::string& text_id, const std::string& item_id, int attempt,
                                       int sample) const {
  const auto i = item_index_.at(item_id);
  const auto& theta = latent_.at(text_id);
  const auto f = static_cast<std::size_t>(spec_.item_factor[i]);
  std::string key = text_id;
  key += '\x1f';
  key += item_id;
  key += '\x1f';
  key += std::to_string(attempt);
  key += '\x1f';
  key += std::to_string(sample);
  Rng rng(splitmix64(spec_.seed ^ splitmix64(fnv1a64(key))));
  return spec_.loadings[i] * theta.at(f) + std::sqrt(spec_.residual_variances[i]) * rng.normal();
}

int SimulatedRater::category(double latent) const {
  int code = 1;
  for (double t : spec_.thresholds) {
    if (latent > t) ++code;
  }
  return code;
}

ProviderReply SimulatedRater::complete(const RatingRequest& request) {
  if (!item_index_.contains(request.item_id)) return {false, {}, "simulated rater: unknown item " + request.item_id};
  if (!latent_.contains(request.text_id)) return {false, {}, "simulated rater: no latent score for " + request.text_id};
  const double y = latent_response(request.text_id, request.item_id, request.attempt, request.sample);
  return {true, spec_.labels[static_cast<std::size_t>(category(y) - 1)], {}};
}

std::unique_ptr<RatingProvider> simulate_rater(SimulatedRaterSpec spec, LatentScores latent) {
  return std::make_unique<SimulatedRater>(std::move(spec), std::move(latent));
}

}  // namespace llmscale
