#include "dfcvr/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>

#include "dfcvr/errors.hpp"

namespace dfcvr {

Normalizer Normalizer::fit(const std::vector<RawFeatures>& samples) {
  if (samples.empty()) throw DataError("normalizer needs at least one sample");
  Normalizer n;
  const double count = static_cast<double>(samples.size());
  for (int j = 0; j < kNumRawFeatures; ++j) {
    double m = 0.0;
    for (const auto& s : samples) m += s[j];
    m /= count;
    double var = 0.0;
    for (const auto& s : samples) var += (s[j] - m) * (s[j] - m);
    const double sd = std::sqrt(var / count);
    n.mean[j] = m;
    n.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(m)) ? sd : 0.0;
  }
  return n;
}

FeatureVector Normalizer::apply(const RawFeatures& raw) const {
  FeatureVector xi{};
  for (int j = 0; j < kNumRawFeatures; ++j) {
    if (!std::isfinite(raw[j])) throw DataError(std::string("non-finite feature ") + kFeatureNames[j]);
    xi[j] = scale[j] > 0.0 ? (raw[j] - mean[j]) / scale[j] : 0.0;
  }
  xi[kNumRawFeatures] = 1.0;
  return xi;
}

void ForecastModel::validate() const {
  if (eta_ust.size() != eta_da.size() || capacity.size() != eta_da.size()) {
    throw DataError("forecast model: per-site arrays differ in length");
  }
  for (const auto* rows : {&eta_da, &eta_ust}) {
    for (const auto& r : *rows) {
      for (double v : r) {
        if (!std::isfinite(v)) throw DataError("forecast model: non-finite coefficient");
      }
    }
  }
}

double predict_one(const FeatureVector& eta, const FeatureVector& xi) {
  double s = 0.0;
  for (int j = 0; j < kNumFeatures; ++j) s += eta[j] * xi[j];
  return s;
}

Forecasts predict(const ForecastModel& model, const SiteSeries& features, bool deployment) {
  model.validate();
  if (static_cast<int>(features.size()) != model.sites()) {
    throw DataError("predict: feature rows do not match the model's site count");
  }
  Forecasts f;
  f.da.resize(features.size());
  f.ust.resize(features.size());
  for (size_t s = 0; s < features.size(); ++s) {
    for (const auto& raw : features[s]) {
      const FeatureVector xi = model.norm.apply(raw);
      double da = predict_one(model.eta_da[s], xi);
      double ust = predict_one(model.eta_ust[s], xi);
      if (deployment && model.clip_to_capacity) {
        da = std::clamp(da, 0.0, model.capacity[s]);
        ust = std::clamp(ust, 0.0, model.capacity[s]);
      }
      f.da[s].push_back(da);
      f.ust[s].push_back(ust);
    }
  }
  return f;
}

double ridge_objective(const FeatureVector& eta, const std::vector<FeatureVector>& xi,
                       const std::vector<double>& y, double ridge_lambda) {
  double obj = 0.0;
  for (size_t n = 0; n < xi.size(); ++n) {
    const double e = predict_one(eta, xi[n]) - y[n];
    obj += e * e;
  }
  for (int j = 0; j < kNumRawFeatures; ++j) obj += ridge_lambda * eta[j] * eta[j];
  return obj;
}

ForecastModel fit_mse(const SiteSeries& features, const std::vector<std::vector<double>>& actual,
                      double ridge_lambda, const std::vector<double>& capacity) {
  if (!(ridge_lambda >= 0.0)) throw ConfigError("ridge_lambda must be non-negative");
  if (features.empty() || features.size() != actual.size() || capacity.size() != features.size()) {
    throw DataError("fit_mse: sites of features, actuals and capacities differ");
  }
  std::vector<RawFeatures> pooled;
  for (size_t s = 0; s < features.size(); ++s) {
    if (features[s].size() != actual[s].size()) throw DataError("fit_mse: sample count mismatch");
    pooled.insert(pooled.end(), features[s].begin(), features[s].end());
  }
  ForecastModel m;
  m.norm = Normalizer::fit(pooled);
  m.capacity = capacity;

  // Active columns: non-constant features plus the bias.
  std::vector<int> cols;
  for (int j = 0; j < kNumRawFeatures; ++j) {
    if (m.norm.scale[j] > 0.0) cols.push_back(j);
  }
  cols.push_back(kNumRawFeatures);
  const int k = static_cast<int>(cols.size());

  for (size_t s = 0; s < features.size(); ++s) {
    const int n = static_cast<int>(features[s].size());
    if (n < k) throw DataError("fit_mse: fewer samples than active features");
    Eigen::MatrixXd X(n, k);
    Eigen::VectorXd y(n);
    for (int r = 0; r < n; ++r) {
      const FeatureVector xi = m.norm.apply(features[s][r]);
      for (int c = 0; c < k; ++c) X(r, c) = xi[cols[c]];
      if (!std::isfinite(actual[s][r])) throw DataError("fit_mse: non-finite actual");
      y(r) = actual[s][r];
    }
    Eigen::MatrixXd A = X.transpose() * X;
    for (int c = 0; c + 1 < k; ++c) A(c, c) += ridge_lambda;
    Eigen::VectorXd b = X.transpose() * y;
    if (ridge_lambda == 0.0) {
      // Only the unregularized system can be singular (the bias column is
      // never zero).
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
      qr.setThreshold(1e-10);
      if (qr.rank() < k) {
        throw DataError("fit_mse: singular normal equations for site " + std::to_string(s) +
                        "; use ridge_lambda > 0");
      }
    }
    Eigen::VectorXd eta = A.ldlt().solve(b);
    FeatureVector row{};
    for (int c = 0; c < k; ++c) row[cols[c]] = eta(c);
    m.eta_da.push_back(row);
    m.eta_ust.push_back(row);
  }
  return m;
}

double nrmse(const std::vector<double>& pred, const std::vector<double>& actual, NrmseBase base,
             double capacity) {
  if (pred.size() != actual.size() || pred.empty()) throw DataError("nrmse: length mismatch");
  double se = 0.0, mean = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    se += (pred[i] - actual[i]) * (pred[i] - actual[i]);
    mean += actual[i];
  }
  const double n = static_cast<double>(pred.size());
  const double norm = base == NrmseBase::kCapacity ? capacity : mean / n;
  if (!(std::abs(norm) > 0.0)) throw DataError("nrmse: zero normalizer");
  return std::sqrt(se / n) / std::abs(norm);
}

nlohmann::json to_json(const ForecastModel& m) {
  nlohmann::json j;
  j["schema"] = "dfcvr.forecast_model/1";
  j["features"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
  j["mean"] = m.norm.mean;
  j["scale"] = m.norm.scale;
  j["eta_da"] = m.eta_da;
  j["eta_ust"] = m.eta_ust;
  j["capacity"] = m.capacity;
  j["clip_to_capacity"] = m.clip_to_capacity;
  return j;
}

ForecastModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "dfcvr.forecast_model/1") throw DataError("unknown forecast model schema");
    const auto names = j.at("features").get<std::vector<std::string>>();
    if (names != std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end())) {
      throw DataError("forecast model feature ordering differs from this build");
    }
    ForecastModel m;
    m.norm.mean = j.at("mean").get<std::array<double, kNumRawFeatures>>();
    m.norm.scale = j.at("scale").get<std::array<double, kNumRawFeatures>>();
    m.eta_da = j.at("eta_da").get<std::vector<FeatureVector>>();
    m.eta_ust = j.at("eta_ust").get<std::vector<FeatureVector>>();
    m.capacity = j.at("capacity").get<std::vector<double>>();
    m.clip_to_capacity = j.value("clip_to_capacity", true);
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("forecast model JSON: ") + e.what());
  }
}

void save_model(const ForecastModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(m).dump(2) << "\n";
}

ForecastModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace dfcvr
