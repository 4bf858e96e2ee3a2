#pragma once

// Linear PV forecast models P = eta' xi over normalized features with a
// bias term, the ridge (MSE) baseline and accuracy metrics.

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dfcvr {

// Raw feature ordering; the normalized vector appends a bias entry of 1.
inline constexpr int kNumRawFeatures = 11;
inline constexpr int kNumFeatures = kNumRawFeatures + 1;
inline constexpr std::array<const char*, kNumRawFeatures> kFeatureNames{
    "year", "month", "day", "hour", "minute", "ghi",
    "pressure", "wind_direction", "wind_speed", "temperature", "humidity"};

using RawFeatures = std::array<double, kNumRawFeatures>;
using FeatureVector = std::array<double, kNumFeatures>;

struct Normalizer {
  std::array<double, kNumRawFeatures> mean{};
  std::array<double, kNumRawFeatures> scale{};  // 0 marks a constant feature

  static Normalizer fit(const std::vector<RawFeatures>& samples);
  // Constant features map to 0; the last entry is the bias.
  FeatureVector apply(const RawFeatures& raw) const;
};

struct ForecastModel {
  Normalizer norm;
  std::vector<FeatureVector> eta_da, eta_ust;  // one row per site
  std::vector<double> capacity;                // p.u. per site, for clipping
  bool clip_to_capacity = true;

  int sites() const { return static_cast<int>(eta_da.size()); }
  void validate() const;  // throws DataError
};

using SiteSeries = std::vector<std::vector<RawFeatures>>;  // [site][t]

struct Forecasts {
  std::vector<std::vector<double>> da, ust;  // [site][t], p.u.
};

double predict_one(const FeatureVector& eta, const FeatureVector& xi);

// Deployment mode clips to [0, capacity] when the model asks for it;
// training mode returns the raw linear output.
Forecasts predict(const ForecastModel& model, const SiteSeries& features, bool deployment = true);

// Per-site ridge regression with an unpenalized bias. The normalizer is fit
// on all samples pooled. Constant features get coefficient 0. Throws
// DataError when the normal equations are singular (suggesting lambda > 0).
ForecastModel fit_mse(const SiteSeries& features, const std::vector<std::vector<double>>& actual,
                      double ridge_lambda, const std::vector<double>& capacity);

// Ridge objective of one site's coefficients over normalized samples.
double ridge_objective(const FeatureVector& eta, const std::vector<FeatureVector>& xi,
                       const std::vector<double>& y, double ridge_lambda);

enum class NrmseBase { kCapacity, kMean };

// sqrt(mean squared error) / normalizer. The normalizer is `capacity` or
// the mean of `actual`. Throws DataError on length mismatch or a zero
// normalizer.
double nrmse(const std::vector<double>& pred, const std::vector<double>& actual, NrmseBase base,
             double capacity = 1.0);

nlohmann::json to_json(const ForecastModel& m);
ForecastModel model_from_json(const nlohmann::json& j);
void save_model(const ForecastModel& m, const std::string& path);
ForecastModel load_model(const std::string& path);

}  // namespace dfcvr
