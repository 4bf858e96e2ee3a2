#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "csv.hpp"
#include "dfcvr/errors.hpp"
#include "dfcvr/harness.hpp"

namespace dfcvr {

namespace {

using namespace std::chrono;

// Minutes since the epoch; false when the calendar date is invalid.
bool minutes_of(const RawFeatures& f, long long& out) {
  const year_month_day ymd{year{static_cast<int>(f[0])}, month{static_cast<unsigned>(f[1])},
                           day{static_cast<unsigned>(f[2])}};
  if (!ymd.ok() || f[3] < 0 || f[3] > 23 || f[4] < 0 || f[4] > 59) return false;
  out = static_cast<long long>(sys_days{ymd}.time_since_epoch().count()) * 1440 +
        static_cast<long long>(f[3]) * 60 + static_cast<long long>(f[4]);
  return true;
}

std::string stamp(long long minutes) {
  const sys_days d{days{minutes / 1440}};
  const year_month_day ymd{d};
  const long long m = minutes % 1440;
  std::ostringstream os;
  os << static_cast<int>(ymd.year()) << '-' << std::setfill('0') << std::setw(2)
     << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.day()) << ' ' << std::setw(2) << m / 60 << ':' << std::setw(2)
     << m % 60;
  return os.str();
}

}  // namespace

Dataset ingest_csv(const std::string& path) {
  const csv::Table tab = csv::read(path);
  const auto& h = tab.header;
  if (h.size() <= kCsvColumns.size()) throw DataError(path + ": expected weather columns and PV_kW columns");
  for (size_t j = 0; j < kCsvColumns.size(); ++j) {
    if (h[j] != kCsvColumns[j]) {
      throw DataError(path + ": column " + std::to_string(j + 1) + " should be " + kCsvColumns[j] +
                      ", found '" + h[j] + "'");
    }
  }
  Dataset d;
  for (size_t j = kCsvColumns.size(); j < h.size(); ++j) {
    if (h[j].rfind("PV_kW", 0) != 0) throw DataError(path + ": unexpected column '" + h[j] + "'");
    std::string name = h[j].size() > 6 ? h[j].substr(6) : std::to_string(j - kCsvColumns.size() + 1);
    d.sites.push_back(name);
  }
  d.pv_kw.assign(d.sites.size(), {});

  long long prev = 0, step = 0;
  for (size_t r = 0; r < tab.rows.size(); ++r) {
    const auto& row = tab.rows[r];
    const std::string where = path + ":" + std::to_string(tab.line_numbers[r]);
    if (row.size() != h.size()) {
      throw DataError(where + ": expected " + std::to_string(h.size()) + " values, found " +
                      std::to_string(row.size()));
    }
    RawFeatures f{};
    for (size_t j = 0; j < kCsvColumns.size(); ++j) {
      if (row[j].empty()) throw DataError(where + ": missing value for " + kCsvColumns[j]);
      f[j] = csv::to_double(row[j], where);
    }
    long long m = 0;
    if (!minutes_of(f, m)) throw DataError(where + ": invalid timestamp");
    if (r > 0) {
      const long long diff = m - prev;
      if (diff <= 0) throw DataError(where + ": timestamps are not increasing");
      if (r == 1) step = diff;
      if (diff != step) {
        if (diff % step == 0) {
          throw DataError(where + ": missing timestamp " + stamp(prev + step));
        }
        throw DataError(where + ": mixed resolutions (" + std::to_string(step) + " and " +
                        std::to_string(diff) + " minutes)");
      }
    } else if (f[3] != 0 || f[4] != 0) {
      throw DataError(where + ": data must start at 00:00");
    }
    prev = m;
    for (size_t s = 0; s < d.sites.size(); ++s) {
      const std::string& cell = row[kCsvColumns.size() + s];
      if (cell.empty()) throw DataError(where + ": missing value for " + h[kCsvColumns.size() + s]);
      const double v = csv::to_double(cell, where);
      if (!std::isfinite(v) || v < 0.0) throw DataError(where + ": PV output must be non-negative");
      d.pv_kw[s].push_back(v);
    }
    d.features.push_back(f);
  }
  if (tab.rows.size() >= 2 && step != 60) {
    throw DataError(path + ": resolution is " + std::to_string(step) + " minutes; 60 expected");
  }
  if (d.records() == 0 || d.records() % 24 != 0) {
    throw DataError(path + ": records do not cover whole days");
  }
  split_days(d);
  return d;
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const char* c : kCsvColumns) out << c << ',';
  for (size_t s = 0; s < d.sites.size(); ++s) {
    out << "PV_kW_" << d.sites[s] << (s + 1 < d.sites.size() ? "," : "\n");
  }
  out << std::setprecision(10);
  for (int r = 0; r < d.records(); ++r) {
    for (double v : d.features[r]) out << v << ',';
    for (size_t s = 0; s < d.sites.size(); ++s) {
      out << d.pv_kw[s][r] << (s + 1 < d.sites.size() ? "," : "\n");
    }
  }
}

void split_days(Dataset& d, double train_fraction) {
  const int n = d.days();
  if (n < 2) throw DataError("at least two days are needed for a train/test split");
  int train = static_cast<int>(std::lround(train_fraction * n));
  train = std::clamp(train, 1, n - 1);
  d.train_days.clear();
  d.test_days.clear();
  for (int k = 0; k < n; ++k) (k < train ? d.train_days : d.test_days).push_back(k);
}

Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.days < 2) throw ConfigError("synthetic data needs at least two days");
  if (spec.capacity_kw.empty()) throw ConfigError("synthetic data needs at least one site");
  if (spec.noise < 0.0) throw ConfigError("noise must be non-negative");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Dataset d;
  for (size_t s = 0; s < spec.capacity_kw.size(); ++s) d.sites.push_back(std::to_string(s + 1));
  d.pv_kw.assign(spec.capacity_kw.size(), {});
  const sys_days start{year{spec.year} / month{static_cast<unsigned>(spec.month)} /
                       day{static_cast<unsigned>(spec.day)}};
  if (!year_month_day{start}.ok()) throw ConfigError("synthetic data: invalid start date");

  const double pi = std::numbers::pi;
  for (int k = 0; k < spec.days; ++k) {
    const year_month_day ymd{start + days{k}};
    const double clearness = 0.6 + 0.4 * u01(rng);
    const double t_mean = 22.0 + 3.0 * n01(rng);
    const double p_mean = 1010.0 + 4.0 * n01(rng);
    for (int hr = 0; hr < 24; ++hr) {
      const double sun = std::sin(pi * (hr - 6) / 13.0);
      const double cloud = std::clamp(1.0 - 0.15 * std::abs(n01(rng)), 0.3, 1.0);
      const double ghi = sun > 0.0 ? 950.0 * std::pow(sun, 1.3) * clearness * cloud : 0.0;
      RawFeatures f{};
      f[0] = static_cast<int>(ymd.year());
      f[1] = static_cast<unsigned>(ymd.month());
      f[2] = static_cast<unsigned>(ymd.day());
      f[3] = hr;
      f[4] = 0;
      f[5] = ghi;
      f[6] = p_mean + 0.5 * n01(rng);
      f[7] = 360.0 * u01(rng);
      f[8] = std::abs(3.0 + 1.5 * n01(rng));
      f[9] = t_mean + 6.0 * std::sin(pi * (hr - 9) / 12.0) + 0.5 * n01(rng);
      f[10] = std::clamp(60.0 - 15.0 * std::sin(pi * (hr - 9) / 12.0) + 3.0 * n01(rng), 5.0, 100.0);
      d.features.push_back(f);
      for (size_t s = 0; s < spec.capacity_kw.size(); ++s) {
        const double cap = spec.capacity_kw[s];
        double pv = cap * kSynthPvPerGhi * ghi;
        const double e = n01(rng);  // drawn every hour to keep streams aligned
        if (ghi > 0.0) pv = std::clamp(pv + spec.noise * cap * e, 0.0, cap);
        d.pv_kw[s].push_back(pv);
      }
    }
  }
  split_days(d);
  return d;
}

SiteSeries day_features(const Dataset& d, int day, int sites) {
  if (day < 0 || day >= d.days()) throw DataError("day " + std::to_string(day) + " not in the dataset");
  if (sites > static_cast<int>(d.sites.size())) {
    throw DataError("dataset has " + std::to_string(d.sites.size()) + " PV sites, " +
                    std::to_string(sites) + " needed");
  }
  std::vector<RawFeatures> rows(d.features.begin() + 24 * day, d.features.begin() + 24 * (day + 1));
  return SiteSeries(sites, rows);
}

Matrix day_actuals(const Dataset& d, int day, double s_base_mva) {
  if (day < 0 || day >= d.days()) throw DataError("day " + std::to_string(day) + " not in the dataset");
  Matrix m;
  for (const auto& row : d.pv_kw) {
    std::vector<double> r;
    for (int t = 0; t < 24; ++t) r.push_back(row[24 * day + t] / (1000.0 * s_base_mva));
    m.push_back(r);
  }
  return m;
}

void training_samples(const Dataset& d, const std::vector<int>& days, double s_base_mva,
                      SiteSeries& features, Matrix& actual) {
  const int sites = static_cast<int>(d.sites.size());
  features.assign(sites, {});
  actual.assign(sites, {});
  for (int k : days) {
    const SiteSeries f = day_features(d, k, sites);
    const Matrix a = day_actuals(d, k, s_base_mva);
    for (int s = 0; s < sites; ++s) {
      features[s].insert(features[s].end(), f[s].begin(), f[s].end());
      actual[s].insert(actual[s].end(), a[s].begin(), a[s].end());
    }
  }
}

}  // namespace dfcvr
