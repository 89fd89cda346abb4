#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "skb/vlm_gateway.hpp"

namespace skb {

namespace {

constexpr double kSilenceRangeDb = 3.0;
constexpr double kBandDropDb = 10.0;
constexpr double kPulseRangeDb = 6.0;
constexpr double kNarrowBandHz = 1000.0;
constexpr double kSweepWidthRatio = 0.4;

double to_db(double power) { return 10.0 * std::log10(std::max(power, 1e-30)); }

std::string format_khz(double hz, bool integer) {
  char buf[32];
  if (integer) {
    std::snprintf(buf, sizeof buf, "%.0f", std::round(hz / 1000.0));
  } else {
    std::snprintf(buf, sizeof buf, "%.1f", hz / 1000.0);
  }
  return buf;
}

}  // namespace

MatrixStatistics matrix_statistics(const SpectrogramMatrix& m) {
  MatrixStatistics st;
  const int bins = m.bins();
  const int frames = m.frames();
  st.duration_s = frames * m.time_resolution_s();
  const auto vals = m.values();
  const auto [mn_it, mx_it] = std::minmax_element(vals.begin(), vals.end());
  const double vmax = *mx_it;
  if (vmax - *mn_it < kSilenceRangeDb) return st;
  st.silent = false;

  // Linear power relative to the loudest cell.
  std::vector<double> power(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) power[i] = std::pow(10.0, (vals[i] - vmax) / 10.0);
  auto pw = [&](int k, int t) {
    return power[static_cast<std::size_t>(k) * static_cast<std::size_t>(frames) + static_cast<std::size_t>(t)];
  };

  std::vector<double> marginal(static_cast<std::size_t>(bins), 0.0);
  for (int k = 0; k < bins; ++k) {
    double s = 0.0;
    for (int t = 0; t < frames; ++t) s += pw(k, t);
    marginal[static_cast<std::size_t>(k)] = to_db(s / frames);
  }
  const int peak = static_cast<int>(std::max_element(marginal.begin(), marginal.end()) - marginal.begin());
  const double cutoff = marginal[static_cast<std::size_t>(peak)] - kBandDropDb;
  int lo = peak;
  int hi = peak;
  while (lo > 0 && marginal[static_cast<std::size_t>(lo - 1)] >= cutoff) --lo;
  while (hi + 1 < bins && marginal[static_cast<std::size_t>(hi + 1)] >= cutoff) ++hi;
  st.band_lo_hz = lo * m.freq_resolution_hz();
  st.band_hi_hz = hi * m.freq_resolution_hz();

  std::vector<double> energy(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    double s = 0.0;
    for (int k = lo; k <= hi; ++k) s += pw(k, t);
    energy[static_cast<std::size_t>(t)] = to_db(s);
  }
  const auto [emin_it, emax_it] = std::minmax_element(energy.begin(), energy.end());
  const double emin = *emin_it;
  const double emax = *emax_it;
  const double range = emax - emin;
  double active_level = emax - kPulseRangeDb;
  if (range >= kPulseRangeDb) {
    const double high = emin + 0.6 * range;
    const double low = emin + 0.4 * range;
    active_level = high;
    bool on = false;
    for (double e : energy) {
      if (!on && e >= high) {
        on = true;
        ++st.pulse_count;
      } else if (on && e < low) {
        on = false;
      }
    }
    // A band that never switches off is continuous, not pulsed.
    if (st.pulse_count == 1 && std::all_of(energy.begin(), energy.end(), [&](double e) { return e >= low; })) {
      st.pulse_count = 0;
    }
  }
  st.pulse_rate = st.duration_s > 0.0 ? static_cast<int>(std::lround(st.pulse_count / st.duration_s)) : 0;

  std::vector<double> widths;
  for (int t = 0; t < frames; ++t) {
    if (energy[static_cast<std::size_t>(t)] < active_level) continue;
    int kp = lo;
    for (int k = lo; k <= hi; ++k) {
      if (m.at(k, t) > m.at(kp, t)) kp = k;
    }
    const double c = m.at(kp, t) - kBandDropDb;
    int a = kp;
    int b = kp;
    while (a > lo && m.at(a - 1, t) >= c) --a;
    while (b < hi && m.at(b + 1, t) >= c) ++b;
    widths.push_back((b - a) * m.freq_resolution_hz());
  }
  if (!widths.empty()) {
    auto mid = widths.begin() + static_cast<std::ptrdiff_t>(widths.size() / 2);
    std::nth_element(widths.begin(), mid, widths.end());
    st.median_instantaneous_width_hz = *mid;
  }
  return st;
}

std::string describe_statistics(const MatrixStatistics& st) {
  if (st.silent) return "silence with no detectable band";
  const double width = st.band_hi_hz - st.band_lo_hz;
  std::string shape;
  if (width < kNarrowBandHz) {
    shape = st.pulse_rate > 0 ? "pulsed tonal whistle" : "tonal whistle";
  } else if (st.median_instantaneous_width_hz < kSweepWidthRatio * width) {
    shape = "frequency-modulated sweep";
  } else {
    shape = st.pulse_rate > 0 ? "broadband pulse" : "broadband noise";
  }
  shape[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(shape[0])));
  const bool integer = width >= kNarrowBandHz;
  return shape + " patterns at " + format_khz(st.band_lo_hz, integer) + "-" +
         format_khz(st.band_hi_hz, integer) + " kHz with " + std::to_string(st.pulse_rate) +
         " pulses per second";
}

std::string mock_describe(const SpectrogramMatrix& matrix) {
  return describe_statistics(matrix_statistics(matrix));
}

}  // namespace skb
