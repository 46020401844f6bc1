#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace dca {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<long> counts;  // classes x classes, row-major

  explicit ConfusionMatrix(std::size_t c = 2) : classes(c), counts(c * c, 0) {}

  long& at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
  long at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  long total() const {
    long n = 0;
    for (long v : counts) n += v;
    return n;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes != classes) throw std::invalid_argument("ConfusionMatrix: class counts differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& labels, const std::vector<int>& predictions, std::size_t classes) {
  if (labels.size() != predictions.size())
    throw std::invalid_argument("confusion: " + std::to_string(labels.size()) + " labels but " +
                                std::to_string(predictions.size()) + " predictions");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || static_cast<std::size_t>(t) >= classes || p < 0 || static_cast<std::size_t>(p) >= classes)
      throw std::invalid_argument("confusion: sample " + std::to_string(i) + " has label " + std::to_string(t) +
                                  " / prediction " + std::to_string(p) + " outside [0," + std::to_string(classes) +
                                  ")");
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

/// Macro-averaged over classes; kappa is Cohen's.
struct Metrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, kappa = 0;
  std::vector<std::string> warnings;  // 0/0 cells that were defined as 0
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  const long n = cm.total();
  if (n == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  Metrics m;
  const std::size_t c = cm.classes;
  std::vector<double> row(c, 0), col(c, 0);
  double diag = 0;
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) {
      row[t] += cm.at(t, p);
      col[p] += cm.at(t, p);
      if (t == p) diag += cm.at(t, p);
    }
  auto ratio = [&](double num, double den, const std::string& what) {
    if (den == 0) {
      m.warnings.push_back(what + " is 0/0, reported as 0");
      return 0.0;
    }
    return num / den;
  };
  for (std::size_t k = 0; k < c; ++k) {
    const double tp = cm.at(k, k);
    const std::string cls = "class " + std::to_string(k);
    const double p = ratio(tp, col[k], "precision of " + cls);
    const double r = ratio(tp, row[k], "recall of " + cls);
    m.precision += p;
    m.recall += r;
    m.f1 += ratio(2 * p * r, p + r, "f1 of " + cls);
  }
  m.precision /= static_cast<double>(c);
  m.recall /= static_cast<double>(c);
  m.f1 /= static_cast<double>(c);

  const double total = static_cast<double>(n);
  m.accuracy = diag / total;
  double pe = 0;
  for (std::size_t k = 0; k < c; ++k) pe += row[k] * col[k];
  pe /= total * total;
  // Chance agreement of 1 means a single class on both sides; agreement is then total.
  m.kappa = pe == 1.0 ? (m.accuracy == 1.0 ? 1.0 : 0.0) : (m.accuracy - pe) / (1.0 - pe);
  return m;
}

struct MeanStd {
  double mean = 0, std = 0;
};

/// Sample standard deviation (n - 1); a single value has std 0.
inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_std: no values");
  MeanStd r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct EvalReport {
  std::vector<Metrics> folds;

  MeanStd summary(double Metrics::*field) const {
    std::vector<double> xs;
    for (const auto& f : folds) xs.push_back(f.*field);
    return mean_std(xs);
  }
};

inline constexpr double Metrics::*kReportFields[] = {&Metrics::accuracy, &Metrics::precision, &Metrics::recall,
                                                     &Metrics::f1, &Metrics::kappa};

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string format_mean_std(const MeanStd& s) { return format_number(s.mean) + "±" + format_number(s.std); }

inline std::string format_report_csv(const EvalReport& report) {
  std::string out = "fold,accuracy,precision,recall,f1,kappa\n";
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    out += std::to_string(i + 1);
    for (auto field : kReportFields) out += "," + format_number(report.folds[i].*field);
    out += "\n";
  }
  out += "mean±std";
  for (auto field : kReportFields) out += "," + format_mean_std(report.summary(field));
  out += "\n";
  return out;
}

}  // namespace dca
