// Test-only oracles, written independently of the library code paths they
// check. Nothing here may call into the implementation being verified.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracles {

// Naive i-j-k triple loop, double accumulation. Checks declab::matmul.
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += a[static_cast<size_t>(i) * k + t] * b[static_cast<size_t>(t) * n + j];
      c[static_cast<size_t>(i) * n + j] = acc;
    }
  return c;
}

// Regularized upper incomplete gamma Q(a, x) via series / continued
// fraction (Numerical Recipes style). Used for chi-squared p-values.
inline double gammq(double a, double x) {
  auto gser = [](double a_, double x_) {
    double gln = std::lgamma(a_);
    double ap = a_, sum = 1.0 / a_, del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x_ / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-14) break;
    }
    return sum * std::exp(-x_ + a_ * std::log(x_) - gln);
  };
  auto gcf = [](double a_, double x_) {
    double gln = std::lgamma(a_);
    double b = x_ + 1.0 - a_, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
      double an = -i * (i - a_);
      b += 2.0;
      d = an * d + b;
      if (std::abs(d) < 1e-300) d = 1e-300;
      c = b + an / c;
      if (std::abs(c) < 1e-300) c = 1e-300;
      d = 1.0 / d;
      double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < 1e-14) break;
    }
    return std::exp(-x_ + a_ * std::log(x_) - gln) * h;
  };
  if (x < 0.0 || a <= 0.0) return 1.0;
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gser(a, x);
  return gcf(a, x);
}

// Chi-squared upper p-value of observed counts against probabilities.
inline double chi2_p_value(const std::vector<std::int64_t>& counts,
                           const std::vector<double>& probs, std::int64_t total) {
  double stat = 0.0;
  for (size_t i = 0; i < counts.size(); ++i) {
    double expected = probs[i] * static_cast<double>(total);
    if (expected <= 0.0) continue;
    double diff = static_cast<double>(counts[i]) - expected;
    stat += diff * diff / expected;
  }
  double df = static_cast<double>(counts.size() - 1);
  return gammq(df / 2.0, stat / 2.0);
}

// Scalar AdamW recurrence, independently hand-rolled. Checks optimizer_step.
struct ScalarAdamW {
  double m = 0.0, v = 0.0;
  std::int64_t t = 0;
  double step(double& w, double g, double lr, double beta1, double beta2, double eps,
              double wd) {
    t += 1;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    double mhat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
    double vhat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    w *= 1.0 - lr * wd;
    return w;
  }
};

// Brute-force CIDEr: per image, per n, build TF-IDF vectors as plain maps
// and take cosines, with idf = log(M / max(1, df)). Checks declab::cider.
inline double brute_force_cider(const std::vector<std::string>& candidates,
                                const std::vector<std::vector<std::string>>& references) {
  auto words_of = [](const std::string& s) {
    std::vector<std::string> w;
    std::istringstream in(s);
    std::string x;
    while (in >> x) w.push_back(x);
    return w;
  };
  auto grams_of = [&](const std::string& s, int n) {
    std::map<std::string, double> grams;
    std::vector<std::string> w = words_of(s);
    for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) {
      std::string g = w[static_cast<size_t>(i)];
      for (int j = 1; j < n; ++j) g += "\x1f" + w[static_cast<size_t>(i + j)];
      grams[g] += 1.0;
    }
    return grams;
  };
  size_t m = candidates.size();
  double total = 0.0;
  for (size_t i = 0; i < m; ++i) {
    double image_score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      // document frequency over images, counted on reference sets
      std::map<std::string, int> df;
      for (size_t img = 0; img < m; ++img) {
        std::set<std::string> seen;
        for (const std::string& ref : references[img])
          for (const auto& [g, c] : grams_of(ref, n)) seen.insert(g);
        for (const std::string& g : seen) df[g] += 1;
      }
      auto weight = [&](const std::map<std::string, double>& counts) {
        std::map<std::string, double> v;
        for (const auto& [g, c] : counts) {
          int d = df.count(g) ? df[g] : 0;
          v[g] = c * std::log(static_cast<double>(m) / std::max(1, d));
        }
        return v;
      };
      auto norm = [](const std::map<std::string, double>& v) {
        double s = 0.0;
        for (const auto& [g, x] : v) s += x * x;
        return std::sqrt(s);
      };
      std::map<std::string, double> cv = weight(grams_of(candidates[i], n));
      double cn = norm(cv);
      double sim = 0.0;
      for (const std::string& ref : references[i]) {
        std::map<std::string, double> rv = weight(grams_of(ref, n));
        double rn = norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cv)
          if (rv.count(g)) dot += x * rv[g];
        sim += dot / (cn * rn);
      }
      image_score += sim / static_cast<double>(references[i].size());
    }
    total += image_score * 10.0 / 4.0;
  }
  return total / static_cast<double>(m);
}

}  // namespace oracles
