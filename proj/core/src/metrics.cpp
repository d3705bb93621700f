#include "declab/metrics.hpp"

#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "declab/errors.hpp"

namespace declab {

int exact_match(const std::string& prediction, const std::string& target) {
  return prediction == target ? 1 : 0;
}

namespace {

constexpr int kMaxN = 4;

using NgramCounts = std::unordered_map<std::string, int>;

// Counts of n-grams for n = 1..4, keyed by space-joined words.
std::vector<NgramCounts> ngram_counts(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  std::vector<NgramCounts> counts(kMaxN);
  for (int n = 1; n <= kMaxN; ++n) {
    for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
      std::string gram = words[i];
      for (int j = 1; j < n; ++j) gram += " " + words[i + static_cast<size_t>(j)];
      counts[static_cast<size_t>(n - 1)][gram]++;
    }
  }
  return counts;
}

}  // namespace

double cider(const std::vector<std::string>& candidates,
             const std::vector<std::vector<std::string>>& references) {
  if (candidates.empty()) throw ContractError("cider: empty corpus");
  if (candidates.size() != references.size())
    throw ContractError("cider: need one candidate per image");
  size_t images = candidates.size();
  for (const auto& refs : references)
    if (refs.empty()) throw ContractError("cider: every image needs at least one reference");

  // Document frequency per n-gram: number of images whose reference set
  // contains it.
  std::vector<std::vector<NgramCounts>> ref_counts(images);
  std::vector<NgramCounts> doc_freq(kMaxN);
  for (size_t i = 0; i < images; ++i) {
    ref_counts[i].reserve(references[i].size() * kMaxN);
    std::set<std::string> seen[kMaxN];
    for (const std::string& ref : references[i]) {
      auto counts = ngram_counts(ref);
      for (int n = 0; n < kMaxN; ++n)
        for (const auto& [gram, cnt] : counts[static_cast<size_t>(n)])
          seen[n].insert(gram);
      for (auto& c : counts) ref_counts[i].push_back(std::move(c));
    }
    for (int n = 0; n < kMaxN; ++n)
      for (const std::string& gram : seen[n]) doc_freq[static_cast<size_t>(n)][gram]++;
  }

  double log_images = std::log(static_cast<double>(images));
  auto idf = [&](int n, const std::string& gram) {
    auto it = doc_freq[static_cast<size_t>(n)].find(gram);
    int df = it == doc_freq[static_cast<size_t>(n)].end() ? 0 : it->second;
    return log_images - std::log(static_cast<double>(std::max(1, df)));
  };

  // TF-IDF vector and its norm for one n.
  auto to_vec = [&](int n, const NgramCounts& counts) {
    std::unordered_map<std::string, double> vec;
    double norm_sq = 0.0;
    for (const auto& [gram, cnt] : counts) {
      double wgt = static_cast<double>(cnt) * idf(n, gram);
      vec.emplace(gram, wgt);
      norm_sq += wgt * wgt;
    }
    return std::make_pair(std::move(vec), std::sqrt(norm_sq));
  };

  double total = 0.0;
  for (size_t i = 0; i < images; ++i) {
    auto cand_counts = ngram_counts(candidates[i]);
    double image_score = 0.0;
    for (int n = 0; n < kMaxN; ++n) {
      auto [cvec, cnorm] = to_vec(n, cand_counts[static_cast<size_t>(n)]);
      double sim_sum = 0.0;
      size_t n_refs = references[i].size();
      for (size_t r = 0; r < n_refs; ++r) {
        const NgramCounts& rc = ref_counts[i][r * kMaxN + static_cast<size_t>(n)];
        auto [rvec, rnorm] = to_vec(n, rc);
        if (cnorm == 0.0 || rnorm == 0.0) continue;
        double dot = 0.0;
        for (const auto& [gram, wgt] : cvec) {
          auto it = rvec.find(gram);
          if (it != rvec.end()) dot += wgt * it->second;
        }
        sim_sum += dot / (cnorm * rnorm);
      }
      image_score += sim_sum / static_cast<double>(n_refs);
    }
    total += image_score * (10.0 / kMaxN);
  }
  return total / static_cast<double>(images);
}

}  // namespace declab
