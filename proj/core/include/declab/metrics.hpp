#pragma once

#include <string>
#include <vector>

namespace declab {

// 1 iff the strings are byte-identical; no normalization of any kind.
int exact_match(const std::string& prediction, const std::string& target);

// Corpus CIDEr over candidate/reference pairs. Per image i with references
// S_i:  score_i = (10/4) * sum_{n=1..4} (1/|S_i|) sum_s cos(g^n(c_i), g^n(s))
// where g^n is the TF-IDF n-gram vector with
// idf(g) = log(#images / #images whose references contain g), floored at a
// document frequency of 1. The corpus score is the mean over images.
double cider(const std::vector<std::string>& candidates,
             const std::vector<std::vector<std::string>>& references);

}  // namespace declab
