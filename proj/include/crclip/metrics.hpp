#pragma once

#include <string>
#include <vector>

#include "crclip/losses.hpp"
#include "crclip/tensor.hpp"

namespace crclip {

struct RetrievalReport {
  double map_v2t = 0.0, map_t2v = 0.0, map_avg = 0.0;
  double ndcg_v2t = 0.0, ndcg_t2v = 0.0, ndcg_avg = 0.0;
};

// Candidates are ranked by score descending, ties broken by ascending
// candidate index. AP averages precision at the relevant ranks; an
// all-irrelevant list scores 0.
double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& relevant);

// Graded gains with log2(rank+1) discount and full-list ideal DCG.
// Returns 0 when the ideal DCG is 0.
double ndcg_row(const std::vector<double>& scores, const std::vector<double>& gains);

// V2T over rows of S (AP relevance = C_ij > rel_threshold, nDCG gains = C
// row), T2V over columns, avg fields are exact midpoints.
RetrievalReport evaluate(const Tensor& sims, const RelevanceMatrix& c,
                         double rel_threshold = 0.0);

// Definition-level brute-force recomputations (reference mode).
double average_precision_reference(const std::vector<double>& scores,
                                   const std::vector<int>& relevant);
double ndcg_row_reference(const std::vector<double>& scores,
                          const std::vector<double>& gains);
RetrievalReport evaluate_reference(const Tensor& sims, const RelevanceMatrix& c,
                                   double rel_threshold = 0.0);

// Percentage with two decimals, truncated, never rounded: 0.66789 -> "66.78".
std::string truncate_pct(double fraction);

// One value per line, `name<TAB>percentage`.
std::string format_report_block(const RetrievalReport& r);
// All six percentages tab-separated on one line, map then ndcg.
std::string format_report_tsv(const RetrievalReport& r);

}  // namespace crclip
