#include "crclip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace crclip {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw InputError(std::string(what) + ": length mismatch " + std::to_string(a) +
                     " vs " + std::to_string(b));
  if (a == 0) throw InputError(std::string(what) + ": empty candidate list");
}

// score descending, index ascending on ties
std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

double discount(std::size_t rank1based) {
  return std::log2(static_cast<double>(rank1based) + 1.0);
}

}  // namespace

double average_precision(const std::vector<double>& scores,
                         const std::vector<int>& relevant) {
  require_same_length(scores.size(), relevant.size(), "average_precision");
  const std::size_t total =
      static_cast<std::size_t>(std::count_if(relevant.begin(), relevant.end(),
                                             [](int r) { return r != 0; }));
  if (total == 0) return 0.0;
  const std::vector<std::size_t> order = ranking(scores);
  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (relevant[order[r]] != 0) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(total);
}

double ndcg_row(const std::vector<double>& scores, const std::vector<double>& gains) {
  require_same_length(scores.size(), gains.size(), "ndcg_row");
  const std::vector<std::size_t> order = ranking(scores);
  double dcg = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r)
    dcg += gains[order[r]] / discount(r + 1);
  std::vector<double> ideal(gains);
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t r = 0; r < ideal.size(); ++r) idcg += ideal[r] / discount(r + 1);
  if (idcg == 0.0) return 0.0;
  return dcg / idcg;
}

namespace {

template <typename ApFn, typename NdcgFn>
RetrievalReport evaluate_with(const Tensor& sims, const RelevanceMatrix& c,
                              double rel_threshold, ApFn ap, NdcgFn ndcg) {
  if (!sims.is_matrix() || sims.shape() != c.values.shape())
    throw InputError("evaluate: similarity " + shape_str(sims.shape()) +
                     " vs relevance " + shape_str(c.values.shape()));
  if (rel_threshold < 0.0)
    throw InputError("evaluate: negative relevance threshold");
  const std::size_t bv = sims.rows(), bt = sims.cols();

  RetrievalReport rep;
  for (std::size_t i = 0; i < bv; ++i) {
    std::vector<double> scores(bt), gains(bt);
    std::vector<int> rel(bt);
    for (std::size_t j = 0; j < bt; ++j) {
      scores[j] = sims.at(i, j);
      gains[j] = c.at(i, j);
      rel[j] = c.at(i, j) > rel_threshold ? 1 : 0;
    }
    rep.map_v2t += ap(scores, rel);
    rep.ndcg_v2t += ndcg(scores, gains);
  }
  rep.map_v2t /= static_cast<double>(bv);
  rep.ndcg_v2t /= static_cast<double>(bv);

  for (std::size_t j = 0; j < bt; ++j) {
    std::vector<double> scores(bv), gains(bv);
    std::vector<int> rel(bv);
    for (std::size_t i = 0; i < bv; ++i) {
      scores[i] = sims.at(i, j);
      gains[i] = c.at(i, j);
      rel[i] = c.at(i, j) > rel_threshold ? 1 : 0;
    }
    rep.map_t2v += ap(scores, rel);
    rep.ndcg_t2v += ndcg(scores, gains);
  }
  rep.map_t2v /= static_cast<double>(bt);
  rep.ndcg_t2v /= static_cast<double>(bt);

  rep.map_avg = (rep.map_v2t + rep.map_t2v) / 2.0;
  rep.ndcg_avg = (rep.ndcg_v2t + rep.ndcg_t2v) / 2.0;
  return rep;
}

}  // namespace

RetrievalReport evaluate(const Tensor& sims, const RelevanceMatrix& c,
                         double rel_threshold) {
  return evaluate_with(sims, c, rel_threshold, average_precision, ndcg_row);
}

// ---- reference mode: rank-by-counting, precision recomputed per prefix ----

namespace {

// 1-based rank of candidate x under (score desc, index asc)
std::size_t rank_of(const std::vector<double>& scores, std::size_t x) {
  std::size_t ahead = 0;
  for (std::size_t y = 0; y < scores.size(); ++y) {
    if (y == x) continue;
    if (scores[y] > scores[x] || (scores[y] == scores[x] && y < x)) ++ahead;
  }
  return ahead + 1;
}

}  // namespace

double average_precision_reference(const std::vector<double>& scores,
                                   const std::vector<int>& relevant) {
  require_same_length(scores.size(), relevant.size(), "average_precision_reference");
  const std::size_t n = scores.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t x = 0; x < n; ++x) rank[x] = rank_of(scores, x);

  std::size_t total = 0;
  for (int r : relevant)
    if (r != 0) ++total;
  if (total == 0) return 0.0;

  double ap = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    if (relevant[x] == 0) continue;
    // precision at this candidate's rank, recomputed from scratch
    std::size_t hits = 0;
    for (std::size_t y = 0; y < n; ++y)
      if (relevant[y] != 0 && rank[y] <= rank[x]) ++hits;
    ap += static_cast<double>(hits) / static_cast<double>(rank[x]);
  }
  return ap / static_cast<double>(total);
}

double ndcg_row_reference(const std::vector<double>& scores,
                          const std::vector<double>& gains) {
  require_same_length(scores.size(), gains.size(), "ndcg_row_reference");
  const std::size_t n = scores.size();
  double dcg = 0.0;
  for (std::size_t x = 0; x < n; ++x)
    dcg += gains[x] / discount(rank_of(scores, x));
  double idcg = 0.0;
  for (std::size_t x = 0; x < n; ++x)
    idcg += gains[x] / discount(rank_of(gains, x));
  if (idcg == 0.0) return 0.0;
  return dcg / idcg;
}

RetrievalReport evaluate_reference(const Tensor& sims, const RelevanceMatrix& c,
                                   double rel_threshold) {
  return evaluate_with(sims, c, rel_threshold, average_precision_reference,
                       ndcg_row_reference);
}

std::string truncate_pct(double fraction) {
  const double scaled = fraction * 10000.0;  // hundredths of a percent
  long long t = static_cast<long long>(std::floor(scaled));
  if (t < 0) t = 0;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%lld.%02lld", t / 100, t % 100);
  return buf;
}

std::string format_report_block(const RetrievalReport& r) {
  std::string out;
  out += "map_v2t\t" + truncate_pct(r.map_v2t) + "\n";
  out += "map_t2v\t" + truncate_pct(r.map_t2v) + "\n";
  out += "map_avg\t" + truncate_pct(r.map_avg) + "\n";
  out += "ndcg_v2t\t" + truncate_pct(r.ndcg_v2t) + "\n";
  out += "ndcg_t2v\t" + truncate_pct(r.ndcg_t2v) + "\n";
  out += "ndcg_avg\t" + truncate_pct(r.ndcg_avg) + "\n";
  return out;
}

std::string format_report_tsv(const RetrievalReport& r) {
  return truncate_pct(r.map_v2t) + "\t" + truncate_pct(r.map_t2v) + "\t" +
         truncate_pct(r.map_avg) + "\t" + truncate_pct(r.ndcg_v2t) + "\t" +
         truncate_pct(r.ndcg_t2v) + "\t" + truncate_pct(r.ndcg_avg);
}

}  // namespace crclip
