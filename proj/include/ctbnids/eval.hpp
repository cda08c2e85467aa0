#ifndef CTBNIDS_EVAL_HPP
#define CTBNIDS_EVAL_HPP

// Window labeling, ROC curves and the host-identification confusion matrix.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctbnids/linalg.hpp"
#include "ctbnids/synth.hpp"

namespace ctbnids::eval {

// Half-open [start, start + length).
struct Window {
  double start = 0.0;
  double length = 0.0;
  bool skipped = false;
};

// true = abnormal (intersects an injected interval); nullopt for skipped windows.
std::vector<std::optional<bool>> label_windows(const synth::GroundTruth& truth,
                                               std::span<const Window> windows);

enum class Polarity { kLowIsAnomalous, kHighIsAnomalous };

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0.0;
};

// One point per distinct score; tied scores move diagonally, which counts
// a tie as half. Throws InputError on single-class labels or NaN scores.
RocResult roc_auc(std::span<const double> scores, std::span<const bool> labels, Polarity polarity);

// "fpr,tpr" lines preceded by an "# auc=" comment.
std::string roc_table(const RocResult& roc);
std::string roc_svg(const RocResult& roc, const std::string& title);

// scores[s][j]: log-likelihood of segment s under model j; owner[s] its host.
// Row i holds the fraction of host i's segments that model j scores highest
// (ties go to the lowest j). Throws InputError if a host has no segments.
Matrix confusion_matrix(const std::vector<std::vector<double>>& scores, std::span<const int> owner,
                        int hosts);

}  // namespace ctbnids::eval

#endif
