#include "ctbnids/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ctbnids/errors.hpp"
#include "ctbnids/text.hpp"

namespace ctbnids::eval {

std::vector<std::optional<bool>> label_windows(const synth::GroundTruth& truth,
                                               std::span<const Window> windows) {
  std::vector<std::optional<bool>> out;
  out.reserve(windows.size());
  for (const Window& w : windows) {
    if (w.skipped) out.emplace_back();
    else out.emplace_back(truth.intersects(w.start, w.start + w.length));
  }
  return out;
}

RocResult roc_auc(std::span<const double> scores, std::span<const bool> labels, Polarity polarity) {
  if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
  const auto positives = std::count(labels.begin(), labels.end(), true);
  const auto negatives = static_cast<long long>(labels.size()) - positives;
  if (positives == 0 || negatives == 0)
    throw InputError("ROC needs at least one positive and one negative label");
  std::vector<double> anomaly(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw InputError("ROC scores contain NaN");
    anomaly[i] = polarity == Polarity::kLowIsAnomalous ? -scores[i] : scores[i];
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return anomaly[a] > anomaly[b]; });

  RocResult roc;
  roc.points.push_back({0.0, 0.0});
  long long tp = 0, fp = 0;
  double auc = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long dtp = 0, dfp = 0;
    while (j < order.size() && anomaly[order[j]] == anomaly[order[i]]) {
      (labels[order[j]] ? dtp : dfp) += 1;
      ++j;
    }
    const double tpr0 = static_cast<double>(tp) / positives;
    tp += dtp;
    fp += dfp;
    const RocPoint p{static_cast<double>(fp) / negatives, static_cast<double>(tp) / positives};
    auc += (p.fpr - roc.points.back().fpr) * (p.tpr + tpr0) / 2.0;
    roc.points.push_back(p);
    i = j;
  }
  roc.auc = auc;
  return roc;
}

std::string roc_table(const RocResult& roc) {
  std::ostringstream out;
  out << "# auc=" << text::format_number(roc.auc) << '\n' << "fpr,tpr\n";
  for (const RocPoint& p : roc.points)
    out << text::format_number(p.fpr) << ',' << text::format_number(p.tpr) << '\n';
  return out.str();
}

std::string roc_svg(const RocResult& roc, const std::string& title) {
  constexpr double size = 400.0, pad = 40.0;
  auto x = [&](double f) { return text::format_number(pad + f * size); };
  auto y = [&](double f) { return text::format_number(pad + (1.0 - f) * size); };
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\">\n"
      << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<line x1=\"" << x(0) << "\" y1=\"" << y(0) << "\" x2=\"" << x(1) << "\" y2=\"" << y(1)
      << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n"
      << "<polyline fill=\"none\" stroke=\"blue\" points=\"";
  for (const RocPoint& p : roc.points) out << x(p.fpr) << ',' << y(p.tpr) << ' ';
  out << "\"/>\n"
      << "<text x=\"" << pad << "\" y=\"25\">" << title << " (AUC " << text::format_number(roc.auc)
      << ")</text>\n"
      << "<text x=\"200\" y=\"470\">false positive rate</text>\n"
      << "<text x=\"12\" y=\"260\" transform=\"rotate(-90 12 260)\">true positive rate</text>\n"
      << "</svg>\n";
  return out.str();
}

Matrix confusion_matrix(const std::vector<std::vector<double>>& scores, std::span<const int> owner,
                        int hosts) {
  if (scores.size() != owner.size()) throw InputError("scores and owners differ in length");
  if (hosts < 1) throw InputError("need at least one host");
  Matrix c = Matrix::Zero(hosts, hosts);
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (owner[s] < 0 || owner[s] >= hosts) throw InputError("segment owner out of range");
    if (static_cast<int>(scores[s].size()) != hosts)
      throw InputError("every segment needs one score per model");
    int best = 0;
    for (int j = 1; j < hosts; ++j)
      if (scores[s][j] > scores[s][best] || (std::isnan(scores[s][best]) && !std::isnan(scores[s][j])))
        best = j;
    c(owner[s], best) += 1.0;
  }
  for (int i = 0; i < hosts; ++i) {
    const double total = c.row(i).sum();
    if (!(total > 0.0)) throw InputError("host " + std::to_string(i) + " has no segments");
    c.row(i) /= total;
  }
  return c;
}

}  // namespace ctbnids::eval
