#include "histofuse/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "histofuse/log.hpp"

namespace histofuse {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> positive,
                  std::size_t& n_pos, std::size_t& n_neg) {
  if (scores.size() != positive.size()) throw InputError("scores and labels differ in length");
  n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw InputError("score " + std::to_string(i) + " is NaN");
    if (positive[i] != 0) ++n_pos;
  }
  n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InputError("ROC needs both positive and negative samples");
}

// Indices ordered by descending score; equal scores stay in input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0U);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.empty()) throw InputError("accuracy of an empty prediction set");
  if (predicted.size() != truth.size()) throw InputError("predictions and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string format_percent(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int n_classes) {
  if (predicted.size() != truth.size()) throw InputError("predictions and labels differ in length");
  if (n_classes <= 0) throw InputError("n_classes must be positive");
  ConfusionMatrix m;
  m.n_classes = n_classes;
  m.counts.assign(static_cast<std::size_t>(n_classes), std::vector<std::size_t>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes) {
      throw InputError("label out of range at row " + std::to_string(i));
    }
    ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

std::vector<RocPoint> roc_points(std::span<const double> scores, std::span<const int> positive) {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  check_binary(scores, positive, n_pos, n_neg);
  const auto order = descending_order(scores);

  // Integer (fp, tp) vertices, one per distinct score.
  std::vector<std::pair<std::size_t, std::size_t>> verts = {{0, 0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (positive[order[j]] != 0) ++tp;
      else ++fp;
      ++j;
    }
    verts.emplace_back(fp, tp);
    i = j;
  }

  // Drop interior vertices lying on the segment between their neighbours.
  std::vector<std::pair<std::size_t, std::size_t>> kept;
  for (const auto& v : verts) {
    while (kept.size() >= 2) {
      const auto& a = kept[kept.size() - 2];
      const auto& b = kept.back();
      const auto cross = static_cast<long double>(b.first - a.first) * static_cast<long double>(v.second - a.second) -
                         static_cast<long double>(b.second - a.second) * static_cast<long double>(v.first - a.first);
      if (cross != 0) break;
      kept.pop_back();
    }
    kept.push_back(v);
  }
  std::vector<RocPoint> out;
  out.reserve(kept.size());
  for (const auto& [f, t] : kept) {
    out.push_back({static_cast<double>(f) / static_cast<double>(n_neg),
                   static_cast<double>(t) / static_cast<double>(n_pos)});
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const int> positive) {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  check_binary(scores, positive, n_pos, n_neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0U);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the mid-rank of a tie block spanning ranks i+1..j is i+j+1, an integer.
  std::uint64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_block = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      pos_in_block += positive[order[j]] != 0 ? 1 : 0;
      ++j;
    }
    rank_sum2 += static_cast<std::uint64_t>(i + j + 1) * pos_in_block;
    i = j;
  }
  const std::uint64_t u2 = rank_sum2 - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double trapezoid_area(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) * 0.5;
  }
  return area;
}

EvalReport evaluate_scores(const ScoreMatrix& scores, std::span<const int> truth) {
  if (scores.rows == 0) throw InputError("evaluation set is empty");
  if (truth.size() != scores.rows) throw InputError("score rows and labels differ in length");
  const int n_classes = static_cast<int>(scores.cols);
  std::vector<int> pred(scores.rows);
  for (std::size_t i = 0; i < scores.rows; ++i) pred[i] = argmax(scores.row(i));

  EvalReport r;
  r.confusion = confusion_matrix(pred, truth, n_classes);
  r.accuracy = static_cast<double>(r.confusion.trace()) / static_cast<double>(r.confusion.total());
  r.roc.resize(scores.cols);
  r.auc_per_class.resize(scores.cols);
  std::vector<double> column(scores.rows);
  std::vector<int> positive(scores.rows);
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < scores.cols; ++c) {
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      column[i] = scores.at(i, c);
      positive[i] = truth[i] == static_cast<int>(c) ? 1 : 0;
      n_pos += static_cast<std::size_t>(positive[i]);
    }
    if (n_pos == 0 || n_pos == scores.rows) {
      log_warning("class " + std::to_string(c) + (n_pos == 0 ? " has no" : " has only") +
                  " samples in the evaluation set; AUC left out of the macro average");
      continue;
    }
    r.roc[c] = roc_points(column, positive);
    r.auc_per_class[c] = auc(column, positive);
    sum += *r.auc_per_class[c];
    ++present;
  }
  r.auc_macro = present > 0 ? sum / present : std::numeric_limits<double>::quiet_NaN();
  return r;
}

EvalReport evaluate(const TrainedModel& model, const FeatureMatrix& matrix) {
  if (matrix.empty()) throw InputError("evaluation set is empty");
  return evaluate_scores(model.predict_scores(matrix), matrix.labels());
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::string out = "model,feature_kind,snr_db,auc_pct,accuracy_pct\n";
  for (const auto& r : rows) {
    out += r.model + "," + r.feature_kind + "," + (r.snr_db ? shortest(*r.snr_db) : std::string{}) + "," +
           format_percent(r.auc) + "," + format_percent(r.accuracy) + "\n";
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  detail::write_text_file(path.string(), report_csv(rows));
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : roc) out += shortest(p.fpr) + "," + shortest(p.tpr) + "\n";
  detail::write_text_file(path.string(), out);
}

std::string roc_svg(std::span<const RocPoint> roc, const std::string& title) {
  constexpr double size = 400.0;
  constexpr double margin = 50.0;
  auto px = [&](double f) { return margin + f * size; };
  auto py = [&](double t) { return margin + (1.0 - t) * size; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin << "\" height=\""
    << size + 2 * margin << "\">\n";
  s << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
    << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s << "<text x=\"" << px(v) << "\" y=\"" << py(0) + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << v
      << "</text>\n";
    s << "<text x=\"" << px(0) - 8 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  s << "<text x=\"" << px(0.5) << "\" y=\"" << size + 2 * margin - 8
    << "\" font-size=\"12\" text-anchor=\"middle\">false positive rate</text>\n";
  s << "<text x=\"14\" y=\"" << py(0.5) << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << py(0.5) << ")\">true positive rate</text>\n";
  std::string escaped;
  for (char c : title) {
    if (c == '<') escaped += "&lt;";
    else if (c == '>') escaped += "&gt;";
    else if (c == '&') escaped += "&amp;";
    else escaped += c;
  }
  s << "<text x=\"" << px(0.5) << "\" y=\"" << margin - 15 << "\" font-size=\"14\" text-anchor=\"middle\">"
    << escaped << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& p : roc) s << px(p.fpr) << "," << py(p.tpr) << " ";
  s << "\"/>\n</svg>\n";
  return s.str();
}

void write_roc_svg(const std::filesystem::path& path, std::span<const RocPoint> roc,
                   const std::string& title) {
  detail::write_text_file(path.string(), roc_svg(roc, title));
}

}  // namespace histofuse
