#include "gem/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "gem/error.hpp"

namespace gem {

double clamp_probability(double p) {
  if (std::isnan(p)) throw NumericError("probability is NaN");
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

double log_odds(double p) {
  const double q = clamp_probability(p);
  return std::log(q / (1.0 - q));
}

double log_odds_difference(double p_full, double p_sub) { return log_odds(p_full) - log_odds(p_sub); }

double log_odds_difference(const GnnModel& model, const ComputationGraph& cg, const ExplanationResult& result,
                           int reference_class) {
  if (reference_class < 0 || reference_class >= model.num_classes) {
    throw InputError("reference class out of range");
  }
  const auto c = static_cast<std::size_t>(reference_class);
  const double p_full = predict(model, cg).probabilities[c];
  const double p_sub = predict(model, result.subgraph).probabilities[c];
  return log_odds_difference(p_full, p_sub);
}

EvalRecord evaluate_instance(const GnnModel& model, const ComputationGraph& cg, const ExplanationResult& result,
                             int label, double inference_ms) {
  const Prediction full = predict(model, cg);
  const Prediction sub = predict(model, result.subgraph);
  EvalRecord r;
  r.origin = cg.origin;
  r.K = result.K;
  r.reference_class = full.predicted_class;
  r.label = label;
  r.predicted_sub = sub.predicted_class;
  const auto c = static_cast<std::size_t>(r.reference_class);
  r.p_full = clamp_probability(full.probabilities[c]);
  r.p_sub = clamp_probability(sub.probabilities[c]);
  r.correct = sub.predicted_class == label;
  r.faithful = sub.predicted_class == full.predicted_class;
  r.delta_log_odds = log_odds_difference(full.probabilities[c], sub.probabilities[c]);
  r.inference_ms = inference_ms;
  return r;
}

double explanation_accuracy(const GnnModel& model, std::span<const ExplanationResult> results,
                            std::span<const int> labels) {
  if (results.empty()) throw InputError("no explanations to score");
  if (results.size() != labels.size()) throw InputError("one label per explanation expected");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    correct += predict(model, results[i].subgraph).predicted_class == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(results.size());
}

double fidelity(const GnnModel& model, std::span<const ExplanationResult> results,
                std::span<const ComputationGraph> cgs) {
  if (results.empty()) throw InputError("no explanations to score");
  if (results.size() != cgs.size()) throw InputError("one computation graph per explanation expected");
  std::size_t same = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    same += predict(model, results[i].subgraph).predicted_class == predict(model, cgs[i]).predicted_class ? 1 : 0;
  }
  return static_cast<double>(same) / static_cast<double>(results.size());
}

MotifSummary motif_recovery(std::span<const ExplanationResult> results,
                            std::span<const std::vector<Edge>> motif_edges) {
  if (results.size() != motif_edges.size()) throw InputError("motif ground truth missing for some instances");
  MotifSummary out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (motif_edges[i].empty()) throw InputError("instance " + results[i].origin + " has no motif ground truth");
    const std::set<Edge> motif(motif_edges[i].begin(), motif_edges[i].end());
    const auto& nodes = results[i].subgraph.nodes;
    std::size_t hits = 0;
    for (const auto& s : results[i].selected) {
      hits += motif.count(make_edge(nodes.at(s.edge.u), nodes.at(s.edge.v)));
    }
    MotifScore score;
    const auto selected = results[i].selected.size();
    score.precision = selected == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(selected);
    score.recall = static_cast<double>(hits) / static_cast<double>(motif.size());
    out.mean_precision += score.precision;
    out.mean_recall += score.recall;
    out.per_instance.push_back(score);
  }
  if (!results.empty()) {
    out.mean_precision /= static_cast<double>(results.size());
    out.mean_recall /= static_cast<double>(results.size());
  }
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw InputError("histogram of nothing");
  if (bins < 1) throw InputError("histogram needs at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 0.0;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InputError("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

TimingSummary timing_summary(std::span<const double> ms) {
  if (ms.empty()) throw InputError("no timings");
  TimingSummary t;
  for (double v : ms) t.mean_ms += v;
  t.mean_ms /= static_cast<double>(ms.size());
  t.median_ms = median({ms.begin(), ms.end()});
  return t;
}

// CSV ------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_accuracy_csv(const std::filesystem::path& path, std::span<const AccuracyRow> rows) {
  auto out = open_csv(path);
  out << "dataset,method,K,accuracy\n";
  for (const auto& r : rows) out << r.dataset << ',' << r.method << ',' << r.K << ',' << format_double(r.accuracy) << '\n';
}

void write_log_odds_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  auto out = open_csv(path);
  out << "origin,delta\n";
  for (const auto& r : records) out << r.origin << ',' << format_double(r.delta_log_odds) << '\n';
}

void write_timing_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  auto out = open_csv(path);
  out << "origin,ms\n";
  for (const auto& r : records) out << r.origin << ',' << format_double(r.inference_ms) << '\n';
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  auto out = open_csv(path);
  out << "lo,hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
}

}  // namespace gem
