#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/explainer.hpp"
#include "gem/gnn.hpp"

namespace gem {

inline constexpr double kProbabilityFloor = 1e-6;

/// Clamps into [1e-6, 1 - 1e-6].
double clamp_probability(double p);

/// ln(p / (1 - p)) after clamping. NaN input is a NumericError.
double log_odds(double p);

/// log_odds(p_full) - log_odds(p_sub).
double log_odds_difference(double p_full, double p_sub);

/// Same quantity from the classifier, with the reference class's
/// probability on the full computation graph and on the explanation.
double log_odds_difference(const GnnModel& model, const ComputationGraph& cg, const ExplanationResult& result,
                           int reference_class);

struct EvalRecord {
  std::string origin;
  std::size_t K = 0;
  int reference_class = 0;  ///< prediction on the full computation graph
  int label = 0;
  int predicted_sub = 0;
  double p_full = 0.0;
  double p_sub = 0.0;
  bool correct = false;   ///< prediction on the explanation equals the label
  bool faithful = false;  ///< prediction on the explanation equals reference_class
  double delta_log_odds = 0.0;
  double inference_ms = 0.0;
};

EvalRecord evaluate_instance(const GnnModel& model, const ComputationGraph& cg, const ExplanationResult& result,
                             int label, double inference_ms = 0.0);

/// Fraction of explanations classified as their ground-truth label.
double explanation_accuracy(const GnnModel& model, std::span<const ExplanationResult> results,
                            std::span<const int> labels);

/// Fraction of explanations classified as the full computation graph is.
double fidelity(const GnnModel& model, std::span<const ExplanationResult> results,
                std::span<const ComputationGraph> cgs);

struct MotifScore {
  double precision = 0.0;
  double recall = 0.0;
};

struct MotifSummary {
  std::vector<MotifScore> per_instance;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
};

/// Compares selected edges with planted motif edges given in original node
/// indices (mapped through each result's subgraph).
MotifSummary motif_recovery(std::span<const ExplanationResult> results,
                            std::span<const std::vector<Edge>> motif_edges);

struct Histogram {
  std::vector<double> edges;  ///< bins + 1 boundaries
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, std::size_t bins);

struct TimingSummary {
  double mean_ms = 0.0;
  double median_ms = 0.0;
};

TimingSummary timing_summary(std::span<const double> ms);
double median(std::vector<double> values);

// CSV ------------------------------------------------------------------------

struct AccuracyRow {
  std::string dataset;
  std::string method;
  std::size_t K = 0;
  double accuracy = 0.0;
};

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

void write_accuracy_csv(const std::filesystem::path& path, std::span<const AccuracyRow> rows);
void write_log_odds_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
void write_timing_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);

}  // namespace gem
