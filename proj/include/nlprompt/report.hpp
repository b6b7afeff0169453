#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nlprompt/train.hpp"

namespace nlprompt {

enum class ReportFormat { csv, json_lines, svg_plot };

/// Canonical float formatting for reports: %.6g, with "nan"/"inf" spelled
/// out. Parsing and re-emitting a report is byte-identical.
std::string format_g6(double value);

/// Pinned CSV header: epoch,mode,noise_rate,seed,train_loss,test_acc,
/// purif_acc,purif_f1,ot_seconds,step_seconds.
extern const char* kMetricsCsvHeader;

std::string render_csv(const std::vector<MetricsRecord>& records);
std::string render_json_lines(const std::vector<MetricsRecord>& records);
std::string render_svg(const std::vector<MetricsRecord>& records);

void emit_report(const std::vector<MetricsRecord>& records,
                 const std::filesystem::path& path, ReportFormat format);

/// Strict parse of the pinned CSV schema (exact header, field count, numeric
/// fields); the pseudo-label histogram lives only in the JSONL stream.
std::vector<MetricsRecord> parse_csv(const std::filesystem::path& path);

/// Byte comparison of two metrics CSV files with the wall-clock columns
/// (ot_seconds, step_seconds) masked out. Returns a human-readable
/// description of the first difference, or an empty string when equal.
std::string compare_csv_ignoring_timing(const std::filesystem::path& left,
                                        const std::filesystem::path& right);

}  // namespace nlprompt
