#include "nlprompt/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace nlprompt {

const char* kMetricsCsvHeader =
    "epoch,mode,noise_rate,seed,train_loss,test_acc,purif_acc,purif_f1,"
    "ot_seconds,step_seconds";

namespace {

const char* kCsvColumns[10] = {"epoch",      "mode",     "noise_rate",
                               "seed",       "train_loss", "test_acc",
                               "purif_acc",  "purif_f1", "ot_seconds",
                               "step_seconds"};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ValidationError("write failed: " + path.string());
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

double parse_double(const std::string& field, const std::string& context) {
  if (field == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (field == "inf") return std::numeric_limits<double>::infinity();
  if (field == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(field, &used);
  } catch (const std::exception&) {
    throw ValidationError("metrics csv: bad number in " + context + ": '" +
                          field + "'");
  }
  if (used != field.size())
    throw ValidationError("metrics csv: trailing junk in " + context + ": '" +
                          field + "'");
  return value;
}

long parse_integer(const std::string& field, const std::string& context) {
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(field, &used);
  } catch (const std::exception&) {
    throw ValidationError("metrics csv: bad integer in " + context + ": '" +
                          field + "'");
  }
  if (used != field.size())
    throw ValidationError("metrics csv: trailing junk in " + context + ": '" +
                          field + "'");
  return value;
}

struct SeriesKey {
  std::string mode;
  double rate;
  bool operator<(const SeriesKey& other) const {
    if (mode != other.mode) return mode < other.mode;
    return rate < other.rate;
  }
};

std::string svg_color(const std::string& mode) {
  if (mode == "nlprompt") return "#1f77b4";
  if (mode == "ce") return "#d62728";
  if (mode == "mae") return "#2ca02c";
  if (mode == "gce") return "#9467bd";
  return "#7f7f7f";
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string format_g6(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string render_csv(const std::vector<MetricsRecord>& records) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    out += ',';
    out += r.mode;
    out += ',';
    out += format_g6(r.noise_rate);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += format_g6(r.train_loss);
    out += ',';
    out += format_g6(r.test_acc);
    out += ',';
    out += format_g6(r.purif_acc);
    out += ',';
    out += format_g6(r.purif_f1);
    out += ',';
    out += format_g6(r.ot_seconds);
    out += ',';
    out += format_g6(r.step_seconds);
    out += '\n';
  }
  return out;
}

std::string render_json_lines(const std::vector<MetricsRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"mode", r.mode},
                     {"noise_rate", r.noise_rate},
                     {"seed", r.seed},
                     {"train_loss", r.train_loss},
                     {"test_acc", r.test_acc},
                     {"purif_acc", r.purif_acc},
                     {"purif_f1", r.purif_f1},
                     {"ot_seconds", r.ot_seconds},
                     {"step_seconds", r.step_seconds},
                     {"pseudo_histogram", r.pseudo_histogram}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string render_svg(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw ValidationError("render_svg: no records");

  std::set<double> rates;
  for (const auto& r : records) rates.insert(r.noise_rate);
  const bool sweep = rates.size() > 1;

  // Series points: accuracy vs noise rate (final epoch, seed-averaged) for
  // sweeps, otherwise accuracy vs epoch (seed-averaged).
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  if (sweep) {
    std::map<SeriesKey, std::map<std::uint64_t, MetricsRecord>> finals;
    for (const auto& r : records) {
      auto& slot = finals[{r.mode, r.noise_rate}][r.seed];
      if (slot.mode.empty() || r.epoch >= slot.epoch) slot = r;
    }
    for (const auto& [key, by_seed] : finals) {
      double sum = 0.0;
      for (const auto& [seed, rec] : by_seed) sum += rec.test_acc;
      series[key.mode].emplace_back(key.rate,
                                    sum / static_cast<double>(by_seed.size()));
    }
  } else {
    std::map<std::string, std::map<int, std::pair<double, int>>> acc;
    for (const auto& r : records) {
      auto& slot = acc[r.mode][r.epoch];
      slot.first += r.test_acc;
      slot.second += 1;
    }
    for (const auto& [mode, by_epoch] : acc)
      for (const auto& [epoch, sum_count] : by_epoch)
        series[mode].emplace_back(static_cast<double>(epoch),
                                  sum_count.first / sum_count.second);
  }

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  for (const auto& [mode, pts] : series) {
    for (const auto& [x, y] : pts) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (x_max <= x_min) x_max = x_min + 1.0;

  const double width = 640, height = 420;
  const double left = 60, right = 620, top = 40, bottom = 380;
  auto sx = [&](double x) {
    return left + (x - x_min) / (x_max - x_min) * (right - left);
  };
  auto sy = [&](double y) { return bottom - y * (bottom - top); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << (width / 2)
      << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">test accuracy vs "
      << (sweep ? "noise rate" : "epoch") << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right
      << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << bottom << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i * 0.25;
    svg << "<line x1=\"" << (left - 4) << "\" y1=\"" << fmt2(sy(y))
        << "\" x2=\"" << left << "\" y2=\"" << fmt2(sy(y))
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (left - 8) << "\" y=\"" << fmt2(sy(y) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << fmt2(y) << "</text>\n";
  }
  const int x_ticks = sweep ? static_cast<int>(rates.size()) - 1 : 5;
  for (int i = 0; i <= std::max(1, x_ticks); ++i) {
    double x;
    if (sweep) {
      auto it = rates.begin();
      std::advance(it, std::min<std::size_t>(i, rates.size() - 1));
      x = *it;
    } else {
      x = x_min + (x_max - x_min) * i / std::max(1, x_ticks);
    }
    svg << "<line x1=\"" << fmt2(sx(x)) << "\" y1=\"" << bottom << "\" x2=\""
        << fmt2(sx(x)) << "\" y2=\"" << (bottom + 4)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt2(sx(x)) << "\" y=\"" << (bottom + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << format_g6(x) << "</text>\n";
  }

  int legend_row = 0;
  for (auto& [mode, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const std::string color = svg_color(mode);
    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts)
      svg << fmt2(sx(x)) << "," << fmt2(sy(y)) << " ";
    svg << "\"/>\n";
    for (const auto& [x, y] : pts)
      svg << "<circle cx=\"" << fmt2(sx(x)) << "\" cy=\"" << fmt2(sy(y))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 14 * legend_row++;
    svg << "<rect x=\"" << (right - 110) << "\" y=\"" << fmt2(ly - 8)
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << (right - 95) << "\" y=\"" << fmt2(ly + 1)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << mode
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const std::vector<MetricsRecord>& records,
                 const std::filesystem::path& path, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv:
      write_text(path, render_csv(records));
      return;
    case ReportFormat::json_lines:
      write_text(path, render_json_lines(records));
      return;
    case ReportFormat::svg_plot:
      write_text(path, render_svg(records));
      return;
  }
  throw ValidationError("emit_report: unknown format");
}

std::vector<MetricsRecord> parse_csv(const std::filesystem::path& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines[0] != kMetricsCsvHeader)
    throw ValidationError("metrics csv: bad or missing header in " +
                          path.string());

  std::vector<MetricsRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != 10)
      throw ValidationError("metrics csv: line " + std::to_string(i + 1) +
                            " has " + std::to_string(fields.size()) +
                            " fields, expected 10");
    const std::string ctx = "line " + std::to_string(i + 1);
    MetricsRecord r;
    r.epoch = static_cast<int>(parse_integer(fields[0], ctx));
    r.mode = fields[1];
    r.noise_rate = parse_double(fields[2], ctx);
    r.seed = static_cast<std::uint64_t>(parse_integer(fields[3], ctx));
    r.train_loss = parse_double(fields[4], ctx);
    r.test_acc = parse_double(fields[5], ctx);
    r.purif_acc = parse_double(fields[6], ctx);
    r.purif_f1 = parse_double(fields[7], ctx);
    r.ot_seconds = parse_double(fields[8], ctx);
    r.step_seconds = parse_double(fields[9], ctx);
    records.push_back(std::move(r));
  }
  return records;
}

std::string compare_csv_ignoring_timing(const std::filesystem::path& left,
                                        const std::filesystem::path& right) {
  const auto a = read_lines(left);
  const auto b = read_lines(right);
  if (a.size() != b.size())
    return "line counts differ: " + std::to_string(a.size()) + " vs " +
           std::to_string(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i == 0) {
      if (a[0] != b[0]) return "headers differ";
      continue;
    }
    const auto fa = split_fields(a[i]);
    const auto fb = split_fields(b[i]);
    if (fa.size() != fb.size())
      return "line " + std::to_string(i + 1) + ": field counts differ";
    for (std::size_t k = 0; k < fa.size(); ++k) {
      if (k == 8 || k == 9) continue;  // wall-clock columns
      if (fa[k] != fb[k])
        return "line " + std::to_string(i + 1) + ", column " +
               kCsvColumns[std::min<std::size_t>(k, 9)] + ": '" + fa[k] +
               "' vs '" + fb[k] + "'";
    }
  }
  return "";
}

}  // namespace nlprompt
