#include "r1t/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "r1t/errors.hpp"

namespace r1t {

namespace {

std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '\t') c = '_';
  return s;
}

std::string flat_text(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

double parse_double_field(const std::string& s, size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw FormatError(msg("metrics csv line ", line_no, ": bad value '", s, "'"));
  return v;
}

}  // namespace

std::vector<MetricRow> metric_table(
    const std::string& model_name, const std::string& mode,
    const std::vector<std::pair<std::string, std::string>>& ref_hyp) {
  if (ref_hyp.empty()) throw ContractError("metric table needs at least one sentence pair");

  std::vector<TokenizedPair> pairs;
  pairs.reserve(ref_hyp.size());
  for (const auto& [ref, hyp] : ref_hyp)
    pairs.push_back({split_punct_tokens(ref), split_punct_tokens(hyp)});

  std::vector<MetricRow> rows;
  const auto add = [&](const std::string& metric, const std::string& sub, double value) {
    rows.push_back({model_name, mode, metric, sub, value});
  };

  for (int n = 1; n <= 4; ++n) add("bleu", std::to_string(n), bleu_n(pairs, n));

  const auto add_rouge = [&](const std::string& name, RougeScore (*score)(const TokenizedPair&)) {
    RougeScore sum;
    for (const auto& p : pairs) {
      const RougeScore s = score(p);
      sum.p += s.p;
      sum.r += s.r;
      sum.f += s.f;
    }
    const double n = static_cast<double>(pairs.size());
    add(name, "p", sum.p / n);
    add(name, "r", sum.r / n);
    add(name, "f", sum.f / n);
  };
  add_rouge("rouge1", [](const TokenizedPair& p) { return rouge_n(p, 1); });
  add_rouge("rouge2", [](const TokenizedPair& p) { return rouge_n(p, 2); });
  add_rouge("rougeL", [](const TokenizedPair& p) { return rouge_l(p); });

  add("corpus_bleu", "", corpus_bleu_sacre_style(ref_hyp));
  add("wer", "", corpus_wer(pairs));
  add("cer", "", corpus_cer(ref_hyp));
  return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
  os << "model,mode,metric,submetric,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    os << sanitize_field(r.model) << ',' << sanitize_field(r.mode) << ','
       << sanitize_field(r.metric) << ',' << sanitize_field(r.submetric) << ',' << buf << '\n';
  }
  if (!os) throw FileError(msg("failed writing metrics to '", path, "'"));
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FileError(msg("cannot open '", path, "'"));
  std::vector<MetricRow> rows;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "model,mode,metric,submetric,value")
        throw FormatError(msg("metrics csv line 1: unexpected header '", line, "'"));
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 5)
      throw FormatError(msg("metrics csv line ", line_no, ": expected 5 fields, got ",
                            fields.size()));
    rows.push_back({fields[0], fields[1], fields[2], fields[3],
                    parse_double_field(fields[4], line_no)});
  }
  return rows;
}

void write_generations_tsv(const std::string& path, const std::vector<GenerationTriple>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
  os << "sentence_id\ttarget\tpredicted_tf\tpredicted_free\n";
  for (const auto& r : rows)
    os << flat_text(r.sentence_id) << '\t' << flat_text(r.target) << '\t' << flat_text(r.tf_text)
       << '\t' << flat_text(r.free_text) << '\n';
  if (!os) throw FileError(msg("failed writing generations to '", path, "'"));
}

std::vector<ReportRow> aggregate_metrics(const std::vector<std::vector<MetricRow>>& runs) {
  std::vector<ReportRow> out;
  std::vector<std::vector<double>> samples;
  std::unordered_map<std::string, size_t> index;
  for (const auto& run : runs) {
    for (const auto& r : run) {
      const std::string key = r.mode + '\x1f' + r.metric + '\x1f' + r.submetric;
      auto [it, fresh] = index.emplace(key, out.size());
      if (fresh) {
        out.push_back({r.mode, r.metric, r.submetric, 0, 0, 0});
        samples.emplace_back();
      }
      samples[it->second].push_back(r.value);
    }
  }
  for (size_t i = 0; i < out.size(); ++i) {
    const auto& xs = samples[i];
    const double n = static_cast<double>(xs.size());
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    out[i].mean = mean;
    out[i].sem = xs.size() > 1 ? std::sqrt(var / (n - 1)) / std::sqrt(n) : 0;
    out[i].n = static_cast<int>(xs.size());
  }
  return out;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
  os << "mode,metric,submetric,mean,sem,n\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d", r.mean, r.sem, r.n);
    os << sanitize_field(r.mode) << ',' << sanitize_field(r.metric) << ','
       << sanitize_field(r.submetric) << ',' << buf << '\n';
  }
  if (!os) throw FileError(msg("failed writing report to '", path, "'"));
}

std::vector<std::string> write_report_svgs(const std::string& dir,
                                           const std::vector<ReportRow>& rows) {
  // group by metric, keeping first-appearance order
  std::vector<std::string> metrics;
  std::unordered_map<std::string, std::vector<const ReportRow*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.metric)) metrics.push_back(r.metric);
    groups[r.metric].push_back(&r);
  }

  std::vector<std::string> written;
  for (const auto& metric : metrics) {
    const auto& cells = groups[metric];
    const int n = static_cast<int>(cells.size());
    const int margin_l = 64, bar_w = 46, gap = 22, plot_h = 220, base_y = 270;
    const int width = margin_l + n * (bar_w + gap) + 30;
    const int height = 320;

    double top = 0;
    for (const auto* c : cells) top = std::max(top, c->mean + c->sem);
    if (top <= 0) top = 1;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<style>text{font-family:sans-serif;font-size:12px}</style>\n";
    svg << "<text x=\"" << margin_l << "\" y=\"24\" font-size=\"16\">" << metric
        << " (mean &#177; SEM)</text>\n";
    // axis and ticks
    svg << "<line x1=\"" << margin_l - 8 << "\" y1=\"" << base_y << "\" x2=\"" << width - 16
        << "\" y2=\"" << base_y << "\" stroke=\"#444\"/>\n";
    char num[48];
    for (int tick = 0; tick <= 2; ++tick) {
      const double val = top * tick / 2.0;
      const int y = base_y - static_cast<int>(plot_h * tick / 2.0);
      std::snprintf(num, sizeof(num), "%.3g", val);
      svg << "<line x1=\"" << margin_l - 12 << "\" y1=\"" << y << "\" x2=\"" << margin_l - 4
          << "\" y2=\"" << y << "\" stroke=\"#444\"/>\n";
      svg << "<text x=\"4\" y=\"" << y + 4 << "\">" << num << "</text>\n";
    }
    for (int i = 0; i < n; ++i) {
      const ReportRow& c = *cells[static_cast<size_t>(i)];
      const int x = margin_l + i * (bar_w + gap);
      const double frac = std::max(0.0, c.mean) / top;
      const int h = static_cast<int>(plot_h * std::min(1.0, frac));
      const char* fill = c.mode == "tf" ? "#4878a8" : (c.mode == "free" ? "#a85f48" : "#888888");
      svg << "<rect x=\"" << x << "\" y=\"" << base_y - h << "\" width=\"" << bar_w
          << "\" height=\"" << h << "\" fill=\"" << fill << "\"/>\n";
      if (c.sem > 0) {
        const int cx = x + bar_w / 2;
        const int y_lo = base_y - static_cast<int>(plot_h * std::min(1.0, std::max(0.0, c.mean - c.sem) / top));
        const int y_hi = base_y - static_cast<int>(plot_h * std::min(1.0, std::max(0.0, c.mean + c.sem) / top));
        svg << "<line x1=\"" << cx << "\" y1=\"" << y_lo << "\" x2=\"" << cx << "\" y2=\"" << y_hi
            << "\" stroke=\"#222\"/>\n";
        svg << "<line x1=\"" << cx - 6 << "\" y1=\"" << y_hi << "\" x2=\"" << cx + 6 << "\" y2=\""
            << y_hi << "\" stroke=\"#222\"/>\n";
        svg << "<line x1=\"" << cx - 6 << "\" y1=\"" << y_lo << "\" x2=\"" << cx + 6 << "\" y2=\""
            << y_lo << "\" stroke=\"#222\"/>\n";
      }
      std::snprintf(num, sizeof(num), "%.3g", c.mean);
      svg << "<text x=\"" << x << "\" y=\"" << base_y - h - 6 << "\">" << num << "</text>\n";
      const std::string label = c.submetric.empty() ? c.mode : c.mode + " " + c.submetric;
      svg << "<text x=\"" << x << "\" y=\"" << base_y + 16 << "\">" << label << "</text>\n";
    }
    svg << "</svg>\n";

    const std::string path = dir + "/report_" + metric + ".svg";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
    os << svg.str();
    if (!os) throw FileError(msg("failed writing '", path, "'"));
    written.push_back(path);
  }
  return written;
}

}  // namespace r1t
