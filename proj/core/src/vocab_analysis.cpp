#include "langxpand/vocab_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "langxpand/error.hpp"
#include "langxpand/parallel.hpp"

namespace langxpand {
namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

double parse_cell(const std::string& cell, std::size_t row, const char* column) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  const bool blank = cell.find_first_not_of(" \t\r") == std::string::npos;
  while (end && (*end == ' ' || *end == '\t' || *end == '\r')) ++end;
  if (blank || end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw DataError("reference CSV row " + std::to_string(row) + ": non-numeric " + column + " cell '" + cell + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

nlohmann::ordered_json ComplexityCurve::to_json() const {
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : points) pts.push_back({{"vocab_add", p.vocab_add}, {"ric", p.ric}, {"rec", p.rec}});
  return {{"baseline",
           {{"base_tokenizer", baseline.base_tokenizer},
            {"corpus", baseline.corpus},
            {"n0", baseline.n0},
            {"hidden", baseline.hidden},
            {"base_tokens", baseline.base_tokens}}},
          {"points", pts}};
}

double relative_embedding_complexity(std::size_t n0, std::size_t vocab_add) {
  if (n0 == 0) throw UsageError("base vocabulary size must be positive");
  return static_cast<double>(n0 + vocab_add) / static_cast<double>(n0);
}

std::size_t count_tokens(const TokenizerModel& model, std::span<const Document> docs) {
  constexpr std::size_t kChunks = 64;
  std::vector<std::size_t> partial(kChunks, 0);
  parallel_chunks(docs.size(), kChunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    std::size_t n = 0;
    for (std::size_t i = b; i < e; ++i) n += model.encode(docs[i].text).size();
    partial[c] = n;
  });
  std::size_t total = 0;
  for (auto n : partial) total += n;
  return total;
}

ComplexityCurve relative_input_complexity(const TokenizerModel& base, const TokenizerModel& addon,
                                          std::span<const std::size_t> sizes, std::span<const Document> docs) {
  if (docs.empty()) throw DataError("vocabulary analysis needs a non-empty corpus");
  const std::size_t novel = novel_pieces(base, addon).size();
  std::set<std::size_t> sweep{0};
  for (auto v : sizes) {
    if (v > novel) {
      throw UsageError("vocab size " + std::to_string(v) + " exceeds the " + std::to_string(novel) +
                       " novel addon pieces");
    }
    sweep.insert(v);
  }
  ComplexityCurve curve;
  curve.baseline.n0 = base.size();
  const std::size_t base_tokens = count_tokens(base, docs);
  if (base_tokens == 0) throw DataError("corpus encodes to zero tokens");
  curve.baseline.base_tokens = base_tokens;
  for (auto v : sweep) {
    ComplexityPoint p;
    p.vocab_add = v;
    if (v > 0) {
      const auto merged = merge_vocab(base, addon, v);
      p.ric = static_cast<double>(count_tokens(merged, docs)) / static_cast<double>(base_tokens);
    }
    p.rec = relative_embedding_complexity(curve.baseline.n0, v);
    curve.points.push_back(p);
  }
  return curve;
}

std::vector<ReferencePoint> parse_reference_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("reference CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "vocab_add" || header[1] != "ric" || header[2] != "rec") {
    throw DataError("reference CSV header must start with vocab_add,ric,rec");
  }
  std::vector<ReferencePoint> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() < 3) throw DataError("reference CSV row " + std::to_string(row) + ": expected 3 cells");
    const double v = parse_cell(cells[0], row, "vocab_add");
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw DataError("reference CSV row " + std::to_string(row) + ": vocab_add must be a non-negative integer");
    }
    out.push_back({static_cast<std::size_t>(v), parse_cell(cells[1], row, "ric"), parse_cell(cells[2], row, "rec")});
  }
  return out;
}

std::vector<ReferencePoint> read_reference_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_reference_csv(in);
}

nlohmann::ordered_json VocabOverlap::to_json() const {
  return {{"shared", shared}, {"base_only", base_only}, {"addon_only", addon_only}};
}

VocabOverlap vocab_overlap(const TokenizerModel& base, const TokenizerModel& addon) {
  auto normal_set = [](const TokenizerModel& m) {
    std::set<std::string> s;
    for (const auto& p : m.pieces()) {
      if (p.kind == PieceKind::Normal) s.insert(p.text);
    }
    return s;
  };
  const auto a = normal_set(base);
  const auto b = normal_set(addon);
  VocabOverlap o;
  for (const auto& t : a) o.shared += b.count(t);
  o.base_only = a.size() - o.shared;
  o.addon_only = b.size() - o.shared;
  return o;
}

std::string curve_csv(const ComplexityCurve& curve, std::span<const ReferencePoint> reference) {
  const bool with_ref = !reference.empty();
  std::map<std::size_t, std::pair<const ComplexityPoint*, const ReferencePoint*>> rows;
  for (const auto& p : curve.points) rows[p.vocab_add].first = &p;
  for (const auto& r : reference) rows[r.vocab_add].second = &r;
  std::string out = with_ref ? "vocab_add,ric,rec,reference_ric,reference_rec\n" : "vocab_add,ric,rec\n";
  for (const auto& [v, pr] : rows) {
    if (!with_ref && pr.first == nullptr) continue;
    out += std::to_string(v);
    out += ',';
    if (pr.first) out += num(pr.first->ric) + "," + num(pr.first->rec);
    else out += ",";
    if (with_ref) {
      out += ',';
      if (pr.second) out += num(pr.second->ric) + "," + num(pr.second->rec);
      else out += ",";
    }
    out += '\n';
  }
  return out;
}

std::string curve_svg(const ComplexityCurve& curve, std::span<const ReferencePoint> reference) {
  constexpr double W = 720, H = 440, L = 70, R = 170, T = 30, B = 50;
  double xmax = 1, ymin = 1, ymax = 1;
  for (const auto& p : curve.points) {
    xmax = std::max(xmax, static_cast<double>(p.vocab_add));
    ymin = std::min({ymin, p.ric, p.rec});
    ymax = std::max({ymax, p.ric, p.rec});
  }
  for (const auto& r : reference) {
    xmax = std::max(xmax, static_cast<double>(r.vocab_add));
    ymin = std::min({ymin, r.ric, r.rec});
    ymax = std::max({ymax, r.ric, r.rec});
  }
  ymin = std::max(0.0, ymin - 0.05);
  ymax += 0.05;
  auto sx = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto sy = [&](double y) { return H - B - (H - T - B) * (y - ymin) / (ymax - ymin); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmax * i / 5, yv = ymin + (ymax - ymin) * i / 5;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << num(std::round(yv * 100) / 100)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">appended vocabulary</text>\n";

  auto polyline = [&](const std::vector<std::pair<double, double>>& pts, const char* color, bool dashed) {
    if (pts.empty()) return;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"6,4\"" : "")
       << " points=\"";
    for (const auto& [x, y] : pts) os << sx(x) << ',' << sy(y) << ' ';
    os << "\"/>\n";
  };
  std::vector<std::pair<double, double>> ric, rec, pric, prec;
  for (const auto& p : curve.points) {
    ric.emplace_back(static_cast<double>(p.vocab_add), p.ric);
    rec.emplace_back(static_cast<double>(p.vocab_add), p.rec);
  }
  for (const auto& r : reference) {
    pric.emplace_back(static_cast<double>(r.vocab_add), r.ric);
    prec.emplace_back(static_cast<double>(r.vocab_add), r.rec);
  }
  polyline(ric, "#1f77b4", false);
  polyline(rec, "#d62728", false);
  polyline(pric, "#1f77b4", true);
  polyline(prec, "#d62728", true);

  struct Entry {
    const char* label;
    const char* color;
    bool dashed;
  };
  std::vector<Entry> legend{{"input complexity", "#1f77b4", false}, {"embedding complexity", "#d62728", false}};
  if (!reference.empty()) {
    legend.push_back({"reference input", "#1f77b4", true});
    legend.push_back({"reference embedding", "#d62728", true});
  }
  double ly = T + 10;
  for (const auto& e : legend) {
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 35 << "\" y2=\"" << ly << "\" stroke=\""
       << e.color << "\" stroke-width=\"2\"" << (e.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
    os << "<text x=\"" << W - R + 40 << "\" y=\"" << ly + 4 << "\">" << e.label << "</text>\n";
    ly += 18;
  }
  os << "</svg>\n";
  return os.str();
}

CurveReportPaths emit_curve_report(const std::filesystem::path& dir, const ComplexityCurve& curve,
                                   std::span<const ReferencePoint> reference, const std::optional<VocabOverlap>& overlap) {
  if (curve.points.empty()) throw UsageError("cannot report an empty curve");
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << s;
  };
  CurveReportPaths paths{dir / "curve.csv", dir / "curve.svg", dir / "curve.json", std::nullopt};
  write(paths.csv, curve_csv(curve, reference));
  write(paths.svg, curve_svg(curve, reference));
  write(paths.curve_json, curve.to_json().dump(2) + "\n");
  if (overlap) {
    paths.overlap_json = dir / "overlap.json";
    write(*paths.overlap_json, overlap->to_json().dump(2) + "\n");
  }
  return paths;
}

}  // namespace langxpand
