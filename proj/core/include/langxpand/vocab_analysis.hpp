#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/corpus.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand {

struct ComplexityPoint {
  std::size_t vocab_add = 0;
  double ric = 1.0;  // tokens under merged(base, top-V addon) / tokens under base
  double rec = 1.0;  // (n0 + V) / n0
};

struct CurveBaseline {
  std::string base_tokenizer;
  std::string corpus;
  std::size_t n0 = 0;
  std::size_t hidden = 0;  // informational; rec does not depend on it
  std::size_t base_tokens = 0;
};

struct ComplexityCurve {
  CurveBaseline baseline;
  std::vector<ComplexityPoint> points;  // strictly increasing vocab_add

  nlohmann::ordered_json to_json() const;
};

double relative_embedding_complexity(std::size_t n0, std::size_t vocab_add);

// Total encode length of every document, without BOS/EOS.
std::size_t count_tokens(const TokenizerModel& model, std::span<const Document> docs);

// Sweeps nested top-V prefixes of the novel addon pieces. V = 0 is always
// included; sizes are deduplicated and sorted.
ComplexityCurve relative_input_complexity(const TokenizerModel& base, const TokenizerModel& addon,
                                          std::span<const std::size_t> sizes, std::span<const Document> docs);

// A published (vocab_add, ric, rec) row kept for side-by-side plots.
struct ReferencePoint {
  std::size_t vocab_add = 0;
  double ric = 0.0;
  double rec = 0.0;
};

// CSV with header `vocab_add,ric,rec`. Non-numeric cells raise DataError
// naming the data row.
std::vector<ReferencePoint> parse_reference_csv(std::istream& in);
std::vector<ReferencePoint> read_reference_csv(const std::filesystem::path& path);

struct VocabOverlap {
  std::size_t shared = 0;
  std::size_t base_only = 0;
  std::size_t addon_only = 0;

  nlohmann::ordered_json to_json() const;
};

// Set comparison of normal-piece texts.
VocabOverlap vocab_overlap(const TokenizerModel& base, const TokenizerModel& addon);

std::string curve_csv(const ComplexityCurve& curve, std::span<const ReferencePoint> reference = {});
std::string curve_svg(const ComplexityCurve& curve, std::span<const ReferencePoint> reference = {});

struct CurveReportPaths {
  std::filesystem::path csv;
  std::filesystem::path svg;
  std::filesystem::path curve_json;
  std::optional<std::filesystem::path> overlap_json;
};

// Writes curve.csv, curve.svg, curve.json and (if given) overlap.json into dir.
CurveReportPaths emit_curve_report(const std::filesystem::path& dir, const ComplexityCurve& curve,
                                   std::span<const ReferencePoint> reference = {},
                                   const std::optional<VocabOverlap>& overlap = std::nullopt);

}  // namespace langxpand
