#include "stf/sequence_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "stf/errors.hpp"

namespace stf::data {

namespace {

// Shortest decimal form that parses back to the same double.
void print_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

int parse_tagged_int(const std::string& tok, const std::string& tag, const std::string& origin,
                     int line_no) {
  if (tok.rfind(tag + "=", 0) != 0)
    throw ParseError(origin + ": expected '" + tag + "=<int>'", line_no);
  try {
    return std::stoi(tok.substr(tag.size() + 1));
  } catch (const std::exception&) {
    throw ParseError(origin + ": non-numeric value for '" + tag + "'", line_no);
  }
}

}  // namespace

SkeletonSequence parse_sequence_text(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(origin + ": malformed header, file is empty", 1);
  std::istringstream hs(line);
  std::string magic, version, ctok, ttok, ntok, ltok;
  if (!(hs >> magic >> version >> ctok >> ttok >> ntok >> ltok) || magic != "STFSEQ" ||
      version != "v1") {
    throw ParseError(origin + ": malformed header, expected 'STFSEQ v1 C=.. T=.. N=.. label=..'",
                     1);
  }
  const int c = parse_tagged_int(ctok, "C", origin, 1);
  const int t = parse_tagged_int(ttok, "T", origin, 1);
  const int n = parse_tagged_int(ntok, "N", origin, 1);
  const int label = parse_tagged_int(ltok, "label", origin, 1);
  if (c < 1 || t < 1 || n < 1)
    throw ParseError(origin + ": non-positive dimension in header", 1);

  SkeletonSequence seq = SkeletonSequence::zeros(c, t, n);
  seq.label = label;
  seq.source_id = origin;
  int line_no = 1;
  for (int row = 0; row < c * t; ++row) {
    if (!std::getline(in, line))
      throw ParseError(origin + ": expected " + std::to_string(c * t) + " value lines, got " +
                           std::to_string(row),
                       line_no);
    ++line_no;
    std::istringstream ls(line);
    for (int j = 0; j < n; ++j) {
      std::string tok;
      if (!(ls >> tok))
        throw ParseError(origin + ": expected " + std::to_string(n) + " values, got " +
                             std::to_string(j),
                         line_no);
      try {
        std::size_t used = 0;
        seq.values[static_cast<std::size_t>(row) * n + j] = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(origin + ": non-numeric token '" + tok + "'", line_no);
      }
    }
    std::string extra;
    if (ls >> extra)
      throw ParseError(origin + ": expected " + std::to_string(n) + " values, found more",
                       line_no);
  }
  return seq;
}

SkeletonSequence parse_sequence_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sequence file " + path);
  return parse_sequence_text(in, path);
}

void write_sequence_text(std::ostream& out, const SkeletonSequence& seq) {
  out << "STFSEQ v1 C=" << seq.channels << " T=" << seq.frames << " N=" << seq.joints
      << " label=" << seq.label << "\n";
  for (int row = 0; row < seq.channels * seq.frames; ++row) {
    for (int j = 0; j < seq.joints; ++j) {
      if (j) out << ' ';
      print_double(out, seq.values[static_cast<std::size_t>(row) * seq.joints + j]);
    }
    out << "\n";
  }
}

void write_sequence_file(const std::string& path, const SkeletonSequence& seq) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sequence file " + path);
  write_sequence_text(out, seq);
  if (!out) throw IoError("failed writing sequence file " + path);
}

std::vector<double> parse_mask_file(const std::string& path, int frames, int joints) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file " + path);
  std::vector<double> mask(static_cast<std::size_t>(frames) * joints, 0.0);
  std::string line;
  for (int t = 0; t < frames; ++t) {
    if (!std::getline(in, line))
      throw ParseError(path + ": expected " + std::to_string(frames) + " rows", t + 1);
    std::istringstream ls(line);
    for (int j = 0; j < joints; ++j) {
      double v;
      if (!(ls >> v))
        throw ParseError(path + ": expected " + std::to_string(joints) + " values", t + 1);
      mask[static_cast<std::size_t>(t) * joints + j] = v;
    }
  }
  return mask;
}

void write_mask_file(const std::string& path, const std::vector<double>& mask, int frames,
                     int joints) {
  if (mask.size() != static_cast<std::size_t>(frames) * joints)
    throw ValueError("write_mask_file: mask size does not match dimensions");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mask file " + path);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < joints; ++j) {
      if (j) out << ' ';
      out << (mask[static_cast<std::size_t>(t) * joints + j] != 0.0 ? 1 : 0);
    }
    out << "\n";
  }
}

std::string mask_path_for(const std::string& sequence_path) {
  const auto dot = sequence_path.find_last_of('.');
  const auto slash = sequence_path.find_last_of("/\\");
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return sequence_path + ".mask";
  return sequence_path.substr(0, dot) + ".mask";
}

}  // namespace stf::data
