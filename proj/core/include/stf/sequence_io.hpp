#pragma once

#include <iosfwd>
#include <string>

#include "stf/sequence.hpp"

namespace stf::data {

// Native text format:
//   STFSEQ v1 C=<int> T=<int> N=<int> label=<int>
// followed by C*T lines of N space-separated decimal values (channel-major,
// then frame). Values are printed with enough digits to round-trip doubles
// bit-exactly.
SkeletonSequence parse_sequence_text(std::istream& in, const std::string& origin);
SkeletonSequence parse_sequence_file(const std::string& path);
void write_sequence_text(std::ostream& out, const SkeletonSequence& seq);
void write_sequence_file(const std::string& path, const SkeletonSequence& seq);

// Binary focus/ground-truth mask sidecar: T lines of N values in {0,1}.
std::vector<double> parse_mask_file(const std::string& path, int frames, int joints);
void write_mask_file(const std::string& path, const std::vector<double>& mask, int frames,
                     int joints);

// Convention for locating a sequence's ground-truth mask.
std::string mask_path_for(const std::string& sequence_path);

}  // namespace stf::data
