#include "stf/sequence.hpp"

#include <cmath>

#include "stf/errors.hpp"

namespace stf::data {

SkeletonSequence preprocess(const SkeletonSequence& raw, int center_joint,
                            std::pair<int, int> height_pair, int coord_channels) {
  if (coord_channels < 1 || coord_channels > raw.channels)
    throw ValueError("preprocess: coordinate channel count " + std::to_string(coord_channels) +
                     " invalid for input with " + std::to_string(raw.channels) + " channels");
  auto check_joint = [&](int j, const char* what) {
    if (j < 0 || j >= raw.joints)
      throw ValueError(std::string("preprocess: ") + what + " joint " + std::to_string(j) +
                       " out of range");
  };
  check_joint(center_joint, "center");
  check_joint(height_pair.first, "height-pair");
  check_joint(height_pair.second, "height-pair");

  double height_acc = 0;
  for (int t = 0; t < raw.frames; ++t) {
    double sq = 0;
    for (int c = 0; c < coord_channels; ++c) {
      const double d = raw.at(c, t, height_pair.first) - raw.at(c, t, height_pair.second);
      sq += d * d;
    }
    height_acc += std::sqrt(sq);
  }
  const double height = height_acc / raw.frames;
  if (!(height > 0))
    throw ValueError("preprocess: degenerate sequence, body height is zero for '" +
                     raw.source_id + "'");

  const bool has_extra = raw.channels > coord_channels;
  SkeletonSequence out =
      SkeletonSequence::zeros(has_extra ? raw.channels : coord_channels + 1, raw.frames,
                              raw.joints);
  out.label = raw.label;
  out.subject_id = raw.subject_id;
  out.view_id = raw.view_id;
  out.source_id = raw.source_id;

  for (int t = 0; t < raw.frames; ++t) {
    for (int c = 0; c < coord_channels; ++c) {
      const double center = raw.at(c, t, center_joint);
      for (int n = 0; n < raw.joints; ++n)
        out.at(c, t, n) = (raw.at(c, t, n) - center) / height;
    }
  }
  if (has_extra) {
    for (int c = coord_channels; c < raw.channels; ++c)
      for (int t = 0; t < raw.frames; ++t)
        for (int n = 0; n < raw.joints; ++n) out.at(c, t, n) = raw.at(c, t, n);
  } else {
    for (int t = 0; t < raw.frames; ++t)
      for (int n = 0; n < raw.joints; ++n) out.at(coord_channels, t, n) = 1.0;
  }
  return out;
}

SkeletonSequence pad_repeat(const SkeletonSequence& seq, int t_target) {
  if (seq.frames < 1) throw ValueError("pad_repeat: empty sequence");
  if (t_target < seq.frames)
    throw ValueError("pad_repeat: target length " + std::to_string(t_target) +
                     " shorter than sequence length " + std::to_string(seq.frames));
  if (t_target == seq.frames) return seq;
  SkeletonSequence out = SkeletonSequence::zeros(seq.channels, t_target, seq.joints);
  out.label = seq.label;
  out.subject_id = seq.subject_id;
  out.view_id = seq.view_id;
  out.source_id = seq.source_id;
  for (int c = 0; c < seq.channels; ++c)
    for (int t = 0; t < t_target; ++t) {
      const int src = t % seq.frames;
      for (int n = 0; n < seq.joints; ++n) out.at(c, t, n) = seq.at(c, src, n);
    }
  return out;
}

SkeletonSequence bone_stream(const SkeletonSequence& seq, const graph::SkeletonGraph& g,
                             int coord_channels) {
  if (g.num_joints != seq.joints)
    throw ValueError("bone_stream: graph has " + std::to_string(g.num_joints) +
                     " joints, sequence has " + std::to_string(seq.joints));
  if (coord_channels > seq.channels)
    throw ValueError("bone_stream: coordinate channel count exceeds sequence channels");
  SkeletonSequence out = seq;
  for (int n = 0; n < seq.joints; ++n) {
    const int p = g.parent[static_cast<std::size_t>(n)];
    for (int t = 0; t < seq.frames; ++t) {
      for (int c = 0; c < coord_channels; ++c)
        out.at(c, t, n) = (p == n) ? 0.0 : seq.at(c, t, n) - seq.at(c, t, p);
      for (int c = coord_channels; c < seq.channels; ++c)
        out.at(c, t, n) = std::min(seq.at(c, t, n), seq.at(c, t, p));
    }
  }
  return out;
}

}  // namespace stf::data
