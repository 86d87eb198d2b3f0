#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stf/graph.hpp"

namespace stf::data {

// Dense C x T x N skeleton sequence (channel-major, then frame, then joint).
// After preprocessing the last channel is the visibility channel.
struct SkeletonSequence {
  int channels = 0;
  int frames = 0;
  int joints = 0;
  std::vector<double> values;
  int label = -1;
  int subject_id = -1;
  int view_id = -1;
  std::string source_id;

  static SkeletonSequence zeros(int channels, int frames, int joints) {
    SkeletonSequence s;
    s.channels = channels;
    s.frames = frames;
    s.joints = joints;
    s.values.assign(static_cast<std::size_t>(channels) * frames * joints, 0.0);
    return s;
  }

  std::size_t index(int c, int t, int n) const {
    return (static_cast<std::size_t>(c) * frames + t) * joints + n;
  }
  double at(int c, int t, int n) const { return values[index(c, t, n)]; }
  double& at(int c, int t, int n) { return values[index(c, t, n)]; }
  std::size_t size() const { return values.size(); }
};

// Subtracts the per-frame center joint position from every joint, divides all
// coordinates by the mean body height (distance between the height pair,
// averaged over frames), and appends a visibility channel of ones. Input
// channels beyond `coord_channels` (e.g. a visibility channel a parser
// already attached) are passed through unchanged instead of a new channel
// being appended.
SkeletonSequence preprocess(const SkeletonSequence& raw, int center_joint,
                            std::pair<int, int> height_pair, int coord_channels = 3);

// Repeats frames cyclically until the sequence is t_target frames long.
SkeletonSequence pad_repeat(const SkeletonSequence& seq, int t_target);

// Second-order stream: each joint's coordinates become the offset from its
// parent; the root maps to zero. Visibility (the last channel, when
// coord_channels < channels) becomes min(child, parent).
SkeletonSequence bone_stream(const SkeletonSequence& seq, const graph::SkeletonGraph& g,
                             int coord_channels = 3);

}  // namespace stf::data
