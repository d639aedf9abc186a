#pragma once

#include <string>
#include <vector>

#include "retarget/morphology.h"
#include "retarget/motion_clip.h"

namespace retarget {

struct ContactThresholds {
  double height = 0.05;  // m, lowest collision point
  double speed = 0.15;   // m/s, foot point
  void validate() const;
};

// Per frame, per listed body: in contact with the ground or not.
struct ContactEstimate {
  std::vector<int> bodies;                 // body ids in the clip's morphology
  std::vector<std::vector<char>> flags;    // [frame][slot]
};

// Lowest world point of a body and the center of the collision primitive
// end that produced it.
struct FootPoint {
  double height = 0.0;
  Vec3 center = Vec3::Zero();
};
FootPoint lowest_foot_point(const Morphology& morph, const Frame& frame, int body);

// Contact iff lowest point below `height` and foot-point speed below `speed`.
ContactEstimate estimate_reference_contacts(const MotionClip& clip, const Morphology& morph,
                                            const ContactThresholds& th);

// Re-indexes source contact slots to their corresponding target bodies.
// Slots without a correspondence are dropped.
ContactEstimate map_contacts(const ContactEstimate& source, const CorrespondenceSet& pairs);

struct PenetrationStat {
  double time_fraction = 0.0;
  double mean_depth = 0.0;  // m, over violating frames
};

// A frame violates when its maximum depth exceeds `threshold` (strictly).
PenetrationStat ground_penetration(const MotionClip& traj, const Morphology& morph,
                                   double threshold = 0.01);
PenetrationStat self_penetration(const MotionClip& traj, const Morphology& morph,
                                 double threshold = 0.01);

// Penetration depth between two primitives (sphere = zero-length capsule);
// 0 when separated.
double shape_penetration(const WorldShape& a, const WorldShape& b);

struct FootStat {
  double value = 0.0;  // m/s for sliding, m for floating
  bool no_contact = false;
};

// Means over in-contact (frame, foot) pairs; `contacts` indexes bodies of
// `morph` and frames of `traj` (extra clip frames are ignored).
FootStat foot_sliding(const MotionClip& traj, const Morphology& morph, const ContactEstimate& contacts);
FootStat foot_floating(const MotionClip& traj, const Morphology& morph, const ContactEstimate& contacts);

struct MetricsReport {
  std::string motion;
  double ground_pen_time = 0.0;
  double ground_pen_cm = 0.0;
  double self_pen_time = 0.0;
  double self_pen_cm = 0.0;
  double foot_slide_cm_s = 0.0;
  double foot_float_cm = 0.0;
  bool no_contact = false;
};

// Full report of one retargeted trajectory against its source clip.
MetricsReport evaluate_motion(const MotionClip& traj, const Morphology& target,
                              const MotionClip& source_clip, const Morphology& source,
                              const CorrespondenceSet& pairs, const ContactThresholds& th,
                              double pen_threshold = 0.01);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};
Summary summarize(const std::vector<double>& values);

struct AggregateReport {
  Summary ground_pen_time, ground_pen_cm, self_pen_time, self_pen_cm, foot_slide_cm_s, foot_float_cm;
};
AggregateReport aggregate(const std::vector<MetricsReport>& reports);  // throws on empty

}  // namespace retarget
