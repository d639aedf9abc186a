#include "retarget/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "retarget/errors.h"

namespace retarget {

void ContactThresholds::validate() const {
  if (!(height > 0.0 && speed > 0.0)) throw ValidationError("contact thresholds must be > 0");
}

FootPoint lowest_foot_point(const Morphology& morph, const Frame& frame, int body) {
  FootPoint out;
  out.height = std::numeric_limits<double>::infinity();
  for (const auto& s : world_shapes(morph, frame, body)) {
    for (const Vec3& c : {s.p0, s.p1}) {
      const double h = c.z() - s.radius;
      if (h < out.height) {
        out.height = h;
        out.center = c;
      }
    }
  }
  if (!std::isfinite(out.height)) {
    throw ValidationError("body '" + morph.bodies()[body].name + "' has no collision geometry");
  }
  return out;
}

ContactEstimate estimate_reference_contacts(const MotionClip& clip, const Morphology& morph,
                                            const ContactThresholds& th) {
  ContactEstimate est;
  est.bodies = morph.contact_bodies();
  std::vector<int> cols;
  for (int b : est.bodies) cols.push_back(clip.column(morph.bodies()[b].name));
  for (const auto& row : clip.frames) {
    std::vector<char> flags;
    for (size_t k = 0; k < est.bodies.size(); ++k) {
      const Frame& f = row[cols[k]];
      const FootPoint p = lowest_foot_point(morph, f, est.bodies[k]);
      const double speed = point_velocity(f, p.center).norm();
      flags.push_back(p.height < th.height && speed < th.speed);
    }
    est.flags.push_back(std::move(flags));
  }
  return est;
}

ContactEstimate map_contacts(const ContactEstimate& source, const CorrespondenceSet& pairs) {
  ContactEstimate out;
  std::vector<size_t> keep;
  for (size_t k = 0; k < source.bodies.size(); ++k) {
    for (const auto& p : pairs.resolved) {
      if (p.source_body == source.bodies[k]) {
        out.bodies.push_back(p.target_body);
        keep.push_back(k);
        break;
      }
    }
  }
  for (const auto& row : source.flags) {
    std::vector<char> flags;
    for (size_t k : keep) flags.push_back(row[k]);
    out.flags.push_back(std::move(flags));
  }
  return out;
}

namespace {

std::vector<int> body_columns(const MotionClip& traj, const Morphology& morph) {
  std::vector<int> cols(morph.num_bodies());
  for (int b = 0; b < morph.num_bodies(); ++b) cols[b] = traj.column(morph.bodies()[b].name);
  return cols;
}

PenetrationStat accumulate(const std::vector<double>& per_frame, double threshold) {
  PenetrationStat s;
  int violating = 0;
  double depth = 0.0;
  for (double d : per_frame) {
    if (d > threshold) {
      ++violating;
      depth += d;
    }
  }
  if (!per_frame.empty()) s.time_fraction = static_cast<double>(violating) / per_frame.size();
  if (violating > 0) s.mean_depth = depth / violating;
  return s;
}

// Closest points between segments p1-q1 and p2-q2; returns the distance.
double segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  constexpr double kEps = 1e-14;
  double s = 0.0, t = 0.0;
  if (a <= kEps && e <= kEps) return r.norm();
  if (a <= kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
}

}  // namespace

double shape_penetration(const WorldShape& a, const WorldShape& b) {
  const double d = segment_distance(a.p0, a.p1, b.p0, b.p1);
  return std::max(0.0, a.radius + b.radius - d);
}

PenetrationStat ground_penetration(const MotionClip& traj, const Morphology& morph,
                                   double threshold) {
  const auto cols = body_columns(traj, morph);
  std::vector<double> depth;
  for (const auto& row : traj.frames) {
    double worst = 0.0;
    for (int b = 0; b < morph.num_bodies(); ++b) {
      for (const auto& s : world_shapes(morph, row[cols[b]], b)) {
        worst = std::max(worst, s.radius - std::min(s.p0.z(), s.p1.z()));
      }
    }
    depth.push_back(worst);
  }
  return accumulate(depth, threshold);
}

PenetrationStat self_penetration(const MotionClip& traj, const Morphology& morph, double threshold) {
  const auto cols = body_columns(traj, morph);
  const int n = morph.num_bodies();
  std::vector<double> depth;
  for (const auto& row : traj.frames) {
    std::vector<std::vector<WorldShape>> shapes(n);
    for (int b = 0; b < n; ++b) shapes[b] = world_shapes(morph, row[cols[b]], b);
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (morph.adjacent(i, j)) continue;
        for (const auto& a : shapes[i]) {
          for (const auto& b : shapes[j]) worst = std::max(worst, shape_penetration(a, b));
        }
      }
    }
    depth.push_back(worst);
  }
  return accumulate(depth, threshold);
}

namespace {

template <typename F>
FootStat foot_mean(const MotionClip& traj, const Morphology& morph, const ContactEstimate& contacts,
                   F value) {
  std::vector<int> cols;
  for (int b : contacts.bodies) cols.push_back(traj.column(morph.bodies()[b].name));
  const size_t frames = std::min(traj.frames.size(), contacts.flags.size());
  double sum = 0.0;
  long count = 0;
  for (size_t t = 0; t < frames; ++t) {
    for (size_t k = 0; k < contacts.bodies.size(); ++k) {
      if (!contacts.flags[t][k]) continue;
      const Frame& f = traj.frames[t][cols[k]];
      sum += value(f, lowest_foot_point(morph, f, contacts.bodies[k]));
      ++count;
    }
  }
  FootStat s;
  if (count == 0) {
    s.no_contact = true;
  } else {
    s.value = sum / count;
  }
  return s;
}

}  // namespace

FootStat foot_sliding(const MotionClip& traj, const Morphology& morph, const ContactEstimate& contacts) {
  return foot_mean(traj, morph, contacts, [](const Frame& f, const FootPoint& p) {
    return point_velocity(f, p.center).head<2>().norm();
  });
}

FootStat foot_floating(const MotionClip& traj, const Morphology& morph, const ContactEstimate& contacts) {
  return foot_mean(traj, morph, contacts,
                   [](const Frame&, const FootPoint& p) { return std::max(0.0, p.height); });
}

MetricsReport evaluate_motion(const MotionClip& traj, const Morphology& target,
                              const MotionClip& source_clip, const Morphology& source,
                              const CorrespondenceSet& pairs, const ContactThresholds& th,
                              double pen_threshold) {
  if (traj.num_frames() > source_clip.num_frames()) {
    throw ValidationError("trajectory '" + traj.id + "' is longer than source clip '" +
                          source_clip.id + "'");
  }
  MetricsReport r;
  r.motion = traj.id;
  const auto g = ground_penetration(traj, target, pen_threshold);
  const auto s = self_penetration(traj, target, pen_threshold);
  const auto contacts = map_contacts(estimate_reference_contacts(source_clip, source, th), pairs);
  const auto slide = foot_sliding(traj, target, contacts);
  const auto fl = foot_floating(traj, target, contacts);
  r.ground_pen_time = g.time_fraction;
  r.ground_pen_cm = 100.0 * g.mean_depth;
  r.self_pen_time = s.time_fraction;
  r.self_pen_cm = 100.0 * s.mean_depth;
  r.foot_slide_cm_s = 100.0 * slide.value;
  r.foot_float_cm = 100.0 * fl.value;
  r.no_contact = slide.no_contact;
  return r;
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("summarize: no values");
  Summary s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  for (double v : values) s.mean += v;
  s.mean /= values.size();
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / values.size());
  return s;
}

AggregateReport aggregate(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ValidationError("aggregate: no reports");
  auto field = [&](double MetricsReport::*m) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.*m);
    return summarize(v);
  };
  AggregateReport a;
  a.ground_pen_time = field(&MetricsReport::ground_pen_time);
  a.ground_pen_cm = field(&MetricsReport::ground_pen_cm);
  a.self_pen_time = field(&MetricsReport::self_pen_time);
  a.self_pen_cm = field(&MetricsReport::self_pen_cm);
  a.foot_slide_cm_s = field(&MetricsReport::foot_slide_cm_s);
  a.foot_float_cm = field(&MetricsReport::foot_float_cm);
  return a;
}

}  // namespace retarget
