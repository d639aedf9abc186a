#include "retarget/io.h"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"
#include "retarget/errors.h"

namespace retarget::io {

using Json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw ValidationError(where + ": " + msg);
}

Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(where, e.what());
  }
}

Json read_json(const fs::path& path) { return parse_json(read_text(path), path.string()); }

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// Rejects keys outside `allowed` so that typos in hand-written files surface.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) fail(where, "unknown key '" + k + "'");
  }
}

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) fail(where, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing '") + key + "'");
  return *it;
}

double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

std::string as_string(const Json& j, const std::string& where) {
  if (!j.is_string()) fail(where, "expected a string");
  return j.get<std::string>();
}

bool as_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) fail(where, "expected true or false");
  return j.get<bool>();
}

long as_integer(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) fail(where, "expected an integer");
  return j.get<long>();
}

const Json& as_array(const Json& j, const std::string& where, long size = -1) {
  if (!j.is_array()) fail(where, "expected an array");
  if (size >= 0 && static_cast<long>(j.size()) != size) {
    fail(where, "expected " + std::to_string(size) + " elements, got " + std::to_string(j.size()));
  }
  return j;
}

std::string at(const std::string& where, const char* key) { return where + "." + key; }
std::string at(const std::string& where, size_t i) { return where + "[" + std::to_string(i) + "]"; }

double num(const Json& j, const char* key, const std::string& where) {
  return as_number(field(j, key, where), at(where, key));
}

template <typename T>
void opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const Json& v = j[key];
  const std::string w = at(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    out = as_bool(v, w);
  } else if constexpr (std::is_integral_v<T>) {
    out = static_cast<T>(as_integer(v, w));
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = as_string(v, w);
  } else {
    out = as_number(v, w);
  }
}

Vec3 vec3(const Json& j, const std::string& where) {
  as_array(j, where, 3);
  return Vec3(as_number(j[0], where), as_number(j[1], where), as_number(j[2], where));
}

VecX vecx(const Json& j, const std::string& where) {
  as_array(j, where);
  VecX v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = as_number(j[i], at(where, i));
  return v;
}

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json to_json(const VecX& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Mat3 quat(const Json& j, const std::string& where) {
  as_array(j, where, 4);
  Eigen::Quaterniond q(as_number(j[0], where), as_number(j[1], where), as_number(j[2], where),
                       as_number(j[3], where));
  if (std::abs(q.norm() - 1.0) > 1e-6) fail(where, "quaternion is not unit length");
  return q.normalized().toRotationMatrix();
}

Json quat_json(const Mat3& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return Json::array({q.w(), q.x(), q.y(), q.z()});
}

// Row-major 3x3; used where bit-exact round trips matter.
Json mat_json(const Mat3& m) {
  Json rows = Json::array();
  for (int r = 0; r < 3; ++r) rows.push_back(Json::array({m(r, 0), m(r, 1), m(r, 2)}));
  return rows;
}

Mat3 mat3(const Json& j, const std::string& where) {
  as_array(j, where, 3);
  Mat3 m;
  for (int r = 0; r < 3; ++r) m.row(r) = vec3(j[r], at(where, r)).transpose();
  return m;
}

Json frame_json(const Frame& f, bool velocities) {
  Json j = {{"pos", to_json(f.pos)}, {"quat", quat_json(f.rot)}};
  if (velocities) {
    j["linvel"] = to_json(f.linvel);
    j["angvel"] = to_json(f.angvel);
  }
  return j;
}

Frame frame_from(const Json& j, const std::string& where, bool& has_vel) {
  check_keys(j, {"pos", "quat", "linvel", "angvel"}, where);
  Frame f;
  f.pos = vec3(field(j, "pos", where), at(where, "pos"));
  f.rot = quat(field(j, "quat", where), at(where, "quat"));
  const bool lv = j.contains("linvel"), av = j.contains("angvel");
  if (lv != av) fail(where, "give both linvel and angvel or neither");
  has_vel = lv;
  if (lv) {
    f.linvel = vec3(j["linvel"], at(where, "linvel"));
    f.angvel = vec3(j["angvel"], at(where, "angvel"));
  }
  return f;
}

// Exact frame encoding for checkpoints.
Json exact_frame(const Frame& f) {
  return {{"pos", to_json(f.pos)}, {"rot", mat_json(f.rot)}, {"linvel", to_json(f.linvel)},
          {"angvel", to_json(f.angvel)}};
}

Frame exact_frame_from(const Json& j, const std::string& where) {
  Frame f;
  f.pos = vec3(field(j, "pos", where), at(where, "pos"));
  f.rot = mat3(field(j, "rot", where), at(where, "rot"));
  f.linvel = vec3(field(j, "linvel", where), at(where, "linvel"));
  f.angvel = vec3(field(j, "angvel", where), at(where, "angvel"));
  return f;
}

const char* mode_name(OrientationMode m) {
  switch (m) {
    case OrientationMode::kSwing: return "swing";
    case OrientationMode::kTwist: return "twist";
    default: return "full";
  }
}

OrientationMode mode_from(const std::string& s, const std::string& where) {
  if (s == "full") return OrientationMode::kFull;
  if (s == "swing") return OrientationMode::kSwing;
  if (s == "twist") return OrientationMode::kTwist;
  fail(where, "unknown orientation mode '" + s + "' (full, swing, twist)");
}

Json params_json(const RetargetParams& p) {
  Json pos = Json::array(), ori = Json::array(), z = Json::array();
  for (const auto& v : p.p_pos) pos.push_back(to_json(v));
  for (const auto& v : p.p_ori) ori.push_back(to_json(v));
  for (double v : p.p_z) z.push_back(v);
  return {{"p_pos", pos}, {"p_ori", ori}, {"p_z", z}};
}

RetargetParams params_from(const Json& j, const std::string& where) {
  RetargetParams p;
  const Json& pos = as_array(field(j, "p_pos", where), at(where, "p_pos"));
  const Json& ori = as_array(field(j, "p_ori", where), at(where, "p_ori"), pos.size());
  for (size_t i = 0; i < pos.size(); ++i) {
    p.p_pos.push_back(vec3(pos[i], at(at(where, "p_pos"), i)));
    p.p_ori.push_back(vec3(ori[i], at(at(where, "p_ori"), i)));
  }
  const Json& z = as_array(field(j, "p_z", where), at(where, "p_z"));
  for (size_t i = 0; i < z.size(); ++i) p.p_z.push_back(as_number(z[i], at(at(where, "p_z"), i)));
  return p;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFault("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFault("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- morphology

Morphology load_morphology(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  check_keys(j, {"root", "contact_bodies", "nominal_root", "bodies", "joints"}, w);

  std::vector<BodySpec> bodies;
  const Json& jb = as_array(field(j, "bodies", w), at(w, "bodies"));
  for (size_t i = 0; i < jb.size(); ++i) {
    const std::string bw = at(at(w, "bodies"), i);
    check_keys(jb[i], {"name", "mass", "inertia", "com", "collision"}, bw);
    BodySpec b;
    b.name = as_string(field(jb[i], "name", bw), at(bw, "name"));
    b.mass = num(jb[i], "mass", bw);
    const Json& in = field(jb[i], "inertia", bw);
    if (in.is_array() && in.size() == 3 && in[0].is_number()) {
      b.inertia = vec3(in, at(bw, "inertia")).asDiagonal();
    } else {
      b.inertia = mat3(in, at(bw, "inertia"));
    }
    if (jb[i].contains("com")) b.com_offset = vec3(jb[i]["com"], at(bw, "com"));
    if (jb[i].contains("collision")) {
      const Json& jc = as_array(jb[i]["collision"], at(bw, "collision"));
      for (size_t k = 0; k < jc.size(); ++k) {
        const std::string cw = at(at(bw, "collision"), k);
        check_keys(jc[k], {"p0", "p1", "center", "radius"}, cw);
        CollisionShape s;
        s.radius = num(jc[k], "radius", cw);
        if (jc[k].contains("center")) {
          s.p0 = s.p1 = vec3(jc[k]["center"], at(cw, "center"));
        } else {
          s.p0 = vec3(field(jc[k], "p0", cw), at(cw, "p0"));
          s.p1 = vec3(field(jc[k], "p1", cw), at(cw, "p1"));
        }
        b.collision.push_back(s);
      }
    }
    bodies.push_back(std::move(b));
  }
  auto body_id = [&](const Json& name, const std::string& where) {
    const std::string n = as_string(name, where);
    for (size_t i = 0; i < bodies.size(); ++i) {
      if (bodies[i].name == n) return static_cast<int>(i);
    }
    fail(where, "unknown body '" + n + "'");
  };

  std::vector<JointSpec> joints;
  std::vector<double> nominal;
  const Json& jj = as_array(field(j, "joints", w), at(w, "joints"));
  for (size_t i = 0; i < jj.size(); ++i) {
    const std::string jw = at(at(w, "joints"), i);
    check_keys(jj[i], {"name", "parent", "child", "axis", "origin_pos", "origin_quat", "lower", "upper",
                       "torque_limit", "kp", "kd", "nominal"},
               jw);
    JointSpec s;
    s.name = as_string(field(jj[i], "name", jw), at(jw, "name"));
    s.parent_body = body_id(field(jj[i], "parent", jw), at(jw, "parent"));
    s.child_body = body_id(field(jj[i], "child", jw), at(jw, "child"));
    s.axis = vec3(field(jj[i], "axis", jw), at(jw, "axis"));
    if (jj[i].contains("origin_pos")) s.origin_pos = vec3(jj[i]["origin_pos"], at(jw, "origin_pos"));
    if (jj[i].contains("origin_quat")) s.origin_rot = quat(jj[i]["origin_quat"], at(jw, "origin_quat"));
    opt(jj[i], "lower", s.lower, jw);
    opt(jj[i], "upper", s.upper, jw);
    opt(jj[i], "torque_limit", s.torque_limit, jw);
    opt(jj[i], "kp", s.kp, jw);
    opt(jj[i], "kd", s.kd, jw);
    double q0 = 0.0;
    opt(jj[i], "nominal", q0, jw);
    nominal.push_back(q0);
    joints.push_back(std::move(s));
  }

  const int root = body_id(field(j, "root", w), at(w, "root"));
  std::vector<int> contact;
  if (j.contains("contact_bodies")) {
    const Json& jc = as_array(j["contact_bodies"], at(w, "contact_bodies"));
    for (size_t i = 0; i < jc.size(); ++i) contact.push_back(body_id(jc[i], at(at(w, "contact_bodies"), i)));
  }
  Frame nominal_root;
  if (j.contains("nominal_root")) {
    const Json& nr = j["nominal_root"];
    const std::string nw = at(w, "nominal_root");
    check_keys(nr, {"pos", "quat"}, nw);
    nominal_root.pos = vec3(field(nr, "pos", nw), at(nw, "pos"));
    if (nr.contains("quat")) nominal_root.rot = quat(nr["quat"], at(nw, "quat"));
  }
  try {
    return Morphology(std::move(bodies), std::move(joints), root, std::move(contact),
                      Eigen::Map<const VecX>(nominal.data(), nominal.size()), nominal_root);
  } catch (const ValidationError& e) {
    fail(w, e.what());
  }
}

void save_morphology(const fs::path& path, const Morphology& m) {
  Json bodies = Json::array();
  for (const auto& b : m.bodies()) {
    Json shapes = Json::array();
    for (const auto& s : b.collision) {
      if (s.is_sphere()) {
        shapes.push_back({{"center", to_json(s.p0)}, {"radius", s.radius}});
      } else {
        shapes.push_back({{"p0", to_json(s.p0)}, {"p1", to_json(s.p1)}, {"radius", s.radius}});
      }
    }
    bodies.push_back({{"name", b.name}, {"mass", b.mass}, {"inertia", mat_json(b.inertia)},
                      {"com", to_json(b.com_offset)}, {"collision", shapes}});
  }
  Json joints = Json::array();
  for (int i = 0; i < m.num_joints(); ++i) {
    const JointSpec& s = m.joints()[i];
    joints.push_back({{"name", s.name},
                      {"parent", m.bodies()[s.parent_body].name},
                      {"child", m.bodies()[s.child_body].name},
                      {"axis", to_json(s.axis)},
                      {"origin_pos", to_json(s.origin_pos)},
                      {"origin_quat", quat_json(s.origin_rot)},
                      {"lower", s.lower},
                      {"upper", s.upper},
                      {"torque_limit", s.torque_limit},
                      {"kp", s.kp},
                      {"kd", s.kd},
                      {"nominal", m.nominal_q()[i]}});
  }
  Json contact = Json::array();
  for (int b : m.contact_bodies()) contact.push_back(m.bodies()[b].name);
  const Json j = {{"root", m.bodies()[m.root_body()].name},
                  {"contact_bodies", contact},
                  {"nominal_root", {{"pos", to_json(m.nominal_root().pos)}, {"quat", quat_json(m.nominal_root().rot)}}},
                  {"bodies", bodies},
                  {"joints", joints}};
  write_json(path, j);
}

// ---------------------------------------------------------------- pairs

std::vector<CorrespondencePair> load_pairs(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  check_keys(j, {"pairs"}, w);
  const Json& jp = as_array(field(j, "pairs", w), at(w, "pairs"));
  std::vector<CorrespondencePair> out;
  for (size_t i = 0; i < jp.size(); ++i) {
    const std::string pw = at(at(w, "pairs"), i);
    check_keys(jp[i], {"source", "target", "mode", "twist_axis", "root"}, pw);
    CorrespondencePair p;
    p.source = as_string(field(jp[i], "source", pw), at(pw, "source"));
    p.target = as_string(field(jp[i], "target", pw), at(pw, "target"));
    if (jp[i].contains("mode")) p.mode = mode_from(as_string(jp[i]["mode"], at(pw, "mode")), at(pw, "mode"));
    if (jp[i].contains("twist_axis")) p.twist_axis = vec3(jp[i]["twist_axis"], at(pw, "twist_axis"));
    opt(jp[i], "root", p.is_root, pw);
    out.push_back(p);
  }
  return out;
}

void save_pairs(const fs::path& path, const std::vector<CorrespondencePair>& pairs) {
  Json jp = Json::array();
  for (const auto& p : pairs) {
    jp.push_back({{"source", p.source}, {"target", p.target}, {"mode", mode_name(p.mode)},
                  {"twist_axis", to_json(p.twist_axis)}, {"root", p.is_root}});
  }
  write_json(path, {{"pairs", jp}});
}

// ---------------------------------------------------------------- clips

MotionClip load_clip(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  check_keys(j, {"id", "fps", "bodies", "frames", "z_nom"}, w);
  MotionClip c;
  c.id = as_string(field(j, "id", w), at(w, "id"));
  c.fps = num(j, "fps", w);
  opt(j, "z_nom", c.z_nom, w);
  const Json& jb = as_array(field(j, "bodies", w), at(w, "bodies"));
  for (size_t i = 0; i < jb.size(); ++i) c.bodies.push_back(as_string(jb[i], at(at(w, "bodies"), i)));
  const Json& jf = as_array(field(j, "frames", w), at(w, "frames"));
  bool all_vel = true;
  for (size_t t = 0; t < jf.size(); ++t) {
    const std::string fw = at(at(w, "frames"), t);
    as_array(jf[t], fw, static_cast<long>(c.bodies.size()));
    std::vector<Frame> row;
    for (size_t b = 0; b < jf[t].size(); ++b) {
      bool has_vel = false;
      row.push_back(frame_from(jf[t][b], at(fw, b), has_vel));
      all_vel = all_vel && has_vel;
    }
    c.frames.push_back(std::move(row));
  }
  c.has_velocities = all_vel;
  try {
    validate_clip(c);
  } catch (const ValidationError& e) {
    fail(w, e.what());
  }
  return c;
}

void save_clip(const fs::path& path, const MotionClip& clip) {
  Json frames = Json::array();
  for (const auto& row : clip.frames) {
    Json jr = Json::array();
    for (const auto& f : row) jr.push_back(frame_json(f, clip.has_velocities));
    frames.push_back(std::move(jr));
  }
  write_json(path, {{"id", clip.id}, {"fps", clip.fps}, {"z_nom", clip.z_nom}, {"bodies", clip.bodies},
                    {"frames", frames}});
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  check_keys(j, {"clips"}, w);
  const Json& jc = as_array(field(j, "clips", w), at(w, "clips"));
  if (jc.empty()) fail(w, "manifest lists no clips");
  std::vector<ManifestEntry> out;
  for (size_t i = 0; i < jc.size(); ++i) {
    const std::string ew = at(at(w, "clips"), i);
    check_keys(jc[i], {"id", "path", "z_nom"}, ew);
    ManifestEntry e;
    e.path = as_string(field(jc[i], "path", ew), at(ew, "path"));
    opt(jc[i], "id", e.id, ew);
    if (jc[i].contains("z_nom")) {
      e.has_z_nom = true;
      e.z_nom = as_number(jc[i]["z_nom"], at(ew, "z_nom"));
    }
    out.push_back(e);
  }
  return out;
}

void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  Json jc = Json::array();
  for (const auto& e : entries) {
    Json je = {{"id", e.id}, {"path", e.path}};
    if (e.has_z_nom) je["z_nom"] = e.z_nom;
    jc.push_back(je);
  }
  write_json(path, {{"clips", jc}});
}

std::vector<MotionClip> load_manifest_clips(const fs::path& path) {
  std::vector<MotionClip> clips;
  for (const auto& e : load_manifest(path)) {
    MotionClip c = load_clip(path.parent_path() / e.path);
    if (e.has_z_nom) c.z_nom = e.z_nom;
    clips.push_back(std::move(c));
  }
  return clips;
}

// ---------------------------------------------------------------- calibration / params

void save_calibration(const fs::path& path, const Calibration& cal, const CorrespondenceSet& pairs,
                      const Morphology& source, const Morphology& target) {
  Json jp = Json::array();
  for (int b = 0; b < pairs.size(); ++b) {
    const auto& r = pairs.resolved[b];
    jp.push_back({{"source", source.bodies()[r.source_body].name},
                  {"target", target.bodies()[r.target_body].name},
                  {"x_nom", to_json(cal.x_nom[b])},
                  {"R_nom", mat_json(cal.R_nom[b])}});
  }
  write_json(path, {{"scale", cal.scale}, {"pairs", jp}, {"warnings", cal.warnings}});
}

void save_params(const fs::path& path, const RetargetParams& p, int iteration) {
  Json j = params_json(p);
  j["iteration"] = iteration;
  write_json(path, j);
}

ParamsFile load_params(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  check_keys(j, {"iteration", "p_pos", "p_ori", "p_z"}, w);
  ParamsFile f;
  opt(j, "iteration", f.iteration, w);
  f.params = params_from(j, w);
  return f;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const fs::path& path, const TrainerState& s) {
  Json envs = Json::array();
  for (const auto& e : s.envs) {
    envs.push_back({{"root", exact_frame(e.state.root)},
                    {"q", to_json(e.state.q)},
                    {"qd", to_json(e.state.qd)},
                    {"motion", e.ctx.motion},
                    {"start_frame", e.ctx.start_frame},
                    {"steps", e.ctx.steps},
                    {"ramp_steps", e.ctx.ramp_steps},
                    {"prev_action", to_json(e.prev_action)},
                    {"prev_action2", to_json(e.prev_action2)},
                    {"setpoints_prev", to_json(e.setpoints_prev)},
                    {"setpoints_prev2", to_json(e.setpoints_prev2)}});
  }
  const Json j = {{"iteration", s.iteration},
                  {"policy", to_json(s.policy)},
                  {"adam_m", to_json(s.adam_m)},
                  {"adam_v", to_json(s.adam_v)},
                  {"adam_steps", s.adam_steps},
                  {"learning_rate", s.learning_rate},
                  {"obs_mean", to_json(s.obs_mean)},
                  {"obs_var", to_json(s.obs_var)},
                  {"obs_count", s.obs_count},
                  {"params", params_json(s.params)},
                  {"failures", s.failures},
                  {"samples", s.samples},
                  {"rng", s.rng},
                  {"envs", envs}};
  write_text(path, j.dump() + "\n");
}

TrainerState load_checkpoint(const fs::path& path) {
  const Json j = read_json(path);
  const std::string w = path.string();
  TrainerState s;
  s.iteration = static_cast<int>(as_integer(field(j, "iteration", w), at(w, "iteration")));
  s.policy = vecx(field(j, "policy", w), at(w, "policy"));
  s.adam_m = vecx(field(j, "adam_m", w), at(w, "adam_m"));
  s.adam_v = vecx(field(j, "adam_v", w), at(w, "adam_v"));
  s.adam_steps = as_integer(field(j, "adam_steps", w), at(w, "adam_steps"));
  s.learning_rate = num(j, "learning_rate", w);
  s.obs_mean = vecx(field(j, "obs_mean", w), at(w, "obs_mean"));
  s.obs_var = vecx(field(j, "obs_var", w), at(w, "obs_var"));
  s.obs_count = num(j, "obs_count", w);
  s.params = params_from(field(j, "params", w), at(w, "params"));
  for (const char* key : {"failures", "samples"}) {
    const Json& a = as_array(field(j, key, w), at(w, key));
    auto& out = std::string(key) == "failures" ? s.failures : s.samples;
    for (size_t i = 0; i < a.size(); ++i) out.push_back(as_integer(a[i], at(at(w, key), i)));
  }
  s.rng = as_string(field(j, "rng", w), at(w, "rng"));
  const Json& envs = as_array(field(j, "envs", w), at(w, "envs"));
  for (size_t i = 0; i < envs.size(); ++i) {
    const std::string ew = at(at(w, "envs"), i);
    const Json& e = envs[i];
    EnvSlot slot;
    slot.state.root = exact_frame_from(field(e, "root", ew), at(ew, "root"));
    slot.state.q = vecx(field(e, "q", ew), at(ew, "q"));
    slot.state.qd = vecx(field(e, "qd", ew), at(ew, "qd"));
    slot.ctx.motion = static_cast<int>(as_integer(field(e, "motion", ew), at(ew, "motion")));
    slot.ctx.start_frame = static_cast<int>(as_integer(field(e, "start_frame", ew), at(ew, "start_frame")));
    slot.ctx.steps = static_cast<int>(as_integer(field(e, "steps", ew), at(ew, "steps")));
    slot.ctx.ramp_steps = static_cast<int>(as_integer(field(e, "ramp_steps", ew), at(ew, "ramp_steps")));
    slot.prev_action = vecx(field(e, "prev_action", ew), at(ew, "prev_action"));
    slot.prev_action2 = vecx(field(e, "prev_action2", ew), at(ew, "prev_action2"));
    slot.setpoints_prev = vecx(field(e, "setpoints_prev", ew), at(ew, "setpoints_prev"));
    slot.setpoints_prev2 = vecx(field(e, "setpoints_prev2", ew), at(ew, "setpoints_prev2"));
    s.envs.push_back(std::move(slot));
  }
  return s;
}

// ---------------------------------------------------------------- experiment config

fs::path ExperimentConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

void ExperimentConfig::validate() const {
  trainer.validate();
  metrics.contact.validate();
  if (!(metrics.penetration_threshold >= 0.0)) throw ValidationError("metrics.penetration_threshold must be >= 0");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  RewardConfig::preset(reward_preset);
  for (const auto* p : {&source_morphology, &target_morphology, &correspondences, &clips}) {
    if (p->empty()) throw ValidationError("paths: source_morphology, target_morphology, correspondences and clips are required");
  }
  if (output_dir.empty()) throw ValidationError("paths.output_dir must not be empty");
}

void ExperimentConfig::validate_files() const {
  const std::pair<const char*, const std::string*> files[] = {
      {"paths.source_morphology", &source_morphology},
      {"paths.target_morphology", &target_morphology},
      {"paths.correspondences", &correspondences},
      {"paths.clips", &clips}};
  for (const auto& [name, value] : files) {
    if (value->empty()) throw ValidationError(std::string(name) + " is not set");
    if (!fs::exists(resolve(*value))) {
      throw ValidationError(std::string(name) + ": file not found: " + resolve(*value).string());
    }
  }
}

std::string dump_config(const ExperimentConfig& c) {
  const TrainerConfig& t = c.trainer;
  Json weights = Json::object();
  for (int k = 0; k < kNumRewardTerms; ++k) weights[std::string(reward_term_name(k))] = t.reward.weights[k];
  const Json j = {
      {"paths",
       {{"source_morphology", c.source_morphology},
        {"target_morphology", c.target_morphology},
        {"correspondences", c.correspondences},
        {"clips", c.clips},
        {"output_dir", c.output_dir}}},
      {"seed", t.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"ppo",
       {{"iterations", t.ppo.iterations},
        {"num_envs", t.ppo.num_envs},
        {"steps_per_env", t.ppo.steps_per_env},
        {"mini_batches", t.ppo.mini_batches},
        {"epochs", t.ppo.epochs},
        {"clip", t.ppo.clip},
        {"entropy_coef", t.ppo.entropy_coef},
        {"gamma", t.ppo.gamma},
        {"lambda", t.ppo.lambda},
        {"desired_kl", t.ppo.desired_kl},
        {"max_grad_norm", t.ppo.max_grad_norm},
        {"learning_rate", t.ppo.learning_rate},
        {"min_learning_rate", t.ppo.min_learning_rate},
        {"max_learning_rate", t.ppo.max_learning_rate},
        {"value_coef", t.ppo.value_coef},
        {"init_std", t.ppo.init_std},
        {"hidden", t.ppo.hidden}}},
      {"update",
       {{"step_size", t.update.step_size},
        {"sensitivity", t.update.sensitivity},
        {"step_decay_iterations", t.update.step_decay_iterations}}},
      {"box", {{"pos", t.box.pos}, {"ori", t.box.ori}, {"z", t.box.z}}},
      {"sim",
       {{"control_dt", t.sim.control_dt},
        {"substeps", t.sim.substeps},
        {"gravity", t.sim.gravity},
        {"deadband", t.sim.deadband},
        {"force_scale", t.sim.force_scale},
        {"torque_scale", t.sim.torque_scale},
        {"joint_damping", t.sim.joint_damping},
        {"divergence_bound", t.sim.divergence_bound},
        {"contact",
         {{"stiffness", t.sim.contact.stiffness},
          {"damping", t.sim.contact.damping},
          {"friction", t.sim.contact.friction},
          {"slip_velocity", t.sim.contact.slip_velocity},
          {"all_bodies", t.sim.contact.all_bodies}}}}},
      {"loss", {{"w_x", t.loss.w_x}, {"w_R", t.loss.w_R}, {"w_v", t.loss.w_v}, {"w_w", t.loss.w_w}}},
      {"reward", {{"preset", c.reward_preset}, {"weights", weights}}},
      {"trainer",
       {{"ramp_time", t.ramp_time},
        {"init_sigma", t.init_sigma},
        {"action_scale", t.action_scale},
        {"action_clip", t.action_clip},
        {"sampler_floor", t.sampler_floor},
        {"max_episode_time", t.max_episode_time},
        {"bilevel", t.bilevel},
        {"termination", {{"position", t.termination.position}, {"angle", t.termination.angle}}}}},
      {"metrics",
       {{"contact_height", c.metrics.contact.height},
        {"contact_speed", c.metrics.contact.speed},
        {"penetration_threshold", c.metrics.penetration_threshold}}}};
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  const std::string w = "config";
  const Json j = parse_json(text, w);
  check_keys(j, {"paths", "seed", "checkpoint_every", "ppo", "update", "box", "sim", "loss", "reward", "trainer",
                 "metrics"},
             w);
  ExperimentConfig c;
  c.base_dir = base_dir;
  TrainerConfig& t = c.trainer;

  if (j.contains("paths")) {
    const Json& p = j["paths"];
    const std::string pw = at(w, "paths");
    check_keys(p, {"source_morphology", "target_morphology", "correspondences", "clips", "output_dir"}, pw);
    opt(p, "source_morphology", c.source_morphology, pw);
    opt(p, "target_morphology", c.target_morphology, pw);
    opt(p, "correspondences", c.correspondences, pw);
    opt(p, "clips", c.clips, pw);
    opt(p, "output_dir", c.output_dir, pw);
  }
  if (j.contains("seed")) {
    const Json& s = j["seed"];
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long>() >= 0)) {
      fail(at(w, "seed"), "expected a non-negative integer");
    }
    t.seed = s.get<std::uint64_t>();
  }
  opt(j, "checkpoint_every", c.checkpoint_every, w);

  if (j.contains("ppo")) {
    const Json& p = j["ppo"];
    const std::string pw = at(w, "ppo");
    check_keys(p, {"iterations", "num_envs", "steps_per_env", "mini_batches", "epochs", "clip", "entropy_coef",
                   "gamma", "lambda", "desired_kl", "max_grad_norm", "learning_rate", "min_learning_rate",
                   "max_learning_rate", "value_coef", "init_std", "hidden"},
               pw);
    opt(p, "iterations", t.ppo.iterations, pw);
    opt(p, "num_envs", t.ppo.num_envs, pw);
    opt(p, "steps_per_env", t.ppo.steps_per_env, pw);
    opt(p, "mini_batches", t.ppo.mini_batches, pw);
    opt(p, "epochs", t.ppo.epochs, pw);
    opt(p, "clip", t.ppo.clip, pw);
    opt(p, "entropy_coef", t.ppo.entropy_coef, pw);
    opt(p, "gamma", t.ppo.gamma, pw);
    opt(p, "lambda", t.ppo.lambda, pw);
    opt(p, "desired_kl", t.ppo.desired_kl, pw);
    opt(p, "max_grad_norm", t.ppo.max_grad_norm, pw);
    opt(p, "learning_rate", t.ppo.learning_rate, pw);
    opt(p, "min_learning_rate", t.ppo.min_learning_rate, pw);
    opt(p, "max_learning_rate", t.ppo.max_learning_rate, pw);
    opt(p, "value_coef", t.ppo.value_coef, pw);
    opt(p, "init_std", t.ppo.init_std, pw);
    if (p.contains("hidden")) {
      const Json& h = as_array(p["hidden"], at(pw, "hidden"));
      t.ppo.hidden.clear();
      for (size_t i = 0; i < h.size(); ++i) t.ppo.hidden.push_back(static_cast<int>(as_integer(h[i], at(at(pw, "hidden"), i))));
    }
  }
  if (j.contains("update")) {
    const Json& u = j["update"];
    const std::string uw = at(w, "update");
    check_keys(u, {"step_size", "sensitivity", "step_decay_iterations"}, uw);
    opt(u, "step_size", t.update.step_size, uw);
    opt(u, "sensitivity", t.update.sensitivity, uw);
    opt(u, "step_decay_iterations", t.update.step_decay_iterations, uw);
  }
  if (j.contains("box")) {
    const Json& b = j["box"];
    const std::string bw = at(w, "box");
    check_keys(b, {"pos", "ori", "z"}, bw);
    opt(b, "pos", t.box.pos, bw);
    opt(b, "ori", t.box.ori, bw);
    opt(b, "z", t.box.z, bw);
  }
  if (j.contains("sim")) {
    const Json& s = j["sim"];
    const std::string sw = at(w, "sim");
    check_keys(s, {"control_dt", "substeps", "gravity", "deadband", "force_scale", "torque_scale", "joint_damping",
                   "divergence_bound", "contact"},
               sw);
    opt(s, "control_dt", t.sim.control_dt, sw);
    opt(s, "substeps", t.sim.substeps, sw);
    opt(s, "gravity", t.sim.gravity, sw);
    opt(s, "deadband", t.sim.deadband, sw);
    opt(s, "force_scale", t.sim.force_scale, sw);
    opt(s, "torque_scale", t.sim.torque_scale, sw);
    opt(s, "joint_damping", t.sim.joint_damping, sw);
    opt(s, "divergence_bound", t.sim.divergence_bound, sw);
    if (s.contains("contact")) {
      const Json& k = s["contact"];
      const std::string kw = at(sw, "contact");
      check_keys(k, {"stiffness", "damping", "friction", "slip_velocity", "all_bodies"}, kw);
      opt(k, "stiffness", t.sim.contact.stiffness, kw);
      opt(k, "damping", t.sim.contact.damping, kw);
      opt(k, "friction", t.sim.contact.friction, kw);
      opt(k, "slip_velocity", t.sim.contact.slip_velocity, kw);
      opt(k, "all_bodies", t.sim.contact.all_bodies, kw);
    }
  }
  if (j.contains("loss")) {
    const Json& l = j["loss"];
    const std::string lw = at(w, "loss");
    check_keys(l, {"w_x", "w_R", "w_v", "w_w"}, lw);
    opt(l, "w_x", t.loss.w_x, lw);
    opt(l, "w_R", t.loss.w_R, lw);
    opt(l, "w_v", t.loss.w_v, lw);
    opt(l, "w_w", t.loss.w_w, lw);
  }
  if (j.contains("reward")) {
    const Json& r = j["reward"];
    const std::string rw = at(w, "reward");
    check_keys(r, {"preset", "weights"}, rw);
    opt(r, "preset", c.reward_preset, rw);
  }
  try {
    t.reward = RewardConfig::preset(c.reward_preset);
  } catch (const ValidationError& e) {
    fail(at(w, "reward.preset"), e.what());
  }
  if (j.contains("reward") && j["reward"].contains("weights")) {
    const std::string ww = at(w, "reward.weights");
    const Json& jw = j["reward"]["weights"];
    if (!jw.is_object()) fail(ww, "expected an object");
    for (const auto& [name, v] : jw.items()) {
      int k = 0;
      try {
        k = reward_term_from_name(name);
      } catch (const ValidationError& e) {
        fail(ww, e.what());
      }
      t.reward.weights[k] = as_number(v, ww + "." + name);
    }
  }
  if (j.contains("trainer")) {
    const Json& r = j["trainer"];
    const std::string rw = at(w, "trainer");
    check_keys(r, {"ramp_time", "init_sigma", "action_scale", "action_clip", "sampler_floor", "max_episode_time",
                   "bilevel", "termination"},
               rw);
    opt(r, "ramp_time", t.ramp_time, rw);
    opt(r, "init_sigma", t.init_sigma, rw);
    opt(r, "action_scale", t.action_scale, rw);
    opt(r, "action_clip", t.action_clip, rw);
    opt(r, "sampler_floor", t.sampler_floor, rw);
    opt(r, "max_episode_time", t.max_episode_time, rw);
    opt(r, "bilevel", t.bilevel, rw);
    if (r.contains("termination")) {
      const Json& th = r["termination"];
      const std::string tw = at(rw, "termination");
      check_keys(th, {"position", "angle"}, tw);
      opt(th, "position", t.termination.position, tw);
      opt(th, "angle", t.termination.angle, tw);
    }
  }
  if (j.contains("metrics")) {
    const Json& m = j["metrics"];
    const std::string mw = at(w, "metrics");
    check_keys(m, {"contact_height", "contact_speed", "penetration_threshold"}, mw);
    opt(m, "contact_height", c.metrics.contact.height, mw);
    opt(m, "contact_speed", c.metrics.contact.speed, mw);
    opt(m, "penetration_threshold", c.metrics.penetration_threshold, mw);
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  try {
    return parse_config(read_text(path), fs::absolute(path).parent_path());
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ValidationError(path.string() + ": " + msg);
  }
}

void save_config(const fs::path& path, const ExperimentConfig& c) { write_text(path, dump_config(c)); }

// ---------------------------------------------------------------- CSV

namespace {

constexpr const char* kLogHeader =
    "iteration,mean_reward,upper_loss,update_rate,kl,learning_rate,failure_rate,upper_samples,"
    "mean_root_force,sat_pos,sat_ori,sat_z";

}  // namespace

void write_training_log(const fs::path& path, const std::vector<IterationLog>& rows, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const bool header = !append || !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw RuntimeFault("cannot write " + path.string());
  out << std::setprecision(10);
  if (header) out << kLogHeader << "\n";
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.mean_reward << ',' << r.upper_loss << ',' << r.update_rate << ',' << r.kl
        << ',' << r.learning_rate << ',' << r.failure_rate << ',' << r.upper_samples << ','
        << r.mean_root_force << ',' << r.saturation.pos << ',' << r.saturation.ori << ',' << r.saturation.z
        << "\n";
  }
}

std::vector<IterationLog> read_training_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) {
    throw ValidationError(path.string() + ": not a training log (unexpected header)");
  }
  std::vector<IterationLog> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != 12) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 12 columns");
    }
    IterationLog r;
    r.iteration = static_cast<int>(v[0]);
    r.mean_reward = v[1];
    r.upper_loss = v[2];
    r.update_rate = v[3];
    r.kl = v[4];
    r.learning_rate = v[5];
    r.failure_rate = v[6];
    r.upper_samples = static_cast<int>(v[7]);
    r.mean_root_force = v[8];
    r.saturation = {v[9], v[10], v[11]};
    rows.push_back(r);
  }
  return rows;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsReport>& reports,
                       const AggregateReport& agg) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "motion,ground_pen_time,ground_pen_cm,self_pen_time,self_pen_cm,foot_slide_cm_s,foot_float_cm,"
         "no_contact\n";
  for (const auto& r : reports) {
    out << r.motion << ',' << r.ground_pen_time << ',' << r.ground_pen_cm << ',' << r.self_pen_time << ','
        << r.self_pen_cm << ',' << r.foot_slide_cm_s << ',' << r.foot_float_cm << ',' << (r.no_contact ? 1 : 0)
        << "\n";
  }
  auto row = [&](const char* name, double Summary::*f) {
    out << name << ',' << agg.ground_pen_time.*f << ',' << agg.ground_pen_cm.*f << ',' << agg.self_pen_time.*f
        << ',' << agg.self_pen_cm.*f << ',' << agg.foot_slide_cm_s.*f << ',' << agg.foot_float_cm.*f << ",\n";
  };
  row("mean", &Summary::mean);
  row("std", &Summary::std);
  row("min", &Summary::min);
  row("max", &Summary::max);
  write_text(path, out.str());
}

}  // namespace retarget::io
