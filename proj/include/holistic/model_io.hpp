#pragma once

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "holistic/model.hpp"

namespace holistic {

// Line-oriented model description; grammar in docs/model_format.md.
namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

inline double parse_number(const std::string& s, int line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw ModelError("expected a number, got '" + s + "'", line);
  return v;
}

inline Pose3 parse_xyz_rpy(const std::vector<std::string>& tok, int line) {
  if (tok.size() != 7)
    throw ModelError("'" + tok[0] + "' expects 6 numbers: tx ty tz rx ry rz", line);
  double v[6];
  for (int i = 0; i < 6; ++i) v[i] = parse_number(tok[static_cast<std::size_t>(i) + 1], line);
  return Pose3::from_xyz_rpy(v[0], v[1], v[2], v[3], v[4], v[5]);
}

// Splits "key=value"; returns false when the token has no '='.
inline bool split_kv(const std::string& tok, std::string& key, std::string& value) {
  const auto eq = tok.find('=');
  if (eq == std::string::npos) return false;
  key = tok.substr(0, eq);
  value = tok.substr(eq + 1);
  return true;
}

}  // namespace detail

inline KinematicModel parse_model(std::string_view text) {
  KinematicModel m;
  bool have_base = false;
  Pose3 pending;  // fixed transforms awaiting the next joint (or the tool)
  std::vector<std::pair<std::string, std::vector<double>>> raw_configs;
  std::vector<int> config_lines;

  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string& d = tok[0];

    if (d == "name") {
      if (tok.size() != 2) throw ModelError("'name' expects one identifier", lineno);
      m.name = tok[1];
    } else if (d == "base") {
      if (have_base) throw ModelError("duplicate 'base' directive", lineno);
      if (tok.size() < 2) throw ModelError("'base' expects a kind", lineno);
      have_base = true;
      if (tok[1] == "nonholonomic") {
        m.base_kind = BaseKind::nonholonomic;
        bool have_r = false, have_w = false;
        for (std::size_t i = 2; i < tok.size(); ++i) {
          std::string k, v;
          if (!detail::split_kv(tok[i], k, v)) throw ModelError("expected key=value", lineno);
          if (k == "R") {
            m.wheel_radius = detail::parse_number(v, lineno);
            have_r = true;
          } else if (k == "W") {
            m.wheel_separation = detail::parse_number(v, lineno);
            have_w = true;
          } else {
            throw ModelError("unknown base attribute '" + k + "'", lineno);
          }
        }
        if (!have_r || !have_w) throw ModelError("nonholonomic base requires R= and W=", lineno);
        if (m.wheel_radius <= 0.0 || m.wheel_separation <= 0.0)
          throw ModelError("wheel radius and separation must be positive", lineno);
      } else if (tok[1] == "omnidirectional") {
        if (tok.size() != 2) throw ModelError("omnidirectional base takes no attributes", lineno);
        m.base_kind = BaseKind::omnidirectional;
      } else {
        throw ModelError("unknown base kind '" + tok[1] + "'", lineno);
      }
    } else if (d == "mount") {
      if (!m.links.empty()) throw ModelError("'mount' must precede the first joint", lineno);
      m.base_to_arm = m.base_to_arm * detail::parse_xyz_rpy(tok, lineno);
    } else if (d == "fixed") {
      pending = pending * detail::parse_xyz_rpy(tok, lineno);
    } else if (d == "joint") {
      if (tok.size() < 2) throw ModelError("'joint' expects a kind", lineno);
      JointDesc j;
      if (tok[1] == "revolute") {
        j.kind = JointKind::revolute;
      } else if (tok[1] == "prismatic") {
        j.kind = JointKind::prismatic;
      } else {
        throw ModelError("unknown joint kind '" + tok[1] + "'", lineno);
      }
      bool have_axis = false, have_min = false, have_max = false, have_qd = false;
      for (std::size_t i = 2; i < tok.size(); ++i) {
        std::string k, v;
        if (!detail::split_kv(tok[i], k, v)) throw ModelError("expected key=value", lineno);
        if (k == "axis") {
          if (v == "x") j.axis = Eigen::Vector3d::UnitX();
          else if (v == "y") j.axis = Eigen::Vector3d::UnitY();
          else if (v == "z") j.axis = Eigen::Vector3d::UnitZ();
          else throw ModelError("axis must be x, y or z", lineno);
          have_axis = true;
        } else if (k == "qmin") {
          j.q_min = detail::parse_number(v, lineno);
          have_min = true;
        } else if (k == "qmax") {
          j.q_max = detail::parse_number(v, lineno);
          have_max = true;
        } else if (k == "qdmax") {
          j.qd_max = detail::parse_number(v, lineno);
          have_qd = true;
        } else {
          throw ModelError("unknown joint attribute '" + k + "'", lineno);
        }
      }
      if (!(have_axis && have_min && have_max && have_qd))
        throw ModelError("joint requires axis=, qmin=, qmax= and qdmax=", lineno);
      if (!(j.q_min < j.q_max)) throw ModelError("qmin must be less than qmax", lineno);
      if (!(j.qd_max > 0.0)) throw ModelError("qdmax must be positive", lineno);
      m.links.push_back({pending, j});
      pending = Pose3::identity();
    } else if (d == "tool") {
      m.tool = m.tool * detail::parse_xyz_rpy(tok, lineno);
    } else if (d == "config") {
      if (tok.size() < 3) throw ModelError("'config' expects a name and joint values", lineno);
      std::vector<double> vals;
      for (std::size_t i = 2; i < tok.size(); ++i)
        vals.push_back(detail::parse_number(tok[i], lineno));
      raw_configs.emplace_back(tok[1], std::move(vals));
      config_lines.push_back(lineno);
    } else {
      throw ModelError("unknown directive '" + d + "'", lineno);
    }
  }

  if (!have_base) throw ModelError("missing 'base' directive");
  if (m.links.empty()) throw ModelError("model has no arm joints");
  // Trailing fixed transforms belong to the flange, ahead of the tool.
  m.tool = pending * m.tool;

  for (std::size_t i = 0; i < raw_configs.size(); ++i) {
    const auto& [key, vals] = raw_configs[i];
    if (static_cast<int>(vals.size()) != m.n_arm())
      throw ModelError("configuration '" + key + "' has " + std::to_string(vals.size()) +
                           " values, expected " + std::to_string(m.n_arm()),
                       config_lines[i]);
    Eigen::VectorXd q(m.n_arm());
    for (int k = 0; k < m.n_arm(); ++k) {
      q(k) = vals[static_cast<std::size_t>(k)];
      const auto& jd = m.links[static_cast<std::size_t>(k)].joint;
      if (q(k) < jd.q_min || q(k) > jd.q_max)
        throw ModelError("configuration '" + key + "' violates the limits of joint " +
                             std::to_string(k),
                         config_lines[i]);
    }
    m.configs[key] = q;
  }
  m.validate();
  return m;
}

inline KinematicModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ModelError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_model(ss.str());
}

}  // namespace holistic
