#include "msp/manifest.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace msp {

namespace fs = std::filesystem;
using nlohmann::json;

const CohortManifest::Entry* CohortManifest::find(int subject,
                                                  int platform) const {
  for (const auto& e : entries) {
    if (e.subject == subject && e.platform == platform) return &e;
  }
  return nullptr;
}

std::string CohortManifest::resolve(const std::string& rel) const {
  if (root.empty()) return rel;
  return (fs::path(root) / rel).string();
}

namespace {

json stats_to_json(const NormStats& s) {
  return json{{"mean", s.mean}, {"stddev", s.stddev}};
}

NormStats stats_from_json(const json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  if (s.mean.size() != s.stddev.size()) {
    throw io_error("stats mean/stddev length mismatch");
  }
  return s;
}

}  // namespace

CohortManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error(path + ": cannot open for reading");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw io_error(path + ": malformed manifest: " + e.what());
  }
  CohortManifest m;
  try {
    m.subjects = j.at("subjects").get<std::vector<std::string>>();
    for (const auto& pj : j.at("platforms")) {
      PlatformInfo p;
      p.name = pj.at("name").get<std::string>();
      p.scale = pj.at("scale").get<int>();
      if (pj.contains("stats") && !pj["stats"].is_null()) {
        p.stats = stats_from_json(pj["stats"]);
      }
      m.platforms.push_back(std::move(p));
    }
    for (const auto& ej : j.at("entries")) {
      CohortManifest::Entry e;
      e.subject = ej.at("subject").get<int>();
      e.platform = ej.at("platform").get<int>();
      e.volume = ej.at("volume").get<std::string>();
      e.mask = ej.at("mask").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw io_error(path + ": malformed manifest: " + e.what());
  }
  m.root = fs::path(path).parent_path().string();
  return m;
}

void save_manifest(const CohortManifest& m, const std::string& path) {
  json j;
  j["subjects"] = m.subjects;
  j["platforms"] = json::array();
  for (const auto& p : m.platforms) {
    json pj{{"name", p.name}, {"scale", p.scale}};
    pj["stats"] = p.stats ? stats_to_json(*p.stats) : json(nullptr);
    j["platforms"].push_back(std::move(pj));
  }
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back(json{{"subject", e.subject},
                                {"platform", e.platform},
                                {"volume", e.volume},
                                {"mask", e.mask}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error(path + ": cannot open for writing");
  os << j.dump(2) << "\n";
  if (!os) throw io_error(path + ": write failed");
}

std::vector<std::string> validate_manifest(const CohortManifest& m) {
  std::vector<std::string> bad;
  auto complain = [&](const std::string& msg) { bad.push_back(msg); };

  if (m.subjects.empty()) complain("no subjects listed");
  if (m.platforms.empty()) complain("no platforms listed");
  if (!m.platforms.empty() && m.platforms[0].scale != 1) {
    complain("platform 0 must have scale 1 (it is the input grid)");
  }
  for (size_t p = 0; p < m.platforms.size(); ++p) {
    if (m.platforms[p].scale < 1) {
      complain("platform " + std::to_string(p) + ": scale must be >= 1");
    }
  }

  std::map<std::pair<int, int>, int> seen;
  for (const auto& e : m.entries) {
    if (e.subject < 0 || e.subject >= m.n_subjects()) {
      complain("entry references unknown subject " + std::to_string(e.subject));
      continue;
    }
    if (e.platform < 0 || e.platform >= m.n_platforms()) {
      complain("entry references unknown platform " +
               std::to_string(e.platform));
      continue;
    }
    ++seen[{e.subject, e.platform}];
  }
  for (int s = 0; s < m.n_subjects(); ++s) {
    for (int p = 0; p < m.n_platforms(); ++p) {
      const int k = seen.count({s, p}) ? seen[{s, p}] : 0;
      if (k == 0) {
        complain("missing entry for subject " + std::to_string(s) +
                 ", platform " + std::to_string(p));
      } else if (k > 1) {
        complain("duplicate entries for subject " + std::to_string(s) +
                 ", platform " + std::to_string(p));
      }
    }
  }

  // cell-level checks; base dims per subject come from platform 0
  int channels = -1;
  for (int s = 0; s < m.n_subjects(); ++s) {
    Volume base;
    bool have_base = false;
    for (int p = 0; p < m.n_platforms(); ++p) {
      const auto* e = m.find(s, p);
      if (!e) continue;
      const std::string cell =
          "subject " + std::to_string(s) + ", platform " + std::to_string(p);
      Volume v;
      Mask mask;
      try {
        v = read_volume(m.resolve(e->volume));
      } catch (const std::exception& ex) {
        complain(cell + ": missing or unreadable volume: " + ex.what());
        continue;
      }
      try {
        mask = read_mask(m.resolve(e->mask));
      } catch (const std::exception& ex) {
        complain(cell + ": missing or unreadable mask: " + ex.what());
        continue;
      }
      if (mask.x != v.x || mask.y != v.y || mask.z != v.z) {
        complain(cell + ": mask grid does not match volume grid");
      }
      if (channels == -1) {
        channels = v.c;
      } else if (v.c != channels) {
        complain(cell + ": channel count " + std::to_string(v.c) +
                 " differs from cohort channel count " +
                 std::to_string(channels));
      }
      if (p == 0) {
        base = v;
        have_base = true;
      } else if (have_base) {
        const int scale = m.platforms[p].scale;
        if (v.x != base.x * scale || v.y != base.y * scale ||
            v.z != base.z * scale) {
          complain(cell + ": grid is not the " + std::to_string(scale) +
                   "x multiple of the platform-0 grid");
        }
        for (int a = 0; a < 3; ++a) {
          const double want = base.voxel_size[a] / scale;
          if (std::abs(v.voxel_size[a] - want) > 1e-5) {
            complain(cell + ": voxel size is not platform-0 size divided by " +
                     std::to_string(scale));
            break;
          }
        }
      }
    }
  }

  for (size_t p = 0; p < m.platforms.size(); ++p) {
    if (!m.platforms[p].stats) continue;
    const auto& st = *m.platforms[p].stats;
    if (channels != -1 && st.channels() != channels) {
      complain("platform " + std::to_string(p) +
               ": stats channel count differs from cohort channels");
    }
    for (double sd : st.stddev) {
      if (!(sd > 0)) {
        complain("platform " + std::to_string(p) +
                 ": stats stddev must be positive");
        break;
      }
    }
  }

  return bad;
}

}  // namespace msp
