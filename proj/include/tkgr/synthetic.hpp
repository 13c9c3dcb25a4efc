#pragma once

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace tkgr::synthetic {

struct PeriodicConfig {
  int entities = 50;
  int relations = 5;
  int timestamps = 60;
  int active_pairs = 34;  // 34 pairs x 60 timestamps ~ 2040 facts
  int cycle = 3;          // objects per (s,p) cycle
};

/// Deterministic periodic temporal KG, emitted as tab-separated quadruple
/// lines. Every active (subject, relation) pair repeats a fixed 3-object
/// cycle over the timestamp axis, so the next object is fully determined by
/// the pair's recent history.
inline std::string periodic_tkg(uint64_t seed, const PeriodicConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  auto ent = [](int i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "e%02d", i);
    return std::string(buf);
  };

  // Pick the active pairs without replacement.
  std::vector<int> pair_ids(cfg.entities * cfg.relations);
  for (size_t i = 0; i < pair_ids.size(); ++i) pair_ids[i] = static_cast<int>(i);
  std::shuffle(pair_ids.begin(), pair_ids.end(), rng);
  pair_ids.resize(cfg.active_pairs);

  std::ostringstream out;
  std::vector<int> objs(cfg.entities);
  for (int i = 0; i < cfg.entities; ++i) objs[i] = i;
  for (int id : pair_ids) {
    const int s = id / cfg.relations;
    const int p = id % cfg.relations;
    std::shuffle(objs.begin(), objs.end(), rng);
    std::vector<int> cycle(objs.begin(), objs.begin() + cfg.cycle);
    const int phase = static_cast<int>(rng() % cfg.cycle);
    for (int t = 0; t < cfg.timestamps; ++t)
      out << ent(s) << "\tr" << p << '\t' << ent(cycle[(t + phase) % cfg.cycle]) << '\t' << t
          << '\n';
  }
  return out.str();
}

}  // namespace tkgr::synthetic
