#pragma once

#include <string>

#include <deepsolve/netmodel.hpp>

namespace fixtures {

// Three buses: slack at 1, generator at 2, load at 3; one off-nominal
// phase-shifting transformer and one unrated line.
inline const char* tiny3_text() {
  return R"(function mpc = tiny3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
  1 3 0  0  0 0 1 1.0 0 135 1 1.1 0.9;
  2 2 20 10 0 0 1 1.0 0 135 1 1.1 0.9;
  3 1 60 20 0 5 1 1.0 0 135 1 1.1 0.9;
];
mpc.gen = [
  1 0  0 100 -100 1.02 100 1 200 0  0 0 0 0 0 0 0 0 0 0 0;
  2 50 0 80  -80  1.01 100 1 100 10 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
  1 2 0.01  0.1  0.02  100 100 100 0    0 1 -360 360;
  1 3 0.02  0.15 0.03  80  80  80  0.98 2 1 -360 360;
  2 3 0.015 0.12 0.025 0   0   0   0    0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 20 5;
  2 0 0 3 0.02 25 3;
];
)";
}

inline deepsolve::NetworkCase tiny3() { return deepsolve::parse_matpower(tiny3_text(), "tiny3"); }

}  // namespace fixtures
