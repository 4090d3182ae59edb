#pragma once

#include <algorithm>
#include <cstddef>

namespace oracle {

// Closed-form counts written out per layer for the default schedule.
inline std::size_t conv_p(std::size_t kvol, std::size_t cin, std::size_t f) { return kvol * cin * f + f; }
inline std::size_t gate_p(std::size_t ct, std::size_t cs) {
  const std::size_t d = ct + cs, h = std::max<std::size_t>(1, d / 4);
  return d * h + h + h * cs + cs;
}

inline std::size_t oracle_3d_stage() {
  return conv_p(441, 1, 30) + conv_p(175, 1, 20) + conv_p(45, 1, 10)       // block 1 -> 60 ch
         + conv_p(441, 60, 40) + gate_p(60, 20) + conv_p(175, 80, 20) +   // block 2 -> 70 ch
         conv_p(45, 60, 10) + gate_p(70, 60) + conv_p(441, 130, 60) +     // block 3 -> 100 ch
         gate_p(130, 20) + conv_p(175, 150, 30) + conv_p(45, 130, 10);
}

inline std::size_t oracle_head(std::size_t fused) { return conv_p(1, fused, 128) + 81 * 128 * 16 + 16; }

inline std::size_t oracle_afnet() {
  // bridged widths: 60*15 = 900, 70*15 = 1050, 100*15 = 1500
  return oracle_3d_stage()
         + gate_p(1500, 900) + conv_p(9, 2400, 16) + conv_p(9, 2400, 32) + conv_p(1, 2400, 64)
         + gate_p(112, 1050) + conv_p(9, 1162, 16) + gate_p(1162, 32) + conv_p(9, 1194, 32) +
         conv_p(1, 1162, 64)
         + gate_p(112, 1500) + gate_p(1612, 112) + conv_p(9, 1724, 16) + gate_p(1724, 32) +
         conv_p(9, 1756, 32) + conv_p(1, 1724, 64)
         + oracle_head(336);
}

inline std::size_t oracle_baseline_3d() { return oracle_3d_stage() + oracle_head(230 * 15); }

inline std::size_t oracle_baseline_2d() {
  return conv_p(9, 15, 16) + conv_p(9, 15, 32) + conv_p(1, 15, 64)
         + gate_p(112, 32) + conv_p(9, 112, 16) + conv_p(9, 144, 32) + conv_p(1, 112, 64)
         + gate_p(112, 112) + conv_p(9, 224, 16) + gate_p(224, 32) + conv_p(9, 256, 32) +
         conv_p(1, 224, 64)
         + oracle_head(336);
}

}  // namespace oracle
