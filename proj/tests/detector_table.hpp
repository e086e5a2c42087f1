// SPDX-License-Identifier: Apache-2.0
//
// Hand-traced diversity-drop detector windows, shared by the unit tests and
// the acceptance gate. Expected booleans follow the strict rule
// avg(next half) < avg(previous half) - 1 applied at every dyadic scale.
#pragma once

#include <cstddef>
#include <vector>

namespace detector_table {

struct Row {
  std::vector<double> window;
  std::size_t levels;
  bool expected;
};

inline const std::vector<Row>& rows() {
  static const std::vector<Row> table = {
  // Averages hand-checked against the strict rule avg(next) < avg(prev) - 1.
      // Constant history never fires.
      {{5, 5, 5, 5, 5, 5, 5, 5}, 2, false},
      // Half-scale drop of 2: 8 < 10 - 1.
      {{10, 10, 10, 10, 8, 8, 8, 8}, 2, true},
      // Late dip too small at every scale: halves 10 vs 9.5, quarters end 10 vs 9.
      {{10, 10, 10, 10, 10, 10, 9, 9}, 2, false},
      // Halves rise (9 vs 10.5) but quarters catch the dip: 8 < 10 - 1.
      {{10, 10, 8, 8, 10, 10, 11, 11}, 2, true},
      // Drop of exactly 1 at half scale is not strict.
      {{10, 10, 10, 10, 9, 9, 9, 9}, 2, false},
      // Translation of the firing half-scale case.
      {{110, 110, 110, 110, 108, 108, 108, 108}, 2, true},
      // Translation of the non-firing late dip.
      {{105, 105, 105, 105, 105, 105, 104, 104}, 2, false},
      // Gentle monotone decline: halves 9.7 vs 8.9, quarter steps of 0.4.
      {{10, 9.8, 9.6, 9.4, 9.2, 9.0, 8.8, 8.6}, 2, false},
      // One early spike: halves 9.75 vs 9 pass, first quarter pair 9 < 10.5 - 1.
      {{12, 9, 9, 9, 9, 9, 9, 9}, 2, true},
      // Single-sample dip needs the finest scale: eighths see 3 < 5 - 1.
      {{5, 5, 5, 5, 5, 5, 5, 3}, 3, true},
      // Same window with a shallower detector misses it.
      {{5, 5, 5, 5, 5, 5, 5, 3}, 2, false},
      // Diversity increase never fires.
      {{6, 6, 6, 6, 7, 7, 7, 7}, 2, false},
  };
  return table;
}

}  // namespace detector_table
