// Prints the per-unit latency breakdown of a preset under the synthetic cost
// model and checks that the terms add up to the total.

#include <iostream>

#include "effnas/effnas.hpp"

using namespace effnas;

int main(int argc, char** argv) {
  const auto spec = arch::preset(argc > 1 ? argv[1] : "toy");
  const auto space = supernet::SearchSpace::from_arch(spec);
  std::vector<lut::LatencyKey> keys;
  for (const auto& t : lut::latency_terms(spec)) keys.push_back(t.key);
  const auto table = lut::synthetic_table(keys, lut::mb3d_dims(space));
  std::int64_t sum = 0;
  for (const auto& t : lut::latency_terms(spec)) {
    const auto ps = lut::to_ps(table.find(t.key)->median_s);
    sum += ps;
    std::cout << t.where << "  " << lut::to_string(t.key) << "  " << static_cast<double>(ps) * 1e-9 << " ms\n";
  }
  const auto total = lut::estimate_latency_ps(spec, table);
  std::cout << "total " << static_cast<double>(total) * 1e-9 << " ms, terms sum "
            << (sum == total ? "matches" : "DIFFERS") << "\n";
  return sum == total ? 0 : 1;
}
