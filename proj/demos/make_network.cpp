// Writes a synthetic street network as GeoJSON.
// usage: make_network OUT.geojson [rows cols edges spacing seed]
#include <cstdlib>
#include <iostream>

#include "netfield/netfield.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_network OUT.geojson [rows cols edges spacing seed]\n";
    return 2;
  }
  const std::size_t rows = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 12;
  const std::size_t cols = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 12;
  const std::size_t edges = argc > 4 ? std::strtoul(argv[4], nullptr, 10) : 200;
  const double spacing = argc > 5 ? std::strtod(argv[5], nullptr) : 0.1;
  const std::uint64_t seed = argc > 6 ? std::strtoull(argv[6], nullptr, 10) : 1;
  try {
    const auto segs = netfield::street_network(rows, cols, edges, spacing, seed);
    netfield::write_text(argv[1], netfield::network_to_geojson(segs).dump() + "\n");
  } catch (const netfield::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return netfield::exit_code(e.kind());
  }
  return 0;
}
