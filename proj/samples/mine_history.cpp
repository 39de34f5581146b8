// Mine the updates of one package history and print them.
#include <iostream>

#include "npmhist/miner.hpp"

using namespace npmhist;

int main() {
  store::PackageHistory h{"left-pad", {}, {}};
  auto add = [&](const char* v, const char* at) {
    h.records.push_back({"left-pad", semver::parse_version(v), parse_timestamp(at), {}, std::nullopt, false});
  };
  add("1.0.0", "2016-01-01T00:00:00.000Z");
  add("2.0.0", "2016-02-01T00:00:00.000Z");
  add("1.0.1", "2016-03-01T00:00:00.000Z");  // backport, published after 2.0.0
  add("2.0.1", "2016-04-01T00:00:00.000Z");

  auto report = miner::mine_updates(h);
  for (const auto& u : report.updates)
    std::cout << u.from << " -> " << u.to << "  " << semver::to_string(u.increment) << "  ("
              << miner::to_string(u.kind) << ")\n";
}
