// Classify constraints given on the command line (or a few defaults).
#include <iostream>
#include <vector>

#include "npmhist/semver.hpp"

using namespace npmhist::semver;

int main(int argc, char** argv) {
  std::vector<std::string> inputs(argv + 1, argv + argc);
  if (inputs.empty()) inputs = {"=1.2.3", "~1.2.3", "^0.2.3", ">=1.2.3", "*", "1.x || 2", "github:user/repo"};
  for (const auto& text : inputs) {
    auto c = parse_constraint(text);
    std::cout << '"' << text << "\" -> " << to_string(c.category);
    for (const auto& iv : c.intervals) {
      std::cout << "  [" << (iv.lower ? iv.lower->render() : "0.0.0") << ", ";
      if (iv.upper) std::cout << *iv.upper << ")";
      else std::cout << "inf)";
    }
    if (!c.recognized) std::cout << "  (unrecognized)";
    std::cout << '\n';
  }
}
