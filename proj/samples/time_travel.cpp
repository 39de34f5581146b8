// Ingest a packument, then look at it as it stood on two different dates.
#include <iostream>

#include "npmhist/proxy.hpp"
#include "npmhist/store.hpp"

using namespace npmhist;
using nlohmann::json;

int main() {
  json doc = json::parse(R"({
    "name": "tiny",
    "versions": {
      "1.0.0": {"name": "tiny", "version": "1.0.0", "dependencies": {}},
      "1.1.0": {"name": "tiny", "version": "1.1.0", "dependencies": {"left-pad": "^1.0.0"}},
      "2.0.0": {"name": "tiny", "version": "2.0.0", "dependencies": {}}
    },
    "time": {
      "created": "2019-12-31T00:00:00.000Z",
      "1.0.0": "2020-01-01T00:00:00.000Z",
      "1.1.0": "2020-06-01T00:00:00.000Z",
      "2.0.0": "2021-01-01T00:00:00.000Z"
    },
    "dist-tags": {"latest": "2.0.0"}
  })");

  store::Store s;
  s.ingest_changes(std::vector<json>{doc});

  auto core = std::make_shared<proxy::ProxyCore>(std::make_shared<proxy::LocalSource>(s));
  for (const char* when : {"2020-07-01T00:00:00Z", "2022-01-01T00:00:00Z"}) {
    auto r = core->handle("GET", std::string("/t/") + when + "/tiny");
    auto body = json::parse(r.body);
    std::cout << when << ": latest=" << body["dist-tags"]["latest"].get<std::string>() << " versions=";
    for (const auto& [v, _] : body["versions"].items()) std::cout << v << ' ';
    std::cout << '\n';
  }
}
