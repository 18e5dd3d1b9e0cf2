#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oncache/cache.hpp"
#include "oncache/scenario.hpp"
#include "oncache/sim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic ONCache overlay simulator"};
  app.require_subcommand(1);

  std::string file;
  std::string mode;
  bool rpeer = false;
  std::optional<std::size_t> cache_size;
  std::optional<std::uint64_t> ct_timeout;
  std::optional<std::uint64_t> seed;
  std::string report = "text";
  bool dump = false;

  CLI::App* run = app.add_subcommand("run", "Run a scenario file");
  run->add_option("scenario", file, "Scenario file")->required();
  run->add_option("--mode", mode, "Dataplane mode")
      ->check(CLI::IsMember({"fastpath", "fallback-only", "rewrite-tunnel"}));
  run->add_flag("--rpeer", rpeer, "Redirect-peer egress placement");
  run->add_option("--cache-size", cache_size, "Capacity of every LRU map")
      ->check(CLI::PositiveNumber);
  run->add_option("--ct-timeout", ct_timeout, "Conntrack timeout in ticks");
  run->add_option("--seed", seed, "Payload RNG seed");
  run->add_option("--report", report, "Report format")
      ->check(CLI::IsMember({"text", "machine"}));
  run->add_flag("--dump-caches", dump, "Print every host's caches at the end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    oncache::Scenario s = oncache::load_scenario_file(file);
    if (!mode.empty()) s.mode = oncache::parse_mode(mode);
    if (rpeer) s.rpeer = true;
    if (cache_size) s.cache_size = *cache_size;
    if (ct_timeout) s.ct_timeout = *ct_timeout;
    if (seed) s.seed = *seed;

    oncache::Simulator sim(s);
    const oncache::MetricsReport r = sim.run();
    if (report == "machine") {
      auto j = nlohmann::ordered_json::parse(oncache::format_machine_report(r));
      if (dump) {
        nlohmann::ordered_json caches = nlohmann::ordered_json::object();
        for (const auto& h : sim.cluster().hosts()) {
          caches[h->spec.name] = lines_of(oncache::dump_caches(h->caches));
        }
        j["caches"] = caches;
      }
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << oncache::format_text_report(r);
      if (dump) {
        for (const auto& h : sim.cluster().hosts()) {
          std::cout << "\ncaches " << h->spec.name << "\n"
                    << oncache::dump_caches(h->caches);
        }
      }
    }
  } catch (const oncache::ScenarioError& e) {
    std::cerr << "oncache-sim: " << file << ": " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "oncache-sim: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitOk;
}
