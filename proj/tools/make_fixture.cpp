// Copyright 2026 The norm-forge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Writes a synthetic fixture (stimuli, response tables, run config).
//   make-fixture <dir> [--layout archive|single] [--items N] [--seed N]

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "normforge/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic norm-forge fixture"};
  std::string dir;
  std::string layout = "archive";
  int items = 300;
  std::uint64_t seed = 20250601;
  app.add_option("dir", dir, "output directory")->required();
  app.add_option("--layout", layout, "archive (eight studies) or single (one study)")
      ->check(CLI::IsMember({"archive", "single"}));
  app.add_option("--items", items, "item count for the single layout")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = layout == "archive" ? normforge::fixture::archive_fixture(seed)
                                    : normforge::fixture::single_study_fixture(items, {{"gpt-4o", 0.65}}, seed);
    auto config = normforge::fixture::write_fixture(dir, spec);
    std::cout << config.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make-fixture: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
