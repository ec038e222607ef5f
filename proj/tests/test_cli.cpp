// Copyright (c) 2026 The esmstereo Authors. All Rights Reserved.
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

#include <sys/wait.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "esm/data_io.hpp"

using namespace esm;

#ifndef ESM_CLI_PATH
#error "ESM_CLI_PATH must point at the esmstereo binary"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("esm_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ESM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// x2 bilinear (half-pixel centres, clamped edges) with values doubled.
std::vector<double> up2(const std::vector<double>& in, Index h, Index w) {
  std::vector<double> out(static_cast<size_t>(4 * h * w));
  auto src = [&](Index y, Index x) {
    y = std::clamp<Index>(y, 0, h - 1);
    x = std::clamp<Index>(x, 0, w - 1);
    return in[static_cast<size_t>(y * w + x)];
  };
  for (Index y = 0; y < 2 * h; ++y)
    for (Index x = 0; x < 2 * w; ++x) {
      const double sy = std::max(0.0, (y + 0.5) / 2.0 - 0.5), sx = std::max(0.0, (x + 0.5) / 2.0 - 0.5);
      const Index y0 = static_cast<Index>(std::floor(sy)), x0 = static_cast<Index>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x0 + 1)) +
                       fy * ((1 - fx) * src(y0 + 1, x0) + fx * src(y0 + 1, x0 + 1));
      out[static_cast<size_t>(y * 2 * w + x)] = 2.0 * v;
    }
  return out;
}

}  // namespace

TEST_CASE("cli: gradcheck on a fresh build exits 0") {
  TempDir d;
  CHECK(run("gradcheck", d.path / "log") == 0);
  CHECK(slurp(d.path / "log").find("cases passed") != std::string::npos);
}

TEST_CASE("cli: zero-residual inference equals the scaled bilinear chain") {
  TempDir d;
  REQUIRE(run("synth --out " + (d.path / "data").string() + " --count 1", d.path / "log") == 0);
  const fs::path out = d.path / "inf";
  REQUIRE(run("infer --manifest " + (d.path / "data" / "manifest.txt").string() + " --out " + out.string() +
                  " --zero-refinement --dump-maps --seed 3",
              d.path / "log") == 0);
  PfmImage m0 = read_pfm(out / "000000_map0.pfm");
  REQUIRE(m0.data.shape() == Shape{4, 8});
  std::vector<double> chain(m0.data.data().begin(), m0.data.data().end());
  Index h = 4, w = 8;
  for (int s = 0; s < 4; ++s, h *= 2, w *= 2) chain = up2(chain, h, w);
  PfmImage fin = read_pfm(out / "000000.pfm");
  REQUIRE(fin.data.numel() == static_cast<Index>(chain.size()));
  double worst = 0;
  for (size_t i = 0; i < chain.size(); ++i) {
    const double want = std::clamp(chain[i], 0.0, 32.0);
    worst = std::max(worst, std::abs(fin.data.data()[i] - want));
  }
  CHECK(worst <= 1e-4);
  CHECK(fs::exists(out / "000000_color.png"));
  CHECK(fs::exists(out / "000000_error.png"));
  for (const auto& e : fs::directory_iterator(out)) CHECK(e.path().extension() != ".tmp");

  // Same seed, same bytes.
  const fs::path again = d.path / "inf2";
  REQUIRE(run("infer --manifest " + (d.path / "data" / "manifest.txt").string() + " --out " + again.string() +
                  " --zero-refinement --seed 3",
              d.path / "log") == 0);
  CHECK(slurp(out / "000000.pfm") == slurp(again / "000000.pfm"));
}

TEST_CASE("cli: eval of a perfect prediction reports zero error") {
  TempDir d;
  REQUIRE(run("synth --out " + (d.path / "data").string() + " --count 2", d.path / "log") == 0);
  std::ofstream(d.path / "data" / "self.txt") << "disp/000000.pfm disp/000000.pfm\ndisp/000001.pfm disp/000001.pfm\n";
  REQUIRE(run("eval --manifest " + (d.path / "data" / "self.txt").string() + " --out " + (d.path / "ev").string(),
              d.path / "log") == 0);
  const std::string rep = slurp(d.path / "ev" / "report.txt");
  CHECK(rep.find("epe=0\n") != std::string::npos);
  CHECK(rep.find("d1=0\n") != std::string::npos);
  CHECK(fs::exists(d.path / "ev" / "report.json"));
}

TEST_CASE("cli: exit codes") {
  TempDir d;
  CHECK(run("", d.path / "log") == 1);
  CHECK(run("train", d.path / "log") == 1);
  CHECK(run("frobnicate", d.path / "log") == 1);
  std::ofstream(d.path / "bad.cfg") << "no_such_key = 1\n";
  CHECK(run("train --overfit --steps 1 --checkpoint " + (d.path / "ck").string() + " --config " +
                (d.path / "bad.cfg").string(),
            d.path / "log") == 1);
  std::ofstream(d.path / "m.txt") << "missing_l.png missing_r.png missing.pfm\n";
  CHECK(run("train --checkpoint " + (d.path / "ck").string() + " --manifest " + (d.path / "m.txt").string(),
            d.path / "log") == 2);
  std::ofstream(d.path / "bad.pfm") << "P7\n1 1\n-1\n";
  std::ofstream(d.path / "m2.txt") << "bad.pfm bad.pfm\n";
  CHECK(run("eval --manifest " + (d.path / "m2.txt").string() + " --out " + d.path.string(), d.path / "log") == 2);
  CHECK(run("--help", d.path / "log") == 0);
}

TEST_CASE("cli: train writes a checkpoint that infer and eval accept") {
  TempDir d;
  REQUIRE(run("synth --out " + (d.path / "data").string() + " --count 2", d.path / "log") == 0);
  const std::string manifest = (d.path / "data" / "manifest.txt").string();
  REQUIRE(run("train --manifest " + manifest + " --checkpoint " + (d.path / "ck").string() + " --steps 2 --out " +
                  (d.path / "tr").string(),
              d.path / "log") == 0);
  CHECK(fs::exists(d.path / "ck" / "manifest.json"));
  CHECK(fs::exists(d.path / "tr" / "loss.csv"));
  REQUIRE(run("eval --manifest " + manifest + " --checkpoint " + (d.path / "ck").string() + " --out " +
                  (d.path / "ev").string(),
              d.path / "log") == 0);
  // The report from eval matches the one train wrote for the same data.
  CHECK(slurp(d.path / "ev" / "report.txt") == slurp(d.path / "tr" / "report.txt"));
  CHECK(run("eval --manifest " + manifest + " --checkpoint " + (d.path / "ck").string() + " --variant M --out " +
                (d.path / "ev").string(),
            d.path / "log") == 1);
}
