// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "esbm/error.hpp"
#include "esbm/io.hpp"
#include "support.hpp"

using namespace esbm;

TEST_CASE("git blob hash") {
  CHECK(io::git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(io::git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("point csv round trip is exact") {
  const auto dir = testing::scratch("csv");
  Mat m(2, 3);
  m << 0.1, -1e-300, 3.0, 1.0 / 3.0, 2e10, -0.0;
  io::write_points_csv(dir / "p.csv", m, {"a", "b", "c"});
  CHECK(io::read_points_csv(dir / "p.csv") == m);
  io::write_points_csv(dir / "q.csv", m);
  CHECK(io::read_points_csv(dir / "q.csv") == m);
}

TEST_CASE("csv errors") {
  const auto dir = testing::scratch("csv_bad");
  CHECK_THROWS_AS(io::read_points_csv(dir / "missing.csv"), InputError);
  std::ofstream(dir / "ragged.csv") << "1,2\n3\n";
  CHECK_THROWS_AS(io::read_points_csv(dir / "ragged.csv"), InputError);
  std::ofstream(dir / "text.csv") << "x,y\n1,abc\n";
  CHECK_THROWS_AS(io::read_points_csv(dir / "text.csv"), InputError);
}
